//! RTTM reading and writing. Only `SPEAKER` lines carry segments; other
//! record types are skipped with a warning.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Segment, SegmentList};

/// Segments grouped by recording id.
pub type Rttm = BTreeMap<String, SegmentList>;

pub fn write_rttm<W: Write>(mut w: W, recording_id: &str, segments: &SegmentList) -> Result<()> {
    for s in segments {
        writeln!(
            w,
            "SPEAKER {recording_id} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            s.onset,
            s.duration(),
            s.speaker
        )
        .map_err(|e| Error::io("<rttm>", e))?;
    }
    Ok(())
}

pub fn save_rttm(path: &Path, recording_id: &str, segments: &SegmentList) -> Result<()> {
    let mut buf = Vec::new();
    write_rttm(&mut buf, recording_id, segments)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses RTTM text; `origin` only labels errors.
pub fn parse_rttm(text: &str, origin: &Path) -> Result<Rttm> {
    let mut by_rec: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with(";;") {
            continue;
        }
        if fields[0] != "SPEAKER" {
            log::warn!("{}:{lineno}: skipping {} record", origin.display(), fields[0]);
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            msg,
        };
        if fields.len() < 8 {
            return Err(err(format!("expected at least 8 fields, found {}", fields.len())));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| err(format!("bad {name} field {:?}", fields[i])))
        };
        let onset = num(3, "onset")?;
        let duration = num(4, "duration")?;
        if duration == 0.0 {
            log::warn!("{}:{lineno}: skipping zero-length segment", origin.display());
            continue;
        }
        by_rec
            .entry(fields[1].to_string())
            .or_default()
            .push(Segment::new(fields[7], onset, onset + duration));
    }
    by_rec
        .into_iter()
        .map(|(rec, segs)| Ok((rec, SegmentList::new(segs)?)))
        .collect()
}

pub fn load_rttm(path: &Path) -> Result<Rttm> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_millisecond_precision() {
        let segs = SegmentList::new(vec![
            Segment::new("A", 0.25, 1.5),
            Segment::new("B", 1.0, 3.125),
            Segment::new("A", 4.0, 4.001),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_rttm(&mut buf, "rec1", &segs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = parse_rttm(&text, Path::new("x.rttm")).unwrap();
        let got = &back["rec1"];
        assert_eq!(got.len(), 3);
        for (a, b) in got.iter().zip(segs.iter()) {
            assert_eq!(a.speaker, b.speaker);
            assert!((a.onset - b.onset).abs() < 5e-4 && (a.offset - b.offset).abs() < 1e-3);
        }
    }

    #[test]
    fn malformed_duration_reports_line() {
        let text = "SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 2.0 x <NA> <NA> a <NA> <NA>\n";
        match parse_rttm(text, Path::new("bad.rttm")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_and_foreign_lines() {
        assert!(parse_rttm("", Path::new("e")).unwrap().is_empty());
        let t = "SPKR-INFO r 1 <NA> <NA> <NA> unknown a <NA> <NA>\n";
        assert!(parse_rttm(t, Path::new("e")).unwrap().is_empty());
    }
}
