//! Shared data types: activity matrices and segment lists.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T x S` per-frame, per-speaker speech probabilities in `[0, 1]`.
///
/// Zero speaker columns is legal (e.g. a visual branch that saw no faces).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    frames: usize,
    speakers: usize,
    frame_shift_s: f64,
    data: Vec<f64>,
}

impl ActivityMatrix {
    pub fn zeros(frames: usize, speakers: usize, frame_shift_s: f64) -> Self {
        ActivityMatrix {
            frames,
            speakers,
            frame_shift_s,
            data: vec![0.0; frames * speakers],
        }
    }

    pub fn from_data(frames: usize, speakers: usize, frame_shift_s: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * speakers {
            return Err(Error::Dimension {
                op: "ActivityMatrix",
                lhs: vec![frames, speakers],
                rhs: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("activity value {v} outside [0,1]")));
        }
        if !(frame_shift_s > 0.0) {
            return Err(Error::Input(format!("frame shift {frame_shift_s} must be positive")));
        }
        Ok(ActivityMatrix {
            frames,
            speakers,
            frame_shift_s,
            data,
        })
    }

    /// Column-major construction: one vector per speaker stream.
    pub fn from_columns(columns: &[Vec<f64>], frames: usize, frame_shift_s: f64) -> Result<Self> {
        let s = columns.len();
        let mut data = vec![0.0; frames * s];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != frames {
                return Err(Error::Dimension {
                    op: "ActivityMatrix::from_columns",
                    lhs: vec![frames],
                    rhs: vec![col.len()],
                });
            }
            for (t, &v) in col.iter().enumerate() {
                data[t * s + j] = v;
            }
        }
        Self::from_data(frames, s, frame_shift_s, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn speakers(&self) -> usize {
        self.speakers
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.data[t * self.speakers + s]
    }

    pub fn set(&mut self, t: usize, s: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[t * self.speakers + s] = v;
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.get(t, s)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.speakers).map(|s| self.column(s)).collect()
    }

    /// Reorders columns so that output column `k` is input column `order[k]`.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        let cols: Vec<Vec<f64>> = order.iter().map(|&s| self.column(s)).collect();
        Self::from_columns(&cols, self.frames, self.frame_shift_s).expect("columns come from a valid matrix")
    }

    /// Rasterizes a segment list: frame `t` of speaker `k` is 1 when the
    /// frame center `(t + 0.5) * shift` lies inside one of that speaker's
    /// segments. Columns follow `speakers`.
    pub fn from_segments(segments: &SegmentList, speakers: &[String], frames: usize, frame_shift_s: f64) -> Self {
        let mut m = Self::zeros(frames, speakers.len(), frame_shift_s);
        for seg in segments.iter() {
            let Some(k) = speakers.iter().position(|s| *s == seg.speaker) else {
                continue;
            };
            let first = ((seg.onset / frame_shift_s) - 0.5).ceil().max(0.0) as usize;
            for t in first..frames {
                let c = (t as f64 + 0.5) * frame_shift_s;
                if c >= seg.offset {
                    break;
                }
                if c >= seg.onset {
                    m.data[t * m.speakers + k] = 1.0;
                }
            }
        }
        m
    }

    /// CSV with a `t` column (frame start time in seconds) followed by one
    /// column per stream, `s0..s{S-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.speakers).map(|s| format!("s{s}")));
        wr.write_record(&header)?;
        for t in 0..self.frames {
            let mut rec = vec![format!("{:.3}", t as f64 * self.frame_shift_s)];
            rec.extend((0..self.speakers).map(|s| format_prob(self.get(t, s))));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv). The frame
    /// shift is recovered from the first two time stamps, or from
    /// `default_shift` for single-frame files.
    pub fn read_csv<R: Read>(r: R, default_shift: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let speakers = rd.headers()?.len().saturating_sub(1);
        let mut times = Vec::new();
        let mut data = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: "<csv>".into(),
                    line: i + 2,
                    msg: e.to_string(),
                })
            };
            times.push(parse(&rec[0])?);
            for k in 1..=speakers {
                data.push(parse(&rec[k])?);
            }
        }
        let shift = if times.len() >= 2 {
            times[1] - times[0]
        } else {
            default_shift
        };
        Self::from_data(times.len(), speakers, shift, data)
    }

    pub fn load_csv(path: &Path, default_shift: f64) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, default_shift)
    }
}

fn format_prob(v: f64) -> String {
    if v == 0.0 || v == 1.0 {
        format!("{v}")
    } else {
        format!("{v:.6}")
    }
}

/// One labelled stretch of speech, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speaker: String,
    pub onset: f64,
    pub offset: f64,
}

impl Segment {
    pub fn new(speaker: impl Into<String>, onset: f64, offset: f64) -> Self {
        Segment {
            speaker: speaker.into(),
            onset,
            offset,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Segments sorted by onset (ties by speaker label, then offset).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    segments: Vec<Segment>,
}

impl SegmentList {
    pub fn new(mut segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            if s.speaker.is_empty() {
                return Err(Error::Input("segment with empty speaker label".into()));
            }
            if !(s.offset > s.onset) || !s.onset.is_finite() || !s.offset.is_finite() {
                return Err(Error::Input(format!(
                    "segment for {} has offset {} <= onset {}",
                    s.speaker, s.offset, s.onset
                )));
            }
        }
        segments.sort_by(|a, b| {
            a.onset
                .total_cmp(&b.onset)
                .then_with(|| a.speaker.cmp(&b.speaker))
                .then_with(|| a.offset.total_cmp(&b.offset))
        });
        Ok(SegmentList { segments })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.segments.iter()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn as_slice(&self) -> &[Segment] {
        &self.segments
    }

    /// Distinct speaker labels in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        let mut v: Vec<String> = self.segments.iter().map(|s| s.speaker.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn end_time(&self) -> f64 {
        self.segments.iter().map(|s| s.offset).fold(0.0, f64::max)
    }

    /// Per-speaker union of intervals, each list sorted and disjoint.
    pub fn merged_by_speaker(&self) -> Vec<(String, Vec<(f64, f64)>)> {
        self.speakers()
            .into_iter()
            .map(|spk| {
                let mut iv: Vec<(f64, f64)> = self
                    .segments
                    .iter()
                    .filter(|s| s.speaker == spk)
                    .map(|s| (s.onset, s.offset))
                    .collect();
                iv.sort_by(|a, b| a.0.total_cmp(&b.0));
                (spk, merge_intervals(iv))
            })
            .collect()
    }
}

impl<'a> IntoIterator for &'a SegmentList {
    type Item = &'a Segment;
    type IntoIter = std::slice::Iter<'a, Segment>;

    fn into_iter(self) -> Self::IntoIter {
        self.segments.iter()
    }
}

/// Merges sorted, possibly overlapping or touching intervals.
pub fn merge_intervals(sorted: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (a, b) in sorted {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_list_sorts_and_validates() {
        let l = SegmentList::new(vec![Segment::new("b", 2.0, 3.0), Segment::new("a", 0.0, 1.0)]).unwrap();
        assert_eq!(l.as_slice()[0].speaker, "a");
        assert!(SegmentList::new(vec![Segment::new("a", 1.0, 1.0)]).is_err());
        assert!(SegmentList::new(vec![Segment::new("", 0.0, 1.0)]).is_err());
    }

    #[test]
    fn rasterize_uses_frame_centers() {
        let l = SegmentList::new(vec![Segment::new("a", 1.0, 2.0)]).unwrap();
        let m = ActivityMatrix::from_segments(&l, &["a".to_string()], 30, 0.1);
        let on: Vec<usize> = (0..30).filter(|&t| m.get(t, 0) == 1.0).collect();
        assert_eq!(on, (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn csv_round_trip() {
        let m = ActivityMatrix::from_columns(&[vec![0.0, 0.25, 1.0], vec![0.5, 0.125, 0.0]], 3, 0.1).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = ActivityMatrix::read_csv(buf.as_slice(), 0.1).unwrap();
        assert_eq!(back.speakers(), 2);
        assert!((back.frame_shift_s() - 0.1).abs() < 1e-9);
        assert_eq!(back.data(), m.data());
    }

    #[test]
    fn out_of_range_activity_rejected() {
        assert!(ActivityMatrix::from_data(1, 1, 0.1, vec![1.5]).is_err());
    }
}
