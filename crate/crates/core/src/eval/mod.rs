//! Scoring: binarization, RTTM files, DER/JER and report formatting.

mod der;
pub mod rttm;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

pub use der::{collar_zones, der, jer, DerScore, ErrorTimes};
pub use rttm::{load_rttm, parse_rttm, save_rttm, write_rttm, Rttm};

use crate::error::{Error, Result};
use crate::types::{ActivityMatrix, Segment, SegmentList};

/// Label given to stream `s` of an activity matrix.
pub fn stream_label(s: usize) -> String {
    format!("s{s}")
}

/// Sliding median of a binary sequence; edges are replicated.
pub fn median_filter(x: &[bool], window: usize) -> Vec<bool> {
    let half = window / 2;
    let n = x.len();
    (0..n)
        .map(|t| {
            let on = (0..window)
                .filter(|&k| x[(t + k).saturating_sub(half).min(n - 1)])
                .count();
            2 * on > window
        })
        .collect()
}

/// Thresholds each stream, median-filters it, and turns runs of active
/// frames into segments labelled by [`stream_label`].
pub fn binarize(y: &ActivityMatrix, threshold: f64, median_frames: usize) -> Result<SegmentList> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Contract(format!("threshold {threshold} outside (0, 1)")));
    }
    if median_frames.is_multiple_of(2) {
        return Err(Error::Contract(format!("median window {median_frames} must be odd")));
    }
    let shift = y.frame_shift_s();
    let mut segs = Vec::new();
    for s in 0..y.speakers() {
        let raw: Vec<bool> = y.column(s).iter().map(|&p| p > threshold).collect();
        let on = median_filter(&raw, median_frames);
        let mut t = 0;
        while t < on.len() {
            if !on[t] {
                t += 1;
                continue;
            }
            let start = t;
            while t < on.len() && on[t] {
                t += 1;
            }
            segs.push(Segment::new(stream_label(s), start as f64 * shift, t as f64 * shift));
        }
    }
    SegmentList::new(segs)
}

/// Maps each target speaker to the nearest corpus speaker in L2 distance.
/// Ties go to the lexicographically smallest corpus id.
pub fn proxy_speaker_labels(
    targets: &[(String, Vec<f64>)],
    corpus: &[(String, Vec<f64>)],
) -> Result<BTreeMap<String, String>> {
    let Some(dim) = corpus.first().map(|(_, v)| v.len()) else {
        return Err(Error::Input("no corpus speaker embeddings".into()));
    };
    if let Some((id, v)) = targets.iter().chain(corpus).find(|(_, v)| v.len() != dim) {
        return Err(Error::Input(format!(
            "embedding for {id} has dimension {}, expected {dim}",
            v.len()
        )));
    }
    let mut sorted: Vec<&(String, Vec<f64>)> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(targets
        .iter()
        .map(|(id, t)| {
            let mut best = (f64::INFINITY, &sorted[0].0);
            for (cid, c) in &sorted {
                let d: f64 = t.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, cid);
                }
            }
            (id.clone(), best.1.clone())
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct RecordingScore {
    pub recording_id: String,
    #[serde(flatten)]
    pub der: DerScore,
    pub jer: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Overall {
    pub ms: f64,
    pub fa: f64,
    pub se: f64,
    pub der: f64,
    pub jer: f64,
    pub times: ErrorTimes,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreReport {
    pub collar: f64,
    pub recordings: Vec<RecordingScore>,
    pub overall: Overall,
}

/// Scores every reference recording; a recording missing from the
/// hypothesis is scored against an empty hypothesis. Unscorable
/// recordings are skipped with a warning.
pub fn score(reference: &Rttm, hypothesis: &Rttm, collar: f64) -> Result<ScoreReport> {
    let empty = SegmentList::empty();
    let mut recordings = Vec::new();
    let mut times = ErrorTimes::default();
    let mut jer_terms = Vec::new();
    for (rec, r) in reference {
        let h = hypothesis.get(rec).unwrap_or(&empty);
        let d = match der(r, h, collar) {
            Ok(d) => d,
            Err(Error::Unscorable(msg)) => {
                log::warn!("{rec}: {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let terms = der::jer_terms(r, h, &d.mapping);
        let jer = 100.0 * terms.iter().sum::<f64>() / terms.len() as f64;
        jer_terms.extend(terms);
        times.add(&d.times);
        recordings.push(RecordingScore {
            recording_id: rec.clone(),
            der: d,
            jer,
        });
    }
    let all = DerScore::from_times(times, Vec::new())?;
    Ok(ScoreReport {
        collar,
        recordings,
        overall: Overall {
            ms: all.ms,
            fa: all.fa,
            se: all.se,
            der: all.der,
            jer: 100.0 * jer_terms.iter().sum::<f64>() / jer_terms.len() as f64,
            times,
        },
    })
}

impl ScoreReport {
    /// Fixed-width table, one row per recording plus an `OVERALL` row.
    pub fn to_table(&self) -> String {
        let w = self
            .recordings
            .iter()
            .map(|r| r.recording_id.len())
            .chain(["OVERALL".len()])
            .max()
            .unwrap_or(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<w$} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "recording", "MS", "FA", "SE", "DER", "JER"
        );
        let row = |out: &mut String, id: &str, ms: f64, fa: f64, se: f64, der: f64, jer: f64| {
            let _ = writeln!(out, "{id:<w$} {ms:>7.2} {fa:>7.2} {se:>7.2} {der:>7.2} {jer:>7.2}");
        };
        for r in &self.recordings {
            row(
                &mut out,
                &r.recording_id,
                r.der.ms,
                r.der.fa,
                r.der.se,
                r.der.der,
                r.jer,
            );
        }
        let o = &self.overall;
        row(&mut out, "OVERALL", o.ms, o.fa, o.se, o.der, o.jer);
        out
    }
}
