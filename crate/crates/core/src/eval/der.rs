//! Diarization error rate by interval arithmetic.
//!
//! The timeline is cut at every reference, hypothesis and collar boundary;
//! each elementary interval contributes its duration times the per-interval
//! miss, false-alarm and confusion counts, in the md-eval manner. Collars
//! surround reference boundaries only.

use serde::Serialize;

use crate::assign::hungarian;
use crate::error::{Error, Result};
use crate::types::{merge_intervals, SegmentList};

/// Raw error durations in seconds; additive across recordings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorTimes {
    pub scored_speech: f64,
    pub missed: f64,
    pub false_alarm: f64,
    pub confusion: f64,
}

impl ErrorTimes {
    pub fn add(&mut self, o: &ErrorTimes) {
        self.scored_speech += o.scored_speech;
        self.missed += o.missed;
        self.false_alarm += o.false_alarm;
        self.confusion += o.confusion;
    }

    pub fn pct(&self, v: f64) -> f64 {
        100.0 * v / self.scored_speech
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerScore {
    pub ms: f64,
    pub fa: f64,
    pub se: f64,
    pub der: f64,
    /// Reference speaker to hypothesis speaker.
    pub mapping: Vec<(String, String)>,
    pub times: ErrorTimes,
}

impl DerScore {
    pub fn from_times(times: ErrorTimes, mapping: Vec<(String, String)>) -> Result<Self> {
        if !(times.scored_speech > 0.0) {
            return Err(Error::Unscorable("no scored reference speech".into()));
        }
        let (ms, fa, se) = (
            times.pct(times.missed),
            times.pct(times.false_alarm),
            times.pct(times.confusion),
        );
        Ok(DerScore {
            ms,
            fa,
            se,
            der: ms + fa + se,
            mapping,
            times,
        })
    }
}

type Tracks = Vec<(String, Vec<(f64, f64)>)>;

fn contains(iv: &[(f64, f64)], t: f64) -> bool {
    let i = iv.partition_point(|&(a, _)| a <= t);
    i > 0 && t < iv[i - 1].1
}

fn overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut tot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            tot += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    tot
}

fn subtract(a: &[(f64, f64)], cut: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(s, e) in a {
        let mut cur = s;
        for &(cs, ce) in cut {
            if ce <= cur || cs >= e {
                continue;
            }
            if cs > cur {
                out.push((cur, cs));
            }
            cur = cur.max(ce);
        }
        if cur < e {
            out.push((cur, e));
        }
    }
    out
}

/// No-score zones of width `2 * collar` centred on reference boundaries.
pub fn collar_zones(reference: &SegmentList, collar: f64) -> Vec<(f64, f64)> {
    if collar <= 0.0 {
        return Vec::new();
    }
    let mut z: Vec<(f64, f64)> = reference
        .merged_by_speaker()
        .iter()
        .flat_map(|(_, iv)| iv.iter().flat_map(|&(a, b)| [a, b]))
        .map(|b| ((b - collar).max(0.0), b + collar))
        .collect();
    z.sort_by(|a, b| a.0.total_cmp(&b.0));
    merge_intervals(z)
}

/// Optimal one-to-one mapping maximizing overlap of the given supports.
/// Pairs with zero overlap are dropped.
pub fn optimal_mapping(reference: &Tracks, hypothesis: &Tracks) -> Result<Vec<(usize, usize)>> {
    if reference.is_empty() || hypothesis.is_empty() {
        return Ok(Vec::new());
    }
    let ov: Vec<Vec<f64>> = reference
        .iter()
        .map(|(_, r)| hypothesis.iter().map(|(_, h)| overlap(r, h)).collect())
        .collect();
    let neg: Vec<Vec<f64>> = ov.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    Ok(hungarian(&neg)?
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.filter(|&j| ov[i][j] > 0.0).map(|j| (i, j)))
        .collect())
}

pub fn der(reference: &SegmentList, hypothesis: &SegmentList, collar: f64) -> Result<DerScore> {
    if !(collar >= 0.0) {
        return Err(Error::Contract(format!("collar {collar} must be >= 0")));
    }
    let noscore = collar_zones(reference, collar);
    let scored = |t: Tracks| -> Tracks { t.into_iter().map(|(s, iv)| (s, subtract(&iv, &noscore))).collect() };
    let r = scored(reference.merged_by_speaker());
    let h = scored(hypothesis.merged_by_speaker());
    let pairs = optimal_mapping(&r, &h)?;
    let mut map_of = vec![None; r.len()];
    for &(i, j) in &pairs {
        map_of[i] = Some(j);
    }

    let mut cuts: Vec<f64> = r
        .iter()
        .chain(h.iter())
        .flat_map(|(_, iv)| iv.iter().flat_map(|&(a, b)| [a, b]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut times = ErrorTimes::default();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let d = b - a;
        let ref_on: Vec<usize> = (0..r.len()).filter(|&i| contains(&r[i].1, mid)).collect();
        let hyp_on: Vec<bool> = h.iter().map(|(_, iv)| contains(iv, mid)).collect();
        let n_ref = ref_on.len() as f64;
        let n_hyp = hyp_on.iter().filter(|&&x| x).count() as f64;
        let n_correct = ref_on.iter().filter(|&&i| map_of[i].is_some_and(|j| hyp_on[j])).count() as f64;
        times.scored_speech += d * n_ref;
        times.missed += d * (n_ref - n_hyp).max(0.0);
        times.false_alarm += d * (n_hyp - n_ref).max(0.0);
        times.confusion += d * (n_ref.min(n_hyp) - n_correct);
    }
    let mapping = pairs.iter().map(|&(i, j)| (r[i].0.clone(), h[j].0.clone())).collect();
    DerScore::from_times(times, mapping)
}

/// Jaccard error rate in percent: mean over reference speakers of one minus
/// intersection-over-union with the mapped hypothesis speaker. No collar.
pub fn jer(reference: &SegmentList, hypothesis: &SegmentList, mapping: &[(String, String)]) -> Result<f64> {
    let terms = jer_terms(reference, hypothesis, mapping);
    if terms.is_empty() {
        return Err(Error::Unscorable("reference has no speakers".into()));
    }
    Ok(100.0 * terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Per-reference-speaker Jaccard errors in [0, 1]; unmapped speakers give 1.
pub(crate) fn jer_terms(reference: &SegmentList, hypothesis: &SegmentList, mapping: &[(String, String)]) -> Vec<f64> {
    let h = hypothesis.merged_by_speaker();
    let total = |x: &[(f64, f64)]| x.iter().map(|(a, b)| b - a).sum::<f64>();
    reference
        .merged_by_speaker()
        .iter()
        .map(|(spk, iv)| {
            let hiv = mapping
                .iter()
                .find(|(rs, _)| rs == spk)
                .and_then(|(_, hs)| h.iter().find(|(name, _)| name == hs));
            match hiv {
                None => 1.0,
                Some((_, hiv)) => {
                    let inter = overlap(iv, hiv);
                    1.0 - inter / (total(iv) + total(hiv) - inter)
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Segment;

    fn segs(v: &[(&str, f64, f64)]) -> SegmentList {
        SegmentList::new(v.iter().map(|&(s, a, b)| Segment::new(s, a, b)).collect()).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let r = segs(&[("a", 0.0, 3.0), ("b", 2.0, 5.0), ("a", 6.0, 7.5)]);
        let s = der(&r, &r, 0.25).unwrap();
        assert_eq!((s.ms, s.fa, s.se, s.der), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(jer(&r, &r, &s.mapping).unwrap(), 0.0);
    }

    #[test]
    fn truncated_hypothesis_is_pure_miss() {
        let r = segs(&[("A", 0.0, 10.0)]);
        let h = segs(&[("x", 0.0, 8.0)]);
        let s = der(&r, &h, 0.0).unwrap();
        assert!((s.ms - 20.0).abs() < 1e-9 && s.fa == 0.0 && s.se == 0.0);
        // collar removes [0, .25) and (9.75, 10]; hyp end at 8 is not a reference boundary
        let s = der(&r, &h, 0.25).unwrap();
        assert!((s.der - 100.0 * 1.75 / 9.5).abs() < 1e-9);
    }

    #[test]
    fn relabeling_and_confusion() {
        let r = segs(&[("a", 0.0, 4.0), ("b", 4.0, 8.0)]);
        let h = segs(&[("q", 0.0, 4.0), ("p", 4.0, 8.0)]);
        assert_eq!(der(&r, &h, 0.0).unwrap().der, 0.0);
        let h = segs(&[("q", 0.0, 8.0)]);
        let s = der(&r, &h, 0.0).unwrap();
        assert!((s.se - 50.0).abs() < 1e-9 && s.ms == 0.0);
    }

    #[test]
    fn overlap_counts_per_speaker() {
        let r = segs(&[("a", 0.0, 4.0), ("b", 2.0, 4.0)]);
        let h = segs(&[("x", 0.0, 4.0)]);
        let s = der(&r, &h, 0.0).unwrap();
        assert!((s.times.scored_speech - 6.0).abs() < 1e-12);
        assert!((s.times.missed - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_reference_is_unscorable() {
        let h = segs(&[("x", 0.0, 1.0)]);
        assert!(matches!(
            der(&SegmentList::empty(), &h, 0.25),
            Err(Error::Unscorable(_))
        ));
        let tiny = segs(&[("a", 1.0, 1.2)]);
        assert!(matches!(der(&tiny, &h, 0.25), Err(Error::Unscorable(_))));
    }

    #[test]
    fn jer_cases() {
        let r = segs(&[("a", 0.0, 10.0)]);
        assert_eq!(jer(&r, &SegmentList::empty(), &[]).unwrap(), 100.0);
        let h = segs(&[("x", 0.0, 5.0)]);
        let m = der(&r, &h, 0.0).unwrap().mapping;
        assert!((jer(&r, &h, &m).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_identity() {
        let t = ErrorTimes {
            scored_speech: 1000.0,
            missed: 174.0,
            false_alarm: 91.0,
            confusion: 189.0,
        };
        let s = DerScore::from_times(t, vec![]).unwrap();
        assert!((s.der - 45.4).abs() < 1e-9);
    }
}
