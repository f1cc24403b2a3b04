//! Score-level late fusion of audio activity with visual streams.

use crate::assign::hungarian;
use crate::error::{Error, Result};
use crate::types::ActivityMatrix;
use crate::visual::{track_activity, FaceTrack};

fn check_timeline(audio: &ActivityMatrix, visual: &ActivityMatrix) -> Result<()> {
    if (audio.frame_shift_s() - visual.frame_shift_s()).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "frame shift mismatch: audio {} s, visual {} s",
            audio.frame_shift_s(),
            visual.frame_shift_s()
        )));
    }
    if audio.frames() != visual.frames() {
        return Err(Error::Contract(format!(
            "frame count mismatch: audio {}, visual {}",
            audio.frames(),
            visual.frames()
        )));
    }
    if visual.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract("visual streams must be binary".into()));
    }
    Ok(())
}

/// `score[s][v]`: audio probability mass of stream `s` over frames where
/// visual stream `v` is active.
pub fn match_scores(audio: &ActivityMatrix, visual: &ActivityMatrix) -> Vec<Vec<f64>> {
    (0..audio.speakers())
        .map(|s| {
            (0..visual.speakers())
                .map(|v| (0..audio.frames()).map(|t| audio.get(t, s) * visual.get(t, v)).sum())
                .collect()
        })
        .collect()
}

/// One-to-one `(audio, visual)` pairs, `min(S, S')` of them, maximizing the
/// summed match score.
pub fn match_streams(audio: &ActivityMatrix, visual: &ActivityMatrix) -> Result<Vec<(usize, usize)>> {
    check_timeline(audio, visual)?;
    if audio.speakers() == 0 || visual.speakers() == 0 {
        return Ok(Vec::new());
    }
    let neg: Vec<Vec<f64>> = match_scores(audio, visual)
        .into_iter()
        .map(|r| r.into_iter().map(|v| -v).collect())
        .collect();
    Ok(hungarian(&neg)?
        .into_iter()
        .enumerate()
        .filter_map(|(s, v)| v.map(|v| (s, v)))
        .collect())
}

/// Matched audio streams become 1.0 wherever their visual partner is
/// active. Unmatched visual streams are appended as new columns, so the
/// output has `max(S, S')` columns when every audio or visual stream is
/// paired. With `mute_others`, frames where exactly one visual stream is
/// active are zeroed in every other column.
pub fn fuse_scores(
    audio: &ActivityMatrix,
    visual: &ActivityMatrix,
    mapping: &[(usize, usize)],
    mute_others: bool,
) -> Result<ActivityMatrix> {
    check_timeline(audio, visual)?;
    let (s_a, s_v) = (audio.speakers(), visual.speakers());
    let mut column_of = vec![None; s_v];
    for &(s, v) in mapping {
        if s >= s_a || v >= s_v || column_of[v].is_some() || mapping.iter().filter(|m| m.0 == s).count() > 1 {
            return Err(Error::Contract(format!("invalid stream pair ({s}, {v})")));
        }
        column_of[v] = Some(s);
    }
    let mut next = s_a;
    for c in column_of.iter_mut().filter(|c| c.is_none()) {
        *c = Some(next);
        next += 1;
    }
    let column_of: Vec<usize> = column_of.into_iter().map(Option::unwrap).collect();

    let frames = audio.frames();
    let mut out = ActivityMatrix::zeros(frames, next, audio.frame_shift_s());
    for t in 0..frames {
        for s in 0..s_a {
            out.set(t, s, audio.get(t, s));
        }
        let mut active = (0..s_v).filter(|&v| visual.get(t, v) == 1.0);
        let first = active.next();
        let only_one = first.is_some() && active.next().is_none();
        for v in 0..s_v {
            if visual.get(t, v) == 1.0 {
                out.set(t, column_of[v], 1.0);
            }
        }
        if mute_others && only_one {
            let keep = column_of[first.unwrap()];
            for s in (0..next).filter(|&s| s != keep) {
                out.set(t, s, 0.0);
            }
        }
    }
    Ok(out)
}

/// Track-level fusion: each track independently overwrites the audio
/// stream with the highest match score (lowest index on ties) at its
/// active frames. The column count is unchanged.
pub fn fuse_tracks(audio: &ActivityMatrix, tracks: &[FaceTrack]) -> Result<ActivityMatrix> {
    let mut out = audio.clone();
    if audio.speakers() == 0 {
        return Ok(out);
    }
    for track in tracks {
        let on = track_activity(track, audio.frame_shift_s(), audio.frames());
        let score = |s: usize| -> f64 { (0..audio.frames()).filter(|&t| on[t]).map(|t| audio.get(t, s)).sum() };
        let mut best = (0, score(0));
        for s in 1..audio.speakers() {
            let v = score(s);
            if v > best.1 {
                best = (s, v);
            }
        }
        for (t, &a) in on.iter().enumerate() {
            if a {
                out.set(t, best.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visual::FaceFrame;

    fn m(cols: &[Vec<f64>], frames: usize) -> ActivityMatrix {
        ActivityMatrix::from_columns(cols, frames, 0.1).unwrap()
    }

    #[test]
    fn single_pair_and_dominant_match() {
        let a = m(&[vec![0.2, 0.4, 0.9]], 3);
        let v = m(&[vec![1.0, 0.0, 1.0]], 3);
        assert_eq!(match_scores(&a, &v)[0][0], 0.2 + 0.9);
        assert_eq!(match_streams(&a, &v).unwrap(), vec![(0, 0)]);
        let a = m(&[vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 1.0, 0.0, 0.0]], 4);
        let v = m(&[vec![1.0, 1.0, 0.0, 0.0]], 4);
        assert_eq!(match_streams(&a, &v).unwrap(), vec![(1, 0)]);
    }

    #[test]
    fn mismatched_timelines_are_contract_errors() {
        let a = m(&[vec![0.5; 3]], 3);
        let v = ActivityMatrix::from_columns(&[vec![1.0; 3]], 3, 0.04).unwrap();
        assert!(matches!(match_streams(&a, &v), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_visual_is_identity_and_column_rule() {
        let a = m(&[vec![0.3, 0.6], vec![0.1, 0.2]], 2);
        let v = m(&[vec![0.0, 0.0]], 2);
        let map = match_streams(&a, &v).unwrap();
        assert_eq!(fuse_scores(&a, &v, &map, false).unwrap(), a);
        let none = ActivityMatrix::zeros(2, 0, 0.1);
        assert_eq!(fuse_scores(&a, &none, &[], true).unwrap(), a);

        let a1 = m(&[vec![0.9, 0.1]], 2);
        let v2 = m(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        let map = match_streams(&a1, &v2).unwrap();
        let f = fuse_scores(&a1, &v2, &map, false).unwrap();
        assert_eq!(f.speakers(), 2);
        assert_eq!(f.column(1), vec![0.0, 1.0]);
    }

    #[test]
    fn mute_others_one_hot() {
        let a = m(&[vec![0.7, 0.7], vec![0.6, 0.6]], 2);
        let v = m(&[vec![1.0, 0.0]], 2);
        let f = fuse_scores(&a, &v, &[(0, 0)], true).unwrap();
        assert_eq!((f.get(0, 0), f.get(0, 1)), (1.0, 0.0));
        assert_eq!((f.get(1, 0), f.get(1, 1)), (0.7, 0.6));
    }

    fn tr(id: &str, active: &[u8]) -> FaceTrack {
        FaceTrack {
            track_id: id.into(),
            frames: active
                .iter()
                .enumerate()
                .map(|(k, &a)| FaceFrame {
                    t: k as f64 * 0.1,
                    active: a,
                })
                .collect(),
            embeddings: vec![vec![1.0]],
        }
    }

    #[test]
    fn track_level_fusion() {
        let a = m(&[vec![0.1; 4], vec![0.2, 0.8, 0.8, 0.2], vec![0.3; 4]], 4);
        assert_eq!(fuse_tracks(&a, &[]).unwrap(), a);
        let f = fuse_tracks(&a, &[tr("x", &[0, 1, 1, 0])]).unwrap();
        assert_eq!(f.column(1), vec![0.2, 1.0, 1.0, 0.2]);
        assert_eq!((f.column(0), f.column(2)), (a.column(0), a.column(2)));
        let f = fuse_tracks(&a, &[tr("x", &[0, 1, 1, 0]), tr("y", &[0, 0, 1, 1])]).unwrap();
        assert_eq!(f.speakers(), 3);
        assert_eq!(f.column(1), vec![0.2, 1.0, 1.0, 1.0]);
    }
}
