use std::collections::HashMap;
use std::sync::Arc;

use serde::Serialize;

use super::corpus::{Clip, Corpus};
use super::plan::{BackgroundEvent, MixPlan};
use super::SimConfig;
use crate::error::{Error, Result};
use crate::frontend::{Waveform, SAMPLE_RATE};
use crate::loudness::{db_to_gain, measure_clip_lufs};
use crate::types::SegmentList;

const SAMPLES_PER_MS: usize = SAMPLE_RATE as usize / 1000;
const LIMITER_KNEE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceClass {
    Speech,
    Noise,
    Music,
}

/// Loudness bookkeeping for one placed clip.
#[derive(Debug, Clone, Serialize)]
pub struct ClipLoudness {
    pub class: SourceClass,
    pub start_ms: u64,
    pub duration_ms: u64,
    pub target_lufs: f64,
    /// Re-measured after gain, in isolation; `None` if unmeasurable.
    pub measured_lufs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub waveform: Waveform,
    pub segments: SegmentList,
    pub clips: Vec<ClipLoudness>,
    /// Whether the soft limiter engaged.
    pub limited: bool,
}

/// Soft limiter: identity below the knee, then a tanh shoulder that
/// never exceeds full scale. Continuous with unit slope.
pub fn soft_limit(x: f64) -> f64 {
    let a = x.abs();
    if a <= LIMITER_KNEE {
        x
    } else {
        let room = 1.0 - LIMITER_KNEE;
        x.signum() * (LIMITER_KNEE + room * ((a - LIMITER_KNEE) / room).tanh())
    }
}

/// Linear fade-in and fade-out, each at most half the clip.
pub fn apply_fades(x: &mut [f64], fade_samples: usize) {
    let n = x.len();
    let f = fade_samples.min(n / 2);
    for i in 0..f {
        let g = i as f64 / f as f64;
        x[i] *= g;
        x[n - 1 - i] *= g;
    }
}

/// Window of `len` samples starting at `offset`, looping the source.
fn window(src: &[f64], offset: usize, len: usize) -> Vec<f64> {
    (0..len).map(|i| src[(offset + i) % src.len()]).collect()
}

/// Loaded sources keyed by clip name.
#[derive(Default)]
struct ClipCache(HashMap<String, Arc<Waveform>>);

impl ClipCache {
    fn get(&mut self, clip: &Clip) -> Result<Arc<Waveform>> {
        if let Some(w) = self.0.get(&clip.name) {
            return Ok(w.clone());
        }
        let w = clip.load()?;
        if w.is_empty() {
            return Err(Error::Input(format!("source {} is empty", clip.name)));
        }
        self.0.insert(clip.name.clone(), w.clone());
        Ok(w)
    }
}

/// Faded, loudness-normalized copy of a clip window.
fn prepare(src: &[f64], offset_ms: u64, duration_ms: u64, target: f64, fade_s: f64) -> (Vec<f64>, Option<f64>) {
    let mut x = window(
        src,
        offset_ms as usize * SAMPLES_PER_MS,
        duration_ms as usize * SAMPLES_PER_MS,
    );
    apply_fades(&mut x, (fade_s * SAMPLE_RATE as f64).round() as usize);
    let Some(level) = measure_clip_lufs(&x, SAMPLE_RATE) else {
        return (x, None);
    };
    let g = db_to_gain(target - level);
    x.iter_mut().for_each(|v| *v *= g);
    let after = measure_clip_lufs(&x, SAMPLE_RATE);
    (x, after)
}

pub fn render(plan: &MixPlan, corpus: &Corpus, cfg: &SimConfig) -> Result<Rendered> {
    let n = plan.recording_len_ms as usize * SAMPLES_PER_MS;
    let mut out = vec![0.0; n];
    let mut cache = ClipCache::default();
    let mut clips = Vec::new();
    let place = |out: &mut Vec<f64>, x: &[f64], start_ms: u64| {
        let s = start_ms as usize * SAMPLES_PER_MS;
        for (o, v) in out[s..].iter_mut().zip(x) {
            *o += v;
        }
    };

    for u in &plan.utterances {
        let (_, spk_clips) = corpus
            .speakers
            .iter()
            .find(|(id, _)| *id == u.speaker)
            .ok_or_else(|| Error::Input(format!("speaker {} is not in the corpus", u.speaker)))?;
        let clip = spk_clips
            .get(u.clip)
            .ok_or_else(|| Error::Input(format!("speaker {} has no clip {}", u.speaker, u.clip)))?;
        let src = cache.get(clip)?;
        let (x, measured) = prepare(
            src.samples(),
            u.clip_offset_ms,
            u.duration_ms,
            u.target_lufs,
            cfg.fade_s,
        );
        place(&mut out, &x, u.start_ms);
        clips.push(ClipLoudness {
            class: SourceClass::Speech,
            start_ms: u.start_ms,
            duration_ms: u.duration_ms,
            target_lufs: u.target_lufs,
            measured_lufs: measured,
        });
    }
    let bg: [(&[BackgroundEvent], &[Clip], SourceClass); 2] = [
        (&plan.noise, &corpus.noise, SourceClass::Noise),
        (&plan.music, &corpus.music, SourceClass::Music),
    ];
    for (events, pool, class) in bg {
        for e in events {
            let clip = pool
                .get(e.clip)
                .ok_or_else(|| Error::Input(format!("{class:?} clip {} missing from corpus", e.clip)))?;
            let src = cache.get(clip)?;
            let (x, measured) = prepare(
                src.samples(),
                e.clip_offset_ms,
                e.duration_ms,
                e.target_lufs,
                cfg.fade_s,
            );
            place(&mut out, &x, e.start_ms);
            clips.push(ClipLoudness {
                class,
                start_ms: e.start_ms,
                duration_ms: e.duration_ms,
                target_lufs: e.target_lufs,
                measured_lufs: measured,
            });
        }
    }

    let limited = out.iter().any(|v| v.abs() > 1.0);
    if limited {
        out.iter_mut().for_each(|v| *v = soft_limit(*v));
    }
    Ok(Rendered {
        waveform: Waveform::new(out, SAMPLE_RATE)?,
        segments: plan.segments(),
        clips,
        limited,
    })
}
