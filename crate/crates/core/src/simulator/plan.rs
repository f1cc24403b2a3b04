//! Mixture schedules. All times are integer milliseconds internally so the
//! plan, the rendered audio and the RTTM agree exactly.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::corpus::Corpus;
use super::SimConfig;
use crate::error::{Error, Result};
use crate::types::{Segment, SegmentList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Overlap,
    Silence,
    Adjacent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceEvent {
    pub speaker: String,
    /// Index into the speaker's clip list.
    pub clip: usize,
    pub clip_offset_ms: u64,
    pub start_ms: u64,
    pub duration_ms: u64,
    pub target_lufs: f64,
    /// How this utterance joins the one before it; `None` for the first.
    pub joint: Option<Joint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackgroundEvent {
    pub clip: usize,
    pub clip_offset_ms: u64,
    pub start_ms: u64,
    pub duration_ms: u64,
    pub target_lufs: f64,
    /// Noise only: foreground or background loudness class.
    pub foreground: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassTargets {
    pub speech: f64,
    pub music: f64,
    pub fg_noise: f64,
    pub bg_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixPlan {
    pub recording_len_ms: u64,
    pub speakers: Vec<String>,
    pub utterances: Vec<UtteranceEvent>,
    pub noise: Vec<BackgroundEvent>,
    pub music: Vec<BackgroundEvent>,
    pub targets: ClassTargets,
}

pub(crate) fn ms(s: f64) -> u64 {
    (s * 1000.0).round().max(0.0) as u64
}

fn to_s(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

fn uniform_around(rng: &mut ChaCha8Rng, centre: f64, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(centre - half..=centre + half)
    } else {
        centre
    }
}

/// `|N(mean, std)|`-style draw floored at `min`: values below the mean are
/// folded, matching a normal truncated at its mean when `min == mean`.
fn folded_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, min: f64) -> f64 {
    let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    (mean + (std * z).abs()).max(min)
}

/// Speaker count: a normal draw rounded to the nearest integer and clipped.
pub fn sample_speaker_count(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = Normal::new(cfg.n_speakers_mean, cfg.n_speakers_std.max(0.0))
        .unwrap()
        .sample(rng);
    (x.round().max(0.0) as usize).clamp(cfg.n_speakers_min, cfg.n_speakers_max)
}

impl MixPlan {
    pub fn recording_len_s(&self) -> f64 {
        to_s(self.recording_len_ms)
    }

    /// Ground truth: one segment per utterance event.
    pub fn segments(&self) -> SegmentList {
        SegmentList::new(
            self.utterances
                .iter()
                .map(|u| Segment::new(u.speaker.clone(), to_s(u.start_ms), to_s(u.start_ms + u.duration_ms)))
                .collect(),
        )
        .expect("utterance events have positive length")
    }

    /// Largest number of utterances active at any instant.
    pub fn max_concurrency(&self) -> usize {
        let mut edges: Vec<(u64, i32)> = self
            .utterances
            .iter()
            .flat_map(|u| [(u.start_ms, 1), (u.start_ms + u.duration_ms, -1)])
            .collect();
        // ends sort before starts at the same instant
        edges.sort();
        let mut cur = 0i32;
        let mut best = 0i32;
        for (_, d) in edges {
            cur += d;
            best = best.max(cur);
        }
        best as usize
    }
}

pub fn sample_plan(cfg: &SimConfig, corpus: &Corpus, rng: &mut ChaCha8Rng) -> Result<MixPlan> {
    cfg.validate()?;
    if corpus.speakers.len() < cfg.n_speakers_max {
        return Err(Error::Config(format!(
            "corpus has {} speakers but up to {} may be drawn",
            corpus.speakers.len(),
            cfg.n_speakers_max
        )));
    }
    let len_ms = ms(cfg.recording_len_s);
    let t = &cfg.lufs_targets;
    let j = cfg.recording_jitter;
    let targets = ClassTargets {
        speech: uniform_around(rng, t.speech, j),
        music: uniform_around(rng, t.music, j),
        fg_noise: uniform_around(rng, t.fg_noise, j),
        bg_noise: uniform_around(rng, t.bg_noise, j),
    };

    let n_spk = sample_speaker_count(cfg, rng);
    let chosen: Vec<usize> = index::sample(rng, corpus.speakers.len(), n_spk).into_vec();

    let mut utterances: Vec<UtteranceEvent> = Vec::new();
    // latest-ending utterance, and the end of everything before it
    let mut frontier: Option<(u64, u64, usize)> = None;
    let mut second_end = 0u64;
    loop {
        let (start, joint, speaker) = match frontier {
            None => (0, None, chosen[rng.random_range(0..n_spk)]),
            Some((f_start, f_end, f_spk)) => {
                let others: Vec<usize> = chosen.iter().copied().filter(|&s| s != f_spk).collect();
                let cap = f_end - f_start.max(second_end);
                if rng.random::<f64>() < cfg.overlap_prob && !others.is_empty() && cap > 0 {
                    let lo = ms(cfg.overlap_min_s);
                    let hi = ms(cfg.overlap_max_s).min(cap);
                    let d = if hi >= lo { rng.random_range(lo..=hi) } else { cap };
                    (
                        f_end - d,
                        Some(Joint::Overlap),
                        others[rng.random_range(0..others.len())],
                    )
                } else if rng.random::<f64>() < cfg.silence_prob {
                    let gap = ms(folded_normal(rng, cfg.silence_mean, cfg.silence_std, cfg.silence_min_s));
                    (f_end + gap, Some(Joint::Silence), chosen[rng.random_range(0..n_spk)])
                } else {
                    (f_end, Some(Joint::Adjacent), chosen[rng.random_range(0..n_spk)])
                }
            }
        };
        if start >= len_ms {
            break;
        }
        let clips = &corpus.speakers[speaker].1;
        let clip = rng.random_range(0..clips.len());
        let clip_ms = clips[clip].len_ms();
        let want = ms(folded_normal(rng, cfg.utt_len_mean, cfg.utt_len_std, cfg.utt_len_min_s));
        let dur = want.min(clip_ms);
        if dur == 0 {
            return Err(Error::Config(format!("source clip {} is empty", clips[clip].name)));
        }
        let clip_offset_ms = rng.random_range(0..=clip_ms - dur);
        let end = start + dur;
        utterances.push(UtteranceEvent {
            speaker: corpus.speakers[speaker].0.clone(),
            clip,
            clip_offset_ms,
            start_ms: start,
            duration_ms: dur.min(len_ms - start),
            target_lufs: uniform_around(rng, targets.speech, cfg.clip_jitter),
            joint,
        });
        frontier = match frontier {
            Some((fs, fe, fspk)) if fe >= end => {
                second_end = second_end.max(end);
                Some((fs, fe, fspk))
            }
            Some((_, fe, _)) => {
                second_end = second_end.max(fe);
                Some((start, end, speaker))
            }
            None => Some((start, end, speaker)),
        };
    }

    let noise = schedule_background(cfg, cfg.noise_coverage, len_ms, &corpus.noise, rng, |rng| {
        if rng.random::<f64>() < cfg.foreground_noise_prob {
            (targets.fg_noise, true)
        } else {
            (targets.bg_noise, false)
        }
    });
    let music = schedule_background(cfg, cfg.music_coverage, len_ms, &corpus.music, rng, |_| {
        (targets.music, false)
    });

    let mut speakers: Vec<String> = utterances.iter().map(|u| u.speaker.clone()).collect();
    speakers.sort();
    speakers.dedup();
    Ok(MixPlan {
        recording_len_ms: len_ms,
        speakers,
        utterances,
        noise,
        music,
        targets,
    })
}

/// Non-overlapping events whose lengths sum to `coverage * len`, placed in
/// random order with a random partition of the remaining time as gaps.
fn schedule_background(
    cfg: &SimConfig,
    coverage: f64,
    len_ms: u64,
    clips: &[super::corpus::Clip],
    rng: &mut ChaCha8Rng,
    mut class: impl FnMut(&mut ChaCha8Rng) -> (f64, bool),
) -> Vec<BackgroundEvent> {
    if clips.is_empty() || coverage <= 0.0 {
        return Vec::new();
    }
    let total = ((coverage * len_ms as f64).round() as u64).min(len_ms);
    let (lo, hi) = (ms(cfg.noise_event_min_s), ms(cfg.noise_event_max_s));
    let mut durations = Vec::new();
    let mut acc = 0;
    while acc < total {
        let d = rng.random_range(lo..=hi).min(total - acc);
        durations.push(d);
        acc += d;
    }
    durations.shuffle(rng);
    let free = len_ms - total;
    let mut cuts: Vec<u64> = (0..durations.len()).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut events = Vec::with_capacity(durations.len());
    let mut prev_cut = 0;
    let mut cursor = 0;
    for (d, cut) in durations.into_iter().zip(cuts) {
        cursor += cut - prev_cut;
        prev_cut = cut;
        let clip = rng.random_range(0..clips.len());
        let clip_ms = clips[clip].len_ms();
        let clip_offset_ms = if clip_ms > d {
            rng.random_range(0..=clip_ms - d)
        } else {
            0
        };
        let (centre, foreground) = class(rng);
        events.push(BackgroundEvent {
            clip,
            clip_offset_ms,
            start_ms: cursor,
            duration_ms: d,
            target_lufs: uniform_around(rng, centre, cfg.clip_jitter),
            foreground,
        });
        cursor += d;
    }
    events
}
