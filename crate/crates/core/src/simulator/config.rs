use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LufsTargets {
    pub speech: f64,
    pub music: f64,
    pub fg_noise: f64,
    pub bg_noise: f64,
}

impl Default for LufsTargets {
    fn default() -> Self {
        LufsTargets {
            speech: -17.0,
            music: -24.0,
            fg_noise: -21.0,
            bg_noise: -29.0,
        }
    }
}

/// Mixture recipe. Lengths and times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_speakers_mean: f64,
    pub n_speakers_std: f64,
    pub n_speakers_min: usize,
    pub n_speakers_max: usize,
    pub utt_len_mean: f64,
    pub utt_len_std: f64,
    pub utt_len_min_s: f64,
    pub silence_prob: f64,
    pub silence_mean: f64,
    pub silence_std: f64,
    pub silence_min_s: f64,
    pub overlap_prob: f64,
    pub overlap_min_s: f64,
    pub overlap_max_s: f64,
    pub recording_len_s: f64,
    pub noise_coverage: f64,
    pub music_coverage: f64,
    pub noise_event_min_s: f64,
    pub noise_event_max_s: f64,
    pub foreground_noise_prob: f64,
    pub lufs_targets: LufsTargets,
    pub recording_jitter: f64,
    pub clip_jitter: f64,
    pub fade_s: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_speakers_mean: 8.0,
            n_speakers_std: 2.5,
            n_speakers_min: 2,
            n_speakers_max: 18,
            utt_len_mean: 0.0,
            utt_len_std: 1.5,
            utt_len_min_s: 0.25,
            silence_prob: 0.8,
            silence_mean: 0.25,
            silence_std: 1.0,
            silence_min_s: 0.25,
            overlap_prob: 0.2,
            overlap_min_s: 0.25,
            overlap_max_s: 2.0,
            recording_len_s: 300.0,
            noise_coverage: 0.5,
            music_coverage: 0.5,
            noise_event_min_s: 2.0,
            noise_event_max_s: 10.0,
            foreground_noise_prob: 0.5,
            lufs_targets: LufsTargets::default(),
            recording_jitter: 2.0,
            clip_jitter: 1.0,
            fade_s: 0.1,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Short two-speaker recordings for desk-scale training.
    pub fn desk() -> Self {
        SimConfig {
            n_speakers_mean: 2.0,
            n_speakers_std: 0.0,
            n_speakers_min: 2,
            n_speakers_max: 2,
            recording_len_s: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let ranges = [
            ("n_speakers", self.n_speakers_min as f64, self.n_speakers_max as f64),
            ("overlap", self.overlap_min_s, self.overlap_max_s),
            ("noise_event", self.noise_event_min_s, self.noise_event_max_s),
        ];
        for (name, lo, hi) in ranges {
            if !(lo <= hi) {
                return bad(format!("{name} range has min {lo} > max {hi}"));
            }
        }
        for (name, p) in [
            ("silence_prob", self.silence_prob),
            ("overlap_prob", self.overlap_prob),
            ("noise_coverage", self.noise_coverage),
            ("music_coverage", self.music_coverage),
            ("foreground_noise_prob", self.foreground_noise_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.n_speakers_min < 1 {
            return bad("n_speakers_min must be >= 1".into());
        }
        if !(self.utt_len_min_s > 0.0 && self.silence_min_s >= 0.0 && self.overlap_min_s > 0.0) {
            return bad("minimum lengths must be positive".into());
        }
        if !(self.recording_len_s > 0.0) || !(self.noise_event_min_s > 0.0) {
            return bad("recording and event lengths must be positive".into());
        }
        if [
            self.n_speakers_std,
            self.utt_len_std,
            self.silence_std,
            self.recording_jitter,
            self.clip_jitter,
            self.fade_s,
        ]
        .iter()
        .any(|v| !(*v >= 0.0))
        {
            return bad("spreads, jitters and fades must be >= 0".into());
        }
        Ok(())
    }
}
