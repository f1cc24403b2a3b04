use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model variant; see [`Preset::flags`] for the (attention EDA, speaker head) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Baseline,
    Att,
    Spk,
    Plusplus,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Baseline, Preset::Att, Preset::Spk, Preset::Plusplus];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Preset::Baseline => (false, false),
            Preset::Att => (true, false),
            Preset::Spk => (false, true),
            Preset::Plusplus => (true, true),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Preset::Baseline),
            "att" => Ok(Preset::Att),
            "spk" => Ok(Preset::Spk),
            "plusplus" | "++" => Ok(Preset::Plusplus),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub use_positional_encoding: bool,
    pub use_attention_eda: bool,
    pub use_speaker_head: bool,
    /// Number of training-corpus speakers `J`; the speaker head has `J + 1`
    /// outputs with class 0 meaning "not a speaker".
    pub n_corpus_speakers: usize,
    pub max_decode_speakers: usize,
    pub existence_threshold: f64,
    pub stop_class_threshold: f64,
}

impl ModelConfig {
    /// Small configuration that trains on a laptop CPU.
    pub fn desk(preset: Preset, n_corpus_speakers: usize) -> Self {
        let (att, spk) = preset.flags();
        ModelConfig {
            input_dim: 600,
            n_layers: 2,
            dim: 64,
            n_heads: 4,
            ff_dim: 128,
            dropout: 0.1,
            use_positional_encoding: att,
            use_attention_eda: att,
            use_speaker_head: spk,
            n_corpus_speakers,
            max_decode_speakers: 20,
            existence_threshold: 0.5,
            stop_class_threshold: 0.5,
        }
    }

    /// Full-size configuration (4 layers, 512 units, 8 heads, ff 1024).
    pub fn full_scale(preset: Preset, n_corpus_speakers: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            dim: 512,
            n_heads: 8,
            ff_dim: 1024,
            ..Self::desk(preset, n_corpus_speakers)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.n_heads == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return fail(format!("dim {} not divisible by {} heads", self.dim, self.n_heads));
        }
        if self.input_dim == 0 || self.ff_dim == 0 {
            return fail("input_dim and ff_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0,1)", self.dropout));
        }
        if self.use_speaker_head && self.n_corpus_speakers == 0 {
            return fail("speaker head needs at least one corpus speaker".into());
        }
        if self.max_decode_speakers == 0 {
            return fail("max_decode_speakers must be >= 1".into());
        }
        for (name, v) in [
            ("existence_threshold", self.existence_threshold),
            ("stop_class_threshold", self.stop_class_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} {v} outside [0,1]"));
            }
        }
        Ok(())
    }
}
