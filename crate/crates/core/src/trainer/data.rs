use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::load_rttm;
use crate::frontend::{model_features, Waveform};
use crate::simulator::Manifest;
use crate::tensor::Tensor;
use crate::types::{ActivityMatrix, SegmentList};

/// One recording prepared for training or validation.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    /// `T x F` model features.
    pub features: Tensor,
    pub frame_shift_s: f64,
    /// Reference speakers in sorted order; columns of `labels`.
    pub speakers: Vec<String>,
    /// `T x S` frame-centre rasterization of `reference`.
    pub labels: ActivityMatrix,
    /// Corpus class (1-based) of each reference speaker, when known.
    pub classes: Option<Vec<usize>>,
    pub reference: SegmentList,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        wav: &Waveform,
        reference: SegmentList,
        classes: Option<Vec<usize>>,
    ) -> Result<Self> {
        let feats = model_features(wav)?;
        let t = feats.len();
        let shift = feats.frame_shift_s();
        let speakers = reference.speakers();
        if classes.as_ref().is_some_and(|c| c.len() != speakers.len()) {
            return Err(Error::Input("one class label per reference speaker required".into()));
        }
        Ok(Example {
            id: id.into(),
            features: Tensor::matrix(t, feats.width(), feats.flat()),
            frame_shift_s: shift,
            labels: ActivityMatrix::from_segments(&reference, &speakers, t, shift),
            speakers,
            classes,
            reference,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.labels.frames()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        Self::from_manifest(&Manifest::load(manifest_path)?)
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let examples = m
            .entries
            .iter()
            .map(|e| {
                let wav = Waveform::read_wav(&m.resolve(&e.wav))?;
                let reference = load_rttm(&m.resolve(&e.rttm))?
                    .remove(&e.recording_id)
                    .unwrap_or_default();
                let classes = if m.resolve(&e.labels).exists() {
                    let map = m.load_labels(e)?;
                    let cls = reference
                        .speakers()
                        .iter()
                        .map(|s| {
                            map.get(s).copied().ok_or_else(|| {
                                Error::Input(format!("{}: no class label for speaker {s}", e.recording_id))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(cls)
                } else {
                    None
                };
                Example::new(e.recording_id.clone(), &wav, reference, classes)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Highest corpus class seen, i.e. the speaker-head size `J`.
    pub fn n_classes(&self) -> usize {
        self.examples
            .iter()
            .filter_map(|e| e.classes.as_ref())
            .flatten()
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.cols())
    }
}
