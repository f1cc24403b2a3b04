//! Log-mel feature extraction, frame splicing and WAV I/O.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WIN_LENGTH: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 512;
pub const ENERGY_FLOOR: f64 = 1e-10;

/// 16 kHz mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Input(format!(
                "sample rate {sample_rate} Hz unsupported, expected {SAMPLE_RATE}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Input("waveform contains non-finite samples".into()));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn silence(seconds: f64) -> Self {
        let n = (seconds * SAMPLE_RATE as f64).round() as usize;
        Waveform {
            samples: vec![0.0; n],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads RIFF PCM: mono, 16 kHz, either 16-bit integer or 32-bit float.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::Input(format!("{}: {other}", path.display())),
        })?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Input(format!(
                "{}: {} channels, only mono is supported",
                path.display(),
                spec.channels
            )));
        }
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::Input(format!(
                "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
                path.display(),
                spec.sample_rate
            )));
        }
        let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 / 32768.0))
                .collect::<std::result::Result<_, _>>()?,
            (hound::SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .map(|s| s.map(|v| v as f64))
                .collect::<std::result::Result<_, _>>()?,
            (fmt, bits) => {
                return Err(Error::Input(format!(
                    "{}: {bits}-bit {fmt:?} samples unsupported (need 16-bit int or 32-bit float)",
                    path.display()
                )))
            }
        };
        Waveform::new(samples, spec.sample_rate)
    }

    /// Writes 32-bit float mono PCM.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::Wav(other),
        })?;
        for &s in &self.samples {
            w.write_sample(s as f32)?;
        }
        w.finalize()?;
        Ok(())
    }
}

/// `T x F` feature frames with their hop in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<Vec<f64>>,
    frame_shift_s: f64,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vec<f64>>, frame_shift_s: f64) -> Result<Self> {
        if let Some(w) = frames.first().map(Vec::len) {
            if frames.iter().any(|f| f.len() != w) {
                return Err(Error::Input("ragged feature frames".into()));
            }
        }
        Ok(FeatureSequence { frames, frame_shift_s })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map(Vec::len).unwrap_or(0)
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Number of 25 ms / 10 ms frames for `n` samples, without padding.
pub fn frame_count(n: usize) -> usize {
    if n < WIN_LENGTH {
        0
    } else {
        (n - WIN_LENGTH) / HOP_LENGTH + 1
    }
}

/// Triangular HTK-mel filterbank over 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels` rows over `N_FFT / 2 + 1` power-spectrum bins.
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize) -> Self {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
            .collect();
        let n_bins = N_FFT / 2 + 1;
        let bin_hz = |k: usize| k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = bin_hz(k);
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        MelFilterbank {
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn n_mels(&self) -> usize {
        self.weights.len()
    }
}

/// Reusable log-mel extractor; holds the FFT plan and filterbank.
pub struct LogMel {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bank: MelFilterbank,
}

impl LogMel {
    pub fn new(n_mels: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..WIN_LENGTH)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WIN_LENGTH as f64).cos())
            .collect();
        LogMel {
            fft,
            window,
            bank: MelFilterbank::new(n_mels),
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn compute(&self, w: &Waveform) -> Result<FeatureSequence> {
        let x = w.samples();
        let n_frames = frame_count(x.len());
        if n_frames == 0 {
            return Err(Error::Input(format!(
                "waveform has {} samples, need at least {WIN_LENGTH}",
                x.len()
            )));
        }
        let n_bins = N_FFT / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; n_bins];
        let mut frames = Vec::with_capacity(n_frames);
        for f in 0..n_frames {
            let start = f * HOP_LENGTH;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < WIN_LENGTH {
                    Complex::new(x[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = self
                .bank
                .weights
                .iter()
                .map(|wts| {
                    let e: f64 = wts.iter().zip(&power).map(|(a, b)| a * b).sum();
                    e.max(ENERGY_FLOOR).ln()
                })
                .collect();
            frames.push(row);
        }
        FeatureSequence::new(frames, HOP_LENGTH as f64 / SAMPLE_RATE as f64)
    }
}

pub fn logmel(w: &Waveform, n_mels: usize) -> Result<FeatureSequence> {
    LogMel::new(n_mels).compute(w)
}

/// Concatenates each frame with `context` neighbours on both sides (edges
/// replicated), then keeps every `factor`-th frame.
pub fn splice_subsample(f: &FeatureSequence, context: usize, factor: usize) -> Result<FeatureSequence> {
    if factor == 0 {
        return Err(Error::Input("subsampling factor must be >= 1".into()));
    }
    let n = f.len();
    let frames: Vec<Vec<f64>> = (0..n)
        .step_by(factor)
        .map(|center| {
            let mut row = Vec::with_capacity(f.width() * (2 * context + 1));
            for off in -(context as isize)..=(context as isize) {
                let idx = (center as isize + off).clamp(0, n as isize - 1) as usize;
                row.extend_from_slice(&f.frames[idx]);
            }
            row
        })
        .collect();
    FeatureSequence::new(frames, f.frame_shift_s * factor as f64)
}

/// The model input pipeline: 40-dim log-mel, +-7 frame splicing, 10x
/// subsampling.
pub fn model_features(w: &Waveform) -> Result<FeatureSequence> {
    let lm = logmel(w, 40)?;
    splice_subsample(&lm, 7, 10)
}
