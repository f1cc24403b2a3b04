//! Integrated loudness (ITU-R BS.1770) for mono signals.
//!
//! K-weighting is the usual two-biquad cascade (high shelf, then high
//! pass), with coefficients derived for the actual sample rate via the
//! bilinear transform as in pyloudnorm. Gating uses 400 ms blocks with 75%
//! overlap, an absolute gate at -70 LUFS and a relative gate 10 LU below the
//! absolutely-gated mean.

use crate::error::{Error, Result};

const ABSOLUTE_GATE: f64 = -70.0;
const RELATIVE_GATE: f64 = -10.0;

#[derive(Debug, Clone)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn high_shelf(fs: f64) -> Self {
        let gain_db = 3.999_843_853_97;
        let q = 0.707_175_236_955_419_3;
        let fc = 1_681.974_450_955_532;
        let k = (std::f64::consts::PI * fc / fs).tan();
        let vh = 10f64.powf(gain_db / 20.0);
        let vb = vh.powf(0.499_666_774_155);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b: [
                (vh + vb * k / q + k * k) / a0,
                2.0 * (k * k - vh) / a0,
                (vh - vb * k / q + k * k) / a0,
            ],
            a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn high_pass(fs: f64) -> Self {
        let q = 0.500_327_037_325_395_3;
        let fc = 38.135_470_876_139_82;
        let k = (std::f64::consts::PI * fc / fs).tan();
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b: [1.0, -2.0, 1.0],
            a: [2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn apply(&mut self, x0: f64) -> f64 {
        let y0 = self.b[0] * x0 + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x0, self.x[0]];
        self.y = [y0, self.y[0]];
        y0
    }
}

/// K-weighted copy of the signal.
pub fn k_weight(samples: &[f64], sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut s1 = Biquad::high_shelf(fs);
    let mut s2 = Biquad::high_pass(fs);
    samples.iter().map(|&x| s2.apply(s1.apply(x))).collect()
}

fn power_to_lufs(p: f64) -> f64 {
    -0.691 + 10.0 * p.log10()
}

/// Integrated loudness in LUFS. `Ok(None)` means the signal is unmeasurable
/// (no block passes the absolute gate, e.g. digital silence).
pub fn measure_lufs(samples: &[f64], sample_rate: u32) -> Result<Option<f64>> {
    let block = (0.4 * sample_rate as f64).round() as usize;
    let hop = block / 4;
    if samples.len() < block {
        return Err(Error::Input(format!(
            "loudness needs at least one 400 ms block ({block} samples), got {}",
            samples.len()
        )));
    }
    let z: Vec<f64> = k_weight(samples, sample_rate).iter().map(|v| v * v).collect();
    // prefix sums keep block powers exact-ish without re-summing
    let mut prefix = Vec::with_capacity(z.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in &z {
        acc += v;
        prefix.push(acc);
    }
    let n_blocks = (samples.len() - block) / hop + 1;
    let powers: Vec<f64> = (0..n_blocks)
        .map(|j| (prefix[j * hop + block] - prefix[j * hop]) / block as f64)
        .collect();

    let abs_gated: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&p| p > 0.0 && power_to_lufs(p) > ABSOLUTE_GATE)
        .collect();
    if abs_gated.is_empty() {
        return Ok(None);
    }
    let mean_abs = abs_gated.iter().sum::<f64>() / abs_gated.len() as f64;
    let rel_threshold = power_to_lufs(mean_abs) + RELATIVE_GATE;
    let rel_gated: Vec<f64> = abs_gated
        .into_iter()
        .filter(|&p| power_to_lufs(p) > rel_threshold)
        .collect();
    let mean = rel_gated.iter().sum::<f64>() / rel_gated.len() as f64;
    Ok(Some(power_to_lufs(mean)))
}

/// Loudness of the whole K-weighted signal as a single block, for clips
/// shorter than one gating block. `None` for silence.
pub fn measure_lufs_ungated(samples: &[f64], sample_rate: u32) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let p = k_weight(samples, sample_rate).iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
    (p > 0.0 && power_to_lufs(p) > ABSOLUTE_GATE).then(|| power_to_lufs(p))
}

/// Gated measurement when possible, ungated for short clips.
pub fn measure_clip_lufs(samples: &[f64], sample_rate: u32) -> Option<f64> {
    match measure_lufs(samples, sample_rate) {
        Ok(v) => v,
        Err(_) => measure_lufs_ungated(samples, sample_rate),
    }
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}
