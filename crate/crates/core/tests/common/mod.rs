//! Finite-difference gradient oracle.

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Below this magnitude both gradients count as zero and the error is
/// absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradStats {
    pub checks: usize,
    pub max_rel: f64,
}

impl GradStats {
    pub fn record(&mut self, analytic: f64, numeric: f64) {
        self.checks += 1;
        self.max_rel = self.max_rel.max(rel_err(analytic, numeric));
    }

    pub fn merge(&mut self, o: GradStats) {
        self.checks += o.checks;
        self.max_rel = self.max_rel.max(o.max_rel);
    }
}
