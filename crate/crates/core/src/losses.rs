//! Training objectives.
//!
//! Two layers live here: value-level functions that score a fixed set of
//! predictions and pick the best permutation (used for assignment, tests
//! and reporting), and graph-level builders that record the same losses on
//! a [`Graph`] under an already chosen permutation so they can be
//! differentiated.

use serde::{Deserialize, Serialize};

use crate::assign::{exhaustive_min, hungarian_perm, round_log_to_permutation, sinkhorn_log};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::types::ActivityMatrix;

/// Probability clamp applied before every log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta0: f64,
    pub beta_decay: f64,
    pub gamma: f64,
    pub epoch: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.01,
            beta0: 0.1,
            beta_decay: 0.92,
            gamma: 5.0,
            epoch: 0,
        }
    }
}

impl LossWeights {
    pub fn at_epoch(self, epoch: usize) -> Self {
        LossWeights { epoch, ..self }
    }

    /// Speaker-loss weight for the current epoch: `beta0 * beta_decay^epoch`.
    pub fn beta(&self) -> f64 {
        self.beta0 * self.beta_decay.powi(self.epoch as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PitMode {
    Exhaustive,
    /// Exact, polynomial; agrees with `Exhaustive` up to tie-breaking.
    Hungarian,
    Sinkhorn {
        temperature: f64,
        n_iters: usize,
    },
}

impl PitMode {
    pub fn sinkhorn_default() -> Self {
        PitMode::Sinkhorn {
            temperature: 0.05,
            n_iters: 200,
        }
    }
}

/// How a summed loss is reduced before optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    Sum,
    /// Divided by the number of (frame, stream) cells.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `permutation[s]` is the label stream matched to estimated stream `s`.
    pub permutation: Vec<usize>,
    pub loss: f64,
    pub soft_matrix: Option<Vec<Vec<f64>>>,
}

fn clamp_prob(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Contract(format!("probability {p} outside [0,1]")));
    }
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}

/// Minimizes a square cost matrix with the requested solver.
pub fn solve_pit(cost: &[Vec<f64>], mode: PitMode) -> Result<AssignmentResult> {
    match mode {
        PitMode::Exhaustive => {
            let (permutation, loss) = exhaustive_min(cost);
            Ok(AssignmentResult {
                permutation,
                loss,
                soft_matrix: None,
            })
        }
        PitMode::Hungarian => {
            let permutation = hungarian_perm(cost)?;
            let loss = permutation.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            Ok(AssignmentResult {
                permutation,
                loss,
                soft_matrix: None,
            })
        }
        PitMode::Sinkhorn { temperature, n_iters } => {
            if cost.is_empty() {
                return Ok(AssignmentResult {
                    permutation: vec![],
                    loss: 0.0,
                    soft_matrix: Some(vec![]),
                });
            }
            let log_soft = sinkhorn_log(cost, temperature, n_iters)?;
            let permutation = round_log_to_permutation(&log_soft)?;
            let soft = log_soft
                .into_iter()
                .map(|r| r.into_iter().map(f64::exp).collect())
                .collect();
            let loss = permutation.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            Ok(AssignmentResult {
                permutation,
                loss,
                soft_matrix: Some(soft),
            })
        }
    }
}

/// `cost[s][l] = sum_t -(gamma * y[t][l] * ln yhat[t][s] + (1 - y[t][l]) * ln(1 - yhat[t][s]))`.
pub fn bce_cost_matrix(y_hat: &ActivityMatrix, y_true: &ActivityMatrix, gamma: f64) -> Result<Vec<Vec<f64>>> {
    if y_hat.frames() != y_true.frames() || y_hat.speakers() != y_true.speakers() {
        return Err(Error::Dimension {
            op: "dia_bce_pit",
            lhs: vec![y_hat.frames(), y_hat.speakers()],
            rhs: vec![y_true.frames(), y_true.speakers()],
        });
    }
    let (t_len, s_len) = (y_hat.frames(), y_hat.speakers());
    let mut logs = vec![(0.0, 0.0); t_len * s_len];
    for t in 0..t_len {
        for s in 0..s_len {
            let p = clamp_prob(y_hat.get(t, s))?;
            logs[t * s_len + s] = (p.ln(), (1.0 - p).ln());
        }
    }
    let mut cost = vec![vec![0.0; s_len]; s_len];
    for (s, row) in cost.iter_mut().enumerate() {
        for (l, c) in row.iter_mut().enumerate() {
            *c = (0..t_len)
                .map(|t| {
                    let y = y_true.get(t, l);
                    let (lp, lq) = logs[t * s_len + s];
                    -(gamma * y * lp + (1.0 - y) * lq)
                })
                .sum();
        }
    }
    Ok(cost)
}

/// Permutation-invariant weighted BCE between estimated and reference
/// activity streams (summed over frames and streams).
pub fn dia_bce_pit(
    y_hat: &ActivityMatrix,
    y_true: &ActivityMatrix,
    weights: &LossWeights,
    mode: PitMode,
) -> Result<AssignmentResult> {
    let cost = bce_cost_matrix(y_hat, y_true, weights.gamma)?;
    solve_pit(&cost, mode)
}

/// `cost[s][l] = -ln p_s(labels[l])` over the first `labels.len()` rows.
pub fn speaker_cost_matrix(posteriors: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    if posteriors.len() != labels.len() {
        return Err(Error::Dimension {
            op: "speaker_ce_pit",
            lhs: vec![posteriors.len()],
            rhs: vec![labels.len()],
        });
    }
    let classes = posteriors.first().map(Vec::len).unwrap_or(0);
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l >= classes) {
        return Err(Error::Contract(format!(
            "speaker label {bad} outside 1..={}",
            classes.saturating_sub(1)
        )));
    }
    posteriors
        .iter()
        .map(|row| labels.iter().map(|&l| Ok(-clamp_prob(row[l])?.ln())).collect())
        .collect()
}

/// Permutation-invariant speaker-classification cross-entropy. Class 0 is
/// reserved for "not a speaker"; labels are in `1..=J`.
pub fn speaker_ce_pit(posteriors: &[Vec<f64>], labels: &[usize], mode: PitMode) -> Result<AssignmentResult> {
    let cost = speaker_cost_matrix(posteriors, labels)?;
    solve_pit(&cost, mode)
}

/// Cross-entropy pushing the attractor after the last speaker into class 0.
pub fn stop_ce(row: &[f64]) -> Result<f64> {
    let sum: f64 = row.iter().sum();
    if row.is_empty() || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("posterior row sums to {sum}, expected 1")));
    }
    Ok(-clamp_prob(row[0])?.ln())
}

/// `dia + beta(epoch) * (spk + alpha * stop)`, or just `dia` when the
/// speaker head is disabled.
pub fn total_loss(dia: f64, spk: f64, stop: f64, weights: &LossWeights, speaker_head: bool) -> Result<f64> {
    if ![dia, spk, stop].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("total_loss".into()));
    }
    Ok(if speaker_head {
        dia + weights.beta() * (spk + weights.alpha * stop)
    } else {
        dia
    })
}

// ---- graph-level builders -------------------------------------------------

/// Weighted BCE of `probs` (`T x S`) against fixed targets that are already
/// permuted into estimated-stream order.
pub fn dia_bce_graph(g: &mut Graph, probs: Var, targets: &Tensor, gamma: f64, reduction: Reduction) -> Result<Var> {
    let (t_len, s_len) = targets.dims2()?;
    let p = g.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)?;
    let lp = g.log(p)?;
    let neg = g.scale(p, -1.0)?;
    let q = g.add_scalar(neg, 1.0)?;
    let lq = g.log(q)?;
    let pos_w = Tensor::matrix(t_len, s_len, targets.data().iter().map(|y| gamma * y).collect());
    let neg_w = Tensor::matrix(t_len, s_len, targets.data().iter().map(|y| 1.0 - y).collect());
    let pw = g.constant(pos_w);
    let nw = g.constant(neg_w);
    let a = g.mul(lp, pw)?;
    let b = g.mul(lq, nw)?;
    let ab = g.add(a, b)?;
    let s = g.sum(ab)?;
    let scale = match reduction {
        Reduction::Sum => -1.0,
        Reduction::Mean => -1.0 / (t_len * s_len) as f64,
    };
    g.scale(s, scale)
}

/// Negative log-likelihood of chosen classes: `-sum_r log_probs[r][classes[r]]`.
pub fn nll_graph(g: &mut Graph, log_probs: Var, classes: &[usize]) -> Result<Var> {
    let (r, c) = g.value(log_probs).dims2()?;
    if r != classes.len() || classes.iter().any(|&k| k >= c) {
        return Err(Error::Dimension {
            op: "nll_graph",
            lhs: vec![r, c],
            rhs: classes.to_vec(),
        });
    }
    let mut mask = vec![0.0; r * c];
    for (i, &k) in classes.iter().enumerate() {
        mask[i * c + k] = 1.0;
    }
    let m = g.constant(Tensor::matrix(r, c, mask));
    let picked = g.mul(log_probs, m)?;
    let s = g.sum(picked)?;
    g.scale(s, -1.0)
}

/// Mean BCE of per-attractor existence probabilities (`1 x N` or `N x 1`)
/// against `[1, ..., 1, 0]`.
pub fn existence_bce_graph(g: &mut Graph, probs: Var) -> Result<Var> {
    let (r, c) = g.value(probs).dims2()?;
    let n = r * c;
    let targets: Vec<f64> = (0..n).map(|i| if i + 1 < n { 1.0 } else { 0.0 }).collect();
    let t = Tensor::matrix(r, c, targets);
    dia_bce_graph(g, probs, &t, 1.0, Reduction::Mean)
}
