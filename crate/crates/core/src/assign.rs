//! Assignment solvers: exhaustive permutation search, the Hungarian
//! algorithm for (rectangular) linear assignment, and Sinkhorn
//! normalization.

use crate::error::{Error, Result};

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Minimum-cost permutation over a square matrix by enumeration. Among
/// equal costs the lexicographically smallest permutation wins.
pub fn exhaustive_min(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let mut best = ((0..n).collect::<Vec<_>>(), f64::INFINITY);
    for p in permutations(n) {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.1 {
            best = (p, c);
        }
    }
    if n == 0 {
        best.1 = 0.0;
    }
    best
}

/// Minimum-cost assignment of rows to distinct columns. With more rows than
/// columns, only `cols` rows are assigned and the rest map to `None`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<Option<usize>>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Input("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite entry in cost matrix".into()));
    }
    if m == 0 {
        return Ok(vec![None; n]);
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = hungarian(&t)?;
        let mut rows = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return Ok(rows);
    }
    // Potentials formulation, 1-indexed; p[j] is the row matched to column j.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            rows[p[j] - 1] = Some(j - 1);
        }
    }
    Ok(rows)
}

/// Square-matrix convenience wrapper returning a full permutation.
pub fn hungarian_perm(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    Ok(hungarian(cost)?
        .into_iter()
        .map(|j| j.expect("square matrices assign every row"))
        .collect())
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Alternating row/column normalization of `exp(-cost / temperature)`.
///
/// Runs in the log domain, so large cost ranges at low temperature do not
/// underflow. Each sweep normalizes rows, then columns.
pub fn sinkhorn(cost: &[Vec<f64>], temperature: f64, n_iters: usize) -> Result<Vec<Vec<f64>>> {
    let lk = sinkhorn_log(cost, temperature, n_iters)?;
    Ok(lk.into_iter().map(|r| r.into_iter().map(f64::exp).collect()).collect())
}

/// [`sinkhorn`] without the final `exp`: entries are log-probabilities.
pub fn sinkhorn_log(cost: &[Vec<f64>], temperature: f64, n_iters: usize) -> Result<Vec<Vec<f64>>> {
    if !(temperature > 0.0) {
        return Err(Error::Contract(format!("temperature {temperature} must be > 0")));
    }
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::Input("sinkhorn needs a square cost matrix".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite cost".into()));
    }
    let mut lk: Vec<Vec<f64>> = cost
        .iter()
        .map(|r| r.iter().map(|c| -c / temperature).collect())
        .collect();
    for _ in 0..n_iters {
        for row in lk.iter_mut() {
            let z = logsumexp(row.iter().copied());
            row.iter_mut().for_each(|v| *v -= z);
        }
        for j in 0..n {
            let z = logsumexp((0..n).map(|i| lk[i][j]));
            for row in lk.iter_mut() {
                row[j] -= z;
            }
        }
    }
    Ok(lk)
}

/// Rounds a (near) doubly-stochastic matrix to a permutation by exact
/// assignment on `-log` entries.
pub fn round_to_permutation(soft: &[Vec<f64>]) -> Result<Vec<usize>> {
    let neg_log: Vec<Vec<f64>> = soft
        .iter()
        .map(|r| r.iter().map(|&p| -(p.max(f64::MIN_POSITIVE)).ln()).collect())
        .collect();
    hungarian_perm(&neg_log)
}

/// [`round_to_permutation`] on a log-domain matrix; immune to underflow.
pub fn round_log_to_permutation(log_soft: &[Vec<f64>]) -> Result<Vec<usize>> {
    let neg: Vec<Vec<f64>> = log_soft.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    hungarian_perm(&neg)
}
