//! Active-set solver for `min ½zᵀGz − bᵀz` subject to `z ≥ 0`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, Matrix};

/// Eigenvalues of `G` may dip this far below zero.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// KKT tolerance on the gradient `Gz − b`.
pub const KKT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnlsResult {
    pub z: Vec<f64>,
    /// `½zᵀGz − bᵀz`.
    pub objective: f64,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

impl NnlsResult {
    /// Largest KKT violation: `max(−∇ᵢ)` off the support, `|∇ᵢ|` on it.
    pub fn kkt_residual(&self, g: &Matrix, b: &[f64]) -> f64 {
        let grad: Vec<f64> = g
            .mul_vec(&self.z)
            .iter()
            .zip(b)
            .map(|(gz, bi)| gz - bi)
            .collect();
        grad.iter()
            .zip(&self.z)
            .map(|(&gi, &zi)| if zi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
            .fold(0.0, f64::max)
    }
}

pub fn objective(g: &Matrix, b: &[f64], z: &[f64]) -> f64 {
    0.5 * g.quad_form(z) - dot(b, z)
}

/// Lawson–Hanson active-set iteration on the normal equations.
///
/// Columns that are numerically dependent on the current support are
/// skipped. The outer loop is capped at `10·m` iterations.
pub fn nnls(g: &Matrix, b: &[f64]) -> Result<NnlsResult> {
    let m = g.dim();
    check_dim(m, b.len())?;
    let scale = (0..m).map(|i| g[(i, i)].abs()).fold(1.0, f64::max);
    if g.max_asymmetry() > PSD_TOLERANCE * scale {
        return Err(Error::NotPsd {
            tolerance: PSD_TOLERANCE,
        });
    }
    if g.cholesky(PSD_TOLERANCE).is_none() {
        return Err(Error::NotPsd {
            tolerance: PSD_TOLERANCE,
        });
    }

    let tol = KKT_TOLERANCE * 1e-2 * b.iter().fold(1.0, |a: f64, x| a.max(x.abs()));
    let cap = 10 * m.max(1);
    let mut z = vec![0.0; m];
    let mut passive: Vec<usize> = Vec::new();
    let mut skipped = vec![false; m];
    let mut iterations = 0;

    loop {
        let residual: Vec<f64> = b
            .iter()
            .zip(g.mul_vec(&z))
            .map(|(bi, gz)| bi - gz)
            .collect();
        let candidate = (0..m)
            .filter(|&i| !passive.contains(&i) && !skipped[i] && residual[i] > tol)
            .max_by(|&i, &j| residual[i].total_cmp(&residual[j]));
        let Some(enter) = candidate else { break };
        if iterations >= cap {
            let res = NnlsResult {
                objective: objective(g, b, &z),
                z,
                active_set: passive,
                iterations,
            };
            return Err(Error::NnlsNoConvergence {
                iterations,
                residual: res.kkt_residual(g, b),
            });
        }
        iterations += 1;

        passive.push(enter);
        if !well_conditioned(g, &passive) {
            passive.pop();
            skipped[enter] = true;
            continue;
        }
        // The last index added is the only one that may start at zero.
        for _ in 0..=m {
            let sol = solve_on(g, b, &passive);
            if sol.iter().all(|&v| v > 0.0) {
                for (&i, &v) in passive.iter().zip(&sol) {
                    z[i] = v;
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&i, &v) in passive.iter().zip(&sol) {
                if v <= 0.0 {
                    let denom = z[i] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(z[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (&i, &v) in passive.iter().zip(&sol) {
                z[i] += alpha * (v - z[i]);
            }
            let zero_floor = 1e-14 * passive.iter().map(|&i| z[i]).fold(0.0, f64::max);
            passive.retain(|&i| {
                if z[i] <= zero_floor {
                    z[i] = 0.0;
                    false
                } else {
                    true
                }
            });
            if passive.is_empty() {
                break;
            }
        }
        // Dependent columns may become useful again once the support moves.
        skipped.iter_mut().for_each(|s| *s = false);
        skipped[enter] = !passive.contains(&enter);
    }

    let mut active_set = passive;
    active_set.sort_unstable();
    Ok(NnlsResult {
        objective: objective(g, b, &z),
        z,
        active_set,
        iterations,
    })
}

fn well_conditioned(g: &Matrix, idx: &[usize]) -> bool {
    let sub = g.submatrix(idx);
    match sub.cholesky(0.0) {
        None => false,
        Some(ch) => {
            let top = idx.iter().map(|&i| g[(i, i)]).fold(0.0, f64::max).sqrt();
            ch.min_pivot() > 1e-7 * top
        }
    }
}

fn solve_on(g: &Matrix, b: &[f64], idx: &[usize]) -> Vec<f64> {
    let sub = g.submatrix(idx);
    let rhs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    match sub.cholesky(0.0) {
        Some(ch) => ch.solve(&rhs),
        None => sub
            .cholesky(1e-12 * (1.0 + sub.frobenius_norm()))
            .map(|ch| ch.solve(&rhs))
            .unwrap_or_else(|| vec![0.0; idx.len()]),
    }
}
