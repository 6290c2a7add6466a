//! Normalised probabilists' Hermite polynomials `h_k = He_k / √k!` and the
//! Hermite expansion of `|x|`.

use std::f64::consts::PI;

/// `h_k(x)` by the three-term recurrence
/// `h_{k+1} = (x·h_k − √k·h_{k−1}) / √(k+1)`.
pub fn hermite_value(k: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for j in 1..k {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    cur
}

/// `[h_0(x), …, h_max(x)]`.
pub fn hermite_values(max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max + 1);
    out.push(1.0);
    if max >= 1 {
        out.push(x);
    }
    for j in 1..max {
        let next = (x * out[j] - (j as f64).sqrt() * out[j - 1]) / ((j + 1) as f64).sqrt();
        out.push(next);
    }
    out
}

/// `E[h_m(X) h_n(Y)]` for standard normals with correlation `rho`.
pub fn correlated_product(m: usize, n: usize, rho: f64) -> f64 {
    if m == n {
        rho.powi(n as i32)
    } else {
        0.0
    }
}

/// Coefficients `σ̂_k` of `|x| = Σ σ̂_k h_k(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteCoefficients {
    pub coeffs: Vec<f64>,
}

impl HermiteCoefficients {
    pub fn max_index(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Truncated series `Σ_{k≤L} σ̂_k h_k(x)`.
    pub fn series(&self, x: f64) -> f64 {
        hermite_values(self.max_index(), x)
            .iter()
            .zip(&self.coeffs)
            .map(|(h, c)| h * c)
            .sum()
    }
}

/// `σ̂_0 = √(2/π)`, odd coefficients vanish, and for even `k`
/// `σ̂_{k+2} = −σ̂_k·(k−1)/√((k+1)(k+2))`.
pub fn hermite_abs_coeffs(max: usize) -> HermiteCoefficients {
    let mut coeffs = vec![0.0; max + 1];
    let mut c = (2.0 / PI).sqrt();
    let mut k = 0;
    while k <= max {
        coeffs[k] = c;
        let kf = k as f64;
        c *= -(kf - 1.0) / ((kf + 1.0) * (kf + 2.0)).sqrt();
        k += 2;
    }
    HermiteCoefficients { coeffs }
}
