//! Closed-form expectations over `x ~ N(0, I_d)`.
//!
//! Every pairwise quantity reduces to the plane spanned by the two inputs,
//! so each function first builds a [`KernelPair`] (two norms, the signed
//! cosine and the sine of the angle) and then works with scalars. `sgn(0)`
//! is taken to be zero throughout.

pub mod hermite;
pub mod special;

use std::f64::consts::{FRAC_2_PI, PI};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::net::WeightVector;

/// Below this sine two directions are treated as collinear.
pub const COLLINEAR_SIN: f64 = 1e-12;

/// Norms and relative orientation of two vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPair {
    pub norm_u: f64,
    pub norm_v: f64,
    /// Signed cosine, clamped to `[-1, 1]`. Zero when either norm is zero.
    pub rho: f64,
    /// `sqrt(1 - rho²)` computed as `‖ū − ρv̄‖`, which keeps relative
    /// accuracy for nearly parallel inputs.
    pub sin: f64,
}

impl KernelPair {
    pub fn new(u: &[f64], v: &[f64]) -> Self {
        debug_assert_eq!(u.len(), v.len());
        let norm_u = norm(u);
        let norm_v = norm(v);
        if norm_u == 0.0 || norm_v == 0.0 {
            return Self {
                norm_u,
                norm_v,
                rho: 0.0,
                sin: 1.0,
            };
        }
        let (iu, iv) = (1.0 / norm_u, 1.0 / norm_v);
        let rho = (dot(u, v) * iu * iv).clamp(-1.0, 1.0);
        let sin = u
            .iter()
            .zip(v)
            .map(|(a, b)| {
                let e = a * iu - rho * b * iv;
                e * e
            })
            .sum::<f64>()
            .sqrt()
            .min(1.0);
        Self {
            norm_u,
            norm_v,
            rho,
            sin,
        }
    }

    /// Angle in `[0, π]` between the two vectors (sign sensitive).
    pub fn angle(&self) -> f64 {
        self.sin.atan2(self.rho)
    }

    /// `arcsin ρ`, evaluated as `atan2(ρ, sin)`.
    pub fn arcsin_rho(&self) -> f64 {
        self.rho.atan2(self.sin)
    }

    pub fn expectation(&self) -> f64 {
        abs_kernel(self.norm_u, self.norm_v, self.rho, self.sin)
    }
}

/// `‖u‖‖v‖(2/π)(s + ρ·arcsin ρ)` from precomputed scalars.
#[inline]
pub fn abs_kernel(norm_u: f64, norm_v: f64, rho: f64, sin: f64) -> f64 {
    norm_u * norm_v * FRAC_2_PI * (sin + rho * rho.atan2(sin))
}

/// `E[|uᵀx| |vᵀx|]`.
pub fn abs_pair_expectation(u: &[f64], v: &[f64]) -> f64 {
    KernelPair::new(u, v).expectation()
}

/// `E[sgn(uᵀx) |vᵀx| x]`, the gradient of `K(u, v)` in `u`:
/// `(2/π)‖v‖(s·ū + arcsin ρ·v̄)`.
pub fn abs_pair_gradient(u: &[f64], v: &[f64]) -> Result<WeightVector> {
    check_dim(u.len(), v.len())?;
    let p = KernelPair::new(u, v);
    if p.norm_u == 0.0 {
        return Err(Error::Domain("kernel gradient at u = 0".into()));
    }
    let mut g = vec![0.0; u.len()];
    if p.norm_v > 0.0 {
        let cu = FRAC_2_PI * p.norm_v * p.sin / p.norm_u;
        let cv = FRAC_2_PI * p.arcsin_rho();
        for ((gk, uk), vk) in g.iter_mut().zip(u).zip(v) {
            *gk = cu * uk + cv * vk;
        }
    }
    WeightVector::new(g)
}

/// In-plane description of `E[xxᵀ sgn(aᵀx) sgn(bᵀx)]`.
///
/// The matrix equals `c0·I` plus a rank-two correction living in
/// `span{e1, e2}`, where `e1 = ā` and `e2` completes `b̄` to an orthonormal
/// basis of the plane.
#[derive(Debug, Clone)]
pub struct SignCov {
    pub c0: f64,
    e1: Vec<f64>,
    e2: Vec<f64>,
    /// Correction in the `(e1, e2)` basis: `[[c11, c12], [c12, c22]]`.
    c11: f64,
    c12: f64,
    c22: f64,
}

impl SignCov {
    pub fn new(a: &[f64], b: &[f64]) -> Result<Self> {
        check_dim(a.len(), b.len())?;
        let p = KernelPair::new(a, b);
        if p.norm_u == 0.0 || p.norm_v == 0.0 {
            return Err(Error::Domain("sign covariance of a zero vector".into()));
        }
        let d = a.len();
        let e1: Vec<f64> = a.iter().map(|x| x / p.norm_u).collect();
        if p.sin < COLLINEAR_SIN {
            let c0 = if p.rho < 0.0 { -1.0 } else { 1.0 };
            return Ok(Self {
                c0,
                e1,
                e2: vec![0.0; d],
                c11: 0.0,
                c12: 0.0,
                c22: 0.0,
            });
        }
        let e2: Vec<f64> = b
            .iter()
            .zip(&e1)
            .map(|(bk, ek)| (bk / p.norm_v - p.rho * ek) / p.sin)
            .collect();
        let theta = p.angle();
        let c0 = 1.0 - 2.0 * theta / PI;
        let s2 = (2.0 * theta).sin();
        let sin_sq = p.sin * p.sin;
        Ok(Self {
            c0,
            e1,
            e2,
            c11: 1.0 - (2.0 * theta - s2) / PI - c0,
            c12: 2.0 * sin_sq / PI,
            c22: 1.0 - (2.0 * theta + s2) / PI - c0,
        })
    }

    /// `xᵀ Scov y` in `O(d)`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let (x1, x2) = (dot(&self.e1, x), dot(&self.e2, x));
        let (y1, y2) = (dot(&self.e1, y), dot(&self.e2, y));
        self.c0 * dot(x, y)
            + self.c11 * x1 * y1
            + self.c12 * (x1 * y2 + x2 * y1)
            + self.c22 * x2 * y2
    }

    pub fn to_matrix(&self) -> Matrix {
        let d = self.e1.len();
        Matrix::from_fn(d, |i, j| {
            let (e1i, e2i, e1j, e2j) = (self.e1[i], self.e2[i], self.e1[j], self.e2[j]);
            let id = if i == j { self.c0 } else { 0.0 };
            id + self.c11 * e1i * e1j
                + self.c12 * (e1i * e2j + e2i * e1j)
                + self.c22 * e2i * e2j
        })
    }

    pub fn trace(&self) -> f64 {
        self.c0 * self.e1.len() as f64 + self.c11 + self.c22
    }
}

/// `E[xxᵀ sgn(aᵀx) sgn(bᵀx)]` as a dense `d×d` matrix.
pub fn sign_cov_block(a: &[f64], b: &[f64]) -> Result<Matrix> {
    Ok(SignCov::new(a, b)?.to_matrix())
}

/// `P(sgn(aᵀx) ≠ sgn(bᵀx)) = φ/π`, `φ` the signed angle between `a` and `b`.
pub fn mismatch_probability(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let p = KernelPair::new(a, b);
    if p.norm_u == 0.0 || p.norm_v == 0.0 {
        return Err(Error::Domain("mismatch probability of a zero vector".into()));
    }
    Ok(p.angle() / PI)
}

/// `E[(βᵀx)² 1{sgn(βᵀx) ≠ sgn(wᵀx)}] = (‖β‖²/π)(φ − sinφ cosφ)`.
pub fn mismatch_second_moment(beta: &[f64], w: &[f64]) -> Result<f64> {
    check_dim(beta.len(), w.len())?;
    let p = KernelPair::new(beta, w);
    if p.norm_u == 0.0 || p.norm_v == 0.0 {
        return Err(Error::Domain("mismatch moment of a zero vector".into()));
    }
    let phi = p.angle();
    Ok(p.norm_u * p.norm_u / PI * (phi - p.sin * p.rho))
}

/// Everything the `kernel` command prints for one pair.
#[derive(Debug, Clone)]
pub struct KernelSummary {
    pub expectation: f64,
    pub gradient: Option<WeightVector>,
    pub sign_cov: Option<Matrix>,
    pub mismatch_probability: Option<f64>,
}

pub fn summarize(u: &[f64], v: &[f64]) -> Result<KernelSummary> {
    check_dim(u.len(), v.len())?;
    let nonzero = norm(u) > 0.0 && norm(v) > 0.0;
    Ok(KernelSummary {
        expectation: abs_pair_expectation(u, v),
        gradient: abs_pair_gradient(u, v).ok(),
        sign_cov: if nonzero {
            Some(sign_cov_block(u, v)?)
        } else {
            None
        },
        mismatch_probability: if nonzero {
            Some(mismatch_probability(u, v)?)
        } else {
            None
        },
    })
}
