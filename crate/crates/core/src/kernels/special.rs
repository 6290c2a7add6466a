//! Slab probabilities, Owen's T function and related scalar helpers.

use std::f64::consts::{FRAC_2_PI, PI, SQRT_2};

use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabProbability {
    /// `P(|Z| ≤ δ) = erf(δ/√2)`.
    pub exact: f64,
    /// `√(2/π)·δ·e^{−δ²/2}`.
    pub lower: f64,
    /// `√(2/π)·δ`.
    pub upper: f64,
}

pub fn slab_probability(delta: f64) -> Result<SlabProbability> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::Domain(format!("slab half-width {delta} < 0")));
    }
    let upper = FRAC_2_PI.sqrt() * delta;
    Ok(SlabProbability {
        exact: erf(delta / SQRT_2),
        lower: upper * (-0.5 * delta * delta).exp(),
        upper,
    })
}

pub const OWEN_T_TOLERANCE: f64 = 1e-10;

/// `T(x, a) = (1/2π) ∫₀ᵃ e^{−x²(1+t²)/2} / (1+t²) dt` by adaptive Simpson
/// quadrature. Negative `a` integrates backwards; `a = ±∞` uses the closed
/// form `±erfc(|x|/√2)/4`.
pub fn owen_t(x: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if a.is_infinite() {
        return a.signum() * 0.25 * erfc(x.abs() / SQRT_2);
    }
    let half_x2 = 0.5 * x * x;
    let f = |t: f64| {
        let q = 1.0 + t * t;
        (-half_x2 * q).exp() / q
    };
    adaptive_simpson(&f, 0.0, a, 2.0 * PI * OWEN_T_TOLERANCE) / (2.0 * PI)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Level `g(τ) = E[|Z| ; |Z| ≤ τ] / P(|Z| ≤ τ)
/// = √(2/π)(1 − e^{−τ²/2}) / erf(τ/√2)`, which behaves like `τ/2`.
pub fn slab_mean_abs(tau: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    FRAC_2_PI.sqrt() * (-(-0.5 * tau * tau).exp_m1()) / erf(tau / SQRT_2)
}

/// `4T(τ, cot φ) − 1 + 2φ/π + (τ/√(2π))·erf(τ·cot φ/√2)` for `φ ∈ (0, π/2]`.
pub fn slab_wedge_excess(tau: f64, phi: f64) -> f64 {
    let cot = phi.cos() / phi.sin();
    4.0 * owen_t(tau, cot) - 1.0
        + 2.0 * phi / PI
        + tau / (2.0 * PI).sqrt() * erf(tau * cot / SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_examples() {
        let s = slab_probability(0.0).unwrap();
        assert_eq!((s.exact, s.lower, s.upper), (0.0, 0.0, 0.0));

        let s = slab_probability(0.5).unwrap();
        assert!((s.exact - 0.382_925).abs() < 1e-6);
        assert!((s.upper - 0.398_942).abs() < 1e-6);
        assert!((s.lower - 0.352_065).abs() < 1e-6);
        assert!(s.lower <= s.exact && s.exact <= s.upper);

        let s = slab_probability(10.0).unwrap();
        assert!((s.exact - 1.0).abs() < 1e-15);
        assert!(s.upper > 1.0);

        assert!(slab_probability(-0.1).is_err());
    }

    #[test]
    fn owen_t_examples() {
        assert!((owen_t(0.0, 1.0) - 0.125).abs() < 1e-10);
        assert_eq!(owen_t(1.7, 0.0), 0.0);
        assert!((owen_t(0.0, f64::INFINITY) - 0.25).abs() < 1e-15);
        assert!((owen_t(0.8, -1.5) + owen_t(0.8, 1.5)).abs() < 1e-15);
        // T(x, 1) = Φ(x)(1 − Φ(x))/2
        let x = 1.0;
        let phi = 0.5 * erfc(-x / SQRT_2);
        assert!((owen_t(x, 1.0) - 0.5 * phi * (1.0 - phi)).abs() < 1e-10);
    }

    #[test]
    fn owen_t_large_argument_matches_tail() {
        let x = 0.3;
        assert!((owen_t(x, 1e4) - owen_t(x, f64::INFINITY)).abs() < 1e-5);
    }

    #[test]
    fn slab_mean_is_about_half_tau() {
        let g = slab_mean_abs(0.1);
        assert!((g - 0.05).abs() < 1e-3);
        assert!(slab_mean_abs(0.0) == 0.0);
    }

    #[test]
    fn wedge_excess_vanishes_at_zero_tau() {
        for phi in [0.05, 0.1, 0.2] {
            assert!(slab_wedge_excess(0.0, phi).abs() < 1e-9);
        }
    }
}
