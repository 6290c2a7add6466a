use std::f64::consts::PI;

use crate::error::Result;
use crate::kernels::hermite::{correlated_product, hermite_abs_coeffs, hermite_values};
use crate::kernels::special::{slab_probability, slab_wedge_excess};
use crate::kernels::{abs_pair_expectation, abs_pair_gradient, SignCov};
use crate::linalg::{dot, Matrix};
use crate::mc;
use crate::net::{partition_students, RandomTeacherSpec, StudentNetwork, TeacherNetwork, WeightVector};
use crate::population::{build_m, residual_stats, PopulationEngine};
use rand::Rng;

use crate::rng::{self, LabRng};

use super::{CheckReport, VerifierConfig};

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn random_vector(g: &mut LabRng, d: usize) -> Vec<f64> {
    let scale = 0.5 + 1.5 * g.random::<f64>();
    rng::normal_vec(g, d).into_iter().map(|x| scale * x).collect()
}

/// Closed-form `K`, `G` and the upper triangle of `Scov` against one
/// sampled pass per pair, for `pairs` random pairs in each dimension.
pub fn kernel_mc_check(dims: &[usize], pairs: usize, n: u64, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("kernel_mc");
    let (mut comparisons, mut exceed, mut max_z) = (0usize, 0usize, 0.0f64);
    let mut worst = String::new();
    for &d in dims {
        let mut g = rng::seeded(rng::derive_seed(seed, d as u64));
        let tri = d * (d + 1) / 2;
        for p in 0..pairs {
            let u = random_vector(&mut g, d);
            let v = random_vector(&mut g, d);
            let mut exact = vec![abs_pair_expectation(&u, &v)];
            exact.extend(abs_pair_gradient(&u, &v)?.iter());
            let cov = SignCov::new(&u, &v)?.to_matrix();
            for a in 0..d {
                for b in a..d {
                    exact.push(cov[(a, b)]);
                }
            }
            let est = mc::estimate_vector(
                |x, out| {
                    let (pu, pv) = (dot(&u, x), dot(&v, x));
                    out[0] = pu.abs() * pv.abs();
                    let gs = sgn(pu) * pv.abs();
                    for (o, xi) in out[1..=d].iter_mut().zip(x) {
                        *o = gs * xi;
                    }
                    let ss = sgn(pu) * sgn(pv);
                    let mut k = d + 1;
                    for a in 0..d {
                        let sa = ss * x[a];
                        for xb in &x[a..] {
                            out[k] = sa * xb;
                            k += 1;
                        }
                    }
                },
                1 + d + tri,
                d,
                n,
                rng::derive_seed(seed, 1000 * d as u64 + p as u64),
            )?;
            for (k, (e, target)) in est.iter().zip(&exact).enumerate() {
                let z = e.z_score(*target);
                comparisons += 1;
                if z > max_z {
                    max_z = z;
                    worst = format!("d={d} pair={p} component={k}");
                }
                if z > 4.0 {
                    exceed += 1;
                }
            }
        }
    }
    // Two-sided tail of a standard normal beyond 4.
    let expected = comparisons as f64 * 6.334e-5;
    r.measure("comparisons", comparisons as f64)
        .measure("beyond_4se", exceed as f64)
        .measure("expected_beyond_4se_by_chance", expected)
        .measure("max_z", max_z)
        .note(format!("largest deviation at {worst}"));
    Ok(r.decide(exceed == 0).take())
}

fn random_state(g: &mut LabRng, k: usize) -> Result<(TeacherNetwork, StudentNetwork)> {
    let d = 2 + k % 9;
    let r = 1 + k % 4;
    let m = 1 + (7 * k) % 20;
    let spec = RandomTeacherSpec {
        delta_min: 0.3,
        w_min: 0.5,
        w_max: 1.5,
    };
    let t = TeacherNetwork::random(d, r, spec, g.random())?;
    let neurons = (0..m)
        .map(|_| WeightVector::new(random_vector(g, d)))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, StudentNetwork::new(neurons)?))
}

/// Analytic population gradient against central differences with step `h`.
pub fn gradient_fd_check(states: usize, h: f64, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("gradient_fd");
    let mut g = rng::seeded(seed);
    let mut worst = 0.0f64;
    for k in 0..states {
        let (t, s) = random_state(&mut g, k)?;
        let engine = PopulationEngine::new(&t);
        let w: Vec<f64> = s.neurons().iter().flat_map(|n| n.iter().copied()).collect();
        let mut grad = vec![0.0; w.len()];
        engine.evaluate(&w, Some(&mut grad));
        let mut fd = vec![0.0; w.len()];
        let mut probe = w.clone();
        for i in 0..w.len() {
            probe[i] = w[i] + h;
            let up = engine.evaluate(&probe, None);
            probe[i] = w[i] - h;
            let down = engine.evaluate(&probe, None);
            probe[i] = w[i];
            fd[i] = (up - down) / (2.0 * h);
        }
        let err: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max(err / scale);
    }
    r.measure("states", states as f64)
        .measure("step", h)
        .measure("max_relative_error", worst)
        .measure("tolerance", 1e-5);
    Ok(r.decide(worst <= 1e-5).take())
}

/// Low-order coefficients of `|x|`, the series truncated to its first
/// `terms` nonzero terms on `[−3, 3]`, and sampled `E[h_m(X)h_n(Y)]` for
/// correlated normals.
pub fn hermite_layer_check(terms: usize, n: u64, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("hermite_layer");
    let c = hermite_abs_coeffs(2 * terms.max(3) - 2);
    let expected = [
        (2.0 / PI).sqrt(),
        1.0 / PI.sqrt(),
        -1.0 / (12.0 * PI).sqrt(),
    ];
    let coeff_err = [0, 2, 4]
        .iter()
        .zip(&expected)
        .map(|(&k, e)| (c.coeffs[k] - e).abs())
        .fold(0.0, f64::max);
    let grid = 6001;
    let series_err = (0..grid)
        .map(|i| {
            let x = -3.0 + 6.0 * i as f64 / (grid - 1) as f64;
            (c.series(x) - x.abs()).abs()
        })
        .fold(0.0, f64::max);

    let max_order = 4;
    let mut max_z = 0.0f64;
    for (q, &rho) in [0.3, 0.7, -0.5].iter().enumerate() {
        let side = max_order + 1;
        let est = mc::estimate_vector(
            |x, out| {
                let y = rho * x[0] + (1.0 - rho * rho).sqrt() * x[1];
                let hx = hermite_values(max_order, x[0]);
                let hy = hermite_values(max_order, y);
                for a in 0..side {
                    for b in 0..side {
                        out[a * side + b] = hx[a] * hy[b];
                    }
                }
            },
            side * side,
            2,
            n,
            rng::derive_seed(seed, q as u64),
        )?;
        for a in 0..side {
            for b in 0..side {
                max_z = max_z.max(est[a * side + b].z_score(correlated_product(a, b, rho)));
            }
        }
    }
    r.measure("terms", terms as f64)
        .measure("coefficient_error", coeff_err)
        .measure("series_max_error", series_err)
        .measure("series_tolerance", 0.02)
        .measure("orthogonality_max_z", max_z);
    if series_err > 0.02 {
        r.note("the kink at 0 limits the truncated series to O(terms^-1/2) accuracy");
    }
    Ok(r.decide(coeff_err <= 1e-12 && series_err <= 0.02 && max_z <= 4.0).take())
}

/// `h(τ, φ) ≤ 0` on a grid of `τ, φ ∈ (0, 0.2]`.
pub fn owen_wedge_check(steps: usize) -> CheckReport {
    let mut r = CheckReport::new("owen_wedge");
    let (mut max_h, mut violations) = (f64::NEG_INFINITY, 0);
    for i in 1..=steps {
        for j in 1..=steps {
            let tau = 0.2 * i as f64 / steps as f64;
            let phi = 0.2 * j as f64 / steps as f64;
            let h = slab_wedge_excess(tau, phi);
            max_h = max_h.max(h);
            if h > 0.0 {
                violations += 1;
            }
        }
    }
    r.measure("grid_points", (steps * steps) as f64)
        .measure("max_value", max_h)
        .measure("violations", violations as f64);
    r.decide(violations == 0).take()
}

/// `√(2/π)δe^{−δ²/2} ≤ P(|Z| ≤ δ) ≤ √(2/π)δ` on a grid of `δ ∈ [0, 3]`.
pub fn slab_bounds_check(steps: usize) -> Result<CheckReport> {
    let mut r = CheckReport::new("slab_bounds");
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for i in 0..=steps {
        let delta = 3.0 * i as f64 / steps as f64;
        let p = slab_probability(delta)?;
        if p.lower > p.exact || p.exact > p.upper {
            violations += 1;
        }
        min_gap = min_gap.min((p.exact - p.lower).min(p.upper - p.exact));
    }
    let half = slab_probability(0.5)?;
    r.measure("violations", violations as f64)
        .measure("min_gap", min_gap)
        .measure("exact_at_0.5", half.exact)
        .measure("lower_at_0.5", half.lower)
        .measure("upper_at_0.5", half.upper);
    Ok(r.decide(violations == 0).take())
}

/// `‖R₁‖² = vᵀMv` and `‖R‖² = 2L` on random states, `M = I` for one
/// teacher and `λ_min = 1 − 2/π` for two orthogonal unit teachers.
pub fn exact_identities_check(states: usize, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("exact_identities");
    let mut g = rng::seeded(seed);
    let (mut r1_err, mut total_err) = (0.0f64, 0.0f64);
    for k in 0..states {
        let (t, s) = random_state(&mut g, k)?;
        let p = partition_students(&t, &s)?;
        let st = residual_stats(&t, &s, &p)?;
        let m = build_m(&t)?;
        let v: Vec<f64> = st.gaps.iter().flat_map(|w| w.iter().copied()).collect();
        let quad = m.matrix.quad_form(&v);
        r1_err = r1_err.max((st.r1_norm_sq - quad).abs() / quad.abs().max(1e-300));
        let two_l = 2.0 * st.loss;
        total_err = total_err.max((st.recomposed() - two_l).abs() / two_l.max(1e-300));
    }
    let single = TeacherNetwork::new(vec![WeightVector::new(random_vector(&mut g, 4))?])?;
    let m1 = build_m(&single)?;
    let identity_err = m1
        .matrix
        .as_slice()
        .iter()
        .zip(Matrix::identity(4).as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let orth = TeacherNetwork::new(vec![WeightVector::basis(2, 0), WeightVector::basis(2, 1)])?;
    let lambda = build_m(&orth)?.min_eigenvalue;
    let lambda_err = (lambda - (1.0 - 2.0 / PI)).abs();
    r.measure("r1_relative_error", r1_err)
        .measure("total_relative_error", total_err)
        .measure("single_teacher_identity_error", identity_err)
        .measure("orthogonal_min_eigenvalue", lambda)
        .measure("orthogonal_min_eigenvalue_error", lambda_err);
    Ok(r
        .decide(r1_err <= 1e-8 && total_err <= 1e-8 && identity_err == 0.0 && lambda_err <= 1e-8)
        .take())
}

/// Smallest `λ_min(M)·r³/Δ³` over random separated teachers with
/// `r ≤ 4`, `d ≤ 6`.
pub fn min_eigenvalue_scaling_check(teachers: usize, seed: u64, cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut r = CheckReport::new("min_eigenvalue_scaling");
    let mut g = rng::seeded(seed);
    let mut fitted = f64::INFINITY;
    let mut non_positive = 0;
    for k in 0..teachers {
        let d = 2 + k % 5;
        let rr = 2 + k % 3;
        let delta_min = [0.2, 0.35, 0.5][k % 3];
        let spec = RandomTeacherSpec {
            delta_min,
            w_min: 0.5,
            w_max: 2.0,
        };
        let t = TeacherNetwork::random(d, rr, spec, g.random())?;
        let sep = t.separation().delta;
        let m = build_m(&t)?;
        if m.min_eigenvalue <= 0.0 {
            non_positive += 1;
        }
        fitted = fitted.min(m.min_eigenvalue * (rr as f64).powi(3) / sep.powi(3));
    }
    let allowed = cfg.lower(cfg.fitted.min_eigenvalue);
    r.measure("teachers", teachers as f64)
        .measure("fitted_c", fitted)
        .measure("frozen_c", cfg.fitted.min_eigenvalue)
        .measure("allowed_c", allowed)
        .measure("non_positive", non_positive as f64);
    Ok(r.decide(non_positive == 0 && fitted >= allowed).take())
}

pub(super) fn suite_kernel_mc(cfg: &VerifierConfig) -> Result<CheckReport> {
    kernel_mc_check(&[2, 5, 20], cfg.kernel_pairs, cfg.mc_samples, rng::derive_seed(cfg.seed, 41))
}

pub(super) fn suite_gradient_fd(cfg: &VerifierConfig) -> Result<CheckReport> {
    gradient_fd_check(20, 1e-5, rng::derive_seed(cfg.seed, 42))
}

pub(super) fn suite_hermite_layer(cfg: &VerifierConfig) -> Result<CheckReport> {
    hermite_layer_check(40, cfg.mc_samples, rng::derive_seed(cfg.seed, 43))
}

pub(super) fn suite_owen_wedge(_cfg: &VerifierConfig) -> Result<CheckReport> {
    Ok(owen_wedge_check(40))
}

pub(super) fn suite_slab_bounds(_cfg: &VerifierConfig) -> Result<CheckReport> {
    slab_bounds_check(3000)
}

pub(super) fn suite_exact_identities(cfg: &VerifierConfig) -> Result<CheckReport> {
    exact_identities_check(30, rng::derive_seed(cfg.seed, 44))
}

pub(super) fn suite_min_eigenvalue(cfg: &VerifierConfig) -> Result<CheckReport> {
    min_eigenvalue_scaling_check(60, rng::derive_seed(cfg.seed, 45), cfg)
}
