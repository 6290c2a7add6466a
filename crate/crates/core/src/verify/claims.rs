use std::f64::consts::{FRAC_2_PI, PI, SQRT_2};

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::kernels::hermite::{hermite_abs_coeffs, hermite_value};
use crate::kernels::special::slab_mean_abs;
use crate::linalg::{dot, norm, Matrix};
use crate::mc;
use crate::net::{partition_students, StudentNetwork, TeacherNetwork, WeightVector};
use crate::population::{exact_copy, population_loss, residual_stats, warmup_state};
use crate::rng;

use super::states::{self, Case};
use super::{CheckReport, VerifierConfig};

/// `L(δ)/δ³` across `deltas`, with `‖R₁‖²` and a sampled cross-check of the
/// loss at each `δ`.
pub fn warmup_cubic_check(deltas: &[f64], mc_samples: u64, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("warmup_cubic");
    let mut ratios = Vec::with_capacity(deltas.len());
    let (mut max_r1, mut max_z) = (0.0f64, 0.0f64);
    for (k, &delta) in deltas.iter().enumerate() {
        let (t, s) = warmup_state(delta);
        let p = partition_students(&t, &s)?;
        let st = residual_stats(&t, &s, &p)?;
        ratios.push(st.loss / delta.powi(3));
        max_r1 = max_r1.max(st.r1_norm_sq);
        let est = mc::estimate(
            |x| {
                let e = s.output(x) - t.output(x);
                0.5 * e * e
            },
            2,
            mc_samples,
            rng::derive_seed(seed, k as u64),
        )?;
        max_z = max_z.max(est.z_score(st.loss));
        r.measure(&format!("ratio_{delta}"), st.loss / delta.powi(3));
    }
    let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    // Linear extrapolation of the two smallest δ towards 0.
    let limit = match deltas.len() {
        n if n >= 2 => {
            let (d1, d2) = (deltas[n - 2], deltas[n - 1]);
            let (c1, c2) = (ratios[n - 2], ratios[n - 1]);
            c2 - d2 * (c1 - c2) / (d1 - d2)
        }
        _ => lo,
    };
    r.measure("ratio_spread", hi / lo)
        .measure("max_r1_norm_sq", max_r1)
        .measure("mc_max_z", max_z)
        .measure("limit_constant", limit);
    Ok(r.decide(hi / lo <= 2.0 && max_r1 <= 1e-15 && max_z <= 4.0).take())
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Smallest sign-sensitive angle between any student and any teacher.
fn min_signed_angle(teachers: &[WeightVector], students: &[WeightVector]) -> f64 {
    let mut best = f64::INFINITY;
    for w in students {
        for ws in teachers {
            let c = (dot(w, ws) / (w.norm() * ws.norm())).clamp(-1.0, 1.0);
            best = best.min(c.acos());
        }
    }
    best
}

/// Squared residuals below this are rounding noise of unit-scale outputs.
const RELU_ROUNDING_FLOOR: f64 = 1e-24;

/// Three unit teachers at 0°, 120°, 240° with students `−w*_i`: the ReLU
/// networks agree everywhere although no student points along a teacher.
pub fn relu_counterexample_check(mc_samples: u64, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("relu_counterexample");
    let s3 = 3f64.sqrt() / 2.0;
    let teachers = vec![
        WeightVector::new(vec![1.0, 0.0])?,
        WeightVector::new(vec![-0.5, s3])?,
        WeightVector::new(vec![-0.5, -s3])?,
    ];
    let students: Vec<WeightVector> = teachers.iter().map(|w| w.scaled(-1.0)).collect();
    let relu_loss = |ts: &[WeightVector], ss: &[WeightVector], seed: u64| {
        mc::estimate(
            |x| {
                let f_star: f64 = ts.iter().map(|w| relu(dot(w, x))).sum();
                let f: f64 = ss.iter().map(|w| w.norm() * relu(dot(w, x))).sum();
                (f - f_star).powi(2)
            },
            2,
            mc_samples,
            seed,
        )
    };
    let est = relu_loss(&teachers, &students, seed)?;
    let relu_ok = est.mean <= 4.0 * est.std_err || est.mean <= RELU_ROUNDING_FLOOR;
    let angle = min_signed_angle(&teachers, &students).to_degrees();

    let antipodal_t = vec![WeightVector::basis(2, 0), WeightVector::basis(2, 0).scaled(-1.0)];
    let antipodal_s: Vec<WeightVector> = antipodal_t.iter().map(|w| w.scaled(-1.0)).collect();
    let antipodal = relu_loss(&antipodal_t, &antipodal_s, rng::derive_seed(seed, 1))?;

    let t_abs = TeacherNetwork::new(teachers.clone())?;
    let s_abs = StudentNetwork::new(students)?;
    let abs_loss = 2.0 * population_loss(&t_abs, &s_abs);

    r.measure("relu_loss", est.mean)
        .measure("relu_std_err", est.std_err)
        .measure("min_angle_deg", angle)
        .measure("antipodal_relu_loss", antipodal.mean)
        .measure("abs_loss", abs_loss);
    if abs_loss <= 0.1 {
        r.note("absolute-value activation on the same weights reproduces the teacher");
    }
    Ok(r.decide(relu_ok && angle >= 59.0 && abs_loss > 0.1).take())
}

/// `‖J(w+u) − J(w)‖_F ≤ (1+√3)‖u‖` for `J(w) = ‖w‖(I + w̄w̄ᵀ)`, the
/// Jacobian of `w ↦ ‖w‖w`, over pairs cycling through `dims`. Violations
/// are tallied per dimension; the spectral-norm version is measured too.
pub fn g_smoothness_check(n_pairs: usize, dims: &[usize], seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("g_smoothness");
    let lip = 1.0 + 3f64.sqrt();
    let mut g = rng::seeded(seed);
    let mut frob_violations = vec![0usize; dims.len()];
    let mut frob_worst = vec![0.0f64; dims.len()];
    let (mut spectral_violations, mut spectral_worst) = (0usize, 0.0f64);
    for k in 0..n_pairs {
        let slot = k % dims.len();
        let d = dims[slot];
        let base = rng::normal_vec(&mut g, d);
        let noise = rng::normal_vec(&mut g, d);
        let (w, u): (Vec<f64>, Vec<f64>) = match (k / dims.len()) % 6 {
            0 | 1 => (base, noise),
            // near zero
            2 => (base.iter().map(|x| 1e-9 * x).collect(), noise),
            // exactly zero
            3 => (vec![0.0; d], noise.iter().map(|x| 1e-3 * x).collect()),
            // near collinear, same side
            4 => (
                base.clone(),
                base.iter().zip(&noise).map(|(b, e)| 0.3 * b + 1e-7 * e).collect(),
            ),
            // through the origin to the opposite side
            _ => (
                base.clone(),
                base.iter().zip(&noise).map(|(b, e)| -2.0 * b + 1e-7 * e).collect(),
            ),
        };
        let wu: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a + b).collect();
        let nu = norm(&u);
        if nu == 0.0 {
            continue;
        }
        let diff = jacobian_difference(&w, &wu);
        let frob = diff.frobenius_norm();
        let eig = diff.symmetric_eigen()?;
        let spectral = eig.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        frob_worst[slot] = frob_worst[slot].max(frob / nu);
        spectral_worst = spectral_worst.max(spectral / nu);
        let allowed = lip * nu * (1.0 + 1e-12);
        if frob > allowed {
            frob_violations[slot] += 1;
        }
        if spectral > allowed {
            spectral_violations += 1;
        }
    }
    let zero_step = jacobian_difference(&[0.3, -0.2], &[0.3, -0.2]).frobenius_norm();
    let at_zero = jacobian(&[0.0, 0.0]).frobenius_norm();
    let total: usize = frob_violations.iter().sum();
    r.measure("pairs", n_pairs as f64)
        .measure("bound", lip)
        .measure("violations", total as f64);
    for (i, &d) in dims.iter().enumerate() {
        r.measure(&format!("violations_d{d}"), frob_violations[i] as f64)
            .measure(&format!("max_ratio_d{d}"), frob_worst[i]);
    }
    r.measure("spectral_violations", spectral_violations as f64)
        .measure("spectral_max_ratio", spectral_worst)
        .measure("zero_step_distance", zero_step)
        .measure("jacobian_at_zero", at_zero);
    if total > 0 {
        r.note("at w = 0 the Frobenius distance is sqrt(d+3)·‖u‖, above the bound once d ≥ 5");
    }
    Ok(r.decide(total == 0 && zero_step == 0.0 && at_zero == 0.0).take())
}

fn jacobian(w: &[f64]) -> Matrix {
    let n = norm(w);
    Matrix::from_fn(w.len(), |i, j| jacobian_entry(w, n, i, j))
}

fn jacobian_difference(a: &[f64], b: &[f64]) -> Matrix {
    let (ja, jb) = (jacobian(a), jacobian(b));
    Matrix::from_fn(a.len(), |i, j| jb[(i, j)] - ja[(i, j)])
}

fn jacobian_entry(w: &[f64], n: f64, i: usize, j: usize) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let id = if i == j { n } else { 0.0 };
    id + w[i] * w[j] / n
}

/// `h(x) = ‖w*‖(|w̄*ᵀx| − g(τ))·1{|w̄*ᵀx| ≤ τ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabTestFunction {
    pub tau: f64,
    pub level: f64,
}

impl SlabTestFunction {
    pub fn new(tau: f64) -> Self {
        SlabTestFunction {
            tau,
            level: slab_mean_abs(tau),
        }
    }

    /// `P(|Z| ≤ τ)`.
    pub fn mass(&self) -> f64 {
        erf(self.tau / SQRT_2)
    }

    /// `E[(|Z| − g)|Z| ; |Z| ≤ τ]`, the unit-teacher correlation.
    pub fn teacher_correlation(&self) -> f64 {
        let t = self.tau;
        let second = FRAC_2_PI.sqrt() * (-t * (-0.5 * t * t).exp()) + erf(t / SQRT_2);
        let first = FRAC_2_PI.sqrt() * (-(-0.5 * t * t).exp_m1());
        second - self.level * first
    }
}

/// Half-width `τ = c₁·w_min·δ/(r·w_max)` for a teacher with no student
/// within `δ`.
pub fn slab_width(t: &TeacherNetwork, delta: f64, c1: f64) -> f64 {
    c1 * t.w_min() * delta / (t.r() as f64 * t.w_max())
}

/// Sampled `⟨h, f* − f⟩_S / (‖w*‖²τ³)` for teacher `i`, sampling `x`
/// conditionally on the slab.
pub fn slab_correlation(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    i: usize,
    tau: f64,
    n: u64,
    seed: u64,
) -> Result<mc::MCEstimate> {
    let d = t.dim();
    let ws = &t.neurons()[i];
    let wn = ws.norm();
    let dir: Vec<f64> = ws.iter().map(|x| x / wn).collect();
    let h = SlabTestFunction::new(tau);
    let normal = Normal::standard();
    let (lo, hi) = (normal.cdf(-tau), normal.cdf(tau));
    let scale = h.mass() / (wn * wn * tau.powi(3));
    let est = mc::estimate(
        |g| {
            let (x, extra) = g.split_at(d);
            let u = lo + (hi - lo) * normal.cdf(extra[0]);
            let z = normal.inverse_cdf(u).clamp(-tau, tau);
            let along = dot(&dir, x);
            let xs: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + (z - along) * di).collect();
            let hx = wn * (z.abs() - h.level);
            scale * hx * (t.output(&xs) - s.output(&xs))
        },
        d + 1,
        n,
        seed,
    )?;
    Ok(est)
}

/// Slab test-function correlation for a teacher with no student within
/// `delta`, with the contrast of a matching student.
pub fn test_function_check(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    delta: f64,
    cfg: &VerifierConfig,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("test_function");
    let i = 0;
    let nearest = s
        .neurons()
        .iter()
        .filter(|w| w.norm() > 0.0)
        .map(|w| crate::net::angle_up_to_sign(w, &t.neurons()[i]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let tau = slab_width(t, delta, 1.0);
    let h = SlabTestFunction::new(tau);
    let est = slab_correlation(t, s, i, tau, cfg.mc_samples, rng::derive_seed(cfg.seed, 21))?;
    let contrast = slab_correlation(
        t,
        &exact_copy(t),
        i,
        tau,
        cfg.mc_samples,
        rng::derive_seed(cfg.seed, 22),
    )?;
    let g_probe = slab_mean_abs(0.1);
    let allowed = cfg.lower(cfg.fitted.test_function);
    r.measure("tau", tau)
        .measure("delta", delta)
        .measure("nearest_student_angle", nearest)
        .measure("ratio", est.mean)
        .measure("ratio_std_err", est.std_err)
        .measure("teacher_only_ratio", h.teacher_correlation() / tau.powi(3))
        .measure("contrast_ratio", contrast.mean)
        .measure("frozen_c", cfg.fitted.test_function)
        .measure("allowed_c", allowed)
        .measure("level_at_0.1", g_probe);
    if nearest < delta {
        return Ok(r.inconclusive("a student lies within delta of the teacher").take());
    }
    let level_ok = (g_probe - 0.05).abs() <= 1e-3;
    Ok(r.decide(est.mean >= allowed && level_ok).take())
}

/// `h(x) = √(π/2) − Σ_k h_l(w̄*_kᵀx)/σ̂_l` with
/// `l = 2·max(⌈log_{1/cos(Δ/2)}(1/ε)⌉, 1)`.
#[derive(Debug, Clone)]
pub struct HermiteTestFunction {
    pub degree: usize,
    pub sigma: f64,
    pub units: Vec<Vec<f64>>,
}

impl HermiteTestFunction {
    pub fn new(t: &TeacherNetwork, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Domain(format!("test function needs 0 < eps < 1, got {eps}")));
        }
        let sep = t.separation().delta;
        let base = 1.0 / (sep / 2.0).cos();
        let steps = ((1.0 / eps).ln() / base.ln()).ceil().max(1.0);
        let degree = 2 * steps as usize;
        let coeffs = hermite_abs_coeffs(degree);
        Ok(HermiteTestFunction {
            degree,
            sigma: coeffs.coeffs[degree],
            units: t
                .neurons()
                .iter()
                .map(|w| w.iter().map(|x| x / w.norm()).collect())
                .collect(),
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let tail: f64 = self
            .units
            .iter()
            .map(|u| hermite_value(self.degree, dot(u, x)) / self.sigma)
            .sum();
        (PI / 2.0).sqrt() - tail
    }

    /// `⟨h, |uᵀx|⟩ = ‖u‖(1 − Σ_k ρ_k^l)` using
    /// `E[h_l(aᵀx)|uᵀx|] = ‖u‖σ̂_lρ^l` for unit `a`.
    pub fn correlation(&self, u: &[f64]) -> f64 {
        let n = norm(u);
        if n == 0.0 {
            return 0.0;
        }
        let powers: f64 = self
            .units
            .iter()
            .map(|a| (dot(a, u) / n).powi(self.degree as i32))
            .sum();
        n * (1.0 - powers)
    }

    /// Analytic `⟨h, R⟩` for `R = f − f*`.
    pub fn inner_residual(&self, t: &TeacherNetwork, s: &StudentNetwork) -> f64 {
        let students: f64 = s
            .neurons()
            .iter()
            .map(|w| w.norm() * self.correlation(w))
            .sum();
        let teachers: f64 = t.neurons().iter().map(|w| self.correlation(w)).sum();
        students - teachers
    }
}

/// `¼Σ_j‖w_j‖²sin²δ_j − (r−1)·ε·Σ_j‖w_j‖²`.
pub fn hermite_lower_bound(t: &TeacherNetwork, s: &StudentNetwork, eps: f64) -> Result<f64> {
    let p = partition_students(t, s)?;
    let r = t.r() as f64;
    Ok(s.neurons()
        .iter()
        .zip(&p.angles)
        .map(|(w, a)| {
            let mass = w.norm().powi(2);
            mass * (0.25 * a.sin().powi(2) - (r - 1.0) * eps)
        })
        .sum())
}

/// Analytic Hermite test-function inequality on every case, with a sampled
/// cross-check of `⟨h, R⟩` on the first `sampled` cases.
pub fn hermite_test_function_check(
    cases: &[Case],
    eps: f64,
    sampled: usize,
    cfg: &VerifierConfig,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("hermite_test_function");
    let (mut violations, mut max_z, mut min_slack, mut max_degree) = (0, 0.0f64, f64::INFINITY, 0);
    for (k, case) in cases.iter().enumerate() {
        let (t, s) = (&case.teacher, &case.student);
        let h = HermiteTestFunction::new(t, eps)?;
        max_degree = max_degree.max(h.degree);
        let inner = h.inner_residual(t, s);
        let bound = hermite_lower_bound(t, s, eps)?;
        let scale = 1e-12 * (1.0 + inner.abs() + bound.abs());
        min_slack = min_slack.min(inner - bound);
        if inner < bound - scale {
            violations += 1;
            r.note(format!("violation at {}", case.label));
        }
        if k < sampled {
            let est = mc::estimate(
                |x| h.eval(x) * (s.output(x) - t.output(x)),
                t.dim(),
                cfg.mc_samples,
                rng::derive_seed(cfg.seed, 300 + k as u64),
            )?;
            max_z = max_z.max(est.z_score(inner));
        }
    }
    r.measure("cases", cases.len() as f64)
        .measure("violations", violations as f64)
        .measure("min_slack", min_slack)
        .measure("mc_max_z", max_z)
        .measure("max_degree", max_degree as f64)
        .measure("eps", eps);
    Ok(r.decide(violations == 0 && max_z <= 4.0).take())
}

/// Teacher 0 of a desk teacher in `d = 3` whose student copy is rotated by
/// `delta` towards a random orthogonal direction.
pub fn rotated_student_case(seed: u64, delta: f64) -> Result<Case> {
    let t = states::desk_teacher(3, seed)?;
    let mut s = exact_copy(&t);
    let w = s.neurons()[0].clone();
    let n = w.norm();
    let unit: Vec<f64> = w.iter().map(|x| x / n).collect();
    let mut g = rng::seeded(rng::derive_seed(seed, 5));
    let mut perp = rng::normal_vec(&mut g, 3);
    let c = dot(&perp, &unit);
    perp.iter_mut().zip(&unit).for_each(|(p, u)| *p -= c * u);
    let pn = norm(&perp);
    let rotated: Vec<f64> = unit
        .iter()
        .zip(&perp)
        .map(|(u, p)| n * (delta.cos() * u + delta.sin() * p / pn))
        .collect();
    s.neurons_mut()[0] = WeightVector::new(rotated)?;
    Ok(Case::new(format!("rotated δ={delta}"), t, s))
}

pub(super) fn suite_warmup_cubic(cfg: &VerifierConfig) -> Result<CheckReport> {
    warmup_cubic_check(&[0.2, 0.1, 0.05, 0.025], cfg.mc_samples, rng::derive_seed(cfg.seed, 31))
}

pub(super) fn suite_relu_counterexample(cfg: &VerifierConfig) -> Result<CheckReport> {
    relu_counterexample_check(cfg.mc_samples, rng::derive_seed(cfg.seed, 32))
}

pub(super) fn suite_g_smoothness(cfg: &VerifierConfig) -> Result<CheckReport> {
    g_smoothness_check(cfg.g_pairs, &[2, 5, 20], rng::derive_seed(cfg.seed, 33))
}

pub(super) fn suite_test_function(cfg: &VerifierConfig) -> Result<CheckReport> {
    let case = rotated_student_case(cfg.seed, 0.3)?;
    test_function_check(&case.teacher, &case.student, 0.3, cfg)
}

pub(super) fn suite_hermite_test_function(cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut cases = vec![rotated_student_case(cfg.seed, 0.3)?];
    cases.extend(states::warmup_cases(&[0.2, 0.1]));
    let t = states::desk_teacher(3, cfg.seed)?;
    cases.push(Case::new("exact copy", t.clone(), exact_copy(&t)));
    cases.extend(states::perturbed_cases(cfg.seed, cfg.state_seeds.min(6), &[0.02])?);
    hermite_test_function_check(&cases, cfg.loss_threshold, 3, cfg)
}
