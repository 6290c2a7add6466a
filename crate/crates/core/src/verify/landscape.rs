use crate::error::{Error, Result};
use crate::net::{delta_max, partition_students, StudentNetwork, WeightVector};
use crate::population::{
    descent_direction, frobenius, frobenius_dot, loss_and_gradient, population_loss, residual_stats,
};
use crate::rng;

use super::states::{self, Case, RunStates};
use super::{fit_slope, CheckReport, VerifierConfig};

/// `min ‖∇L‖_F / L` over the low-loss states; states with zero loss are
/// skipped because the ratio is undefined there.
pub fn lojasiewicz_check(cases: &[Case], cfg: &VerifierConfig) -> CheckReport {
    let mut r = CheckReport::new("lojasiewicz");
    let (mut min_ratio, mut evaluated, mut zero, mut above) = (f64::INFINITY, 0, 0, 0);
    let mut worst = String::new();
    for case in cases {
        let (loss, grad) = loss_and_gradient(&case.teacher, &case.student);
        if loss > cfg.loss_threshold {
            above += 1;
            continue;
        }
        if loss <= cfg.zero_loss {
            zero += 1;
            continue;
        }
        evaluated += 1;
        let ratio = frobenius(&grad) / loss;
        if ratio < min_ratio {
            min_ratio = ratio;
            worst = case.label.clone();
        }
    }
    r.measure("min_ratio", min_ratio)
        .measure("kappa_floor", cfg.kappa_floor)
        .measure("evaluated", evaluated as f64)
        .measure("skipped_zero_loss", zero as f64)
        .measure("above_threshold", above as f64);
    if evaluated == 0 {
        return r.inconclusive("no state with positive loss below the threshold").take();
    }
    r.note(format!("smallest ratio at {worst}"));
    r.decide(min_ratio >= cfg.kappa_floor).take()
}

/// `⟨∇L, g⟩ ≥ L` for the descent direction `g`. Uncovered teachers make a
/// state inconclusive rather than failed.
pub fn descent_correlation_check(cases: &[Case], cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut r = CheckReport::new("descent_correlation");
    let (mut evaluated, mut uncovered, mut violations, mut above) = (0, 0, 0, 0);
    let mut min_ratio = f64::INFINITY;
    for case in cases {
        let (t, s) = (&case.teacher, &case.student);
        let (loss, grad) = loss_and_gradient(t, s);
        if loss > cfg.loss_threshold {
            above += 1;
            continue;
        }
        let p = partition_students(t, s)?;
        let dd = match descent_direction(t, s, &p, loss.max(cfg.zero_loss), cfg.delta_c) {
            Ok(dd) => dd,
            Err(Error::Uncovered { .. }) => {
                uncovered += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        evaluated += 1;
        let inner = frobenius_dot(&grad, &dd.directions);
        if loss > cfg.zero_loss {
            min_ratio = min_ratio.min(inner / loss);
            if inner < loss {
                violations += 1;
                r.note(format!("violation at {}", case.label));
            }
        }
    }
    r.measure("evaluated", evaluated as f64)
        .measure("uncovered", uncovered as f64)
        .measure("violations", violations as f64)
        .measure("above_threshold", above as f64)
        .measure("min_ratio", min_ratio)
        .measure("delta_c", cfg.delta_c);
    if evaluated == 0 {
        return Ok(r.inconclusive("every state had an uncovered teacher").take());
    }
    Ok(r.decide(violations == 0).take())
}

/// Grid of perturbation sizes for the smoothness check.
pub const SMOOTHNESS_GRID: [f64; 7] = [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0];

/// Fits `C` in `L(W+U) − L(W) − ⟨∇L, U⟩ ≤ C(√L‖U‖^{3/2} + ‖U‖² + ‖U‖⁴)` over
/// `directions` random unit directions per state and the size grid.
pub fn smoothness_check(
    cases: &[Case],
    directions: usize,
    seed: u64,
    cfg: &VerifierConfig,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("smoothness");
    let mut fitted = 0.0f64;
    let mut min_excess = f64::INFINITY;
    let mut zero_excess = 0.0f64;
    for (k, case) in cases.iter().enumerate() {
        let (t, s) = (&case.teacher, &case.student);
        let (loss, grad) = loss_and_gradient(t, s);
        let mut g = rng::seeded(rng::derive_seed(seed, k as u64));
        let zero_dir = vec![WeightVector::zeros(s.dim()); s.m()];
        zero_excess = zero_excess.max(excess(case, loss, &grad, &zero_dir, 0.0)?.abs());
        for _ in 0..directions {
            let mut dir: Vec<WeightVector> = (0..s.m())
                .map(|_| WeightVector::new(rng::normal_vec(&mut g, s.dim())))
                .collect::<Result<_>>()?;
            let n = frobenius(&dir);
            dir.iter_mut().for_each(|b| b.iter_mut().for_each(|x| *x /= n));
            for &size in &SMOOTHNESS_GRID {
                let e = excess(case, loss, &grad, &dir, size)?;
                min_excess = min_excess.min(e);
                let bound = loss.sqrt() * size.powf(1.5) + size * size + size.powi(4);
                fitted = fitted.max(e / bound);
            }
        }
    }
    let allowed = cfg.upper(cfg.fitted.smoothness);
    r.measure("fitted_c", fitted)
        .measure("frozen_c", cfg.fitted.smoothness)
        .measure("allowed_c", allowed)
        .measure("min_excess", min_excess)
        .measure("zero_step_excess", zero_excess)
        .measure("states", cases.len() as f64);
    Ok(r.decide(fitted <= allowed && zero_excess == 0.0).take())
}

fn excess(case: &Case, loss: f64, grad: &[WeightVector], dir: &[WeightVector], size: f64) -> Result<f64> {
    let moved: Vec<WeightVector> = case
        .student
        .neurons()
        .iter()
        .zip(dir)
        .map(|(w, u)| WeightVector::new(w.iter().zip(u.iter()).map(|(a, b)| a + size * b).collect()))
        .collect::<Result<_>>()?;
    let moved = StudentNetwork::new(moved)?;
    let linear = size * frobenius_dot(grad, dir);
    Ok(population_loss(&case.teacher, &moved) - loss - linear)
}

/// `max ‖∇L‖²_F/(r³w_max³)` over states with `L ≤ r²w_max²`.
pub fn lipschitz_check(cases: &[Case], cfg: &VerifierConfig) -> CheckReport {
    let mut r = CheckReport::new("lipschitz");
    let (mut fitted, mut evaluated, mut skipped) = (0.0f64, 0, 0);
    for case in cases {
        let t = &case.teacher;
        let rw = t.r() as f64 * t.w_max();
        let (loss, grad) = loss_and_gradient(t, &case.student);
        if loss > rw * rw {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let g = frobenius(&grad);
        fitted = fitted.max(g * g / rw.powi(3));
    }
    let allowed = cfg.upper(cfg.fitted.lipschitz);
    r.measure("fitted_c", fitted)
        .measure("frozen_c", cfg.fitted.lipschitz)
        .measure("allowed_c", allowed)
        .measure("evaluated", evaluated as f64)
        .measure("skipped_large_loss", skipped as f64);
    if evaluated == 0 {
        return r.inconclusive("no state with bounded loss").take();
    }
    r.decide(fitted <= allowed).take()
}

/// Smallest cone radius around teacher `i` that contains a student and
/// student mass `Σ‖w_j‖² ≥ ½‖w*_i‖`; infinite when the mass is never reached.
fn covering_radius(case: &Case, partition: &crate::net::NeuronPartition, i: usize) -> f64 {
    let mut members: Vec<usize> = partition
        .members(i)
        .filter(|&j| case.student.neurons()[j].norm() > 0.0)
        .collect();
    members.sort_by(|&a, &b| partition.angles[a].total_cmp(&partition.angles[b]));
    let need = 0.5 * case.teacher.neurons()[i].norm();
    let mut mass = 0.0;
    for j in members {
        let n = case.student.neurons()[j].norm();
        mass += n * n;
        if mass >= need {
            return partition.angles[j];
        }
    }
    f64::INFINITY
}

/// Fits the `δ_max` constant `C` for which every teacher has a student and
/// half its norm in student mass within `δ_max(L, C)`.
pub fn neighbor_and_mass_check(cases: &[Case], cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut r = CheckReport::new("neighbor_and_mass");
    let (mut fitted, mut evaluated, mut above, mut covered_at_config) = (0.0f64, 0, 0, 0);
    let mut uncoverable = 0;
    for case in cases {
        let loss = case.loss();
        if loss > cfg.loss_threshold {
            above += 1;
            continue;
        }
        evaluated += 1;
        let p = partition_students(&case.teacher, &case.student)?;
        let unit = delta_max(loss.max(cfg.zero_loss), &case.teacher, 1.0);
        let config_radius = delta_max(loss.max(cfg.zero_loss), &case.teacher, cfg.delta_c);
        let mut ok_at_config = true;
        for i in 0..case.teacher.r() {
            let radius = covering_radius(case, &p, i);
            if !radius.is_finite() || radius > std::f64::consts::FRAC_PI_2 {
                uncoverable += 1;
                ok_at_config = false;
                continue;
            }
            if radius > config_radius {
                ok_at_config = false;
            }
            if unit > 0.0 {
                fitted = fitted.max(radius / unit);
            }
        }
        if ok_at_config {
            covered_at_config += 1;
        }
    }
    let allowed = cfg.upper(cfg.fitted.neighbor);
    r.measure("fitted_c", fitted)
        .measure("frozen_c", cfg.fitted.neighbor)
        .measure("allowed_c", allowed)
        .measure("evaluated", evaluated as f64)
        .measure("above_threshold", above as f64)
        .measure("covered_at_config_c", covered_at_config as f64)
        .measure("uncoverable_teachers", uncoverable as f64);
    if evaluated == 0 {
        return Ok(r.inconclusive("no low-loss state").take());
    }
    Ok(r.decide(uncoverable == 0 && fitted <= allowed).take())
}

/// Slope of `log max_i‖v_i‖` against `log L` over the last decade of loss
/// along a converging run.
pub fn average_closeness_check(run: &RunStates, cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut r = CheckReport::new("average_closeness");
    let target = 3.0 / 8.0 - 0.05;
    let mut points = Vec::new();
    for (_, s) in &run.states {
        let p = partition_students(&run.teacher, s)?;
        let st = residual_stats(&run.teacher, s, &p)?;
        points.push((st.loss, st.max_gap()));
    }
    r.measure("slope_floor", target);
    if points.iter().all(|&(_, g)| g == 0.0) {
        r.note("degenerate: every gap is zero");
        return Ok(r.decide(true).take());
    }
    let last = points
        .iter()
        .map(|&(l, _)| l)
        .filter(|&l| l > cfg.zero_loss)
        .fold(f64::INFINITY, f64::min);
    let window: Vec<(f64, f64)> = points
        .into_iter()
        .filter(|&(l, g)| l <= 10.0 * last && l > cfg.zero_loss && g > 0.0)
        .collect();
    r.measure("final_loss", last).measure("points", window.len() as f64);
    if window.len() < 3 {
        return Ok(r.inconclusive("fewer than three states in the final decade").take());
    }
    let xs: Vec<f64> = window.iter().map(|&(l, _)| l.ln()).collect();
    let ys: Vec<f64> = window.iter().map(|&(_, g)| g.ln()).collect();
    let slope = fit_slope(&xs, &ys);
    r.measure("slope", slope);
    Ok(r.decide(slope >= target).take())
}

/// Uniform constants for `‖R₂‖²/L^{3/4}` and `Σ‖w_j‖²δ_j²/L^{1/2}` over
/// states with loss in `[1e-8, threshold]`.
pub fn r2_and_weighted_angle_check(cases: &[Case], cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut r = CheckReport::new("r2_and_weighted_angle");
    let (mut r2c, mut wac, mut evaluated) = (0.0f64, 0.0f64, 0);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for case in cases {
        let (t, s) = (&case.teacher, &case.student);
        let p = partition_students(t, s)?;
        let st = residual_stats(t, s, &p)?;
        let loss = st.loss;
        if !(1e-8 * 0.999..=cfg.loss_threshold).contains(&loss) {
            continue;
        }
        evaluated += 1;
        lo = lo.min(loss);
        hi = hi.max(loss);
        r2c = r2c.max(st.r2_norm_sq / loss.powf(0.75));
        let weighted: f64 = s
            .neurons()
            .iter()
            .zip(&p.angles)
            .map(|(w, a)| w.norm().powi(2) * a * a)
            .sum();
        wac = wac.max(weighted / loss.sqrt());
    }
    let (r2_allowed, wa_allowed) = (cfg.upper(cfg.fitted.r2), cfg.upper(cfg.fitted.weighted_angle));
    r.measure("r2_c", r2c)
        .measure("r2_frozen", cfg.fitted.r2)
        .measure("r2_allowed", r2_allowed)
        .measure("weighted_angle_c", wac)
        .measure("weighted_angle_frozen", cfg.fitted.weighted_angle)
        .measure("weighted_angle_allowed", wa_allowed)
        .measure("evaluated", evaluated as f64)
        .measure("loss_min", lo)
        .measure("loss_max", hi);
    if evaluated == 0 {
        return Ok(r.inconclusive("no state in the loss sweep").take());
    }
    Ok(r.decide(r2c <= r2_allowed && wac <= wa_allowed).take())
}

fn run_cases(run: &RunStates) -> Vec<Case> {
    run.states
        .iter()
        .map(|(step, s)| Case::new(format!("run step {step}"), run.teacher.clone(), s.clone()))
        .collect()
}

fn landscape_cases(cfg: &VerifierConfig) -> Result<Vec<Case>> {
    let mut cases = states::low_loss_cases(cfg.seed, cfg.state_seeds)?;
    let run = states::main_run(cfg.seed)?;
    cases.extend(run_cases(&run));
    Ok(cases)
}

pub(super) fn suite_lojasiewicz(cfg: &VerifierConfig) -> Result<CheckReport> {
    Ok(lojasiewicz_check(&landscape_cases(cfg)?, cfg))
}

pub(super) fn suite_descent_correlation(cfg: &VerifierConfig) -> Result<CheckReport> {
    descent_correlation_check(&landscape_cases(cfg)?, cfg)
}

pub(super) fn suite_smoothness(cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut cases = states::low_loss_cases(cfg.seed, cfg.state_seeds.min(6))?;
    cases.extend(states::bounded_cases(cfg.seed, 3)?);
    smoothness_check(&cases, 4, rng::derive_seed(cfg.seed, 11), cfg)
}

pub(super) fn suite_lipschitz(cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut cases = states::bounded_cases(cfg.seed, cfg.state_seeds)?;
    cases.extend(states::low_loss_cases(cfg.seed, cfg.state_seeds.min(6))?);
    Ok(lipschitz_check(&cases, cfg))
}

pub(super) fn suite_neighbor_and_mass(cfg: &VerifierConfig) -> Result<CheckReport> {
    neighbor_and_mass_check(&landscape_cases(cfg)?, cfg)
}

pub(super) fn suite_average_closeness(cfg: &VerifierConfig) -> Result<CheckReport> {
    average_closeness_check(&*states::main_run(cfg.seed)?, cfg)
}

pub(super) fn suite_r2_and_weighted_angle(cfg: &VerifierConfig) -> Result<CheckReport> {
    let mut cases = run_cases(&*states::main_run(cfg.seed)?);
    cases.extend(states::warmup_cases(&[0.2, 0.1, 0.05, 0.025]));
    r2_and_weighted_angle_check(&cases, cfg)
}
