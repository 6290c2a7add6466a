use crate::empirical::streamed_loss_and_gradient;
use crate::error::Result;
use crate::init::perturbed_teacher_init;
use crate::net::{StudentNetwork, TeacherNetwork};
use crate::population::{exact_copy, population_gradient, population_loss};
use crate::rng;
use crate::train::{train, Mode, StepSize, TrainConfig};

use super::states::desk_teacher;
use super::{fit_slope, median, CheckReport, VerifierConfig};

/// `‖∇L̂_N − ∇L‖_F` on `N` samples drawn from `seed`.
pub fn gradient_deviation(t: &TeacherNetwork, s: &StudentNetwork, n: u64, seed: u64) -> Result<f64> {
    let exact = population_gradient(t, s);
    let (_, sampled) = streamed_loss_and_gradient(t, s, n, seed)?;
    let diff: Vec<_> = sampled
        .iter()
        .zip(&exact)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .collect();
    Ok(diff.iter().sum::<f64>().sqrt())
}

/// Log-log slope of the median gradient deviation against `N`, which
/// should be `−½ ± 0.1`, plus the exact copy where the deviation vanishes.
pub fn sample_concentration_check(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    n_grid: &[u64],
    seeds: usize,
    base_seed: u64,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("sample_concentration");
    let mut xs = Vec::with_capacity(n_grid.len());
    let mut ys = Vec::with_capacity(n_grid.len());
    for (q, &n) in n_grid.iter().enumerate() {
        let devs = (0..seeds as u64)
            .map(|k| gradient_deviation(t, s, n, rng::derive_seed(base_seed, 100 * q as u64 + k)))
            .collect::<Result<Vec<_>>>()?;
        let med = median(&devs);
        r.measure(&format!("median_at_{n}"), med);
        xs.push((n as f64).ln());
        ys.push(med.ln());
    }
    let slope = fit_slope(&xs, &ys);
    let copy = exact_copy(t);
    let copy_dev = n_grid
        .iter()
        .map(|&n| gradient_deviation(t, &copy, n, base_seed))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    r.measure("slope", slope)
        .measure("seeds", seeds as f64)
        .measure("exact_copy_deviation", copy_dev);
    Ok(r.decide((slope + 0.5).abs() <= 0.1 && copy_dev <= 1e-12).take())
}

/// Mini-batch SGD with fresh batches from a perturbed teacher copy; counts
/// the seeds whose population loss reaches `target` within `max_steps`.
#[allow(clippy::too_many_arguments)]
pub fn sgd_check(
    seeds: usize,
    required: usize,
    batch: u64,
    init_scale: f64,
    eta: StepSize,
    max_steps: u64,
    target: f64,
    base_seed: u64,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("sgd");
    let (mut reached, mut worst, mut max_initial) = (0, 0.0f64, 0.0f64);
    let mut steps_used = Vec::with_capacity(seeds);
    for k in 0..seeds as u64 {
        let seed = rng::derive_seed(base_seed, k);
        let t = desk_teacher(2, seed)?;
        let s0 = perturbed_teacher_init(&t, 20, init_scale, rng::derive_seed(seed, 1))?;
        max_initial = max_initial.max(population_loss(&t, &s0));
        let cfg = TrainConfig {
            eta,
            max_steps,
            target_loss: target,
            mode: Mode::Sgd { batch },
            seed: rng::derive_seed(seed, 2),
            record_every: 0,
        };
        let traj = train(&t, &s0, &cfg)?;
        worst = worst.max(traj.final_loss);
        steps_used.push(traj.steps as f64);
        if traj.final_loss <= target {
            reached += 1;
        }
    }
    r.measure("seeds", seeds as f64)
        .measure("reached", reached as f64)
        .measure("required", required as f64)
        .measure("batch", batch as f64)
        .measure("max_initial_loss", max_initial)
        .measure("max_final_loss", worst)
        .measure("median_steps", median(&steps_used));
    Ok(r.decide(reached >= required).take())
}

pub(super) fn suite_sample_concentration(cfg: &VerifierConfig) -> Result<CheckReport> {
    let seed = rng::derive_seed(cfg.seed, 61);
    let t = desk_teacher(5, seed)?;
    let s = perturbed_teacher_init(&t, 20, 0.3, rng::derive_seed(seed, 1))?;
    sample_concentration_check(&t, &s, &[1_000, 10_000, 100_000, 1_000_000], 5, seed)
}

pub(super) fn suite_sgd(cfg: &VerifierConfig) -> Result<CheckReport> {
    sgd_check(
        10,
        8,
        4096,
        SGD_INIT_SCALE,
        StepSize::Auto { c: 0.01 },
        SGD_MAX_STEPS,
        1e-3,
        rng::derive_seed(cfg.seed, 62),
    )
}

/// Noise of the perturbed start; large enough that the initial loss exceeds
/// the target.
pub const SGD_INIT_SCALE: f64 = 0.1;
pub const SGD_MAX_STEPS: u64 = 20_000;

