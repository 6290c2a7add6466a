//! Generators for the teacher/student states the checks run on.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::Result;
use crate::init::perturbed_teacher_init;
use crate::net::{RandomTeacherSpec, StudentNetwork, TeacherNetwork, WeightVector};
use crate::population::{exact_copy, warmup_state};
use crate::rng;
use crate::train::{train_observed, Mode, StepSize, TrainConfig};

/// One teacher/student pair with a label for reports.
#[derive(Debug, Clone)]
pub struct Case {
    pub label: String,
    pub teacher: TeacherNetwork,
    pub student: StudentNetwork,
}

impl Case {
    pub fn new(label: impl Into<String>, teacher: TeacherNetwork, student: StudentNetwork) -> Self {
        Case {
            label: label.into(),
            teacher,
            student,
        }
    }

    pub fn loss(&self) -> f64 {
        crate::population::population_loss(&self.teacher, &self.student)
    }
}

/// Teachers used throughout: `r = 3`, separation at least 0.5 rad, norms
/// in `[0.5, 1.5]`.
pub const DESK_TEACHER: RandomTeacherSpec = RandomTeacherSpec {
    delta_min: 0.5,
    w_min: 0.5,
    w_max: 1.5,
};

pub fn desk_teacher(d: usize, seed: u64) -> Result<TeacherNetwork> {
    TeacherNetwork::random(d, 3, DESK_TEACHER, seed)
}

/// Warm-up pairs: two students at `±δ` around one unit teacher.
pub fn warmup_cases(deltas: &[f64]) -> Vec<Case> {
    deltas
        .iter()
        .map(|&delta| {
            let (t, s) = warmup_state(delta);
            Case::new(format!("warmup δ={delta}"), t, s)
        })
        .collect()
}

/// Perturbed teacher copies with `m = 20`, over `seeds` seeds, the
/// dimensions 2, 3, 5 in rotation, and each noise scale.
pub fn perturbed_cases(base_seed: u64, seeds: usize, scales: &[f64]) -> Result<Vec<Case>> {
    let mut out = Vec::with_capacity(seeds * scales.len());
    for k in 0..seeds as u64 {
        let d = [2, 3, 5][(k % 3) as usize];
        let seed = rng::derive_seed(base_seed, k);
        let t = desk_teacher(d, seed)?;
        for (q, &scale) in scales.iter().enumerate() {
            let s = perturbed_teacher_init(&t, 20, scale, rng::derive_seed(seed, q as u64 + 1))?;
            out.push(Case::new(format!("perturbed d={d} seed={k} scale={scale}"), t.clone(), s));
        }
    }
    Ok(out)
}

/// Low-loss states: perturbed copies at three noise levels plus warm-up
/// configurations.
pub fn low_loss_cases(base_seed: u64, seeds: usize) -> Result<Vec<Case>> {
    let mut cases = perturbed_cases(base_seed, seeds, &[0.005, 0.01, 0.02])?;
    cases.extend(warmup_cases(&[0.2, 0.1, 0.05]));
    Ok(cases)
}

/// Gaussian students of moderate scale, the zero network and the exact
/// copy, all with loss `O(r²w_max²)`.
pub fn bounded_cases(base_seed: u64, seeds: usize) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    for k in 0..seeds as u64 {
        let d = [2, 5, 10][(k % 3) as usize];
        let seed = rng::derive_seed(base_seed, 1000 + k);
        let t = desk_teacher(d, seed)?;
        let mut g = rng::seeded(rng::derive_seed(seed, 1));
        for (m, scale) in [(5usize, 0.3), (20, 0.5), (20, 1.0)] {
            let neurons = (0..m)
                .map(|_| WeightVector::new(rng::normal_vec(&mut g, d)).map(|w| w.scaled(scale)))
                .collect::<Result<Vec<_>>>()?;
            out.push(Case::new(
                format!("gaussian d={d} m={m} scale={scale}"),
                t.clone(),
                StudentNetwork::new(neurons)?,
            ));
        }
        if k == 0 {
            out.push(Case::new("zero network", t.clone(), StudentNetwork::zeros(d, 4)));
            out.push(Case::new("exact copy", t.clone(), exact_copy(&t)));
        }
    }
    Ok(out)
}

/// States visited by one gradient descent run.
#[derive(Debug, Clone)]
pub struct RunStates {
    pub teacher: TeacherNetwork,
    /// `(step, student)` at the first step below each loss level.
    pub states: Vec<(u64, StudentNetwork)>,
    pub final_loss: f64,
}

/// The desk-scale run: `d = 2`, `r = 3`, `m = 20`, perturbed copies with
/// noise 0.1, step `0.1/(r·w_max)`, until the loss reaches `1e-8`.
/// States are kept at every quarter decade of loss. Runs are memoised per
/// seed.
pub fn main_run(seed: u64) -> Result<Arc<RunStates>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<RunStates>>>> = OnceLock::new();
    let mut cache = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    if let Some(run) = cache.get(&seed) {
        return Ok(run.clone());
    }
    let run = Arc::new(compute_main_run(seed)?);
    cache.insert(seed, run.clone());
    Ok(run)
}

fn compute_main_run(seed: u64) -> Result<RunStates> {
    let t = desk_teacher(2, seed)?;
    let s0 = perturbed_teacher_init(&t, 20, 0.1, rng::derive_seed(seed, 7))?;
    let cfg = TrainConfig {
        eta: StepSize::Auto { c: 0.1 },
        max_steps: 2_000_000,
        target_loss: 1e-8,
        mode: Mode::Gd,
        seed,
        record_every: 0,
    };
    let d = t.dim();
    let mut states = Vec::new();
    let mut next_level = f64::INFINITY;
    let traj = train_observed(&t, &s0, &cfg, |info| {
        if info.loss <= next_level && info.loss > 0.0 {
            let neurons = info
                .weights
                .chunks_exact(d)
                .map(|w| WeightVector::new(w.to_vec()).expect("finite weights"))
                .collect();
            states.push((info.step, StudentNetwork::new(neurons).expect("valid student")));
            let quarter = (info.loss.log10() * 4.0).floor() / 4.0;
            next_level = 10f64.powf(quarter).min(info.loss * 0.999);
        }
    })?;
    Ok(RunStates {
        teacher: t,
        states,
        final_loss: traj.final_loss,
    })
}
