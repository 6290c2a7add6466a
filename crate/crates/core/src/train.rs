//! Full-batch gradient descent on the population loss and mini-batch SGD
//! on fresh samples.

use serde::{Deserialize, Serialize};

use crate::empirical::streamed_loss_and_gradient;
use crate::error::{Error, Result};
use crate::net::{StudentNetwork, TeacherNetwork, WeightVector};
use crate::population::{flatten, unflatten, PopulationEngine};
use crate::rng;

/// Step size, either fixed or `c / (r·w_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    Auto { c: f64 },
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Auto { c: 0.01 }
    }
}

impl StepSize {
    pub fn resolve(&self, t: &TeacherNetwork) -> f64 {
        match *self {
            StepSize::Fixed(eta) => eta,
            StepSize::Auto { c } => c / (t.r() as f64 * t.w_max()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Gd,
    Sgd { batch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub eta: StepSize,
    pub max_steps: u64,
    pub target_loss: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Snapshot period in steps; 0 keeps only the first and last states.
    #[serde(default)]
    pub record_every: u64,
}

impl TrainConfig {
    pub fn validate(&self, t: &TeacherNetwork) -> Result<()> {
        let eta = self.eta.resolve(t);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {eta}")));
        }
        if self.target_loss.is_nan() || self.target_loss < 0.0 {
            return Err(Error::Config("target_loss must be >= 0".into()));
        }
        if let Mode::Sgd { batch } = self.mode {
            if batch == 0 {
                return Err(Error::Config("sgd batch must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Above `d·m` this many weights, snapshots omit the full network.
pub const SNAPSHOT_WEIGHT_LIMIT: usize = 10_000;
/// Loss growth factor over the initial loss that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Row-major `m × d` weights.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    TargetReached,
    StepCap,
    Divergence,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub terminal: Terminal,
    pub final_student: StudentNetwork,
    pub final_loss: f64,
    pub steps: u64,
    pub eta: f64,
    /// Largest one-step loss increase seen (0 when monotone).
    pub max_increase: f64,
    /// `sup_t t·L(W_t)`.
    pub sup_t_loss: f64,
}

impl Trajectory {
    pub fn initial_loss(&self) -> f64 {
        self.snapshots.first().map(|s| s.loss).unwrap_or(self.final_loss)
    }

    /// CSV with columns `step,loss,grad_norm`, plus `neuron,w_0..` rows
    /// (one per neuron per snapshot) when weights were stored.
    pub fn write_csv(&self, out: impl std::io::Write, d: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let with_weights = self.snapshots.iter().any(|s| s.weights.is_some());
        let mut header = vec!["step".to_string(), "loss".into(), "grad_norm".into()];
        if with_weights {
            header.push("neuron".into());
            header.extend((0..d).map(|i| format!("w_{i}")));
        }
        w.write_record(&header)?;
        for snap in &self.snapshots {
            let base = [
                snap.step.to_string(),
                format!("{:e}", snap.loss),
                format!("{:e}", snap.grad_norm),
            ];
            match (&snap.weights, with_weights) {
                (Some(ws), true) => {
                    for (j, row) in ws.chunks_exact(d).enumerate() {
                        let mut rec = base.to_vec();
                        rec.push(j.to_string());
                        rec.extend(row.iter().map(|x| format!("{x:e}")));
                        w.write_record(&rec)?;
                    }
                }
                (_, true) => {
                    let mut rec = base.to_vec();
                    rec.extend(std::iter::repeat_n(String::new(), d + 1));
                    w.write_record(&rec)?;
                }
                (_, false) => w.write_record(&base)?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// What an observer sees after each loss evaluation.
#[derive(Debug)]
pub struct StepInfo<'a> {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Row-major `m × d` weights at this step.
    pub weights: &'a [f64],
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!("non-finite {what}")))
    }
}

/// One simultaneous update `w ← w − η∇L(W)` on the population loss.
pub fn gd_step(t: &TeacherNetwork, s: &StudentNetwork, eta: f64) -> Result<StudentNetwork> {
    let engine = PopulationEngine::new(t);
    let mut w = flatten(s);
    let mut g = vec![0.0; w.len()];
    engine.evaluate(&w, Some(&mut g));
    check_finite(&g, "gradient")?;
    w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= eta * gi);
    check_finite(&w, "weights")?;
    StudentNetwork::new(unflatten(s.dim(), &w))
}

/// One update from the empirical gradient on `batch` fresh samples drawn
/// from `seed`.
pub fn sgd_step(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    eta: f64,
    batch: u64,
    seed: u64,
) -> Result<StudentNetwork> {
    let (_, g) = streamed_loss_and_gradient(t, s, batch, seed)?;
    let neurons = s
        .neurons()
        .iter()
        .zip(&g)
        .map(|(w, gj)| {
            let v: Vec<f64> = w.iter().zip(gj.iter()).map(|(a, b)| a - eta * b).collect();
            check_finite(&v, "weights")?;
            WeightVector::new(v)
        })
        .collect::<Result<Vec<_>>>()?;
    StudentNetwork::new(neurons)
}

/// Seed of the mini-batch used at `step`.
pub fn batch_seed(run_seed: u64, step: u64) -> u64 {
    rng::derive_seed(run_seed, step)
}

pub fn train(t: &TeacherNetwork, s0: &StudentNetwork, cfg: &TrainConfig) -> Result<Trajectory> {
    train_observed(t, s0, cfg, |_| {})
}

/// [`train`] with a callback after every loss evaluation.
pub fn train_observed(
    t: &TeacherNetwork,
    s0: &StudentNetwork,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&StepInfo),
) -> Result<Trajectory> {
    cfg.validate(t)?;
    crate::error::check_dim(t.dim(), s0.dim())?;
    let eta = cfg.eta.resolve(t);
    let d = s0.dim();
    let store = d * s0.m() <= SNAPSHOT_WEIGHT_LIMIT;
    let engine = PopulationEngine::new(t);

    let mut w = flatten(s0);
    let mut g = vec![0.0; w.len()];
    let mut snapshots = Vec::new();
    let mut prev_loss = f64::NAN;
    let mut initial_loss = f64::NAN;
    let mut max_increase = 0.0f64;
    let mut sup_t_loss = 0.0f64;
    let mut step = 0u64;

    let terminal = loop {
        let loss = engine.evaluate(&w, Some(&mut g));
        let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if step == 0 {
            initial_loss = loss;
        } else {
            max_increase = max_increase.max(loss - prev_loss);
        }
        prev_loss = loss;
        sup_t_loss = sup_t_loss.max(step as f64 * loss);
        observe(&StepInfo {
            step,
            loss,
            grad_norm,
            weights: &w,
        });

        let diverged = !loss.is_finite()
            || !grad_norm.is_finite()
            || loss > DIVERGENCE_FACTOR * initial_loss.max(f64::MIN_POSITIVE);
        let terminal = if diverged {
            Some(Terminal::Divergence)
        } else if loss <= cfg.target_loss {
            Some(Terminal::TargetReached)
        } else if step >= cfg.max_steps {
            Some(Terminal::StepCap)
        } else {
            None
        };

        let periodic = cfg.record_every > 0 && step % cfg.record_every == 0;
        if step == 0 || periodic || terminal.is_some() {
            snapshots.push(Snapshot {
                step,
                loss,
                grad_norm,
                weights: (store && cfg.record_every > 0).then(|| w.clone()),
            });
        }
        if let Some(term) = terminal {
            break term;
        }

        match cfg.mode {
            Mode::Gd => {
                w.iter_mut().zip(&g).for_each(|(wi, gi)| *wi -= eta * gi);
            }
            Mode::Sgd { batch } => {
                let s = StudentNetwork::new(unflatten(d, &w))?;
                let next = sgd_step(t, &s, eta, batch, batch_seed(cfg.seed, step))?;
                w = flatten(&next);
            }
        }
        step += 1;
    };

    let final_loss = prev_loss;
    let final_student = if w.iter().all(|x| x.is_finite()) {
        StudentNetwork::new(unflatten(d, &w))?
    } else {
        s0.clone()
    };
    Ok(Trajectory {
        snapshots,
        terminal,
        final_student,
        final_loss,
        steps: step,
        eta,
        max_increase,
        sup_t_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{exact_copy, population_loss};

    fn cfg(max_steps: u64) -> TrainConfig {
        TrainConfig {
            eta: StepSize::Fixed(0.01),
            max_steps,
            target_loss: 1e-12,
            mode: Mode::Gd,
            seed: 0,
            record_every: 1,
        }
    }

    #[test]
    fn exact_copy_stops_immediately() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = exact_copy(&t);
        let traj = train(&t, &s, &cfg(100)).unwrap();
        assert_eq!(traj.terminal, Terminal::TargetReached);
        assert_eq!(traj.steps, 0);
        assert_eq!(traj.final_loss, 0.0);
        assert_eq!(gd_step(&t, &s, 0.1).unwrap(), s);
    }

    #[test]
    fn scalar_step_oracle() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0]]).unwrap();
        let w = 2f64.sqrt();
        let s = StudentNetwork::from_rows(vec![vec![w]]).unwrap();
        let next = gd_step(&t, &s, 0.01).unwrap();
        assert!((next.neurons()[0][0] - (w - 0.01 * 2.0 * w)).abs() < 1e-15);
    }

    #[test]
    fn zero_neurons_stay_zero_and_loss_decreases() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0, 0.2]]).unwrap();
        let s = StudentNetwork::from_rows(vec![vec![0.8, 0.3], vec![0.0, 0.0]]).unwrap();
        let traj = train(&t, &s, &cfg(50)).unwrap();
        assert_eq!(traj.terminal, Terminal::StepCap);
        assert_eq!(traj.final_student.neurons()[1].as_slice(), &[0.0, 0.0]);
        assert!(traj.max_increase <= 1e-12);
        assert!(traj.final_loss < population_loss(&t, &s));
        assert_eq!(traj.snapshots.len(), 51);
        assert!(traj.snapshots.windows(2).all(|p| p[0].step < p[1].step));
    }

    #[test]
    fn divergence_is_reported() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0]]).unwrap();
        let s = StudentNetwork::from_rows(vec![vec![2.0]]).unwrap();
        let mut c = cfg(100);
        c.eta = StepSize::Fixed(1.0);
        let traj = train(&t, &s, &c).unwrap();
        assert_eq!(traj.terminal, Terminal::Divergence);
    }

    #[test]
    fn sgd_replays_and_fixes_copy() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let s = StudentNetwork::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        let mut c = cfg(5);
        c.mode = Mode::Sgd { batch: 256 };
        c.seed = 3;
        let a = train(&t, &s, &c).unwrap();
        let b = train(&t, &s, &c).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        let copy = exact_copy(&t);
        assert_eq!(sgd_step(&t, &copy, 0.1, 64, 1).unwrap(), copy);
    }

    #[test]
    fn csv_has_weight_columns() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let s = StudentNetwork::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        let traj = train(&t, &s, &cfg(2)).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,loss,grad_norm,neuron,w_0,w_1\n"));
        assert_eq!(text.lines().count(), 1 + 3);
    }
}
