use crate::error::Result;
use crate::init::{
    largest_principal_angle, nnls, random_init, subspace_init, GramMode, MomentEstimator,
};
use crate::linalg::{dot, Matrix};
use crate::net::{TeacherNetwork, WeightVector};
use crate::population::population_loss;
use crate::rng;

use super::states::desk_teacher;
use super::{CheckReport, VerifierConfig};

/// Random directions refit by NNLS: post-fit loss at most `tolerance` on at
/// least `required` of `seeds` teachers.
pub fn random_init_check(
    d: usize,
    m: usize,
    seeds: usize,
    required: usize,
    tolerance: f64,
    base_seed: u64,
) -> Result<CheckReport> {
    let mut r = CheckReport::new("random_init");
    let mut losses = Vec::with_capacity(seeds);
    for k in 0..seeds as u64 {
        let seed = rng::derive_seed(base_seed, k);
        let t = desk_teacher(d, seed)?;
        let init = random_init(&t, m, rng::derive_seed(seed, 1), GramMode::Exact)?;
        losses.push(population_loss(&t, &init.student));
    }
    let good = losses.iter().filter(|&&l| l <= tolerance).count();
    let worst = losses.iter().copied().fold(0.0, f64::max);
    r.measure("seeds", seeds as f64)
        .measure("within_tolerance", good as f64)
        .measure("required", required as f64)
        .measure("tolerance", tolerance)
        .measure("median_loss", super::median(&losses))
        .measure("max_loss", worst);
    Ok(r.decide(good >= required).take())
}

/// Largest principal angle between the estimated span and the teacher span
/// for `r` orthonormal teachers in dimension `d`.
pub fn subspace_check(d: usize, r: usize, n: u64, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("subspace_init");
    let t = TeacherNetwork::new((0..r).map(|i| WeightVector::basis(d, i)).collect())?;
    let out = subspace_init(&t, 3 * r, r, n, seed, MomentEstimator::Centered, GramMode::Exact)?;
    let angle = largest_principal_angle(&out.basis, t.neurons())?;
    rep.measure("d", d as f64)
        .measure("r", r as f64)
        .measure("samples", n as f64)
        .measure("max_principal_angle", angle)
        .measure("tolerance", 0.05)
        .measure("post_fit_loss", population_loss(&t, &out.init.student));
    Ok(rep.decide(angle <= 0.05).take())
}

/// Exhaustive NNLS: for every support solve the restricted normal
/// equations, keep the feasible solutions, return the best objective.
pub fn nnls_brute_force(g: &Matrix, b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let m = b.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut z = vec![0.0; m];
        if !idx.is_empty() {
            let sub = g.submatrix(&idx);
            let rhs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            let Some(chol) = sub.cholesky(0.0) else { continue };
            let sol = chol.solve(&rhs);
            if sol.iter().any(|&x| x < 0.0) {
                continue;
            }
            for (&i, x) in idx.iter().zip(sol) {
                z[i] = x;
            }
        }
        let obj = 0.5 * g.quad_form(&z) - dot(b, &z);
        if best.as_ref().is_none_or(|(_, o)| obj < *o) {
            best = Some((z, obj));
        }
    }
    best
}

/// The active-set solver against [`nnls_brute_force`] on random positive
/// definite `size × size` instances.
pub fn nnls_oracle_check(instances: usize, size: usize, seed: u64) -> Result<CheckReport> {
    let mut r = CheckReport::new("nnls_oracle");
    let mut g = rng::seeded(seed);
    let (mut max_obj, mut max_z, mut mismatches) = (0.0f64, 0.0f64, 0);
    for _ in 0..instances {
        let a: Vec<Vec<f64>> = (0..size + 2).map(|_| rng::normal_vec(&mut g, size)).collect();
        let gram = Matrix::from_fn(size, |i, j| a.iter().map(|row| row[i] * row[j]).sum());
        let b = rng::normal_vec(&mut g, size);
        let sol = nnls(&gram, &b)?;
        let Some((z_ref, obj_ref)) = nnls_brute_force(&gram, &b) else {
            mismatches += 1;
            continue;
        };
        let obj_err = (sol.objective - obj_ref).abs() / obj_ref.abs().max(1.0);
        let z_err = sol
            .z
            .iter()
            .zip(&z_ref)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        max_obj = max_obj.max(obj_err);
        max_z = max_z.max(z_err);
        if obj_err > 1e-10 || z_err > 1e-8 {
            mismatches += 1;
        }
    }
    r.measure("instances", instances as f64)
        .measure("mismatches", mismatches as f64)
        .measure("max_objective_error", max_obj)
        .measure("max_solution_error", max_z);
    Ok(r.decide(mismatches == 0).take())
}

pub(super) fn suite_random_init(cfg: &VerifierConfig) -> Result<CheckReport> {
    random_init_check(2, 200, 20, 18, 1e-2, rng::derive_seed(cfg.seed, 51))
}

pub(super) fn suite_subspace(cfg: &VerifierConfig) -> Result<CheckReport> {
    subspace_check(20, 3, 100_000, rng::derive_seed(cfg.seed, 52))
}

pub(super) fn suite_nnls_oracle(cfg: &VerifierConfig) -> Result<CheckReport> {
    nnls_oracle_check(100, 5, rng::derive_seed(cfg.seed, 53))
}
