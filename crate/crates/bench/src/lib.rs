//! Fixtures shared by the engine benchmarks.

use tslab::init::perturbed_teacher_init;
use tslab::linalg::Matrix;
use tslab::rng::{normal_vec, seeded};
use tslab::{RandomTeacherSpec, StudentNetwork, TeacherNetwork};

pub const SPEC: RandomTeacherSpec = RandomTeacherSpec {
    delta_min: 0.1,
    w_min: 0.5,
    w_max: 1.5,
};

/// A random teacher with a student of `m` perturbed copies.
pub fn problem(d: usize, r: usize, m: usize, seed: u64) -> (TeacherNetwork, StudentNetwork) {
    let t = TeacherNetwork::random(d, r, SPEC, seed).expect("feasible teacher");
    let s = perturbed_teacher_init(&t, m, 0.1, seed + 1).expect("valid student");
    (t, s)
}

/// A well-conditioned Gram matrix with a right-hand side.
pub fn gram_system(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n + 2).map(|_| normal_vec(&mut rng, n)).collect();
    let mut g = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = rows.iter().map(|x| x[i] * x[j]).sum();
        }
    }
    (g, normal_vec(&mut rng, n))
}

pub fn vector_pair(d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeded(seed);
    (normal_vec(&mut rng, d), normal_vec(&mut rng, d))
}
