//! Student initialisers: random directions refit by nonnegative least
//! squares, spectral subspace estimation, and perturbed teacher copies.

pub mod nnls;

use std::f64::consts::FRAC_2_PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::kernels::abs_pair_expectation;
use crate::linalg::{dot, norm, Matrix};
use crate::mc::{chunk_count, chunk_rows, fill_chunk};
use crate::net::{StudentNetwork, TeacherNetwork, WeightVector};
use crate::rng;

pub use nnls::{nnls, NnlsResult};

/// How the least-squares Gram matrix is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    /// Closed-form kernel values.
    #[default]
    Exact,
    /// Empirical second moments over `n` samples drawn from `seed`.
    Sampled { n: u64, seed: u64 },
}

/// `G_ij = E|w_iᵀx||w_jᵀx|`, `b_i = Σ_l E|w_iᵀx||w*_lᵀx|`.
pub fn least_squares_system(
    t: &TeacherNetwork,
    dirs: &[WeightVector],
    mode: GramMode,
) -> Result<(Matrix, Vec<f64>)> {
    for w in dirs {
        check_dim(t.dim(), w.dim())?;
    }
    let m = dirs.len();
    match mode {
        GramMode::Exact => {
            let rows: Vec<(Vec<f64>, f64)> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let row = (0..m)
                        .map(|j| abs_pair_expectation(&dirs[i], &dirs[j]))
                        .collect();
                    let bi = t
                        .neurons()
                        .iter()
                        .map(|w| abs_pair_expectation(&dirs[i], w))
                        .sum();
                    (row, bi)
                })
                .collect();
            let mut g = Matrix::zeros(m);
            let mut b = vec![0.0; m];
            for (i, (row, bi)) in rows.into_iter().enumerate() {
                for (j, v) in row.into_iter().enumerate() {
                    g[(i, j)] = v;
                }
                b[i] = bi;
            }
            Ok((g.symmetrized(), b))
        }
        GramMode::Sampled { n, seed } => {
            if n == 0 {
                return Err(Error::Domain("sampled gram needs n >= 1".into()));
            }
            let d = t.dim();
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunk_count(n))
                .into_par_iter()
                .map(|c| {
                    let mut xs = vec![0.0; chunk_rows(n, c) * d];
                    fill_chunk(seed, c, &mut xs);
                    let mut g = vec![0.0; m * m];
                    let mut b = vec![0.0; m];
                    let mut feat = vec![0.0; m];
                    for x in xs.chunks_exact(d) {
                        let y = t.output(x);
                        for (f, w) in feat.iter_mut().zip(dirs) {
                            *f = dot(w, x).abs();
                        }
                        for i in 0..m {
                            b[i] += feat[i] * y;
                            for j in i..m {
                                g[i * m + j] += feat[i] * feat[j];
                            }
                        }
                    }
                    (g, b)
                })
                .collect();
            let mut g = Matrix::zeros(m);
            let mut b = vec![0.0; m];
            for (pg, pb) in parts {
                for i in 0..m {
                    b[i] += pb[i];
                    for j in i..m {
                        g[(i, j)] += pg[i * m + j];
                    }
                }
            }
            let nf = n as f64;
            for i in 0..m {
                b[i] /= nf;
                for j in i..m {
                    let v = g[(i, j)] / nf;
                    g[(i, j)] = v;
                    g[(j, i)] = v;
                }
            }
            Ok((g, b))
        }
    }
}

/// Initialised student with the solver output that produced it.
#[derive(Debug, Clone)]
pub struct InitResult {
    pub student: StudentNetwork,
    pub nnls: NnlsResult,
    /// `objective + ½Σ K(w*_i, w*_l)`, the population loss the solver saw.
    pub residual_loss: f64,
    pub directions: Vec<WeightVector>,
}

/// `w' = √(z/‖w‖)·w`, so that `‖w'‖w' = z·w`.
pub fn rescale(w: &[f64], z: f64) -> WeightVector {
    let n = norm(w);
    if z <= 0.0 || n == 0.0 {
        return WeightVector::zeros(w.len());
    }
    let c = (z / n).sqrt();
    WeightVector::new(w.iter().map(|x| c * x).collect()).expect("finite rescale")
}

/// Fit nonnegative output weights for fixed directions and fold them into
/// the neuron norms. Zero-weight neurons stay as zero vectors.
pub fn fit_directions(
    t: &TeacherNetwork,
    directions: Vec<WeightVector>,
    mode: GramMode,
) -> Result<InitResult> {
    if directions.is_empty() {
        return Err(Error::Config("initialisation needs m >= 1".into()));
    }
    let (g, b) = least_squares_system(t, &directions, mode)?;
    let sol = nnls(&g, &b)?;
    let neurons: Vec<WeightVector> = directions
        .iter()
        .zip(&sol.z)
        .map(|(w, &z)| rescale(w, z))
        .collect();
    let teacher_self: f64 = t
        .neurons()
        .iter()
        .flat_map(|a| t.neurons().iter().map(move |b| abs_pair_expectation(a, b)))
        .sum();
    Ok(InitResult {
        student: StudentNetwork::new(neurons)?,
        residual_loss: sol.objective + 0.5 * teacher_self,
        nnls: sol,
        directions,
    })
}

/// Standard-normal directions refit by nonnegative least squares.
pub fn random_init(
    t: &TeacherNetwork,
    m: usize,
    seed: u64,
    mode: GramMode,
) -> Result<InitResult> {
    let mut rng = rng::seeded(seed);
    let dirs = (0..m)
        .map(|_| WeightVector::new(rng::normal_vec(&mut rng, t.dim())))
        .collect::<Result<Vec<_>>>()?;
    fit_directions(t, dirs, mode)
}

/// Estimator of `E[y(xxᵀ − I)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MomentEstimator {
    /// `(1/N) Σ y(xxᵀ − I)`.
    Raw,
    /// `(1/N) Σ (y − ȳ)(xxᵀ − I)`: same expectation since `E[xxᵀ − I] = 0`,
    /// without the `E[y]·(xxᵀ − I)` noise.
    #[default]
    Centered,
}

/// Symmetric moment estimate from `n` samples.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    pub m_hat: Matrix,
    pub n: u64,
}

/// Running sums `Σ y·xxᵀ`, `Σ xxᵀ` (upper triangles) and `Σ y`.
#[derive(Debug, Clone)]
struct MomentSums {
    yxx: Vec<f64>,
    xx: Vec<f64>,
    y: f64,
}

impl MomentSums {
    fn new(d: usize) -> Self {
        MomentSums {
            yxx: vec![0.0; d * d],
            xx: vec![0.0; d * d],
            y: 0.0,
        }
    }

    fn accumulate(&mut self, d: usize, xs: &[f64], ys: &[f64]) {
        for (x, &y) in xs.chunks_exact(d).zip(ys) {
            self.y += y;
            for i in 0..d {
                for j in i..d {
                    let p = x[i] * x[j];
                    self.yxx[i * d + j] += y * p;
                    self.xx[i * d + j] += p;
                }
            }
        }
    }

    fn merge(&mut self, other: &MomentSums) {
        self.y += other.y;
        self.yxx.iter_mut().zip(&other.yxx).for_each(|(a, b)| *a += b);
        self.xx.iter_mut().zip(&other.xx).for_each(|(a, b)| *a += b);
    }

    fn finish(&self, d: usize, n: u64, estimator: MomentEstimator) -> MomentMatrix {
        let nf = n as f64;
        let ybar = self.y / nf;
        let m_hat = Matrix::from_fn(d, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            let yxx = self.yxx[a * d + b] / nf;
            match estimator {
                MomentEstimator::Raw if i == j => yxx - ybar,
                MomentEstimator::Raw => yxx,
                MomentEstimator::Centered => yxx - ybar * self.xx[a * d + b] / nf,
            }
        });
        MomentMatrix { m_hat, n }
    }
}

pub fn moment_matrix(data: &Dataset, estimator: MomentEstimator) -> Result<MomentMatrix> {
    if data.is_empty() {
        return Err(Error::Domain("moment matrix needs n >= 1".into()));
    }
    let d = data.dim();
    let mut sums = MomentSums::new(d);
    sums.accumulate(d, data.inputs(), data.labels());
    Ok(sums.finish(d, data.len() as u64, estimator))
}

/// Same as [`moment_matrix`] on `sample_dataset(t, n, seed)`, without
/// holding the samples.
pub fn moment_matrix_streamed(
    t: &TeacherNetwork,
    n: u64,
    seed: u64,
    estimator: MomentEstimator,
) -> Result<MomentMatrix> {
    if n == 0 {
        return Err(Error::Domain("moment matrix needs n >= 1".into()));
    }
    let d = t.dim();
    let parts: Vec<MomentSums> = (0..chunk_count(n))
        .into_par_iter()
        .map(|c| {
            let mut xs = vec![0.0; chunk_rows(n, c) * d];
            fill_chunk(seed, c, &mut xs);
            let ys: Vec<f64> = xs.chunks_exact(d).map(|x| t.output(x)).collect();
            let mut sums = MomentSums::new(d);
            sums.accumulate(d, &xs, &ys);
            sums
        })
        .collect();
    let mut total = MomentSums::new(d);
    for p in &parts {
        total.merge(p);
    }
    Ok(total.finish(d, n, estimator))
}

/// Population limit `√(2/π) Σ ‖w*_i‖ w̄*_i w̄*_iᵀ`.
pub fn population_moment(t: &TeacherNetwork) -> Matrix {
    let d = t.dim();
    let c = FRAC_2_PI.sqrt();
    let mut m = Matrix::zeros(d);
    for w in t.neurons() {
        let n = w.norm();
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += c * w[i] * w[j] / n;
            }
        }
    }
    m
}

/// Orthonormal eigenvectors for the `r` eigenvalues of largest magnitude.
pub fn top_eigenvectors(m: &Matrix, r: usize) -> Result<Vec<Vec<f64>>> {
    let eig = m.symmetric_eigen()?;
    let mut order: Vec<usize> = (0..eig.values.len()).collect();
    order.sort_by(|&i, &j| eig.values[j].abs().total_cmp(&eig.values[i].abs()));
    Ok(order
        .into_iter()
        .take(r)
        .map(|k| eig.vectors[k].clone())
        .collect())
}

/// Largest principal angle between `span(basis)` (orthonormal) and
/// `span(vectors)`, computed as `asin` of the largest singular value of the
/// part of the orthonormalised `vectors` outside `span(basis)`.
pub fn largest_principal_angle(basis: &[Vec<f64>], vectors: &[WeightVector]) -> Result<f64> {
    let target = orthonormalize(vectors.iter().map(|v| v.to_vec()).collect())?;
    let resid: Vec<Vec<f64>> = target
        .iter()
        .map(|t| {
            let mut r = t.clone();
            for q in basis {
                let c = dot(q, t);
                r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
            }
            r
        })
        .collect();
    let k = resid.len();
    let gram = Matrix::from_fn(k, |i, j| dot(&resid[i], &resid[j]));
    let top = gram.symmetric_eigen()?.values[0].max(0.0);
    Ok(top.sqrt().min(1.0).asin())
}

fn orthonormalize(mut vs: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    for i in 0..vs.len() {
        for _ in 0..2 {
            for j in 0..i {
                let c = dot(&vs[i], &vs[j]);
                let (head, tail) = vs.split_at_mut(i);
                tail[0].iter_mut().zip(&head[j]).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = norm(&vs[i]);
        if n < 1e-12 {
            return Err(Error::Domain("linearly dependent vectors".into()));
        }
        vs[i].iter_mut().for_each(|x| *x /= n);
    }
    Ok(vs)
}

/// Spectral estimate of the teacher span followed by the least-squares refit.
#[derive(Debug, Clone)]
pub struct SubspaceInit {
    pub init: InitResult,
    pub basis: Vec<Vec<f64>>,
    pub moment: MomentMatrix,
}

/// Directions `Q·u` with `u ~ N(0, I_r)` and `Q` the top-`r` eigenvectors of
/// the moment matrix of `n` fresh samples.
pub fn subspace_init(
    t: &TeacherNetwork,
    m: usize,
    r: usize,
    n: u64,
    seed: u64,
    estimator: MomentEstimator,
    mode: GramMode,
) -> Result<SubspaceInit> {
    if m == 0 || r == 0 || n == 0 {
        return Err(Error::Config("subspace init needs m, r, n >= 1".into()));
    }
    let moment = moment_matrix_streamed(t, n, seed, estimator)?;
    let basis = top_eigenvectors(&moment.m_hat, r.min(t.dim()))?;
    let mut rng = rng::seeded(rng::derive_seed(seed, 1));
    let d = t.dim();
    let dirs = (0..m)
        .map(|_| {
            let u = rng::normal_vec(&mut rng, basis.len());
            let mut w = vec![0.0; d];
            for (q, c) in basis.iter().zip(&u) {
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi += c * qi);
            }
            WeightVector::new(w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubspaceInit {
        init: fit_directions(t, dirs, mode)?,
        basis,
        moment,
    })
}

/// Students spread round-robin over the teachers. Each copy of teacher `i`
/// carries effective mass `‖w*_i‖/k_i`, a random sign, and a direction
/// perturbed by Gaussian noise of size `scale`.
pub fn perturbed_teacher_init(
    t: &TeacherNetwork,
    m: usize,
    scale: f64,
    seed: u64,
) -> Result<StudentNetwork> {
    use rand::Rng;
    if m < t.r() {
        return Err(Error::Config(format!(
            "perturbed teacher init needs m >= r ({m} < {})",
            t.r()
        )));
    }
    let r = t.r();
    let d = t.dim();
    let mut rng = rng::seeded(seed);
    let neurons = (0..m)
        .map(|j| {
            let i = j % r;
            let copies = (m - i).div_ceil(r);
            let teacher = &t.neurons()[i];
            let tn = teacher.norm();
            let mut dir: Vec<f64> = teacher.iter().map(|x| x / tn).collect();
            for x in dir.iter_mut() {
                *x += scale * rng::normal(&mut rng);
            }
            let dn = norm(&dir);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let len = (tn / copies as f64).sqrt();
            WeightVector::new(dir.iter().map(|x| sign * len * x / dn).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let s = StudentNetwork::new(neurons)?;
    check_dim(d, s.dim())?;
    Ok(s)
}

/// `m` neurons with i.i.d. `N(0, scale²)` entries and no refit.
pub fn gaussian_init(d: usize, m: usize, scale: f64, seed: u64) -> Result<StudentNetwork> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("gaussian init needs scale > 0, got {scale}")));
    }
    let mut rng = rng::seeded(seed);
    let neurons = (0..m)
        .map(|_| WeightVector::new(rng::normal_vec(&mut rng, d)).map(|w| w.scaled(scale)))
        .collect::<Result<Vec<_>>>()?;
    StudentNetwork::new(neurons)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::sample_dataset;
    use crate::population::population_loss;

    fn e1_teacher() -> TeacherNetwork {
        TeacherNetwork::from_rows(vec![vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn aligned_single_student_is_exact() {
        let t = e1_teacher();
        let res = fit_directions(&t, vec![WeightVector::basis(2, 0)], GramMode::Exact).unwrap();
        assert!((res.nnls.z[0] - 1.0).abs() < 1e-14);
        assert!(population_loss(&t, &res.student) < 1e-14);
    }

    #[test]
    fn rescale_identity() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0, 0.0], vec![0.3, 1.0]]).unwrap();
        let res = random_init(&t, 12, 5, GramMode::Exact).unwrap();
        for ((w, z), dir) in res.student.neurons().iter().zip(&res.nnls.z).zip(&res.directions) {
            let eff = crate::net::effective_neuron(w);
            for (a, b) in eff.iter().zip(dir.iter()) {
                assert!((a - z * b).abs() < 1e-14);
            }
        }
        let direct = population_loss(&t, &res.student);
        assert!((direct - res.residual_loss).abs() < 1e-10);
    }

    #[test]
    fn moment_single_sample_arithmetic() {
        let data = Dataset::new(2, vec![1.0, 2.0], vec![3.0], 0).unwrap();
        let m = moment_matrix(&data, MomentEstimator::Raw).unwrap();
        let want = [[0.0, 6.0], [6.0, 9.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m.m_hat[(i, j)], want[i][j]);
            }
        }
    }

    #[test]
    fn streamed_moment_matches_dataset() {
        let t = TeacherNetwork::from_rows(vec![vec![1.0, 0.5, 0.0]]).unwrap();
        let data = sample_dataset(&t, 1000, 3).unwrap();
        for est in [MomentEstimator::Raw, MomentEstimator::Centered] {
            let a = moment_matrix(&data, est).unwrap();
            let b = moment_matrix_streamed(&t, 1000, 3, est).unwrap();
            for (x, y) in a.m_hat.as_slice().iter().zip(b.m_hat.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn population_moment_recovers_span() {
        let t = TeacherNetwork::from_rows(vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.6, 0.8, 0.0],
        ])
        .unwrap();
        let q = top_eigenvectors(&population_moment(&t), 2).unwrap();
        assert!(largest_principal_angle(&q, t.neurons()).unwrap() < 1e-7);
    }

    #[test]
    fn perturbed_init_masses_sum_to_teacher() {
        let t = TeacherNetwork::from_rows(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = perturbed_teacher_init(&t, 5, 0.0, 1).unwrap();
        assert!(population_loss(&t, &s) < 1e-14);
    }

    #[test]
    fn gaussian_init_is_seeded() {
        let a = gaussian_init(3, 5, 2.0, 9).unwrap();
        assert_eq!(a, gaussian_init(3, 5, 2.0, 9).unwrap());
        assert_ne!(a, gaussian_init(3, 5, 2.0, 10).unwrap());
        assert_eq!((a.m(), a.dim()), (5, 3));
        assert!(gaussian_init(3, 5, 0.0, 9).is_err());
    }
}
