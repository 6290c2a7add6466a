//! Exact population loss, gradient and residual decomposition.
//!
//! With `a_j = ‖w_j‖w_j` the loss is
//! `½[Σ K(a_j, a_k) − 2Σ K(a_j, w*_i) + Σ K(w*_i, w*_l)]`
//! and the gradient in `w_j` is `‖w_j‖(I + w̄_jw̄_jᵀ)` applied to
//! `Σ_k G(a_j; a_k) − Σ_i G(a_j; w*_i)`.

use std::f64::consts::FRAC_2_PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{abs_kernel, SignCov};
use crate::linalg::{dot, norm, CompensatedSum, Matrix};
use crate::net::{
    delta_max, effective_neuron, NeuronPartition, StudentNetwork, TeacherNetwork, WeightVector,
};

/// Per-teacher data reused across every evaluation.
#[derive(Debug, Clone)]
pub struct PopulationEngine {
    d: usize,
    r: usize,
    teacher_units: Vec<f64>,
    teacher_norms: Vec<f64>,
    teacher_self: f64,
}

/// Sine and signed cosine of the angle between two unit vectors.
#[inline]
fn unit_pair(u: &[f64], v: &[f64]) -> (f64, f64) {
    let rho = dot(u, v).clamp(-1.0, 1.0);
    let mut s2 = 0.0;
    for (a, b) in u.iter().zip(v) {
        let e = a - rho * b;
        s2 += e * e;
    }
    (rho, s2.sqrt().min(1.0))
}

impl PopulationEngine {
    pub fn new(t: &TeacherNetwork) -> Self {
        let d = t.dim();
        let r = t.r();
        let mut teacher_units = Vec::with_capacity(r * d);
        let mut teacher_norms = Vec::with_capacity(r);
        for w in t.neurons() {
            let n = w.norm();
            teacher_norms.push(n);
            teacher_units.extend(w.iter().map(|x| x / n));
        }
        let mut acc = CompensatedSum::new();
        for i in 0..r {
            acc.add(teacher_norms[i] * teacher_norms[i]);
            for l in (i + 1)..r {
                let (rho, s) = unit_pair(
                    &teacher_units[i * d..(i + 1) * d],
                    &teacher_units[l * d..(l + 1) * d],
                );
                acc.add(2.0 * abs_kernel(teacher_norms[i], teacher_norms[l], rho, s));
            }
        }
        Self {
            d,
            r,
            teacher_units,
            teacher_norms,
            teacher_self: acc.value(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Loss of the student whose `m × d` weights are stored row-major in
    /// `w`. When `grad` is given it receives the gradient in the same layout.
    pub fn evaluate(&self, w: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.d;
        debug_assert_eq!(w.len() % d, 0);
        let m = w.len() / d;

        // Student norms, effective norms and unit directions.
        let mut norms = vec![0.0; m];
        let mut units = vec![0.0; m * d];
        for j in 0..m {
            let row = &w[j * d..(j + 1) * d];
            let n = norm(row);
            norms[j] = n;
            if n > 0.0 {
                for (u, x) in units[j * d..(j + 1) * d].iter_mut().zip(row) {
                    *u = x / n;
                }
            }
        }

        let want_grad = grad.is_some();
        // Gradient in a_j, split into a multiple of ū_j plus a combination
        // of the other vectors.
        let mut radial = vec![CompensatedSum::new(); if want_grad { m } else { 0 }];
        let mut lateral = vec![CompensatedSum::new(); if want_grad { m * d } else { 0 }];

        let mut student_student = CompensatedSum::new();
        let mut student_teacher = CompensatedSum::new();
        for j in 0..m {
            let nj = norms[j];
            if nj == 0.0 {
                continue;
            }
            let aj = nj * nj;
            let uj = &units[j * d..(j + 1) * d];
            student_student.add(aj * aj);
            if want_grad {
                // G(a_j; a_j) = a_j
                radial[j].add(aj);
            }
            for k in (j + 1)..m {
                let nk = norms[k];
                if nk == 0.0 {
                    continue;
                }
                let ak = nk * nk;
                let uk = &units[k * d..(k + 1) * d];
                let (rho, s) = unit_pair(uj, uk);
                let asin = rho.atan2(s);
                student_student.add(2.0 * aj * ak * FRAC_2_PI * (s + rho * asin));
                if want_grad {
                    radial[j].add(FRAC_2_PI * ak * s);
                    radial[k].add(FRAC_2_PI * aj * s);
                    let c = FRAC_2_PI * asin;
                    for q in 0..d {
                        lateral[j * d + q].add(c * ak * uk[q]);
                        lateral[k * d + q].add(c * aj * uj[q]);
                    }
                }
            }
            for i in 0..self.r {
                let ni = self.teacher_norms[i];
                let ui = &self.teacher_units[i * d..(i + 1) * d];
                let (rho, s) = unit_pair(uj, ui);
                let asin = rho.atan2(s);
                student_teacher.add(aj * ni * FRAC_2_PI * (s + rho * asin));
                if want_grad {
                    radial[j].add(-FRAC_2_PI * ni * s);
                    let c = -FRAC_2_PI * asin * ni;
                    for q in 0..d {
                        lateral[j * d + q].add(c * ui[q]);
                    }
                }
            }
        }

        let mut total = CompensatedSum::new();
        total.merge(student_student);
        total.add(-2.0 * student_teacher.value());
        total.add(self.teacher_self);
        let loss = (0.5 * total.value()).max(0.0);

        if let Some(grad) = grad {
            debug_assert_eq!(grad.len(), w.len());
            for j in 0..m {
                let g = &mut grad[j * d..(j + 1) * d];
                let nj = norms[j];
                if nj == 0.0 {
                    g.fill(0.0);
                    continue;
                }
                let uj = &units[j * d..(j + 1) * d];
                let rad = radial[j].value();
                for q in 0..d {
                    g[q] = rad * uj[q] + lateral[j * d + q].value();
                }
                // ‖w‖(I + ūūᵀ) g
                let proj = dot(uj, g);
                for q in 0..d {
                    g[q] = nj * (g[q] + proj * uj[q]);
                }
            }
        }
        loss
    }
}

pub(crate) fn flatten(s: &StudentNetwork) -> Vec<f64> {
    s.neurons().iter().flat_map(|w| w.iter().copied()).collect()
}

pub(crate) fn unflatten(d: usize, w: &[f64]) -> Vec<WeightVector> {
    w.chunks_exact(d)
        .map(|row| WeightVector::new(row.to_vec()).expect("finite weights"))
        .collect()
}

/// Exact `½E[(f(x) − f*(x))²]`.
pub fn population_loss(t: &TeacherNetwork, s: &StudentNetwork) -> f64 {
    PopulationEngine::new(t).evaluate(&flatten(s), None)
}

/// Exact gradient of [`population_loss`] in every student neuron.
pub fn population_gradient(t: &TeacherNetwork, s: &StudentNetwork) -> Vec<WeightVector> {
    loss_and_gradient(t, s).1
}

pub fn loss_and_gradient(t: &TeacherNetwork, s: &StudentNetwork) -> (f64, Vec<WeightVector>) {
    let w = flatten(s);
    let mut g = vec![0.0; w.len()];
    let loss = PopulationEngine::new(t).evaluate(&w, Some(&mut g));
    (loss, unflatten(s.dim(), &g))
}

/// Frobenius norm of a list of gradient blocks.
pub fn frobenius(blocks: &[WeightVector]) -> f64 {
    blocks
        .iter()
        .map(|b| dot(b, b))
        .sum::<f64>()
        .sqrt()
}

/// Frobenius inner product of two lists of blocks.
pub fn frobenius_dot(a: &[WeightVector], b: &[WeightVector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dot(x, y)).sum()
}

/// `E[xxᵀ sgn(w*_iᵀx) sgn(w*_lᵀx)]` assembled into a `dr × dr` matrix.
#[derive(Debug, Clone)]
pub struct HessianSurrogate {
    pub matrix: Matrix,
    pub min_eigenvalue: f64,
}

pub fn build_m(t: &TeacherNetwork) -> Result<HessianSurrogate> {
    let d = t.dim();
    let r = t.r();
    let mut matrix = Matrix::zeros(d * r);
    for i in 0..r {
        for l in 0..r {
            let block = SignCov::new(&t.neurons()[i], &t.neurons()[l])?.to_matrix();
            for p in 0..d {
                for q in 0..d {
                    matrix[(i * d + p, l * d + q)] = block[(p, q)];
                }
            }
        }
    }
    let min_eigenvalue = matrix.symmetric_eigen()?.min_value();
    Ok(HessianSurrogate {
        matrix,
        min_eigenvalue,
    })
}

/// Residual split `R = R₁ + R₂` around the average neurons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualStats {
    pub loss: f64,
    /// `ŵ_i = Σ_{j∈T_i} ‖w_j‖w_j` after sign canonicalisation.
    pub avg_neurons: Vec<WeightVector>,
    /// `v_i = ŵ_i − w*_i`.
    pub gaps: Vec<WeightVector>,
    pub r1_norm_sq: f64,
    pub r2_norm_sq: f64,
    /// `E[R₁R₂]`.
    pub cross_term: f64,
}

impl ResidualStats {
    /// `r1 + 2·cross + r2`, which equals `2·loss`.
    pub fn recomposed(&self) -> f64 {
        self.r1_norm_sq + 2.0 * self.cross_term + self.r2_norm_sq
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub fn residual_stats(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    partition: &NeuronPartition,
) -> Result<ResidualStats> {
    check_dim(t.dim(), s.dim())?;
    check_dim(s.m(), partition.assignment.len())?;
    let d = t.dim();
    let r = t.r();
    let canon = partition.canonicalize(s);
    let teachers = t.neurons();

    let mut avg = vec![vec![0.0; d]; r];
    let effective: Vec<WeightVector> = canon
        .neurons()
        .iter()
        .map(|w| effective_neuron(w))
        .collect();
    for (j, a) in effective.iter().enumerate() {
        for (x, y) in avg[partition.assignment[j]].iter_mut().zip(a.iter()) {
            *x += y;
        }
    }
    let gaps: Vec<Vec<f64>> = avg
        .iter()
        .zip(teachers)
        .map(|(a, w)| a.iter().zip(w.iter()).map(|(x, y)| x - y).collect())
        .collect();

    let teacher_cov: Vec<Vec<SignCov>> = (0..r)
        .map(|i| {
            (0..r)
                .map(|l| SignCov::new(&teachers[i], &teachers[l]))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let mut r1 = CompensatedSum::new();
    for i in 0..r {
        for l in 0..r {
            r1.add(teacher_cov[i][l].bilinear(&gaps[i], &gaps[l]));
        }
    }

    let live: Vec<usize> = (0..s.m())
        .filter(|&j| canon.neurons()[j].norm() > 0.0)
        .collect();
    let owner = |j: usize| &teachers[partition.assignment[j]];

    let mut r2 = CompensatedSum::new();
    for &j in &live {
        let wj = &canon.neurons()[j];
        let aj = &effective[j];
        let ij = partition.assignment[j];
        for &k in &live {
            let wk = &canon.neurons()[k];
            let ak = &effective[k];
            let ik = partition.assignment[k];
            r2.add(SignCov::new(wj, wk)?.bilinear(aj, ak));
            r2.add(-SignCov::new(wj, owner(k))?.bilinear(aj, ak));
            r2.add(-SignCov::new(owner(j), wk)?.bilinear(aj, ak));
            r2.add(teacher_cov[ij][ik].bilinear(aj, ak));
        }
    }

    let mut cross = CompensatedSum::new();
    for i in 0..r {
        for &k in &live {
            let wk = &canon.neurons()[k];
            let ak = &effective[k];
            let ik = partition.assignment[k];
            cross.add(SignCov::new(&teachers[i], wk)?.bilinear(&gaps[i], ak));
            cross.add(-teacher_cov[i][ik].bilinear(&gaps[i], ak));
        }
    }

    Ok(ResidualStats {
        loss: population_loss(t, s),
        avg_neurons: avg
            .into_iter()
            .map(WeightVector::new)
            .collect::<Result<_>>()?,
        gaps: gaps
            .into_iter()
            .map(WeightVector::new)
            .collect::<Result<_>>()?,
        r1_norm_sq: r1.value(),
        r2_norm_sq: r2.value(),
        cross_term: cross.value(),
    })
}

/// Pointwise residual pieces `(R, R₁, R₂)` at one input, for sampling
/// checks. `stats` must come from the same `(t, s, partition)`.
pub fn residual_at(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    partition: &NeuronPartition,
    stats: &ResidualStats,
    x: &[f64],
) -> (f64, f64, f64) {
    let sgn = |v: f64| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let teacher_signs: Vec<f64> = t.neurons().iter().map(|w| sgn(dot(w, x))).collect();
    let r1: f64 = stats
        .gaps
        .iter()
        .zip(&teacher_signs)
        .map(|(v, sg)| dot(v, x) * sg)
        .sum();
    let mut r2 = 0.0;
    for (j, w) in s.neurons().iter().enumerate() {
        let n = w.norm();
        if n == 0.0 {
            continue;
        }
        let proj = partition.sign_flips[j] * dot(w, x);
        r2 += n * proj * (sgn(proj) - teacher_signs[partition.assignment[j]]);
    }
    (s.output(x) - t.output(x), r1, r2)
}

/// Descent direction together with the weights that define it.
#[derive(Debug, Clone)]
pub struct DescentDirection {
    pub directions: Vec<WeightVector>,
    /// `q_j`; zero outside the `delta_max` cone.
    pub weights: Vec<f64>,
    pub delta_max: f64,
}

/// `g_j = (I − ½w̄_jw̄_jᵀ)(w_j − q_j·sgn(w_jᵀw*_i)·w*_i)` with
/// `q_j = ‖w_j‖ / Σ_{k∈T_i(δ_max)} ‖w_k‖²` inside the cone and 0 outside.
pub fn descent_direction(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    partition: &NeuronPartition,
    eps: f64,
    c: f64,
) -> Result<DescentDirection> {
    check_dim(t.dim(), s.dim())?;
    let dmax = delta_max(eps, t, c);
    let r = t.r();
    let mut mass = vec![0.0; r];
    let mut covered = vec![false; r];
    for j in 0..s.m() {
        let n = s.neurons()[j].norm();
        if n > 0.0 && partition.angles[j] <= dmax {
            let i = partition.assignment[j];
            mass[i] += n * n;
            covered[i] = true;
        }
    }
    if let Some(teacher) = covered.iter().position(|&c| !c) {
        return Err(Error::Uncovered {
            teacher,
            delta_max: dmax,
        });
    }

    let mut weights = vec![0.0; s.m()];
    let mut directions = Vec::with_capacity(s.m());
    for (j, w) in s.neurons().iter().enumerate() {
        let n = w.norm();
        let i = partition.assignment[j];
        if n == 0.0 {
            directions.push(WeightVector::zeros(w.dim()));
            continue;
        }
        if partition.angles[j] <= dmax {
            weights[j] = n / mass[i];
        }
        let teacher = &t.neurons()[i];
        let coef = weights[j] * partition.sign_flips[j];
        let raw: Vec<f64> = w
            .iter()
            .zip(teacher.iter())
            .map(|(x, y)| x - coef * y)
            .collect();
        let proj = dot(w, &raw) / (n * n);
        let g: Vec<f64> = raw
            .iter()
            .zip(w.iter())
            .map(|(x, y)| x - 0.5 * proj * y)
            .collect();
        directions.push(WeightVector::new(g)?);
    }
    Ok(DescentDirection {
        directions,
        weights,
        delta_max: dmax,
    })
}

/// Zero-residual state: `‖w_j‖w_j = w*_j`.
pub fn exact_copy(t: &TeacherNetwork) -> StudentNetwork {
    StudentNetwork::exact_copy(t)
}

/// Two students at `±δ` around the unit teacher `e1` in the plane, with
/// norms `1/√(2cos δ)` so that their effective neurons sum to `e1`.
pub fn warmup_state(delta: f64) -> (TeacherNetwork, StudentNetwork) {
    let t = TeacherNetwork::new(vec![WeightVector::basis(2, 0)]).expect("unit teacher");
    let scale = 1.0 / (2.0 * delta.cos()).sqrt();
    let s = StudentNetwork::new(vec![
        WeightVector::polar(2, delta).scaled(scale),
        WeightVector::polar(2, -delta).scaled(scale),
    ])
    .expect("two students");
    (t, s)
}
