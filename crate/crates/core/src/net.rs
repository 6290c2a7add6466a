//! Network representations and angle geometry.

use std::f64::consts::FRAC_PI_2;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelPair;
use crate::linalg::norm;
use crate::rng;

/// A single neuron's weights in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("weight vector needs d >= 1".into()));
        }
        if let Some(k) = components.iter().position(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite weight component {k}")));
        }
        Ok(Self(components))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    /// Standard basis vector `e_axis` in `R^d`.
    pub fn basis(d: usize, axis: usize) -> Self {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        Self(v)
    }

    /// Unit vector at angle `theta` in the first coordinate plane.
    pub fn polar(d: usize, theta: f64) -> Self {
        let mut v = vec![0.0; d.max(2)];
        v[0] = theta.cos();
        v[1] = theta.sin();
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|x| c * x).collect())
    }

    /// Unit vector along `self`; zero input is an error.
    pub fn direction(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(self.scaled(1.0 / n))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Angle between the lines spanned by `u` and `v`, in `[0, π/2]`.
pub fn angle_up_to_sign(u: &[f64], v: &[f64]) -> Result<f64> {
    let p = KernelPair::new(u, v);
    if p.norm_u == 0.0 || p.norm_v == 0.0 {
        return Err(Error::Domain("angle of a zero vector".into()));
    }
    Ok(p.sin.atan2(p.rho.abs()))
}

/// `‖w‖·w`, the vector the network output actually depends on.
pub fn effective_neuron(w: &[f64]) -> WeightVector {
    let n = norm(w);
    WeightVector(w.iter().map(|x| n * x).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// Minimum pairwise angle up to sign, radians.
    pub delta: f64,
    pub w_min: f64,
    pub w_max: f64,
}

/// Ground-truth network with cached separation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherNetwork {
    neurons: Vec<WeightVector>,
    separation: Separation,
}

/// Parameters for [`TeacherNetwork::random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomTeacherSpec {
    pub delta_min: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl TeacherNetwork {
    pub fn new(neurons: Vec<WeightVector>) -> Result<Self> {
        let separation = separation(&neurons)?;
        Ok(Self {
            neurons,
            separation,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            rows.into_iter()
                .map(WeightVector::new)
                .collect::<Result<_>>()?,
        )
    }

    /// Random directions, rejected until every pair is at least
    /// `spec.delta_min` apart up to sign; norms uniform in `[w_min, w_max]`.
    pub fn random(d: usize, r: usize, spec: RandomTeacherSpec, seed: u64) -> Result<Self> {
        use rand::Rng;
        const RESTARTS: usize = 1000;
        const TRIES_PER_NEURON: usize = 10_000;

        if d == 0 || r == 0 {
            return Err(Error::InvalidTeacher("need d >= 1 and r >= 1".into()));
        }
        if !(spec.w_min > 0.0 && spec.w_min <= spec.w_max && spec.w_max.is_finite()) {
            return Err(Error::InvalidTeacher(format!(
                "norm range [{}, {}] must satisfy 0 < w_min <= w_max",
                spec.w_min, spec.w_max
            )));
        }
        if r > 1 && (d == 1 || spec.delta_min > FRAC_PI_2) {
            return Err(Error::InvalidTeacher(format!(
                "cannot place {r} neurons {} rad apart in dimension {d}",
                spec.delta_min
            )));
        }

        let mut rng = rng::seeded(seed);
        for _ in 0..RESTARTS {
            let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(r);
            'neuron: for _ in 0..TRIES_PER_NEURON {
                if dirs.len() == r {
                    break;
                }
                let cand = rng::normal_vec(&mut rng, d);
                if norm(&cand) < 1e-12 {
                    continue;
                }
                for prev in &dirs {
                    if angle_up_to_sign(&cand, prev)? < spec.delta_min {
                        continue 'neuron;
                    }
                }
                dirs.push(cand);
            }
            if dirs.len() < r {
                continue;
            }
            let neurons = dirs
                .into_iter()
                .map(|v| {
                    let scale = if spec.w_max > spec.w_min {
                        rng.random_range(spec.w_min..=spec.w_max)
                    } else {
                        spec.w_min
                    };
                    let n = norm(&v);
                    WeightVector(v.iter().map(|x| scale * x / n).collect())
                })
                .collect();
            return Self::new(neurons);
        }
        Err(Error::InvalidTeacher(format!(
            "rejection sampling found no {r} directions {} rad apart",
            spec.delta_min
        )))
    }

    pub fn neurons(&self) -> &[WeightVector] {
        &self.neurons
    }

    pub fn r(&self) -> usize {
        self.neurons.len()
    }

    pub fn dim(&self) -> usize {
        self.neurons[0].dim()
    }

    pub fn separation(&self) -> Separation {
        self.separation
    }

    pub fn w_min(&self) -> f64 {
        self.separation.w_min
    }

    pub fn w_max(&self) -> f64 {
        self.separation.w_max
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.neurons
            .iter()
            .map(|w| crate::linalg::dot(w, x).abs())
            .sum()
    }
}

/// Minimum pairwise angle up to sign and the norm range. A single neuron is
/// `π/2`-separated by convention.
pub fn separation(neurons: &[WeightVector]) -> Result<Separation> {
    let first = neurons
        .first()
        .ok_or_else(|| Error::InvalidTeacher("no neurons".into()))?;
    let d = first.dim();
    let mut w_min = f64::INFINITY;
    let mut w_max = 0.0f64;
    for (i, w) in neurons.iter().enumerate() {
        check_dim(d, w.dim())?;
        let n = w.norm();
        if n == 0.0 {
            return Err(Error::InvalidTeacher(format!("neuron {i} is zero")));
        }
        w_min = w_min.min(n);
        w_max = w_max.max(n);
    }
    let mut delta = FRAC_PI_2;
    for i in 0..neurons.len() {
        for j in (i + 1)..neurons.len() {
            delta = delta.min(angle_up_to_sign(&neurons[i], &neurons[j])?);
        }
    }
    Ok(Separation {
        delta,
        w_min,
        w_max,
    })
}

/// Trainable network.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentNetwork {
    neurons: Vec<WeightVector>,
}

impl StudentNetwork {
    pub fn new(neurons: Vec<WeightVector>) -> Result<Self> {
        let first = neurons
            .first()
            .ok_or_else(|| Error::Config("student network needs m >= 1".into()))?;
        for w in &neurons {
            check_dim(first.dim(), w.dim())?;
        }
        Ok(Self { neurons })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            rows.into_iter()
                .map(WeightVector::new)
                .collect::<Result<_>>()?,
        )
    }

    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            neurons: vec![WeightVector::zeros(d); m],
        }
    }

    /// One student per teacher with `‖w‖w = w*`, a global minimiser.
    pub fn exact_copy(t: &TeacherNetwork) -> Self {
        let neurons = t
            .neurons()
            .iter()
            .map(|w| {
                let n = w.norm();
                w.scaled(1.0 / n.sqrt())
            })
            .collect();
        Self { neurons }
    }

    pub fn neurons(&self) -> &[WeightVector] {
        &self.neurons
    }

    pub fn neurons_mut(&mut self) -> &mut [WeightVector] {
        &mut self.neurons
    }

    pub fn into_neurons(self) -> Vec<WeightVector> {
        self.neurons
    }

    pub fn m(&self) -> usize {
        self.neurons.len()
    }

    pub fn dim(&self) -> usize {
        self.neurons[0].dim()
    }

    pub fn output(&self, x: &[f64]) -> f64 {
        self.neurons
            .iter()
            .map(|w| w.norm() * crate::linalg::dot(w, x).abs())
            .sum()
    }

    /// Frobenius distance to another network of the same shape.
    pub fn distance(&self, other: &StudentNetwork) -> f64 {
        self.neurons
            .iter()
            .zip(&other.neurons)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    }
}

/// Assignment of students to their nearest teacher, up to sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronPartition {
    pub assignment: Vec<usize>,
    pub angles: Vec<f64>,
    /// `+1.0` or `-1.0`.
    pub sign_flips: Vec<f64>,
    pub r: usize,
}

impl NeuronPartition {
    /// Students assigned to teacher `i`.
    pub fn members(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == i)
            .map(|(j, _)| j)
    }

    /// Students assigned to teacher `i` within `delta` radians.
    pub fn members_within(&self, i: usize, delta: f64) -> impl Iterator<Item = usize> + '_ {
        self.members(i).filter(move |&j| self.angles[j] <= delta)
    }

    /// Copy of `s` with every neuron multiplied by its sign flip.
    pub fn canonicalize(&self, s: &StudentNetwork) -> StudentNetwork {
        let neurons = s
            .neurons()
            .iter()
            .zip(&self.sign_flips)
            .map(|(w, &sg)| w.scaled(sg))
            .collect();
        StudentNetwork { neurons }
    }
}

/// Nearest-teacher partition. Ties go to the lowest teacher index; zero
/// students go to teacher 0 with angle 0 and flip `+1`.
pub fn partition_students(t: &TeacherNetwork, s: &StudentNetwork) -> Result<NeuronPartition> {
    check_dim(t.dim(), s.dim())?;
    let m = s.m();
    let mut assignment = vec![0; m];
    let mut angles = vec![0.0; m];
    let mut sign_flips = vec![1.0; m];
    for (j, w) in s.neurons().iter().enumerate() {
        if w.norm() == 0.0 {
            continue;
        }
        let mut best = (f64::INFINITY, 0usize, 1.0);
        for (i, ws) in t.neurons().iter().enumerate() {
            let p = KernelPair::new(w, ws);
            let angle = p.sin.atan2(p.rho.abs());
            if angle < best.0 {
                best = (angle, i, if p.rho < 0.0 { -1.0 } else { 1.0 });
            }
        }
        angles[j] = best.0;
        assignment[j] = best.1;
        sign_flips[j] = best.2;
    }
    Ok(NeuronPartition {
        assignment,
        angles,
        sign_flips,
        r: t.r(),
    })
}

/// Radius of the cone in which every teacher must have a student once the
/// loss is below `eps`: `C·r·w_max·w_min^(-5/3)·eps^(1/3)`, capped at `π/2`.
pub fn delta_max(eps: f64, t: &TeacherNetwork, c: f64) -> f64 {
    let sep = t.separation();
    let raw = c * t.r() as f64 * sep.w_max * sep.w_min.powf(-5.0 / 3.0) * eps.cbrt();
    raw.min(FRAC_PI_2)
}

/// Linear term that reduces a ReLU teacher–student problem to the
/// absolute-value one: `½Σw*ᵢ − ½Σ‖wⱼ‖wⱼ`.
pub fn optimal_linear_beta(t: &TeacherNetwork, s: &StudentNetwork) -> Result<WeightVector> {
    check_dim(t.dim(), s.dim())?;
    let mut beta = vec![0.0; t.dim()];
    for w in t.neurons() {
        crate::linalg::axpy(0.5, w, &mut beta);
    }
    for w in s.neurons() {
        crate::linalg::axpy(-0.5 * w.norm(), w, &mut beta);
    }
    Ok(WeightVector(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn angle_examples() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        assert_eq!(angle_up_to_sign(&e1, &e1).unwrap(), 0.0);
        assert_eq!(angle_up_to_sign(&e1, &[-1.0, 0.0]).unwrap(), 0.0);
        assert!((angle_up_to_sign(&e1, &e2).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(
            angle_up_to_sign(&e1, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn angle_resolves_small_separations() {
        let a = [1.0, 0.0, 0.0];
        let b = [1e-9f64.cos(), 1e-9f64.sin(), 0.0];
        let got = angle_up_to_sign(&a, &b).unwrap();
        assert!((got - 1e-9).abs() < 1e-20);
    }

    #[test]
    fn effective_neuron_examples() {
        assert_eq!(effective_neuron(&[0.0, 0.0]).as_slice(), &[0.0, 0.0]);
        assert_eq!(effective_neuron(&[1.0, 0.0]).as_slice(), &[1.0, 0.0]);
        assert_eq!(effective_neuron(&[2.0, 0.0]).as_slice(), &[4.0, 0.0]);
        assert_eq!(effective_neuron(&[-2.0, 0.0]).as_slice(), &[-4.0, 0.0]);
    }

    #[test]
    fn separation_examples() {
        let t = TeacherNetwork::new(vec![wv(&[1.0, 0.0]), wv(&[0.0, 1.0])]).unwrap();
        let s = t.separation();
        assert!((s.delta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!((s.w_min, s.w_max), (1.0, 1.0));

        let t = TeacherNetwork::new(vec![wv(&[1.0, 0.0])]).unwrap();
        assert_eq!(t.separation().delta, FRAC_PI_2);

        let t =
            TeacherNetwork::new(vec![wv(&[2.0, 0.0]), wv(&[0.3f64.cos(), 0.3f64.sin()])]).unwrap();
        let s = t.separation();
        assert!((s.delta - 0.3).abs() < 1e-15);
        assert!((s.w_min - 1.0).abs() < 1e-15);
        assert_eq!(s.w_max, 2.0);

        assert!(matches!(
            TeacherNetwork::new(vec![wv(&[1.0, 0.0]), wv(&[0.0, 0.0])]),
            Err(Error::InvalidTeacher(_))
        ));
    }

    #[test]
    fn partition_examples() {
        let t = TeacherNetwork::new(vec![wv(&[1.0, 0.0]), wv(&[0.0, 1.0])]).unwrap();

        let s = StudentNetwork::new(vec![wv(&[0.9, 0.0])]).unwrap();
        let p = partition_students(&t, &s).unwrap();
        assert_eq!(p.assignment, vec![0]);
        assert_eq!(p.angles, vec![0.0]);

        let h = 1.0 / 2f64.sqrt();
        let s = StudentNetwork::new(vec![wv(&[h, h])]).unwrap();
        let p = partition_students(&t, &s).unwrap();
        assert_eq!(p.assignment, vec![0]);
        assert!((p.angles[0] - FRAC_PI_4).abs() < 1e-15);

        let s = StudentNetwork::new(vec![wv(&[0.0, -1.0])]).unwrap();
        let p = partition_students(&t, &s).unwrap();
        assert_eq!(p.assignment, vec![1]);
        assert_eq!(p.sign_flips, vec![-1.0]);
        assert_eq!(p.angles, vec![0.0]);
        let c = p.canonicalize(&s);
        assert_eq!(c.neurons()[0].as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn zero_student_goes_to_first_teacher() {
        let t = TeacherNetwork::new(vec![wv(&[1.0, 0.0]), wv(&[0.0, 1.0])]).unwrap();
        let s = StudentNetwork::zeros(2, 2);
        let p = partition_students(&t, &s).unwrap();
        assert_eq!(p.assignment, vec![0, 0]);
        assert_eq!(p.angles, vec![0.0, 0.0]);
        assert_eq!(p.sign_flips, vec![1.0, 1.0]);
    }

    #[test]
    fn delta_max_examples() {
        let t1 = TeacherNetwork::new(vec![wv(&[1.0, 0.0])]).unwrap();
        assert!((delta_max(1e-6, &t1, 1.0) - 0.01).abs() < 1e-15);
        assert_eq!(delta_max(1.0, &t1, 10.0), FRAC_PI_2);
        let t2 = TeacherNetwork::new(vec![wv(&[1.0, 0.0]), wv(&[0.0, 1.0])]).unwrap();
        assert!((delta_max(8e-6, &t2, 1.0) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn beta_examples() {
        let t = TeacherNetwork::new(vec![wv(&[1.0, 0.0])]).unwrap();
        let s = StudentNetwork::zeros(2, 3);
        assert_eq!(optimal_linear_beta(&t, &s).unwrap().as_slice(), &[0.5, 0.0]);

        let s = StudentNetwork::exact_copy(&t);
        assert_eq!(optimal_linear_beta(&t, &s).unwrap().as_slice(), &[0.0, 0.0]);

        let t = TeacherNetwork::new(vec![wv(&[1.0, 0.0]), wv(&[-1.0, 0.0])]).unwrap();
        let s = StudentNetwork::zeros(2, 1);
        assert_eq!(optimal_linear_beta(&t, &s).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn random_teacher_respects_request() {
        let spec = RandomTeacherSpec {
            delta_min: 0.5,
            w_min: 0.5,
            w_max: 2.0,
        };
        let t = TeacherNetwork::random(2, 3, spec, 11).unwrap();
        let s = t.separation();
        assert!(s.delta >= 0.5 - 1e-12);
        assert!(s.w_min >= 0.5 && s.w_max <= 2.0);
        assert_eq!(t, TeacherNetwork::random(2, 3, spec, 11).unwrap());
        assert!(TeacherNetwork::random(2, 2, RandomTeacherSpec { delta_min: PI, ..spec }, 1).is_err());
    }

    #[test]
    fn weight_vector_rejects_non_finite() {
        assert!(WeightVector::new(vec![f64::NAN]).is_err());
        assert!(WeightVector::new(vec![]).is_err());
        let w: WeightVector = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(w.dim(), 2);
    }
}
