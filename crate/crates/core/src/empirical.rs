//! Finite-sample datasets and the empirical loss and gradient.
//!
//! Inputs come from the same chunked stream as [`crate::mc`], so a dataset
//! regenerated on the fly yields exactly the rows of the materialised one.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;
use crate::mc::{chunk_count, chunk_rows, fill_chunk, CHUNK};
use crate::net::{StudentNetwork, TeacherNetwork, WeightVector};

/// Largest dataset that [`sample_dataset`] will hold in memory; bigger runs
/// go through the streamed functions.
pub const MATERIALIZE_LIMIT: u64 = 10_000_000;

/// Row-major inputs with their teacher labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(d: usize, inputs: Vec<f64>, labels: Vec<f64>, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dataset needs d >= 1".into()));
        }
        check_dim(labels.len() * d, inputs.len())?;
        Ok(Self {
            d,
            inputs,
            labels,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.inputs[k * self.d..(k + 1) * self.d]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// CSV with header `x_0,…,x_{d-1},y`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.d).map(|i| format!("x_{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec: Vec<String> = self.row(k).iter().map(|x| format!("{x:e}")).collect();
            rec.push(format!("{:e}", self.labels[k]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        let expected: Vec<String> = (0..cols.saturating_sub(1))
            .map(|i| format!("x_{i}"))
            .chain(std::iter::once("y".to_string()))
            .collect();
        if cols < 2 || header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(Error::Config(format!(
                "dataset header must be x_0..x_{{d-1}},y; got {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let d = cols - 1;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Config(format!("row {line}, column {k}: not a number: {field:?}"))
                })?;
                if k < d {
                    inputs.push(v);
                } else {
                    labels.push(v);
                }
            }
        }
        Self::new(d, inputs, labels, seed)
    }
}

fn label_rows(t: &TeacherNetwork, inputs: &[f64]) -> Vec<f64> {
    inputs.chunks_exact(t.dim()).map(|x| t.output(x)).collect()
}

/// `n` standard-normal inputs labelled by the teacher.
pub fn sample_dataset(t: &TeacherNetwork, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Domain("dataset needs n >= 1".into()));
    }
    if n as u64 > MATERIALIZE_LIMIT {
        return Err(Error::Domain(format!(
            "{n} samples exceeds the in-memory limit; use the streamed functions"
        )));
    }
    let d = t.dim();
    let mut inputs = vec![0.0; n * d];
    for (c, block) in inputs.chunks_mut(CHUNK * d).enumerate() {
        fill_chunk(seed, c as u64, block);
    }
    let labels = label_rows(t, &inputs);
    Dataset::new(d, inputs, labels, seed)
}

/// Per-chunk sums for the loss and gradient.
#[derive(Debug, Clone)]
struct Partial {
    sq: f64,
    /// Σ R·sgn(w_jᵀx)·x, row-major `m × d`.
    lateral: Vec<f64>,
    /// Σ R·sgn(w_jᵀx)·(w_jᵀx).
    radial: Vec<f64>,
}

impl Partial {
    fn new(m: usize, d: usize, with_grad: bool) -> Self {
        Self {
            sq: 0.0,
            lateral: vec![0.0; if with_grad { m * d } else { 0 }],
            radial: vec![0.0; if with_grad { m } else { 0 }],
        }
    }

    fn merge(&mut self, other: &Partial) {
        self.sq += other.sq;
        self.lateral
            .iter_mut()
            .zip(&other.lateral)
            .for_each(|(a, b)| *a += b);
        self.radial
            .iter_mut()
            .zip(&other.radial)
            .for_each(|(a, b)| *a += b);
    }
}

fn accumulate(
    s: &StudentNetwork,
    norms: &[f64],
    inputs: &[f64],
    labels: &[f64],
    with_grad: bool,
) -> Partial {
    let d = s.dim();
    let m = s.m();
    let mut part = Partial::new(m, d, with_grad);
    let mut proj = vec![0.0; m];
    for (x, &y) in inputs.chunks_exact(d).zip(labels) {
        let mut f = 0.0;
        for (j, w) in s.neurons().iter().enumerate() {
            proj[j] = dot(w, x);
            f += norms[j] * proj[j].abs();
        }
        let r = f - y;
        part.sq += r * r;
        if with_grad {
            for j in 0..m {
                let p = proj[j];
                if norms[j] == 0.0 || p == 0.0 {
                    continue;
                }
                let rs = if p > 0.0 { r } else { -r };
                part.radial[j] += rs * p;
                for (acc, xi) in part.lateral[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *acc += rs * xi;
                }
            }
        }
    }
    part
}

fn finish(s: &StudentNetwork, norms: &[f64], total: &Partial, n: f64) -> Vec<WeightVector> {
    let d = s.dim();
    s.neurons()
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let nj = norms[j];
            if nj == 0.0 {
                return WeightVector::zeros(d);
            }
            // ‖w‖(I + w̄w̄ᵀ)Σ R sgn x = ‖w‖(Σ R sgn x + w Σ R sgn wᵀx / ‖w‖²)
            let c = total.radial[j] / (nj * nj);
            let g: Vec<f64> = total.lateral[j * d..(j + 1) * d]
                .iter()
                .zip(w.iter())
                .map(|(l, wi)| nj * (l + c * wi) / n)
                .collect();
            WeightVector::new(g).unwrap_or_else(|_| WeightVector::zeros(d))
        })
        .collect()
}

fn norms_of(s: &StudentNetwork) -> Vec<f64> {
    s.neurons().iter().map(|w| w.norm()).collect()
}

fn reduce_dataset(s: &StudentNetwork, data: &Dataset, with_grad: bool) -> Result<Partial> {
    check_dim(data.dim(), s.dim())?;
    if data.is_empty() {
        return Err(Error::Domain("empty dataset".into()));
    }
    let d = data.dim();
    let norms = norms_of(s);
    let parts: Vec<Partial> = data
        .inputs
        .par_chunks(CHUNK * d)
        .zip(data.labels.par_chunks(CHUNK))
        .map(|(xs, ys)| accumulate(s, &norms, xs, ys, with_grad))
        .collect();
    let mut total = Partial::new(s.m(), d, with_grad);
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

fn reduce_stream(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    n: u64,
    seed: u64,
    with_grad: bool,
) -> Result<Partial> {
    check_dim(t.dim(), s.dim())?;
    if n == 0 {
        return Err(Error::Domain("stream needs n >= 1".into()));
    }
    let d = t.dim();
    let norms = norms_of(s);
    let parts: Vec<Partial> = (0..chunk_count(n))
        .into_par_iter()
        .map(|c| {
            let mut xs = vec![0.0; chunk_rows(n, c) * d];
            fill_chunk(seed, c, &mut xs);
            let ys = label_rows(t, &xs);
            accumulate(s, &norms, &xs, &ys, with_grad)
        })
        .collect();
    let mut total = Partial::new(s.m(), d, with_grad);
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

/// `(1/2N) Σ (f(x_k) − y_k)²`.
pub fn empirical_loss(s: &StudentNetwork, data: &Dataset) -> Result<f64> {
    let total = reduce_dataset(s, data, false)?;
    Ok(0.5 * total.sq / data.len() as f64)
}

/// `(1/N) Σ R(x_k)·‖w_j‖(I + w̄_jw̄_jᵀ)x_k·sgn(w_jᵀx_k)` for every neuron.
pub fn empirical_gradient(s: &StudentNetwork, data: &Dataset) -> Result<Vec<WeightVector>> {
    Ok(empirical_loss_and_gradient(s, data)?.1)
}

pub fn empirical_loss_and_gradient(
    s: &StudentNetwork,
    data: &Dataset,
) -> Result<(f64, Vec<WeightVector>)> {
    let total = reduce_dataset(s, data, true)?;
    let n = data.len() as f64;
    Ok((0.5 * total.sq / n, finish(s, &norms_of(s), &total, n)))
}

/// Loss and gradient on `n` samples regenerated from `seed`, in constant
/// memory. Equal to the materialised result on `sample_dataset(t, n, seed)`.
pub fn streamed_loss_and_gradient(
    t: &TeacherNetwork,
    s: &StudentNetwork,
    n: u64,
    seed: u64,
) -> Result<(f64, Vec<WeightVector>)> {
    let total = reduce_stream(t, s, n, seed, true)?;
    let nf = n as f64;
    Ok((0.5 * total.sq / nf, finish(s, &norms_of(s), &total, nf)))
}

pub fn streamed_loss(t: &TeacherNetwork, s: &StudentNetwork, n: u64, seed: u64) -> Result<f64> {
    let total = reduce_stream(t, s, n, seed, false)?;
    Ok(0.5 * total.sq / n as f64)
}
