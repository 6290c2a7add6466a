//! Seeded Monte Carlo estimation over `x ~ N(0, I_d)`.
//!
//! Samples are generated in fixed chunks of [`CHUNK`] rows; chunk `c` is
//! drawn from stream `c` of the run seed. Chunks may be evaluated in
//! parallel and are merged in index order, so estimates are bit-identical
//! regardless of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const CHUNK: usize = 65_536;

/// Mean, standard error and provenance of one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl MCEstimate {
    /// `|mean − target|` in units of the standard error; zero error with an
    /// exact hit counts as 0, otherwise infinity.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if self.std_err > 0.0 {
            diff / self.std_err
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `|mean − target| ≤ k·std_err`, with a floor of a few ulps of the
    /// target so that zero-variance integrands still compare.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        let diff = (self.mean - target).abs();
        diff <= k * self.std_err + 8.0 * f64::EPSILON * target.abs().max(self.mean.abs())
    }
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn finish(&self, seed: u64) -> MCEstimate {
        MCEstimate {
            mean: self.mean,
            std_err: (self.variance() / self.count as f64).sqrt(),
            n_samples: self.count,
            seed,
        }
    }
}

/// Number of chunks covering `n` samples.
pub fn chunk_count(n: u64) -> u64 {
    n.div_ceil(CHUNK as u64)
}

/// Rows in chunk `c` of an `n`-sample stream.
pub fn chunk_rows(n: u64, c: u64) -> usize {
    let start = c * CHUNK as u64;
    (n - start).min(CHUNK as u64) as usize
}

/// Fill `out` (`rows × d`, row-major) with chunk `c` of the sample stream.
pub fn fill_chunk(seed: u64, c: u64, out: &mut [f64]) {
    let mut rng = rng::stream(seed, c);
    rng::fill_normal(&mut rng, out);
}

/// Run `visit(global_index, x)` over every sample of chunk `c`.
fn visit_chunk(
    seed: u64,
    d: usize,
    n: u64,
    c: u64,
    mut visit: impl FnMut(u64, &[f64]) -> Result<()>,
) -> Result<()> {
    let rows = chunk_rows(n, c);
    let mut buf = vec![0.0; rows * d];
    fill_chunk(seed, c, &mut buf);
    let base = c * CHUNK as u64;
    for (k, x) in buf.chunks_exact(d).enumerate() {
        visit(base + k as u64, x)?;
    }
    Ok(())
}

fn check_request(d: usize, n: u64) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain(format!("monte carlo needs n >= 2, got {n}")));
    }
    if d == 0 {
        return Err(Error::Domain("monte carlo needs d >= 1".into()));
    }
    Ok(())
}

/// Estimate `E[f(x)]`.
pub fn estimate<F>(f: F, d: usize, n: u64, seed: u64) -> Result<MCEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_request(d, n)?;
    let parts: Vec<Result<Welford>> = (0..chunk_count(n))
        .into_par_iter()
        .map(|c| {
            let mut acc = Welford::default();
            visit_chunk(seed, d, n, c, |index, x| {
                let y = f(x);
                if !y.is_finite() {
                    return Err(Error::NonFiniteSample { index });
                }
                acc.push(y);
                Ok(())
            })?;
            Ok(acc)
        })
        .collect();
    let mut total = Welford::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total.finish(seed))
}

/// Estimate `E[f(x) − g(x)]` with both integrands on the same samples.
pub fn estimate_paired<F, G>(f: F, g: G, d: usize, n: u64, seed: u64) -> Result<MCEstimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    estimate(|x| f(x) - g(x), d, n, seed)
}

/// Component-wise estimate of a vector-valued integrand. `f` writes its
/// `out_dim` values into the provided buffer.
pub fn estimate_vector<F>(
    f: F,
    out_dim: usize,
    d: usize,
    n: u64,
    seed: u64,
) -> Result<Vec<MCEstimate>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    check_request(d, n)?;
    let parts: Vec<Result<Vec<Welford>>> = (0..chunk_count(n))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Welford::default(); out_dim];
            let mut out = vec![0.0; out_dim];
            visit_chunk(seed, d, n, c, |index, x| {
                f(x, &mut out);
                for (a, &y) in acc.iter_mut().zip(&out) {
                    if !y.is_finite() {
                        return Err(Error::NonFiniteSample { index });
                    }
                    a.push(y);
                }
                Ok(())
            })?;
            Ok(acc)
        })
        .collect();
    let mut total = vec![Welford::default(); out_dim];
    for p in parts {
        for (t, w) in total.iter_mut().zip(&p?) {
            t.merge(w);
        }
    }
    Ok(total.iter().map(|w| w.finish(seed)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_integrand_has_zero_error() {
        let e = estimate(|_| 1.0, 3, 1000, 1).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_err, 0.0);
        assert_eq!(e.n_samples, 1000);
    }

    #[test]
    fn unit_variance_and_independence() {
        let e = estimate(|x| x[0] * x[0], 3, 1_000_000, 2).unwrap();
        assert!(e.agrees_with(1.0, 4.0), "{e:?}");
        let e = estimate(|x| (x[0] * x[1]).abs(), 2, 1_000_000, 3).unwrap();
        assert!(e.agrees_with(2.0 / PI, 4.0), "{e:?}");
    }

    #[test]
    fn paired_examples() {
        let e = estimate_paired(|x| x[0].abs(), |x| x[0].abs(), 2, 5000, 4).unwrap();
        assert_eq!((e.mean, e.std_err), (0.0, 0.0));
        let e = estimate_paired(|x| x[0].abs(), |x| x[0].abs() + 1e-3, 2, 5000, 4).unwrap();
        assert!((e.mean + 1e-3).abs() < 1e-15);
        assert!(e.std_err < 1e-15);
    }

    #[test]
    fn reproducible_and_errors() {
        let f = |x: &[f64]| x[0].sin() + x[1];
        let a = estimate(f, 2, 200_000, 9).unwrap();
        let b = estimate(f, 2, 200_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(estimate(f, 2, 1, 9).is_err());
        let bad = estimate(|x| if x[0] > 3.0 { f64::NAN } else { 0.0 }, 1, 100_000, 5);
        assert!(matches!(bad, Err(Error::NonFiniteSample { .. })));
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = Welford::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        assert!((a.mean() - whole.mean()).abs() < 1e-12);
        assert!((a.variance() - whole.variance()).abs() < 1e-10);
    }

    #[test]
    fn vector_estimate_matches_scalar() {
        let v = estimate_vector(
            |x, out| {
                out[0] = x[0] * x[0];
                out[1] = x[0] * x[1];
            },
            2,
            2,
            100_000,
            6,
        )
        .unwrap();
        let s = estimate(|x| x[0] * x[0], 2, 100_000, 6).unwrap();
        assert_eq!(v[0], s);
    }
}
