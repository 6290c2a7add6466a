//! Numerical checks of the landscape, initialisation and sampling
//! statements. Every check returns a [`CheckReport`] whose status is a pure
//! function of the recorded measurements and thresholds.

mod claims;
mod init_checks;
mod kernel_checks;
mod landscape;
mod sampling;
pub mod states;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use claims::{
    g_smoothness_check, hermite_test_function_check, relu_counterexample_check,
    test_function_check, warmup_cubic_check, HermiteTestFunction, SlabTestFunction,
};
pub use init_checks::{nnls_brute_force, nnls_oracle_check, random_init_check, subspace_check};
pub use kernel_checks::{
    exact_identities_check, gradient_fd_check, hermite_layer_check, kernel_mc_check,
    min_eigenvalue_scaling_check, owen_wedge_check, slab_bounds_check,
};
pub use landscape::{
    average_closeness_check, descent_correlation_check, lipschitz_check, lojasiewicz_check,
    neighbor_and_mass_check, r2_and_weighted_angle_check, smoothness_check,
};
pub use sampling::{sample_concentration_check, sgd_check, SGD_INIT_SCALE, SGD_MAX_STEPS};
pub use states::Case;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Preconditions not met (coverage, degenerate data); neither pass nor fail.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub status: CheckStatus,
    pub measured: BTreeMap<String, f64>,
    pub details: String,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            status: CheckStatus::Inconclusive,
            measured: BTreeMap::new(),
            details: String::new(),
        }
    }

    /// Records a measurement. Non-finite values are noted in `details`
    /// instead, so that the JSON stays parseable.
    pub fn measure(&mut self, key: &str, value: f64) -> &mut Self {
        if value.is_finite() {
            self.measured.insert(key.to_string(), value);
        } else {
            self.note(format!("{key} = {value}"));
        }
        self
    }

    pub fn note(&mut self, text: impl AsRef<str>) -> &mut Self {
        if !self.details.is_empty() {
            self.details.push_str("; ");
        }
        self.details.push_str(text.as_ref());
        self
    }

    /// Sets the status from a pass condition.
    pub fn decide(&mut self, passed: bool) -> &mut Self {
        self.status = if passed {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        self
    }

    pub fn inconclusive(&mut self, why: impl AsRef<str>) -> &mut Self {
        self.status = CheckStatus::Inconclusive;
        self.note(why)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.measured.get(key).copied()
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == CheckStatus::Fail
    }

    /// Report for a check that could not run at all.
    pub fn errored(name: &str, err: &Error) -> Self {
        let mut r = CheckReport::new(name);
        r.status = CheckStatus::Fail;
        r.note(format!("error: {err}"));
        r
    }

    pub(crate) fn take(&mut self) -> Self {
        std::mem::replace(self, CheckReport::new(""))
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Inconclusive => "INCONCLUSIVE",
        };
        write!(f, "{tag} {}", self.name)?;
        for (k, v) in &self.measured {
            write!(f, " {k}={v:.4e}")?;
        }
        if !self.details.is_empty() {
            write!(f, " ({})", self.details)?;
        }
        Ok(())
    }
}

/// Named group of checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Kernels,
    Landscape,
    Claims,
    Init,
    Sampling,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["kernels", "landscape", "claims", "init", "sampling", "all"];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kernels" => Suite::Kernels,
            "landscape" => Suite::Landscape,
            "claims" => Suite::Claims,
            "init" => Suite::Init,
            "sampling" => Suite::Sampling,
            "all" => Suite::All,
            other => {
                return Err(Error::Config(format!(
                    "unknown suite `{other}` (expected one of {})",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Suite::Kernels => "kernels",
            Suite::Landscape => "landscape",
            Suite::Claims => "claims",
            Suite::Init => "init",
            Suite::Sampling => "sampling",
            Suite::All => "all",
        };
        f.write_str(name)
    }
}

/// Constants measured on the seed-0 run of the default configuration and
/// frozen. A check fails only
/// when its measurement is worse than the frozen value by more than
/// [`VerifierConfig::regression_factor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedConstants {
    /// Smallest `C` with `excess ≤ C(√L‖U‖^{3/2} + ‖U‖² + ‖U‖⁴)`.
    pub smoothness: f64,
    /// Largest `‖∇L‖²/(r³w_max³)`.
    pub lipschitz: f64,
    /// Smallest `δ_max` constant covering every teacher with enough mass.
    pub neighbor: f64,
    /// Largest `‖R₂‖²/L^{3/4}`.
    pub r2: f64,
    /// Largest `Σ‖w_j‖²δ_j²/L^{1/2}`.
    pub weighted_angle: f64,
    /// Smallest `⟨h, f* − f⟩_S/(‖w*‖²τ³)`.
    pub test_function: f64,
    /// Smallest `λ_min(M)·r³/Δ³`.
    pub min_eigenvalue: f64,
}

impl Default for FittedConstants {
    fn default() -> Self {
        FittedConstants {
            smoothness: 2.86,
            lipschitz: 13.7,
            neighbor: 1.68,
            r2: 0.278,
            weighted_angle: 1.29,
            test_function: 0.0611,
            min_eigenvalue: 0.764,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifierConfig {
    pub seed: u64,
    /// Monte Carlo sample count for oracle cross-checks.
    pub mc_samples: u64,
    /// States with loss above this are not "low loss".
    pub loss_threshold: f64,
    /// Losses at or below this are treated as exact zeros.
    pub zero_loss: f64,
    /// Floor on `‖∇L‖/L`.
    pub kappa_floor: f64,
    /// `δ_max` constant used by the descent direction.
    pub delta_c: f64,
    pub regression_factor: f64,
    /// Seeds per family of generated states.
    pub state_seeds: usize,
    pub kernel_pairs: usize,
    pub g_pairs: usize,
    pub fitted: FittedConstants,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            seed: 0,
            mc_samples: 1_000_000,
            loss_threshold: 1e-3,
            zero_loss: 1e-14,
            kappa_floor: 1e-2,
            delta_c: 1.0,
            regression_factor: 2.0,
            state_seeds: 20,
            kernel_pairs: 50,
            g_pairs: 10_000,
            fitted: FittedConstants::default(),
        }
    }
}

impl VerifierConfig {
    /// Smaller sample sizes for smoke runs; thresholds are unchanged.
    pub fn quick() -> Self {
        VerifierConfig {
            mc_samples: 100_000,
            state_seeds: 4,
            kernel_pairs: 4,
            g_pairs: 1_000,
            ..VerifierConfig::default()
        }
    }

    /// Upper-bound constant allowed before a regression is declared.
    pub fn upper(&self, frozen: f64) -> f64 {
        frozen * self.regression_factor
    }

    /// Lower-bound constant allowed before a regression is declared.
    pub fn lower(&self, frozen: f64) -> f64 {
        frozen / self.regression_factor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| c.failed()).count()
    }

    pub fn inconclusive(&self) -> usize {
        self.checks
            .iter()
            .filter(|c| c.status == CheckStatus::Inconclusive)
            .count()
    }

    /// True when no check failed; inconclusive checks are allowed.
    pub fn passed(&self) -> bool {
        self.failures() == 0
    }

    pub fn get(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }
}

type Job = fn(&VerifierConfig) -> Result<CheckReport>;

fn jobs(suite: Suite) -> Vec<(&'static str, Job)> {
    let kernels: Vec<(&'static str, Job)> = vec![
        ("kernel_mc", kernel_checks::suite_kernel_mc),
        ("gradient_fd", kernel_checks::suite_gradient_fd),
        ("hermite_layer", kernel_checks::suite_hermite_layer),
        ("owen_wedge", kernel_checks::suite_owen_wedge),
        ("slab_bounds", kernel_checks::suite_slab_bounds),
        ("exact_identities", kernel_checks::suite_exact_identities),
        ("min_eigenvalue_scaling", kernel_checks::suite_min_eigenvalue),
        ("g_smoothness", claims::suite_g_smoothness),
    ];
    let landscape: Vec<(&'static str, Job)> = vec![
        ("lojasiewicz", landscape::suite_lojasiewicz),
        ("descent_correlation", landscape::suite_descent_correlation),
        ("smoothness", landscape::suite_smoothness),
        ("lipschitz", landscape::suite_lipschitz),
        ("neighbor_and_mass", landscape::suite_neighbor_and_mass),
        ("average_closeness", landscape::suite_average_closeness),
        ("r2_and_weighted_angle", landscape::suite_r2_and_weighted_angle),
        ("test_function", claims::suite_test_function),
        ("hermite_test_function", claims::suite_hermite_test_function),
    ];
    let claims: Vec<(&'static str, Job)> = vec![
        ("warmup_cubic", claims::suite_warmup_cubic),
        ("relu_counterexample", claims::suite_relu_counterexample),
    ];
    let init: Vec<(&'static str, Job)> = vec![
        ("random_init", init_checks::suite_random_init),
        ("subspace_init", init_checks::suite_subspace),
        ("nnls_oracle", init_checks::suite_nnls_oracle),
    ];
    let sampling: Vec<(&'static str, Job)> = vec![
        ("sample_concentration", sampling::suite_sample_concentration),
        ("sgd", sampling::suite_sgd),
    ];
    match suite {
        Suite::Kernels => kernels,
        Suite::Landscape => landscape,
        Suite::Claims => claims,
        Suite::Init => init,
        Suite::Sampling => sampling,
        Suite::All => [kernels, landscape, claims, init, sampling].concat(),
    }
}

/// Runs every check of `suite`. Checks are independent and run in parallel;
/// the report lists them in a fixed order.
pub fn run_suite(suite: Suite, cfg: &VerifierConfig) -> SuiteReport {
    let checks = jobs(suite)
        .into_par_iter()
        .map(|(name, job)| match job(cfg) {
            Ok(mut report) => {
                report.name = name.to_string();
                report
            }
            Err(e) => CheckReport::errored(name, &e),
        })
        .collect();
    SuiteReport {
        suite,
        seed: cfg.seed,
        checks,
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for name in Suite::NAMES {
            let s: Suite = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn report_json_skips_non_finite() {
        let mut r = CheckReport::new("x");
        r.measure("a", 1.5).measure("b", f64::NAN).decide(true);
        let json = serde_json::to_string(&r).unwrap();
        let back: CheckReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.measured.len(), 1);
        assert!(back.details.contains("b = NaN"));
        assert!(back.passed());
    }

    #[test]
    fn slope_and_median() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 0.5, 0.0, -0.5];
        assert!((fit_slope(&xs, &ys) + 0.5).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
