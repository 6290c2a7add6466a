use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use tslab::init::{gaussian_init, perturbed_teacher_init, random_init, subspace_init, GramMode, MomentEstimator};
use tslab::train::TrainConfig;
use tslab::{RandomTeacherSpec, StudentNetwork, TeacherNetwork};

/// A config file that failed to load, with the JSON path of the offending
/// field when there is one.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: at `{field}`: {message}")]
    Schema {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let file = File::open(path).map_err(|source| ConfigError::Open {
        path: path.to_owned(),
        source,
    })?;
    let mut de = serde_json::Deserializer::from_reader(BufReader::new(file));
    serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::Schema {
        path: path.to_owned(),
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherSource {
    Explicit(Vec<Vec<f64>>),
    Random {
        delta_min: f64,
        w_min: f64,
        w_max: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSource {
    Random { seed: u64 },
    /// Gaussian weights of the given scale without a refit.
    Gaussian { scale: f64, seed: u64 },
    Subspace { n: u64, seed: u64 },
    PerturbedTeacher { scale: f64, seed: u64 },
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Final network JSON; defaults to the trajectory path with a `.json`
    /// extension.
    #[serde(default)]
    pub final_network: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub r: usize,
    pub m: usize,
    pub teacher: TeacherSource,
    pub init: InitSource,
    pub train: TrainConfig,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = load_json(path)?;
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: path.to_owned(),
            message,
        })?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.d == 0 || self.r == 0 || self.m == 0 {
            return Err("d, r and m must be at least 1".into());
        }
        let rows_ok = |rows: &[Vec<f64>], count: usize, what: &str| {
            if rows.len() != count {
                return Err(format!("{what} has {} rows, expected {count}", rows.len()));
            }
            match rows.iter().position(|row| row.len() != self.d) {
                Some(i) => Err(format!("{what} row {i} has length {}, expected d = {}", rows[i].len(), self.d)),
                None => Ok(()),
            }
        };
        if let TeacherSource::Explicit(rows) = &self.teacher {
            rows_ok(rows, self.r, "teacher")?;
        }
        if let InitSource::Explicit(rows) = &self.init {
            rows_ok(rows, self.m, "init")?;
        }
        Ok(())
    }

    pub fn teacher(&self) -> tslab::Result<TeacherNetwork> {
        match &self.teacher {
            TeacherSource::Explicit(rows) => TeacherNetwork::from_rows(rows.clone()),
            TeacherSource::Random {
                delta_min,
                w_min,
                w_max,
                seed,
            } => TeacherNetwork::random(
                self.d,
                self.r,
                RandomTeacherSpec {
                    delta_min: *delta_min,
                    w_min: *w_min,
                    w_max: *w_max,
                },
                *seed,
            ),
        }
    }

    pub fn student(&self, t: &TeacherNetwork) -> tslab::Result<StudentNetwork> {
        match &self.init {
            InitSource::Random { seed } => Ok(random_init(t, self.m, *seed, GramMode::Exact)?.student),
            InitSource::Gaussian { scale, seed } => gaussian_init(self.d, self.m, *scale, *seed),
            InitSource::Subspace { n, seed } => Ok(subspace_init(
                t,
                self.m,
                self.r,
                *n,
                *seed,
                MomentEstimator::default(),
                GramMode::Exact,
            )?
            .init
            .student),
            InitSource::PerturbedTeacher { scale, seed } => {
                perturbed_teacher_init(t, self.m, *scale, *seed)
            }
            InitSource::Explicit(rows) => StudentNetwork::from_rows(rows.clone()),
        }
    }
}
