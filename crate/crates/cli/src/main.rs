//! `tslab`: train students against a teacher, run the verifier suites,
//! initialise networks and tabulate kernels.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use tslab::init::{random_init, subspace_init, GramMode, MomentEstimator};
use tslab::kernels::{summarize, SignCov};
use tslab::linalg::dot;
use tslab::population::population_loss;
use tslab::train::{train, Terminal};
use tslab::verify::{run_suite, Suite, VerifierConfig};
use tslab::{io, mc, svg};

use config::{load_json, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "tslab", version, about = "Teacher-student laboratory for absolute-value networks")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a student and write the trajectory, final network and plot.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_traj: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Run a verifier suite and write its JSON report.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Verifier settings as JSON; unset fields keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Initialise a student for the configured teacher.
    Init {
        #[arg(long, value_enum)]
        algo: Algo,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples for the subspace estimate.
        #[arg(long, default_value_t = 100_000)]
        n: u64,
    },
    /// Closed-form kernel quantities for a pair of vectors.
    Kernel {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        u: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v: Vec<f64>,
        /// Add a sampled column with this many samples.
        #[arg(long)]
        mc: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Random,
    Subspace,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: cannot configure {k} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Train {
            config,
            out_traj,
            svg,
        } => cmd_train(&config, &out_traj, svg.as_deref()),
        Command::Verify {
            suite,
            report,
            seed,
            config,
        } => cmd_verify(&suite, &report, seed, config.as_deref()),
        Command::Init {
            algo,
            m,
            config,
            out,
            seed,
            n,
        } => cmd_init(algo, m, &config, &out, seed, n),
        Command::Kernel { u, v, mc, seed } => cmd_kernel(&u, &v, mc, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Snapshot period used for plots when the config records none.
const PLOT_FRAMES: u64 = 400;

fn cmd_train(config: &Path, out_traj: &Path, svg_path: Option<&Path>) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::load(config)?;
    let t = cfg.teacher().context("building teacher")?;
    let s0 = cfg.student(&t).context("initialising student")?;
    let mut train_cfg = cfg.train;
    if svg_path.is_some() && train_cfg.record_every == 0 {
        train_cfg.record_every = (train_cfg.max_steps / PLOT_FRAMES).max(1);
    }
    let traj = train(&t, &s0, &train_cfg).context("training")?;

    let mut out = create(out_traj)?;
    traj.write_csv(&mut out, cfg.d)?;
    out.flush()?;

    let final_path = cfg
        .outputs
        .final_network
        .clone()
        .unwrap_or_else(|| out_traj.with_extension("json"));
    let mut out = create(&final_path)?;
    io::write_student(&traj.final_student, &mut out)?;
    out.flush()?;

    if let Some(path) = svg_path {
        let mut frames: Vec<Vec<f64>> = traj
            .snapshots
            .iter()
            .filter_map(|s| s.weights.clone())
            .collect();
        if frames.is_empty() {
            frames.push(s0.neurons().iter().flat_map(|w| w.iter().copied()).collect());
        }
        let last: Vec<f64> = traj
            .final_student
            .neurons()
            .iter()
            .flat_map(|w| w.iter().copied())
            .collect();
        if frames.last() != Some(&last) {
            frames.push(last);
        }
        let mut out = create(path)?;
        out.write_all(svg::trajectory_svg(&t, &frames)?.as_bytes())?;
        out.flush()?;
    }

    println!(
        "{:?} after {} steps: loss {:.6e} -> {:.6e}",
        traj.terminal,
        traj.steps,
        traj.initial_loss(),
        traj.final_loss
    );
    Ok(match traj.terminal {
        Terminal::TargetReached => ExitCode::SUCCESS,
        Terminal::StepCap => ExitCode::from(2),
        Terminal::Divergence => ExitCode::from(3),
    })
}

fn cmd_verify(
    suite: &str,
    report: &Path,
    seed: Option<u64>,
    config: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let suite: Suite = suite.parse()?;
    let mut cfg: VerifierConfig = match config {
        Some(path) => load_json(path)?,
        None => VerifierConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let result = run_suite(suite, &cfg);
    for check in &result.checks {
        println!("{check}");
    }
    let mut out = create(report)?;
    serde_json::to_writer_pretty(&mut out, &result)?;
    out.write_all(b"\n")?;
    out.flush()?;
    println!(
        "{} checks: {} passed, {} failed, {} inconclusive",
        result.checks.len(),
        result.checks.iter().filter(|c| c.passed()).count(),
        result.failures(),
        result.inconclusive()
    );
    Ok(if result.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_init(algo: Algo, m: usize, config: &Path, out: &Path, seed: u64, n: u64) -> anyhow::Result<ExitCode> {
    let cfg = ExperimentConfig::load(config)?;
    let t = cfg.teacher().context("building teacher")?;
    let init = match algo {
        Algo::Random => random_init(&t, m, seed, GramMode::Exact)?,
        Algo::Subspace => {
            subspace_init(&t, m, cfg.r, n, seed, MomentEstimator::default(), GramMode::Exact)?.init
        }
    };
    let mut w = create(out)?;
    io::write_student(&init.student, &mut w)?;
    w.flush()?;
    let live = init.student.neurons().iter().filter(|w| w.norm() > 0.0).count();
    println!(
        "{m} neurons ({live} nonzero), loss {:.6e}",
        population_loss(&t, &init.student)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_kernel(u: &[f64], v: &[f64], samples: Option<u64>, seed: u64) -> anyhow::Result<ExitCode> {
    if u.len() != v.len() {
        bail!("dimension mismatch: u has {} entries, v has {}", u.len(), v.len());
    }
    if u.is_empty() {
        bail!("vectors must be non-empty");
    }
    let d = u.len();
    let summary = summarize(u, v)?;
    let cov = SignCov::new(u, v).ok();
    let mut rows: Vec<(String, f64)> = vec![("K".into(), summary.expectation)];
    if let Some(g) = &summary.gradient {
        rows.extend(g.iter().enumerate().map(|(i, x)| (format!("G[{i}]"), *x)));
    }
    if let Some(c) = &cov {
        rows.push(("tr Scov".into(), c.trace()));
        rows.push(("uᵀ Scov v".into(), c.bilinear(u, v)));
    }
    if let Some(p) = summary.mismatch_probability {
        rows.push(("P(sgn mismatch)".into(), p));
    }

    let sampled = match samples {
        Some(n) => {
            let sgn = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
            let width = rows.len();
            let has_grad = summary.gradient.is_some();
            let est = mc::estimate_vector(
                |x, out| {
                    let (pu, pv) = (dot(u, x), dot(v, x));
                    let mut k = 0;
                    out[k] = pu.abs() * pv.abs();
                    k += 1;
                    if has_grad {
                        for xi in x {
                            out[k] = sgn(pu) * pv.abs() * xi;
                            k += 1;
                        }
                    }
                    if cov.is_some() {
                        let s = sgn(pu) * sgn(pv);
                        out[k] = s * dot(x, x);
                        out[k + 1] = s * pu * pv;
                        k += 2;
                    }
                    if k < out.len() {
                        out[k] = if sgn(pu) != sgn(pv) { 1.0 } else { 0.0 };
                    }
                },
                width,
                d,
                n,
                seed,
            )?;
            Some(est)
        }
        None => None,
    };

    match &sampled {
        None => {
            println!("{:<18} {:>16}", "quantity", "closed_form");
            for (name, value) in &rows {
                println!("{name:<18} {value:>16.6}");
            }
        }
        Some(est) => {
            println!(
                "{:<18} {:>16} {:>16} {:>12} {:>8}",
                "quantity", "closed_form", "mc", "std_err", "z"
            );
            for ((name, value), e) in rows.iter().zip(est) {
                println!(
                    "{name:<18} {value:>16.6} {:>16.6} {:>12.3e} {:>8.2}",
                    e.mean,
                    e.std_err,
                    e.z_score(*value)
                );
            }
        }
    }
    if let Some(c) = &cov {
        if d <= 4 {
            println!("Scov =");
            let m = c.to_matrix();
            for i in 0..d {
                let row: Vec<String> = (0..d).map(|j| format!("{:>10.6}", m[(i, j)])).collect();
                println!("  [{}]", row.join(" "));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
