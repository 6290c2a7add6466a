use tslab::empirical::{empirical_gradient, sample_dataset};
use tslab::init::{
    moment_matrix_streamed, perturbed_teacher_init, population_moment, random_init, GramMode,
    MomentEstimator,
};
use tslab::linalg::{dot, Matrix};
use tslab::mc;
use tslab::population::{population_gradient, population_loss, residual_at, residual_stats};
use tslab::rng::{derive_seed, normal_vec, seeded};
use tslab::train::{gd_step, train_observed, Mode, StepSize, Terminal, TrainConfig};
use tslab::verify::states::{desk_teacher, low_loss_cases};
use tslab::verify::{fit_slope, median, run_suite, Suite, VerifierConfig};
use tslab::{partition_students, RandomTeacherSpec, StudentNetwork, TeacherNetwork, WeightVector};

fn random_network(d: usize, k: usize, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut g = seeded(seed);
    (0..k)
        .map(|_| normal_vec(&mut g, d).into_iter().map(|x| scale * x).collect())
        .collect()
}

fn random_state(k: u64) -> (TeacherNetwork, StudentNetwork) {
    let d = [2, 5, 20][(k % 3) as usize];
    let r = 1 + (k as usize % 3);
    let m = 1 + (k as usize * 5) % 9;
    let t = TeacherNetwork::from_rows(random_network(d, r, 1.0 / (d as f64).sqrt(), derive_seed(7, k))).unwrap();
    let s = StudentNetwork::from_rows(random_network(d, m, 0.6 / (d as f64).sqrt(), derive_seed(8, k))).unwrap();
    (t, s)
}

#[test]
fn population_loss_matches_sampled_loss() {
    let mut worst = 0.0f64;
    for k in 0..30 {
        let (t, s) = random_state(k);
        let p = partition_students(&t, &s).unwrap();
        let stats = residual_stats(&t, &s, &p).unwrap();
        let est = mc::estimate_vector(
            |x, out| {
                let (r, r1, r2) = residual_at(&t, &s, &p, &stats, x);
                out[0] = 0.5 * r * r;
                out[1] = r1 * r1;
                out[2] = r2 * r2;
                out[3] = r1 * r2;
            },
            4,
            t.dim(),
            1_000_000,
            derive_seed(9, k),
        )
        .unwrap();
        let exact = [stats.loss, stats.r1_norm_sq, stats.r2_norm_sq, stats.cross_term];
        for (e, x) in est.iter().zip(exact) {
            worst = worst.max(e.z_score(x).abs());
        }
        assert!((stats.loss - population_loss(&t, &s)).abs() <= 1e-12 * stats.loss.max(1.0));
    }
    assert!(worst <= 4.0, "largest z-score {worst}");
}

#[test]
fn residual_pieces_obey_their_pointwise_bounds() {
    for k in 0..6 {
        let (t, s) = random_state(k);
        let p = partition_students(&t, &s).unwrap();
        let stats = residual_stats(&t, &s, &p).unwrap();
        let gap_sum: f64 = stats.gaps.iter().map(|v| v.norm()).sum();
        let mut g = seeded(derive_seed(10, k));
        for _ in 0..100_000 / 6 {
            let x = normal_vec(&mut g, t.dim());
            let (r, r1, r2) = residual_at(&t, &s, &p, &stats, &x);
            assert!(r2 >= -1e-10, "R2 = {r2}");
            assert!(r1.abs() / dot(&x, &x).sqrt() <= gap_sum + 1e-10);
            assert!((r - r1 - r2).abs() <= 1e-9 * (1.0 + r.abs()));
        }
    }
}

#[test]
fn empirical_gradient_is_unbiased() {
    let t = desk_teacher(3, 4).unwrap();
    let s = perturbed_teacher_init(&t, 6, 0.3, 5).unwrap();
    let exact = population_gradient(&t, &s);
    let k = 50;
    let per: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let data = sample_dataset(&t, 2000, derive_seed(11, i)).unwrap();
            empirical_gradient(&s, &data)
                .unwrap()
                .iter()
                .flat_map(|w| w.to_vec())
                .collect()
        })
        .collect();
    let flat: Vec<f64> = exact.iter().flat_map(|w| w.to_vec()).collect();
    for (c, target) in flat.iter().enumerate() {
        let xs: Vec<f64> = per.iter().map(|g| g[c]).collect();
        let mean = xs.iter().sum::<f64>() / k as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let se = (var / k as f64).sqrt();
        assert!((mean - target).abs() <= 4.0 * se + 1e-12, "component {c}: {mean} vs {target} (se {se})");
    }
}

#[test]
fn gradient_descent_is_monotone_and_rate_bounded() {
    let t = desk_teacher(2, 3).unwrap();
    let s0 = perturbed_teacher_init(&t, 20, 0.05, 4).unwrap();
    let cfg = TrainConfig {
        eta: StepSize::Auto { c: 0.1 },
        max_steps: 200_000,
        target_loss: 1e-7,
        mode: Mode::Gd,
        seed: 0,
        record_every: 0,
    };
    let mut kappa = f64::INFINITY;
    let mut t_loss = 0.0f64;
    let traj = train_observed(&t, &s0, &cfg, |info| {
        if info.loss > 0.0 {
            kappa = kappa.min(info.grad_norm / info.loss);
        }
        t_loss = t_loss.max(info.step as f64 * info.loss);
    })
    .unwrap();
    assert_eq!(traj.terminal, Terminal::TargetReached);
    assert!(traj.max_increase <= 1e-12);
    assert_eq!(traj.sup_t_loss, t_loss);
    assert!(t_loss <= 8.0 / (traj.eta * kappa * kappa), "{t_loss} vs {}", 8.0 / (traj.eta * kappa * kappa));
}

#[test]
fn one_small_step_decreases_low_loss_states() {
    let cases = low_loss_cases(2, 6).unwrap();
    assert!(cases.len() >= 20);
    for c in cases.iter().take(20) {
        let eta = 1e-3 / (c.teacher.r() as f64 * c.teacher.w_max());
        let next = gd_step(&c.teacher, &c.student, eta).unwrap();
        assert!(population_loss(&c.teacher, &next) < c.loss(), "{}", c.label);
    }
}

#[test]
fn refit_never_increases_the_loss_and_reports_it_exactly() {
    let t = desk_teacher(2, 1).unwrap();
    let teacher_half: f64 = population_loss(&t, &StudentNetwork::zeros(2, 1));
    for seed in 0..5 {
        let init = random_init(&t, 30, seed, GramMode::Exact).unwrap();
        assert!(init.nnls.objective <= 0.0);
        let loss = population_loss(&t, &init.student);
        assert!(loss <= teacher_half);
        assert!((init.residual_loss - loss).abs() <= 1e-10);
    }
}

#[test]
fn random_init_improves_with_width() {
    let t = desk_teacher(2, 6).unwrap();
    let losses = |m: usize| -> Vec<f64> {
        (0..20)
            .map(|k| population_loss(&t, &random_init(&t, m, derive_seed(12, k), GramMode::Exact).unwrap().student))
            .collect()
    };
    assert!(median(&losses(40)) <= median(&losses(10)));
}

#[test]
fn moment_error_shrinks_at_root_n() {
    let spec = RandomTeacherSpec {
        delta_min: 0.5,
        w_min: 0.5,
        w_max: 1.5,
    };
    let t = TeacherNetwork::random(6, 3, spec, 2).unwrap();
    let exact = population_moment(&t);
    let ns = [1_000u64, 10_000, 100_000, 1_000_000];
    let errors: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let per: Vec<f64> = (0..3)
                .map(|k| {
                    let m = moment_matrix_streamed(&t, n, derive_seed(n, k), MomentEstimator::Centered).unwrap();
                    let diff = Matrix::from_fn(6, |i, j| m.m_hat[(i, j)] - exact[(i, j)]);
                    let eig = diff.symmetric_eigen().unwrap();
                    eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
                })
                .collect();
            median(&per)
        })
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = fit_slope(&xs, &ys);
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

#[test]
fn generated_teachers_meet_their_separation() {
    for seed in 0..20 {
        let spec = RandomTeacherSpec {
            delta_min: 0.4,
            w_min: 0.5,
            w_max: 2.0,
        };
        let t = TeacherNetwork::random(3, 4, spec, seed).unwrap();
        let sep = t.separation();
        assert!(sep.delta >= 0.4 - 1e-12);
        assert!(sep.w_min >= 0.5 && sep.w_max <= 2.0);
    }
}

#[test]
fn zero_neurons_are_inert() {
    let t = desk_teacher(2, 0).unwrap();
    let mut rows: Vec<Vec<f64>> = t.neurons().iter().map(|w| w.to_vec()).collect();
    rows.push(vec![0.0, 0.0]);
    let s = StudentNetwork::from_rows(rows).unwrap();
    let g = population_gradient(&t, &s);
    assert_eq!(g.last().unwrap(), &WeightVector::zeros(2));
    let p = partition_students(&t, &s).unwrap();
    assert_eq!((p.assignment[3], p.angles[3], p.sign_flips[3]), (0, 0.0, 1.0));
}

#[test]
fn suite_reports_are_deterministic() {
    let cfg = VerifierConfig::quick();
    let a = serde_json::to_string(&run_suite(Suite::Init, &cfg)).unwrap();
    let b = serde_json::to_string(&run_suite(Suite::Init, &cfg)).unwrap();
    assert_eq!(a, b);
}
