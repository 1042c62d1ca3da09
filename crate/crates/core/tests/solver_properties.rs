use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use robustfit::kernel::{BaselineKernel, Kernel, KernelParams};
use robustfit::partition::{grid_range, GridSpec};
use robustfit::registration::{generate_synthetic, Pose, SyntheticConfig};
use robustfit::solver::{
    gnc_geman_solve, irls_solve, irls_step, lsq_solve, rko_solve, srko_solve, Damping,
    GncSchedule, LinearProblem, SolverConfig,
};

/// Line fit `y = 0.5 + 2 t` with Gaussian noise and a share of gross outliers.
fn regression(n: usize, sigma: f64, outliers: f64, seed: u64) -> LinearProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut a = DMatrix::zeros(n, 2);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        let t = rng.random_range(-1.0..1.0);
        a[(i, 0)] = 1.0;
        a[(i, 1)] = t;
        b[i] = 0.5 + 2.0 * t + noise.sample(&mut rng);
        if rng.random_bool(outliers) {
            b[i] += rng.random_range(-20.0..20.0);
        }
    }
    LinearProblem { a, b }
}

fn config(alpha: Vec<f64>, c: Vec<f64>, tau: f64) -> SolverConfig {
    SolverConfig {
        grid: GridSpec::new(alpha, c).unwrap(),
        tau,
        ..Default::default()
    }
}

fn paper_alpha() -> Vec<f64> {
    grid_range(-4.0, 0.25, 2.0).unwrap()
}

fn max_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn pose_diff(a: &Pose, b: &Pose) -> f64 {
    (a.rotation - b.rotation).amax().max((a.translation - b.translation).amax())
}

#[test]
fn quadratic_update_ignores_scale() {
    let problem = regression(50, 0.3, 0.2, 1);
    let theta = DVector::from_vec(vec![3.0, -1.0]);
    let r = &problem.a * &theta - &problem.b;
    let steps: Vec<DVector<f64>> = [0.05, 0.3, 1.0, 2.0]
        .iter()
        .map(|&c| {
            let k = KernelParams::new(2.0, c, 10.0).unwrap();
            let w: Vec<f64> = r.iter().map(|&x| k.weight(x)).collect();
            irls_step(&problem, &theta, &w, 0.0).unwrap().delta
        })
        .collect();
    for s in &steps[1..] {
        assert!(max_diff(s, &steps[0]) < 1e-10);
    }
}

#[test]
fn scale_equivalence_of_parameter_traces() {
    let problem = regression(200, 0.05, 0.3, 2);
    let theta0 = DVector::from_vec(vec![0.0, 0.0]);
    let c_grid = grid_range(0.25, 0.25, 3.0).unwrap();
    for &s in &[0.5, 0.1, 0.05] {
        let mut scaled = config(paper_alpha(), c_grid.clone(), 10.0);
        scaled.residual_scale = s;
        scaled.damping = Damping::undamped();
        let moved_c: Vec<f64> = c_grid.iter().map(|c| c * s).collect();
        let mut moved = config(paper_alpha(), moved_c, 10.0 * s);
        moved.init_c = s;
        moved.damping = Damping::undamped();
        let t1 = scaled.build_table().unwrap();
        let t2 = moved.build_table().unwrap();
        for k in 1..=8 {
            scaled.max_outer = k;
            moved.max_outer = k;
            let a = srko_solve(&problem, theta0.clone(), &scaled, &t1).unwrap();
            let b = srko_solve(&problem, theta0.clone(), &moved, &t2).unwrap();
            assert!(max_diff(&a.theta, &b.theta) < 1e-10, "s={s} k={k}");
            assert_eq!(a.iterations, b.iterations);
            for (ea, eb) in a.trace.iter().zip(&b.trace) {
                let (pa, pb) = (ea.kernel.params().unwrap(), eb.kernel.params().unwrap());
                assert_eq!(pa.alpha(), pb.alpha());
                assert!((pa.c() * s - pb.c()).abs() < 1e-12);
            }
        }
        // Fixed kernels: weights differ by s^2 only.
        let kernel = KernelParams::new(-1.0, 0.5, 10.0).unwrap();
        let moved_kernel = KernelParams::new(-1.0, 0.5 * s, 10.0).unwrap();
        scaled.max_outer = 20;
        let mut unit = scaled.clone();
        unit.residual_scale = 1.0;
        let a = irls_solve(&problem, theta0.clone(), kernel.into(), &scaled).unwrap();
        let b = irls_solve(&problem, theta0.clone(), moved_kernel.into(), &unit).unwrap();
        assert!(max_diff(&a.theta, &b.theta) < 1e-10);
        for (ea, eb) in a.trace.iter().zip(&b.trace) {
            assert!((ea.step_norm - eb.step_norm).abs() < 1e-10);
        }
    }
}

#[test]
fn single_scale_srko_is_rko() {
    let problem = regression(300, 0.1, 0.25, 3);
    let cfg = config(paper_alpha(), vec![1.0], 10.0);
    let table = cfg.build_table().unwrap();
    let theta0 = DVector::zeros(2);
    let a = rko_solve(&problem, theta0.clone(), &cfg, &table).unwrap();
    let b = srko_solve(&problem, theta0, &cfg, &table).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn pinned_quadratic_shape_is_least_squares() {
    let instance = generate_synthetic(&SyntheticConfig {
        n_points: 300,
        outlier_fraction: 0.3,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let problem = instance.problem().unwrap();
    let base = SolverConfig::default();
    let lsq = lsq_solve(&problem, Pose::identity(), &base).unwrap();
    for c_grid in [vec![1.0], grid_range(1.0, 0.25, 3.0).unwrap(), grid_range(0.05, 0.05, 2.0).unwrap()] {
        let cfg = config(vec![2.0], c_grid, 10.0);
        let table = cfg.build_table().unwrap();
        let s = srko_solve(&problem, Pose::identity(), &cfg, &table).unwrap();
        assert!(pose_diff(&s.theta, &lsq.theta) < 1e-8);
    }
}

#[test]
fn identical_runs_give_identical_traces() {
    let problem = regression(400, 0.05, 0.4, 5);
    let cfg = SolverConfig::default();
    let table = cfg.build_table().unwrap();
    let a = srko_solve(&problem, DVector::zeros(2), &cfg, &table).unwrap();
    let b = srko_solve(&problem, DVector::zeros(2), &cfg, &table).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.trace, b.trace);
    let g1 = gnc_geman_solve(&problem, DVector::zeros(2), &cfg).unwrap();
    let g2 = gnc_geman_solve(&problem, DVector::zeros(2), &cfg).unwrap();
    assert_eq!(g1.trace, g2.trace);
}

#[test]
fn fixed_point_stops_after_one_iteration() {
    let problem = regression(100, 0.1, 0.0, 6);
    let cfg = config(vec![2.0], vec![1.0], 10.0);
    let table = cfg.build_table().unwrap();
    let exact = problem
        .a
        .clone()
        .svd(true, true)
        .solve(&problem.b, 1e-14)
        .unwrap();
    let s = srko_solve(&problem, exact.clone(), &cfg, &table).unwrap();
    assert!(s.converged);
    assert_eq!(s.iterations, 1);
    let r = irls_solve(&problem, exact, KernelParams::new(2.0, 1.0, 10.0).unwrap().into(), &cfg).unwrap();
    assert_eq!(r.iterations, 1);
}

#[test]
fn robust_cost_never_increases_at_fixed_kernel() {
    let instance = generate_synthetic(&SyntheticConfig {
        n_points: 300,
        outlier_fraction: 0.4,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let problem = instance.problem().unwrap();
    let cfg = SolverConfig::default();
    let kernels: [Kernel; 3] = [
        KernelParams::new(-2.0, 0.1, 10.0).unwrap().into(),
        KernelParams::new(0.0, 0.05, 10.0).unwrap().into(),
        BaselineKernel::geman_mcclure(0.01).unwrap().into(),
    ];
    for kernel in kernels {
        let sol = irls_solve(&problem, Pose::identity(), kernel, &cfg).unwrap();
        let initial: f64 = problem_cost(&problem, &Pose::identity(), &kernel);
        let mut last = initial;
        for e in &sol.trace {
            assert!(e.cost <= last + 1e-12 * last.abs());
            last = e.cost;
        }
    }
}

fn problem_cost(
    problem: &robustfit::registration::RegistrationProblem<'_>,
    pose: &Pose,
    kernel: &Kernel,
) -> f64 {
    problem.linearize(pose).distances.iter().map(|&x| kernel.rho(x)).sum()
}

#[test]
fn gnc_records_initial_scale() {
    let problem = regression(100, 0.1, 0.3, 8);
    let cfg = SolverConfig {
        gnc: GncSchedule {
            mu0: 20.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let sol = gnc_geman_solve(&problem, DVector::zeros(2), &cfg).unwrap();
    assert_eq!(sol.initial_kernel.mu(), Some(20.0));
    assert_eq!(sol.trace[0].kernel.mu(), Some(20.0));
    let mus: Vec<f64> = sol.trace.iter().map(|e| e.kernel.mu().unwrap()).collect();
    assert!(mus.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn degenerate_schedule_is_fixed_geman_mcclure() {
    let problem = regression(150, 0.1, 0.3, 9);
    let mu = 0.04;
    let cfg = SolverConfig {
        gnc: GncSchedule {
            mu0: mu,
            mu_min: mu,
            ..Default::default()
        },
        ..Default::default()
    };
    let gnc = gnc_geman_solve(&problem, DVector::zeros(2), &cfg).unwrap();
    let fixed = irls_solve(
        &problem,
        DVector::zeros(2),
        BaselineKernel::geman_mcclure(mu).unwrap().into(),
        &cfg,
    )
    .unwrap();
    assert_eq!(gnc.theta, fixed.theta);
    assert_eq!(gnc.trace, fixed.trace);
}

#[test]
fn rko_keeps_quadratic_shape_on_gaussian_noise() {
    let problem = regression(5000, 1.0, 0.0, 10);
    let cfg = config(paper_alpha(), vec![1.0], 10.0);
    let table = cfg.build_table().unwrap();
    let start = DVector::from_vec(vec![0.5, 2.0]);
    let sol = rko_solve(&problem, start, &cfg, &table).unwrap();
    assert!(sol.converged);
    let alphas: Vec<f64> = sol.trace.iter().map(|e| e.kernel.params().unwrap().alpha()).collect();
    assert!(alphas.iter().all(|&a| a == 2.0), "{alphas:?}");
}

#[test]
fn srko_downweights_gross_outliers() {
    let problem = regression(500, 0.05, 0.3, 11);
    let cfg = SolverConfig::default();
    let table = cfg.build_table().unwrap();
    let sol = srko_solve(&problem, DVector::zeros(2), &cfg, &table).unwrap();
    let lsq = lsq_solve(&problem, DVector::zeros(2), &cfg).unwrap();
    let truth = DVector::from_vec(vec![0.5, 2.0]);
    assert!(max_diff(&sol.theta, &truth) < 0.05, "{}", sol.theta);
    assert!(max_diff(&lsq.theta, &truth) > max_diff(&sol.theta, &truth));
    assert!(sol.final_kernel().params().unwrap().alpha() < 2.0);
}

#[test]
fn off_grid_initialization_is_rejected() {
    let problem = regression(10, 0.1, 0.0, 12);
    let cfg = SolverConfig {
        init_c: 1.01,
        ..Default::default()
    };
    let table = SolverConfig::default().build_table().unwrap();
    assert!(srko_solve(&problem, DVector::zeros(2), &cfg, &table).is_err());
}
