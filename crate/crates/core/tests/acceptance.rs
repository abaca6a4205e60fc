//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use funqr::bspline::SplineBasis;
use funqr::estimator::{fit, FitConfig};
use funqr::funcdata::{assemble_system, design_matrix, CurveSample, FunctionalDataset};
use funqr::linalg::symmetric_eigenvalues;
use funqr::quadrature::{uniform_grid, QuadratureRule};
use funqr::simharness::{coverage_experiment, rate_experiment, simulate_dataset, SimConfig};
use funqr::solver::{irls_fit, irls_stage, objective, subgradient_oracle, CheckLoss, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::{empirical_quantile, penalty_oracle, random_matrix, random_vec, rel_diff};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 oracle equivalence", oracle_equivalence),
        ("2 quantile reduction", quantile_reduction),
        ("3 penalty correctness", penalty_correctness),
        ("4 spline approximation rate", approximation_rate),
        ("5 convergence-rate experiment", rate_study),
        ("6 out-of-sample coverage", coverage),
        ("7 invariant suites", invariants),
        ("8 determinism of rates output", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let v = run();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name}: {} [{:.1?}]", v.detail, start.elapsed());
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn oracle_equivalence() -> Verdict {
    let rhos = [0.0, 0.01, 1.0];
    let alphas = [0.1, 0.5, 0.9];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut irls_above = 0;
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let n = rng.random_range(20..=50);
        let q = rng.random_range(1..=3usize);
        let k = rng.random_range(1..=(8 - q));
        let m = rng.random_range(1..=q);
        let basis = SplineBasis::<f64>::new(q, k).unwrap();
        let dim = basis.dim();
        let a = random_matrix(&mut rng, n, dim);
        let truth = random_vec(&mut rng, dim, -1.0, 1.0);
        let y: Vec<f64> = a
            .mul_vec(&truth)
            .unwrap()
            .iter()
            .map(|v| v + rng.random_range(-0.5..0.5))
            .collect();
        let rho = rhos[(inst % 3) as usize];
        let alpha = alphas[((inst / 3) % 3) as usize];
        let g = basis.penalty_matrix(m).unwrap();
        let system = assemble_system(a.clone(), g.clone(), rho).unwrap();
        let loss = CheckLoss::new(alpha).unwrap();

        let (theta, _) = irls_fit(&system, &y, &loss, &SolverConfig::default()).unwrap();
        let f_irls = objective(&theta, &a, &y, rho, &g, &loss).unwrap();
        let oracle = subgradient_oracle(&system, &y, &loss, 1_000_000).unwrap();
        let f_oracle = objective(&oracle, &a, &y, rho, &g, &loss).unwrap();
        worst = worst.max(rel_diff(f_irls, f_oracle));
        if f_irls > f_oracle {
            irls_above += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-5 && elapsed < Duration::from_secs(60),
        format!("max relative gap {worst:.2e} over 20 instances (IRLS above oracle in {irls_above}), {elapsed:.1?}"),
    )
}

fn quantile_reduction() -> Verdict {
    let grid = uniform_grid::<f64>(101);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let y: Vec<f64> = (0..201).map(|_| rng.sample(StandardNormal)).collect();
    let curves = vec![vec![1.0; grid.len()]; y.len()];
    let data = FunctionalDataset::from_curves(grid, curves, y.clone()).unwrap();
    let basis = SplineBasis::new(3, 8).unwrap();
    let a = design_matrix(&data, &basis, QuadratureRule::Trapezoid).unwrap();
    let system = assemble_system(a.clone(), basis.penalty_matrix(2).unwrap(), 1e-10).unwrap();

    let mut worst: f64 = 0.0;
    for alpha in [0.25, 0.5, 0.75] {
        let loss = CheckLoss::new(alpha).unwrap();
        let (theta, _) = irls_fit(&system, &y, &loss, &SolverConfig::default()).unwrap();
        let pred = a.mul_vec(&theta).unwrap()[0];
        worst = worst.max((pred - empirical_quantile(&y, alpha)).abs());
    }
    verdict(worst <= 1e-3, format!("max |prediction - empirical quantile| = {worst:.2e}"))
}

fn penalty_correctness() -> Verdict {
    let mut nullity_ok = true;
    let mut nullities = Vec::new();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (q, m) in [(2, 1), (3, 1), (3, 2), (3, 3)] {
        for k in [4, 16] {
            let basis = SplineBasis::<f64>::new(q, k).unwrap();
            let g = basis.penalty_matrix(m).unwrap();
            let ev = symmetric_eigenvalues(&g).unwrap();
            let top = ev.iter().cloned().fold(0.0, f64::max);
            let nullity = ev.iter().filter(|&&e| e.abs() <= 1e-10 * top).count();
            nullities.push(nullity);
            nullity_ok &= nullity == m;
            for _ in 0..3 {
                let theta = random_vec(&mut rng, basis.dim(), -1.0, 1.0);
                let exact = g.quad_form(&theta).unwrap();
                worst = worst.max(rel_diff(exact, penalty_oracle(q, k, m, &theta, 100_000)));
            }
        }
    }
    verdict(
        nullity_ok && worst <= 1e-6,
        format!("nullities {nullities:?}; max relative error vs 1e5-point oracle {worst:.2e}"),
    )
}

fn approximation_rate() -> Verdict {
    let f = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
    let ks = [4usize, 8, 16, 32];
    let fine = uniform_grid::<f64>(10_001);
    let mut errs = Vec::new();
    for &k in &ks {
        let basis = SplineBasis::new(3, k).unwrap();
        let theta = basis.approximate_function(f).unwrap();
        let sup = fine
            .iter()
            .map(|&t| (basis.eval_spline(&theta, t).unwrap() - f(t)).abs())
            .fold(0.0, f64::max);
        errs.push(sup);
    }
    let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (slope, _) = funqr::simharness::ols_slope(&x, &y);
    verdict(slope <= -3.5, format!("log-log slope {slope:.3}; sup errors {}", sci(&errs)))
}

fn rate_study() -> Verdict {
    let base = SimConfig::default();
    let cfg = FitConfig {
        smoothness: 2,
        ..FitConfig::default()
    };
    let report = rate_experiment(&base, &cfg, &[100, 200, 400, 800], 20).unwrap();
    let errs: Vec<f64> = report.rows.iter().map(|r| r.mean_err_n).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let excluded: usize = report.rows.iter().map(|r| r.nonconverged).sum();
    verdict(
        decreasing && (-1.0..=-0.2).contains(&report.slope_n),
        format!(
            "mean errors {}, slope {:.3} (se {:.3}), {excluded} replications excluded",
            sci(&errs),
            report.slope_n,
            report.slope_se_n
        ),
    )
}

fn coverage() -> Verdict {
    let mut all = true;
    let mut summary = Vec::new();
    for alpha in [0.1, 0.5, 0.9] {
        let mut inside = 0;
        let mut covs = Vec::new();
        for seed in 1..=5u64 {
            let sim = SimConfig {
                n: 1000,
                alpha,
                seed,
                ..SimConfig::default()
            };
            let cfg = FitConfig {
                alpha,
                auto_k_rho: true,
                ..FitConfig::default()
            };
            let report = coverage_experiment(&sim, &cfg, 1000).unwrap();
            if (report.coverage - alpha).abs() <= 0.04 {
                inside += 1;
            }
            covs.push(report.coverage);
        }
        all &= inside >= 4;
        summary.push(format!("alpha {alpha}: {inside}/5 {covs:.3?}"));
    }
    verdict(all, summary.join("; "))
}

fn invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = Vec::new();

    // Partition of unity.
    let mut worst_pu: f64 = 0.0;
    for _ in 0..10_000 {
        let basis = SplineBasis::<f64>::new(rng.random_range(0..=5), rng.random_range(1..=20)).unwrap();
        let sum: f64 = basis.eval(rng.random_range(0.0..=1.0)).unwrap().iter().sum();
        worst_pu = worst_pu.max((sum - 1.0).abs());
    }
    if worst_pu >= 1e-12 {
        failures.push(format!("partition of unity {worst_pu:.1e}"));
    }

    // Convexity of the exact objective.
    let basis = SplineBasis::<f64>::new(3, 5).unwrap();
    let g = basis.penalty_matrix(2).unwrap();
    let a = random_matrix(&mut rng, 40, basis.dim());
    let y = random_vec(&mut rng, 40, -2.0, 2.0);
    let mut convex_ok = true;
    for _ in 0..500 {
        let loss = CheckLoss::new(rng.random_range(0.05..0.95)).unwrap();
        let rho = rng.random_range(0.0..1.0);
        let t1 = random_vec(&mut rng, basis.dim(), -3.0, 3.0);
        let t2 = random_vec(&mut rng, basis.dim(), -3.0, 3.0);
        let lam: f64 = rng.random_range(0.0..=1.0);
        let mix: Vec<f64> = t1.iter().zip(&t2).map(|(u, v)| lam * u + (1.0 - lam) * v).collect();
        let lhs = objective(&mix, &a, &y, rho, &g, &loss).unwrap();
        let rhs = lam * objective(&t1, &a, &y, rho, &g, &loss).unwrap()
            + (1.0 - lam) * objective(&t2, &a, &y, rho, &g, &loss).unwrap();
        convex_ok &= lhs <= rhs + 1e-12;
    }
    if !convex_ok {
        failures.push("convexity".to_string());
    }

    // Smoothed objective never increases within a stage.
    let mut mono_ok = true;
    for rho in [0.0, 0.01, 1.0] {
        let system = assemble_system(a.clone(), g.clone(), rho).unwrap();
        for alpha in [0.1, 0.5, 0.9] {
            let loss = CheckLoss::new(alpha).unwrap();
            let mut theta = vec![0.0; basis.dim()];
            let mut eps = 1.0;
            for _ in 0..6 {
                let stage = irls_stage(&system, &y, &loss, eps, &theta, 100, 1e-10).unwrap();
                mono_ok &= stage
                    .smoothed_trace
                    .windows(2)
                    .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
                theta = stage.theta;
                eps *= 0.1;
            }
        }
    }
    if !mono_ok {
        failures.push("IRLS smoothed monotonicity".to_string());
    }

    // Smallest eigenvalue of the penalized Gram matrix grows with rho.
    let mut lambda_ok = true;
    for _ in 0..20 {
        let a = random_matrix(&mut rng, 30, basis.dim());
        let lams: Vec<f64> = [0.0, 1e-4, 1e-2, 1.0, 100.0]
            .iter()
            .map(|&rho| assemble_system(a.clone(), g.clone(), rho).unwrap().lambda_min())
            .collect();
        lambda_ok &= lams.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[1].abs().max(1.0));
    }
    if !lambda_ok {
        failures.push("lambda_min monotone in rho".to_string());
    }

    // Prediction is affine in the curve at fixed centering.
    let (data, _) = simulate_dataset(&SimConfig {
        n: 100,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    let model = fit(&data, &FitConfig::default()).unwrap();
    let grid = data.grid().to_vec();
    let mean = model.mean_curve().to_vec();
    let mut worst_lin: f64 = 0.0;
    for _ in 0..50 {
        let x1 = random_vec(&mut rng, grid.len(), -2.0, 2.0);
        let x2 = random_vec(&mut rng, grid.len(), -2.0, 2.0);
        let (ca, cb) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let combo: Vec<f64> = (0..grid.len())
            .map(|j| ca * x1[j] + cb * x2[j] - (ca + cb - 1.0) * mean[j])
            .collect();
        let predict = |v: &Vec<f64>| model.predict(&CurveSample::new(grid.clone(), v.clone()).unwrap()).unwrap();
        worst_lin = worst_lin.max((predict(&combo) - (ca * predict(&x1) + cb * predict(&x2))).abs());
    }
    if worst_lin > 1e-10 {
        failures.push(format!("prediction bilinearity {worst_lin:.1e}"));
    }

    let detail = if failures.is_empty() {
        format!("partition of unity max dev {worst_pu:.1e}, bilinearity max dev {worst_lin:.1e}; all suites hold")
    } else {
        format!("violated: {}", failures.join(", "))
    };
    verdict(failures.is_empty(), detail)
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let prefix = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_funqr"))
            .args(["rates", "--p", "2", "--ns", "100,200,400,800", "--reps", "20", "--seed", "7", "--out"])
            .arg(&prefix)
            .output()
            .unwrap()
            .status;
        assert!(status.success(), "rates exited with {status}");
        std::fs::read(prefix.with_extension("csv")).unwrap()
    };
    let first = run("first");
    let second = run("second");
    verdict(
        !first.is_empty() && first == second,
        format!("{} bytes, identical: {}", first.len(), first == second),
    )
}
