//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

use std::f64::consts::FRAC_PI_4;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use ggd_core::experiment::{
    angle_grid, linear_fit, log_grid, phase_sweep, stability_grid, success_rates, PhaseConfig, StabilityGrid,
};
use ggd_core::linalg::{gaussian_matrix, max_abs, random_orthogonal};
use ggd_core::{
    add_noise, alignment, alignment_global_bound, energy, geodesic_subderivative, grass_gradient, haystack,
    pca_init_condition, pca_subspace, random_subspace, run_ggd_tracked, seeded_rng, snr_threshold,
    special_geodesic_derivative, subspace_at_angle, theta1, Dataset, Geodesic, GgdConfig, GgdTrace,
    HaystackParams, Init, SnrRegime, StepSchedule, Subspace,
};

const SEEDS: u64 = 20;
const TOL_ACTIVE: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn recovery_params() -> HaystackParams {
    HaystackParams { n_in: 200, n_out: 200, sigma_in: 1.0, sigma_out: 1.0, ambient: 100, d: 5 }
}

fn recovery_data(seed: u64) -> Dataset {
    haystack(&recovery_params(), &mut seeded_rng(seed)).expect("haystack sample")
}

fn run(ds: &Dataset, schedule: StepSchedule, max_iters: usize) -> (Subspace, GgdTrace, Duration) {
    let cfg = GgdConfig { schedule, max_iters, init: Init::Pca, ..GgdConfig::for_ambient(ds.ambient_dim()) };
    let start = Instant::now();
    let (out, trace) =
        run_ggd_tracked(&ds.points(), 5, &cfg, ds.ground_truth(), &mut seeded_rng(0)).expect("ggd run");
    (out, trace, start.elapsed())
}

fn theta_at(trace: &GgdTrace, k: usize) -> f64 {
    trace.records.iter().find(|r| r.k == k).and_then(|r| r.theta_truth).expect("theta at k")
}

struct PiecewiseRun {
    final_theta: f64,
    trace: GgdTrace,
    elapsed: Duration,
}

fn piecewise_runs() -> Vec<PiecewiseRun> {
    (0..SEEDS)
        .map(|seed| {
            let ds = recovery_data(seed);
            let (out, trace, elapsed) = run(&ds, StepSchedule::piecewise(0.01), 400);
            let final_theta = theta1(&out, ds.ground_truth().unwrap()).unwrap();
            PiecewiseRun { final_theta, trace, elapsed }
        })
        .collect()
}

fn criterion_1(runs: &[PiecewiseRun]) -> Outcome {
    let ok = runs.iter().filter(|r| r.final_theta <= 1e-6).count();
    let worst = runs.iter().map(|r| r.final_theta).fold(0.0, f64::max);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    outcome(
        ok >= 18 && slowest < Duration::from_secs(30),
        format!("{ok}/{SEEDS} seeds reach theta <= 1e-6 within 400 iterations (worst {worst:.2e}); slowest run {slowest:.2?}"),
    )
}

fn criterion_2(runs: &[PiecewiseRun]) -> Outcome {
    let mut worst_r2 = f64::INFINITY;
    let mut worst_slope = f64::NEG_INFINITY;
    for r in runs {
        let start = theta_at(&r.trace, 1);
        let (ks, ys): (Vec<f64>, Vec<f64>) = r
            .trace
            .records
            .iter()
            .filter_map(|rec| rec.theta_truth.map(|t| (rec.k, t)))
            .filter(|&(_, t)| (1e-6..=start).contains(&t))
            .map(|(k, t)| (k as f64, t.log10()))
            .unzip();
        let (slope, _, r2) = linear_fit(&ks, &ys);
        worst_r2 = worst_r2.min(r2);
        worst_slope = worst_slope.max(slope);
    }
    outcome(
        worst_slope < 0.0 && worst_r2 >= 0.9,
        format!("log10 theta vs k over all {SEEDS} runs: largest slope {worst_slope:.3e}, smallest R^2 {worst_r2:.4}"),
    )
}

fn criterion_3(runs: &[PiecewiseRun]) -> Outcome {
    let mut failures = Vec::new();
    let mut worst_final: f64 = 0.0;
    for (seed, pw) in runs.iter().enumerate() {
        let ds = recovery_data(seed as u64);
        let (_, trace, _) = run(&ds, StepSchedule::sqrt(0.01), 2000);
        let first = theta_at(&trace, 1);
        let last = theta_at(&trace, 2000);
        let matched = pw.trace.last().k;
        let slower = theta_at(&trace, matched) > theta_at(&pw.trace, matched);
        worst_final = worst_final.max(last);
        if !(last < first && last < 0.1 && slower) {
            failures.push(seed);
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "sqrt schedule: largest theta at k=2000 is {worst_final:.3e}; seeds failing decrease/behind-piecewise checks: {failures:?}"
        ),
    )
}

fn stability_grids() -> Vec<(Dataset, StabilityGrid, Duration)> {
    let p = HaystackParams { n_in: 200, n_out: 200, sigma_in: 1.0, sigma_out: 1.0, ambient: 200, d: 10 };
    (0..SEEDS)
        .map(|seed| {
            let start = Instant::now();
            let ds = haystack(&p, &mut seeded_rng(seed)).unwrap();
            let grid = stability_grid(&ds, FRAC_PI_4, &angle_grid(FRAC_PI_4, 10), 20, seed).unwrap();
            (ds, grid, start.elapsed())
        })
        .collect()
}

fn criterion_4(grids: &[(Dataset, StabilityGrid, Duration)]) -> Outcome {
    let positive = grids.iter().filter(|(_, g, _)| g.rows.len() == 200 && g.min_value() > 0.0).count();
    let lowest = grids.iter().map(|(_, g, _)| g.min_value()).fold(f64::INFINITY, f64::min);
    let slowest = grids.iter().map(|(_, _, t)| *t).max().unwrap();
    outcome(
        positive >= 19 && slowest < Duration::from_secs(60),
        format!("{positive}/{SEEDS} seeds positive on all 10x20 grid points (lowest {lowest:.4}); slowest seed {slowest:.2?}"),
    )
}

fn criterion_5(grids: &[(Dataset, StabilityGrid, Duration)]) -> Outcome {
    let mut checked = 0;
    let mut violations = 0;
    let mut tightest = f64::NEG_INFINITY;
    for (ds, grid, _) in grids {
        let margin = grid.report.s_sampled;
        if margin <= 0.0 {
            continue;
        }
        let l_star = ds.ground_truth().unwrap();
        let x = ds.points();
        for l in &grid.subspaces {
            let deriv = special_geodesic_derivative(l, l_star, &x, TOL_ACTIVE).unwrap();
            tightest = tightest.max(deriv + margin);
            checked += 1;
            if deriv > -margin + 1e-8 {
                violations += 1;
            }
        }
    }
    outcome(
        checked > 0 && violations == 0,
        format!("{checked} sampled subspaces, {violations} with derivative above -margin (max derivative + margin {tightest:.4})"),
    )
}

fn criterion_6() -> Outcome {
    let mut held = 0;
    let mut recovered = 0;
    let mut seed = 10_000;
    let mut worst: f64 = 0.0;
    let mut min_lhs = f64::INFINITY;
    while held < 100 && seed < 20_000 {
        let n_in = seeded_rng(seed).random_range(5..=200);
        let p = HaystackParams { n_in, ..recovery_params() };
        let ds = haystack(&p, &mut seeded_rng(seed)).unwrap();
        seed += 1;
        let (lhs, holds) = pca_init_condition(&ds, FRAC_PI_4).unwrap();
        if !holds {
            continue;
        }
        min_lhs = min_lhs.min(lhs);
        held += 1;
        let theta = theta1(&pca_subspace(&ds.points(), 5).unwrap(), ds.ground_truth().unwrap()).unwrap();
        worst = worst.max(theta);
        if theta < FRAC_PI_4 {
            recovered += 1;
        }
    }
    outcome(
        held == 100 && recovered == 100,
        format!(
            "{recovered}/{held} draws with the condition have theta(PCA, truth) < pi/4 (largest {worst:.4}, smallest condition margin {min_lhs:.3}, {} draws tried)",
            seed - 10_000
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = seeded_rng(777);
    let mut parts = Vec::new();
    let mut pass = true;

    let mut worst_fd: f64 = 0.0;
    for _ in 0..200 {
        let dd = rng.random_range(3..=15);
        let d = rng.random_range(1..=dd - 1);
        let n = rng.random_range(5..=40);
        let l0 = random_subspace(dd, d, &mut rng).unwrap();
        let gamma = 0.1 + 1.2 * rng.random::<f64>();
        let l1 = subspace_at_angle(&l0, gamma, &mut rng).unwrap();
        let x = gaussian_matrix(dd, n, &mut rng);
        let g = Geodesic::between(&l0, &l1).unwrap();
        let h = 1e-5;
        let f = |t: f64| energy(&g.at(t).unwrap(), &x).unwrap().value;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let exact = geodesic_subderivative(&l0, &l1, &x, TOL_ACTIVE).unwrap();
        worst_fd = worst_fd.max((exact - fd).abs() / exact.abs().max(fd.abs()));
    }
    pass &= worst_fd <= 1e-4;
    parts.push(format!("(a) finite differences rel err {worst_fd:.2e}"));

    let mut worst_tangent: f64 = 0.0;
    for _ in 0..200 {
        let dd = rng.random_range(2..=30);
        let d = rng.random_range(1..=dd - 1);
        let v = random_subspace(dd, d, &mut rng).unwrap();
        let x = gaussian_matrix(dd, rng.random_range(1..=60), &mut rng);
        let grad = grass_gradient(&v, &x, TOL_ACTIVE).unwrap();
        worst_tangent = worst_tangent.max(max_abs(&(v.basis().transpose() * grad)));
    }
    pass &= worst_tangent <= 1e-10;
    parts.push(format!("(b) tangency {worst_tangent:.2e}"));

    let mut worst_basis: f64 = 0.0;
    let mut worst_bound = f64::NEG_INFINITY;
    for _ in 0..100 {
        let dd = rng.random_range(2..=30);
        let d = rng.random_range(1..=dd - 1);
        let l = random_subspace(dd, d, &mut rng).unwrap();
        let x = gaussian_matrix(dd, rng.random_range(1..=60), &mut rng);
        let rotated = l.with_rotated_basis(&random_orthogonal(d, &mut rng)).unwrap();
        let a = alignment(&x, &l, TOL_ACTIVE).unwrap();
        let b = alignment(&x, &rotated, TOL_ACTIVE).unwrap();
        worst_basis = worst_basis.max((a - b).abs());
        worst_bound = worst_bound.max(a - alignment_global_bound(&x));
    }
    pass &= worst_basis <= 1e-10 && worst_bound <= 0.0;
    parts.push(format!("(c) basis invariance {worst_basis:.2e}"));

    let mut worst_geo: f64 = 0.0;
    for _ in 0..100 {
        let dd = rng.random_range(2..=30);
        let d = rng.random_range(1..=dd - 1);
        let l0 = random_subspace(dd, d, &mut rng).unwrap();
        let l1 = subspace_at_angle(&l0, 0.05 + 1.4 * rng.random::<f64>(), &mut rng).unwrap();
        let g = Geodesic::between(&l0, &l1).unwrap();
        let total = theta1(&l0, &l1).unwrap();
        let t = rng.random::<f64>();
        let mid = g.at(t).unwrap();
        let errs = [
            theta1(&g.at(0.0).unwrap(), &l0).unwrap(),
            theta1(&g.at(1.0).unwrap(), &l1).unwrap(),
            (theta1(&l0, &mid).unwrap() - t * total).abs(),
            (theta1(&mid, &l1).unwrap() - (1.0 - t) * total).abs(),
        ];
        worst_geo = errs.iter().copied().fold(worst_geo, f64::max);
    }
    pass &= worst_geo <= 1e-8;
    parts.push(format!("(d) geodesic endpoints/arclength {worst_geo:.2e}"));
    parts.push(format!("(e) alignment minus global bound at most {worst_bound:.3e}"));

    outcome(pass, parts.join("; "))
}

fn criterion_8() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for eps in [1e-3, 1e-2] {
        let mut ok = 0;
        let mut worst: f64 = 0.0;
        for seed in 0..SEEDS {
            let clean = recovery_data(seed);
            let noisy = add_noise(&clean, eps, &mut seeded_rng(1_000 + seed)).unwrap();
            let (out, _, _) = run(&noisy, StepSchedule::piecewise(0.01), 10_000);
            let theta = theta1(&out, noisy.ground_truth().unwrap()).unwrap();
            worst = worst.max(theta);
            if theta <= 5.0 * eps {
                ok += 1;
            }
        }
        pass &= ok >= 18;
        parts.push(format!("eps={eps:.0e}: {ok}/{SEEDS} within 5 eps (worst {worst:.2e})"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9() -> Outcome {
    let cfg = PhaseConfig::default_sweep(2024);
    let rows = phase_sweep(&cfg).unwrap();
    let rates = success_rates(&rows);
    let monotone = rates.windows(2).all(|w| w[0].1 <= w[1].1);
    let threshold = snr_threshold(SnrRegime::SmallSample, 1.0, 1.0, 100, 5).unwrap();
    let in_sweep_above = rates.iter().filter(|(s, _)| *s >= 2.0 * threshold).all(|(_, r)| *r == 1.0);

    let high = PhaseConfig { snrs: vec![2.0 * threshold], ..PhaseConfig::default_sweep(4048) };
    let high_rates = success_rates(&phase_sweep(&high).unwrap());
    let high_ok = high_rates.iter().all(|(_, r)| *r == 1.0);

    let shown: Vec<String> = rates.iter().map(|(s, r)| format!("{s:.3}:{r:.2}")).collect();
    outcome(
        monotone && in_sweep_above && high_ok && cfg.snrs == log_grid(0.05, 8.0, 8),
        format!(
            "rates [{}] monotone={monotone}; at 2x threshold (snr {:.3}) rate {:.2} over {} seeds",
            shown.join(" "),
            2.0 * threshold,
            high_rates[0].1,
            high.trials
        ),
    )
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut report = |id: usize, name: &str, o: Outcome| {
        all_pass &= o.pass;
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };

    let runs = piecewise_runs();
    report(1, "piecewise schedule recovery", criterion_1(&runs));
    report(2, "linear convergence shape", criterion_2(&runs));
    report(3, "sublinear schedule", criterion_3(&runs));
    let grids = stability_grids();
    report(4, "stability grid positivity", criterion_4(&grids));
    report(5, "special geodesic derivative bound", criterion_5(&grids));
    report(6, "pca initialization condition", criterion_6());
    report(7, "numerical oracles", criterion_7());
    report(8, "noise degradation", criterion_8());
    report(9, "phase monotonicity", criterion_9());

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
