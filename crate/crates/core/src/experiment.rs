//! Experiment drivers shared by the command line tool and the acceptance suite: the
//! stability grid over a ball around the ground truth, convergence traces for the
//! step-size rules, and the SNR phase sweep.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{snr_threshold, Dataset, DatasetMeta, SnrRegime};
use crate::energy::DEFAULT_TOL_ACTIVE;
use crate::error::{Result, RsrError};
use crate::ggd::{pca_subspace, run_ggd_tracked, GgdConfig, GgdTrace, Init, StepSchedule, StopReason};
use crate::grassmann::{random_subspace, subspace_at_angle, theta1, Subspace};
use crate::linalg::gaussian_matrix;
use crate::stability::{alignment, permeance, sample_rng, stability_with_samples, StabilityReport};

/// One evaluation of `cos(gamma) P - A(X_out, L)` at a sampled subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub angle: f64,
    pub sample_index: usize,
    pub simstab_value: f64,
}

#[derive(Clone, Debug)]
pub struct StabilityGrid {
    pub rows: Vec<GridRow>,
    /// Sampled subspaces, in the same order as `rows`.
    pub subspaces: Vec<Subspace>,
    /// Report with the sup estimated over every grid subspace.
    pub report: StabilityReport,
}

pub const GRID_HEADER: &str = "angle,sample_index,simstab_value";

impl StabilityGrid {
    pub fn min_value(&self) -> f64 {
        self.rows.iter().map(|r| r.simstab_value).fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{GRID_HEADER}");
        for r in &self.rows {
            let _ = writeln!(out, "{:.16e},{},{:.16e}", r.angle, r.sample_index, r.simstab_value);
        }
        out
    }
}

/// Angles `gamma * i / n_angles` for `i = 1..=n_angles`.
pub fn angle_grid(gamma: f64, n_angles: usize) -> Vec<f64> {
    (1..=n_angles).map(|i| gamma * i as f64 / n_angles as f64).collect()
}

/// Evaluates the sampled stability statistic at `per_angle` random subspaces for each
/// angle of `angles` (each in `(0, gamma]`).
pub fn stability_grid(
    x: &Dataset,
    gamma: f64,
    angles: &[f64],
    per_angle: usize,
    seed: u64,
) -> Result<StabilityGrid> {
    let l_star = x.require_ground_truth()?;
    if let Some(a) = angles.iter().find(|&&a| !(a > 0.0 && a <= gamma)) {
        return Err(RsrError::invalid(format!("grid angle {a} is outside (0, {gamma}]")));
    }
    let perm = permeance(x.inliers(), l_star)?;
    let scaled = gamma.cos() * perm;
    let jobs: Vec<(usize, f64, usize)> = angles
        .iter()
        .enumerate()
        .flat_map(|(ai, &a)| (0..per_angle).map(move |j| (ai, a, j)))
        .collect();
    let evaluated: Vec<(GridRow, Subspace)> = jobs
        .par_iter()
        .map(|&(ai, angle, j)| {
            let mut rng = sample_rng(seed, (ai * per_angle + j) as u64);
            let l = subspace_at_angle(l_star, angle, &mut rng)?;
            let a = alignment(x.outliers(), &l, DEFAULT_TOL_ACTIVE)?;
            Ok((GridRow { angle, sample_index: j, simstab_value: scaled - a }, l))
        })
        .collect::<Result<_>>()?;
    let (rows, subspaces): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();
    let report = stability_with_samples(x, gamma, &subspaces, seed)?;
    Ok(StabilityGrid { rows, subspaces, report })
}

/// The four step-size rules compared in the convergence experiment, for initial step `s`.
pub fn convergence_schedules(s: f64) -> Vec<(&'static str, StepSchedule)> {
    vec![
        ("sqrt", StepSchedule::sqrt(s)),
        ("piecewise_k20", StepSchedule::PiecewiseConstant { s, k: 20, shrink: 0.5 }),
        ("piecewise_k50", StepSchedule::PiecewiseConstant { s, k: 50, shrink: 0.1 }),
        ("adaptive", StepSchedule::adaptive(s)),
    ]
}

#[derive(Clone, Debug)]
pub struct ConvergenceRun {
    pub label: String,
    pub schedule: StepSchedule,
    pub output: Subspace,
    pub trace: GgdTrace,
}

/// Runs every schedule from the same PCA initialization, tracking the angle to the
/// ground truth.
pub fn convergence(
    x: &Dataset,
    d: usize,
    schedules: &[(&str, StepSchedule)],
    tau: f64,
    max_iters: usize,
) -> Result<Vec<ConvergenceRun>> {
    let truth = x.require_ground_truth()?;
    let points = x.points();
    let init = pca_subspace(&points, d)?;
    schedules
        .par_iter()
        .map(|(label, schedule)| {
            let cfg = GgdConfig {
                schedule: schedule.clone(),
                tau,
                max_iters,
                tol_active: DEFAULT_TOL_ACTIVE,
                init: Init::Given(init.clone()),
            };
            let mut unused = sample_rng(0, 0);
            let (output, trace) = run_ggd_tracked(&points, d, &cfg, Some(truth), &mut unused)?;
            Ok(ConvergenceRun { label: label.to_string(), schedule: schedule.clone(), output, trace })
        })
        .collect()
}

pub const CONVERGENCE_HEADER: &str =
    "schedule,k,step,energy,grad_norm,theta_prev,theta_truth,log10_theta_truth,stopped_reason";

pub fn convergence_csv(runs: &[ConvergenceRun]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CONVERGENCE_HEADER}");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    for run in runs {
        let n = run.trace.records.len();
        for (i, r) in run.trace.records.iter().enumerate() {
            let reason = if i + 1 == n { run.trace.stopped_reason.as_str() } else { "" };
            let _ = writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{},{},{},{}",
                run.label,
                r.k,
                r.step,
                r.energy,
                r.grad_norm,
                opt(r.theta_prev),
                opt(r.theta_truth),
                opt(r.theta_truth.map(f64::log10)),
                reason
            );
        }
    }
    out
}

/// Least-squares line through `(x_i, y_i)`; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    #[serde(rename = "D")]
    pub ambient: usize,
    pub d: usize,
    pub n_out: usize,
    pub sigma_in: f64,
    pub sigma_out: f64,
    pub snrs: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub success_tol: f64,
    pub max_iters: usize,
    pub tau: f64,
}

impl PhaseConfig {
    /// Sweep at `D = 100`, `d = 5` with 200 outliers over 8 log-spaced SNRs in `[0.05, 8]`.
    pub fn default_sweep(seed: u64) -> Self {
        PhaseConfig {
            ambient: 100,
            d: 5,
            n_out: 200,
            sigma_in: 1.0,
            sigma_out: 1.0,
            snrs: log_grid(0.05, 8.0, 8),
            trials: 20,
            seed,
            success_tol: 1e-5,
            max_iters: 10_000,
            tau: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d >= self.ambient {
            return Err(RsrError::invalid("need 1 <= d < D"));
        }
        if self.n_out == 0 {
            return Err(RsrError::invalid("the sweep needs at least one outlier"));
        }
        if self.snrs.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(RsrError::invalid("SNR values must be finite and non-negative"));
        }
        if !(self.sigma_in > 0.0 && self.sigma_out > 0.0 && self.success_tol > 0.0) {
            return Err(RsrError::invalid("sigmas and the success tolerance must be positive"));
        }
        Ok(())
    }
}

/// `n` points from `lo` to `hi`, evenly spaced on a log scale.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRow {
    pub snr: f64,
    pub trial: usize,
    pub n_in: usize,
    pub success: bool,
    pub final_theta: f64,
    pub iterations: usize,
    pub stopped_reason: StopReason,
}

pub const PHASE_HEADER: &str =
    "snr,trial,n_in,success,final_theta,iterations,stopped_reason,threshold_small,threshold_large";

/// Runs GGD (PCA init, piecewise schedule with `s = 1/D`) on Haystack data for every
/// (SNR, trial) pair.
///
/// Within a trial all SNR levels share the ground truth and the outliers, and the
/// inliers for a level are the first `round(snr * N_out)` points of one common pool, so
/// higher SNR only ever adds inliers.
pub fn phase_sweep(cfg: &PhaseConfig) -> Result<Vec<PhaseRow>> {
    cfg.validate()?;
    let max_in = cfg
        .snrs
        .iter()
        .map(|s| (s * cfg.n_out as f64).round() as usize)
        .max()
        .unwrap_or(0);
    let trials: Vec<(Subspace, DMatrix<f64>, DMatrix<f64>)> = (0..cfg.trials)
        .map(|t| {
            let mut rng = sample_rng(cfg.seed, t as u64);
            let l = random_subspace(cfg.ambient, cfg.d, &mut rng)?;
            let outliers = gaussian_matrix(cfg.ambient, cfg.n_out, &mut rng)
                * (cfg.sigma_out / (cfg.ambient as f64).sqrt());
            let pool = l.basis() * gaussian_matrix(cfg.d, max_in, &mut rng)
                * (cfg.sigma_in / (cfg.d as f64).sqrt());
            Ok((l, outliers, pool))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.snrs.len())
        .flat_map(|si| (0..cfg.trials).map(move |t| (si, t)))
        .collect();
    let mut rows: Vec<PhaseRow> = jobs
        .par_iter()
        .map(|&(si, t)| {
            let snr = cfg.snrs[si];
            let (l, outliers, pool) = &trials[t];
            let n_in = (snr * cfg.n_out as f64).round() as usize;
            let inliers = pool.columns(0, n_in).into_owned();
            let ds = Dataset::new(inliers, outliers.clone(), Some(l.clone()), None, DatasetMeta::default())?;
            let gcfg = GgdConfig {
                schedule: StepSchedule::piecewise(1.0 / cfg.ambient as f64),
                tau: cfg.tau,
                max_iters: cfg.max_iters,
                tol_active: DEFAULT_TOL_ACTIVE,
                init: Init::Pca,
            };
            let mut unused = sample_rng(0, 0);
            let (out, trace) = run_ggd_tracked(&ds.points(), cfg.d, &gcfg, None, &mut unused)?;
            let final_theta = theta1(&out, l)?;
            Ok(PhaseRow {
                snr,
                trial: t,
                n_in,
                success: final_theta <= cfg.success_tol,
                final_theta,
                iterations: trace.iterations(),
                stopped_reason: trace.stopped_reason,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| a.snr.total_cmp(&b.snr).then(a.trial.cmp(&b.trial)));
    Ok(rows)
}

/// Success rate per SNR level, in increasing SNR order.
pub fn success_rates(rows: &[PhaseRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|e| e.0 == r.snr) {
            Some(e) => {
                e.1 += r.success as usize;
                e.2 += 1;
            }
            None => out.push((r.snr, r.success as usize, 1)),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out.into_iter().map(|(s, k, n)| (s, k as f64 / n as f64)).collect()
}

pub fn phase_csv(cfg: &PhaseConfig, rows: &[PhaseRow]) -> Result<String> {
    let small = snr_threshold(SnrRegime::SmallSample, cfg.sigma_in, cfg.sigma_out, cfg.ambient, cfg.d)?;
    let large = snr_threshold(SnrRegime::LargeSample, cfg.sigma_in, cfg.sigma_out, cfg.ambient, cfg.d)?;
    let mut out = String::new();
    let _ = writeln!(out, "{PHASE_HEADER}");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{},{},{},{:.16e},{},{},{:.16e},{:.16e}",
            r.snr,
            r.trial,
            r.n_in,
            r.success as u8,
            r.final_theta,
            r.iterations,
            r.stopped_reason,
            small,
            large
        );
    }
    Ok(out)
}
