//! Geodesic gradient descent (GGD) for the least-absolute-deviations energy, with PCA
//! initialization, three step-size rules and a per-iteration trace.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{check_points, residuals, DEFAULT_TOL_ACTIVE};
use crate::error::{Result, RsrError};
use crate::grassmann::{orthonormalize, random_subspace, theta1, GeodesicDirection, Subspace};
use crate::linalg::{spectral_norm, svd_sorted};

/// Gradients with spectral norm at or below this value mark a critical point.
pub const CRITICAL_GRAD_NORM: f64 = 1e-14;

/// Step-size rule for GGD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `t_k = s / sqrt(k)`.
    Sqrt { s: f64 },
    /// `t_k = s * shrink^floor(k / K)`.
    PiecewiseConstant { s: f64, k: usize, shrink: f64 },
    /// Constant step, halved until the energy decreases; the accepted step is kept.
    AdaptiveShrink { s: f64, max_halvings: u32 },
}

impl StepSchedule {
    pub fn sqrt(s: f64) -> Self {
        StepSchedule::Sqrt { s }
    }

    /// Halve the step every 20 iterations.
    pub fn piecewise(s: f64) -> Self {
        StepSchedule::PiecewiseConstant { s, k: 20, shrink: 0.5 }
    }

    pub fn adaptive(s: f64) -> Self {
        StepSchedule::AdaptiveShrink { s, max_halvings: 40 }
    }

    pub fn initial_step(&self) -> f64 {
        match *self {
            StepSchedule::Sqrt { s }
            | StepSchedule::PiecewiseConstant { s, .. }
            | StepSchedule::AdaptiveShrink { s, .. } => s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.initial_step();
        if !(s > 0.0 && s.is_finite()) {
            return Err(RsrError::invalid(format!("initial step must be positive, got {s}")));
        }
        if let StepSchedule::PiecewiseConstant { k, shrink, .. } = *self {
            if k == 0 {
                return Err(RsrError::invalid("shrink interval K must be at least 1"));
            }
            if !(shrink > 0.0 && shrink < 1.0) {
                return Err(RsrError::invalid(format!("shrink factor must lie in (0, 1), got {shrink}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            StepSchedule::Sqrt { s } => write!(f, "sqrt(s={s})"),
            StepSchedule::PiecewiseConstant { s, k, shrink } => {
                write!(f, "piecewise(s={s}, K={k}, shrink={shrink})")
            }
            StepSchedule::AdaptiveShrink { s, max_halvings } => {
                write!(f, "adaptive(s={s}, max_halvings={max_halvings})")
            }
        }
    }
}

/// Running state of the adaptive rule: the current constant step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptiveState {
    pub current: f64,
}

impl AdaptiveState {
    pub fn new(schedule: &StepSchedule) -> Self {
        AdaptiveState { current: schedule.initial_step() }
    }
}

/// Step size at iteration `k >= 1`. For the adaptive rule this is the step tried
/// first, before any halving.
pub fn step_size(schedule: &StepSchedule, k: usize, state: &AdaptiveState) -> f64 {
    match *schedule {
        StepSchedule::Sqrt { s } => s / (k as f64).sqrt(),
        StepSchedule::PiecewiseConstant { s, k: interval, shrink } => {
            s * shrink.powi((k / interval) as i32)
        }
        StepSchedule::AdaptiveShrink { .. } => state.current,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Pca,
    Given(Subspace),
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GgdConfig {
    pub schedule: StepSchedule,
    pub tau: f64,
    pub max_iters: usize,
    pub tol_active: f64,
    pub init: Init,
}

impl GgdConfig {
    /// Piecewise-constant schedule with `s = 1 / D`, `tau = 1e-10`, 10 000 iterations.
    pub fn for_ambient(ambient: usize) -> Self {
        GgdConfig {
            schedule: StepSchedule::piecewise(1.0 / ambient as f64),
            tau: 1e-10,
            max_iters: 10_000,
            tol_active: DEFAULT_TOL_ACTIVE,
            init: Init::Pca,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.tau > 0.0) {
            return Err(RsrError::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_iters == 0 {
            return Err(RsrError::invalid("max_iters must be at least 1"));
        }
        if !(self.tol_active >= 0.0) {
            return Err(RsrError::invalid("tol_active must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `theta1(V^k, V^{k-1}) <= tau`.
    Converged,
    MaxIters,
    CriticalPoint,
    /// The adaptive rule found no decreasing step.
    StepUnderflow,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxIters => "max_iters",
            StopReason::CriticalPoint => "critical_point",
            StopReason::StepUnderflow => "step_underflow",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopReason {
    type Err = RsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(StopReason::Converged),
            "max_iters" => Ok(StopReason::MaxIters),
            "critical_point" => Ok(StopReason::CriticalPoint),
            "step_underflow" => Ok(StopReason::StepUnderflow),
            other => Err(RsrError::Parse(format!("unknown stop reason {other:?}"))),
        }
    }
}

/// State of iterate `V^k`, together with the step `t^k` taken from it (or the step
/// that would have been taken, on the final record).
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub step: f64,
    pub energy: f64,
    pub grad_norm: f64,
    pub theta_prev: Option<f64>,
    pub theta_truth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GgdTrace {
    pub records: Vec<TraceRecord>,
    pub stopped_reason: StopReason,
}

pub const TRACE_HEADER: &str = "k,step,energy,grad_norm,theta_prev,theta_truth,stopped_reason";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| RsrError::Parse(format!("bad number {s:?}")))
}

impl GgdTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace has at least one record")
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// CSV with [`TRACE_HEADER`]; the stop reason is written on the final row only.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRACE_HEADER}");
        let n = self.records.len();
        for (i, r) in self.records.iter().enumerate() {
            let reason = if i + 1 == n { self.stopped_reason.as_str() } else { "" };
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{},{},{}",
                r.k,
                r.step,
                r.energy,
                r.grad_norm,
                opt_field(r.theta_prev),
                opt_field(r.theta_truth),
                reason
            );
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == TRACE_HEADER => {}
            other => return Err(RsrError::Parse(format!("bad trace header {other:?}"))),
        }
        let mut records = Vec::new();
        let mut reason = None;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(RsrError::Parse(format!("trace row has {} fields", f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| RsrError::Parse(format!("bad number {s:?}")))
            };
            records.push(TraceRecord {
                k: f[0].parse().map_err(|_| RsrError::Parse(format!("bad k {:?}", f[0])))?,
                step: num(f[1])?,
                energy: num(f[2])?,
                grad_norm: num(f[3])?,
                theta_prev: parse_opt(f[4])?,
                theta_truth: parse_opt(f[5])?,
            });
            if !f[6].is_empty() {
                reason = Some(f[6].parse()?);
            }
        }
        if records.is_empty() {
            return Err(RsrError::Parse("trace has no rows".into()));
        }
        let stopped_reason =
            reason.ok_or_else(|| RsrError::Parse("trace does not record a stop reason".into()))?;
        Ok(GgdTrace { records, stopped_reason })
    }
}

/// Span of the top `d` left singular vectors of the `D x N` data matrix.
pub fn pca_subspace(x: &DMatrix<f64>, d: usize) -> Result<Subspace> {
    let ambient = x.nrows();
    if d == 0 || d > ambient {
        return Err(RsrError::invalid(format!("need 1 <= d <= D, got d={d}, D={ambient}")));
    }
    check_points(x, ambient)?;
    let svd = svd_sorted(x);
    let smax = svd.sigma.iter().copied().fold(0.0, f64::max);
    let rank = svd.sigma.iter().filter(|&&s| s > 1e-12 * smax && s > 0.0).count();
    if rank < d {
        return Err(RsrError::InsufficientRank { rank, d });
    }
    if d < svd.sigma.len() && svd.sigma[d - 1] - svd.sigma[d] < 1e-12 * smax {
        warn!(
            "PCA subspace is not unique: singular values {} and {} are equal to working precision",
            svd.sigma[d - 1],
            svd.sigma[d]
        );
    }
    orthonormalize(&svd.u.columns(0, d).into_owned())
}

/// Runs GGD from the configured initialization; see [`run_ggd_tracked`].
pub fn run_ggd<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    d: usize,
    cfg: &GgdConfig,
    rng: &mut R,
) -> Result<(Subspace, GgdTrace)> {
    run_ggd_tracked(x, d, cfg, None, rng)
}

/// Runs GGD and, when `truth` is given, records `theta1(V^k, truth)` at every iterate.
///
/// The loop stops at the first iterate `V^k` with `theta1(V^k, V^{k-1}) <= tau`, with a
/// gradient of spectral norm at most [`CRITICAL_GRAD_NORM`], or at `k = max_iters`; that
/// iterate is returned and is the last trace record. `rng` is only used by
/// [`Init::Random`].
pub fn run_ggd_tracked<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    d: usize,
    cfg: &GgdConfig,
    truth: Option<&Subspace>,
    rng: &mut R,
) -> Result<(Subspace, GgdTrace)> {
    cfg.validate()?;
    if x.ncols() == 0 {
        return Err(RsrError::invalid("GGD needs at least one data point"));
    }
    let ambient = x.nrows();
    let mut v = match &cfg.init {
        Init::Pca => pca_subspace(x, d)?,
        Init::Random => random_subspace(ambient, d, rng)?,
        Init::Given(s) => {
            if s.ambient_dim() != ambient || s.dim() != d {
                return Err(RsrError::DimensionMismatch(format!(
                    "initial subspace is in G({}, {}), expected G({ambient}, {d})",
                    s.ambient_dim(),
                    s.dim()
                )));
            }
            s.clone()
        }
    };
    if let Some(t) = truth {
        if t.ambient_dim() != ambient || t.dim() != d {
            return Err(RsrError::DimensionMismatch("ground truth has the wrong shape".into()));
        }
    }

    let mut records = Vec::new();
    let mut prev: Option<Subspace> = None;
    let mut adaptive = AdaptiveState::new(&cfg.schedule);
    let mut r = residuals(&v, x, cfg.tol_active)?;
    let mut k = 1;
    let reason = loop {
        let eval = r.eval();
        let grad = r.grassmannian(&v, x);
        let grad_norm = spectral_norm(&grad);
        let theta_prev = prev.as_ref().map(|p| theta1(&v, p)).transpose()?;
        let theta_truth = truth.map(|t| theta1(&v, t)).transpose()?;
        let planned = step_size(&cfg.schedule, k, &adaptive);
        let mut record = TraceRecord {
            k,
            step: planned,
            energy: eval.value,
            grad_norm,
            theta_prev,
            theta_truth,
        };

        let stop = if theta_prev.is_some_and(|t| t <= cfg.tau) {
            Some(StopReason::Converged)
        } else if grad_norm <= CRITICAL_GRAD_NORM {
            Some(StopReason::CriticalPoint)
        } else if k >= cfg.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if let Some(reason) = stop {
            records.push(record);
            break reason;
        }

        let dir = GeodesicDirection::new(&v, &grad)?;
        let next = match cfg.schedule {
            StepSchedule::AdaptiveShrink { max_halvings, .. } => {
                let mut accepted = None;
                let mut t = adaptive.current;
                for _ in 0..=max_halvings {
                    let cand = dir.at(t)?;
                    let rc = residuals(&cand, x, cfg.tol_active)?;
                    if rc.eval().value < eval.value {
                        accepted = Some((t, cand, rc));
                        break;
                    }
                    t *= 0.5;
                }
                match accepted {
                    Some((t, cand, rc)) => {
                        adaptive.current = t;
                        record.step = t;
                        r = rc;
                        cand
                    }
                    None => {
                        records.push(record);
                        break StopReason::StepUnderflow;
                    }
                }
            }
            _ => {
                let cand = dir.at(planned)?;
                r = residuals(&cand, x, cfg.tol_active)?;
                cand
            }
        };
        records.push(record);
        prev = Some(std::mem::replace(&mut v, next));
        k += 1;
    };
    Ok((v, GgdTrace { records, stopped_reason: reason }))
}
