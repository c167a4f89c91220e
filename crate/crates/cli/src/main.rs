mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ggd_core::experiment::{
    angle_grid, convergence, convergence_csv, convergence_schedules, log_grid, phase_csv, phase_sweep,
    stability_grid, success_rates, PhaseConfig, CONVERGENCE_HEADER, GRID_HEADER, PHASE_HEADER,
};
use ggd_core::ggd::TRACE_HEADER;
use ggd_core::{
    add_noise, generalized_haystack, haystack, run_ggd_tracked, seeded_rng, snr_threshold, theta1,
    Dataset, GeneralizedHaystackParams, GgdConfig, GgdTrace, HaystackParams, Init, RsrError,
    SnrRegime, StabilityReport, StepSchedule, Subspace,
};
use log::info;
use serde_json::json;
use thiserror::Error;

use crate::output::OutDir;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] RsrError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: schema check failed: {msg}", path.display())]
    Schema { path: PathBuf, msg: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if !e.is_io() => 2,
            CliError::Core(_) | CliError::Io { .. } | CliError::Schema { .. } => 3,
        }
    }
}

/// Robust subspace recovery by geodesic gradient descent.
#[derive(Parser, Debug)]
#[command(name = "ggd", version)]
struct Cli {
    /// Directory for all output files.
    #[arg(long, global = true, env = "GGD_OUT_DIR", default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a synthetic dataset.
    Generate {
        #[command(subcommand)]
        model: Model,
    },
    /// Run GGD on a dataset and write its trace.
    Run(RunArgs),
    /// Simulate the stability statistic over a grid of angles.
    Stability(StabilityArgs),
    /// Compare the standard step schedules from a shared PCA start.
    Convergence(ConvergenceArgs),
    /// Sweep the inlier/outlier ratio and record recovery success.
    Phase(PhaseArgs),
}

#[derive(Subcommand, Debug)]
enum Model {
    /// Gaussian inliers on a random subspace, isotropic Gaussian outliers.
    Haystack {
        #[command(flatten)]
        params: HaystackArgs,
        #[command(flatten)]
        common: GenerateArgs,
    },
    /// Inlier and outlier covariances read from a JSON parameter file.
    Generalized {
        #[arg(long = "D")]
        ambient: usize,
        /// JSON with fields n_in, lambda_in, n_out, sigma_out.
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        common: GenerateArgs,
    },
}

#[derive(Args, Debug)]
struct HaystackArgs {
    #[arg(long = "D")]
    ambient: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n_in: usize,
    #[arg(long)]
    n_out: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma_in: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_out: f64,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the inliers off the subspace by at most this much.
    #[arg(long)]
    noise: Option<f64>,
    /// File stem of the dataset; writes `<name>.csv` and `<name>.meta.json`.
    #[arg(long, default_value = "data")]
    name: String,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ScheduleKind {
    Sqrt,
    Piecewise,
    Adaptive,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum InitKind {
    Pca,
    Random,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Dataset CSV; its `.meta.json` sidecar is used when present.
    #[arg(long)]
    data: PathBuf,
    /// Subspace dimension; defaults to that of the ground truth.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum, default_value_t = ScheduleKind::Piecewise)]
    schedule: ScheduleKind,
    /// Initial step; defaults to 1/D.
    #[arg(long)]
    s: Option<f64>,
    /// Iterations between step reductions (piecewise schedule).
    #[arg(long = "K", default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    shrink: f64,
    #[arg(long, default_value_t = 1e-10)]
    tau: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = InitKind::Pca)]
    init: InitKind,
    /// Seed for the random initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    gamma: f64,
    /// Number of grid angles, evenly spaced in (0, gamma].
    #[arg(long, default_value_t = 10)]
    n_angles: usize,
    #[arg(long, default_value_t = 20)]
    per_angle: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    d: Option<usize>,
    /// Initial step shared by all schedules; defaults to 1/D.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    tau: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
}

#[derive(Args, Debug)]
struct PhaseArgs {
    #[arg(long = "D", default_value_t = 100)]
    ambient: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 200)]
    n_out: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma_in: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_out: f64,
    /// Explicit SNR values; overrides the log grid.
    #[arg(long, value_delimiter = ',')]
    snrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05)]
    snr_min: f64,
    #[arg(long, default_value_t = 8.0)]
    snr_max: f64,
    #[arg(long, default_value_t = 8)]
    n_snr: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    success_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tau: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate { model } => cmd_generate(&cli.out, model),
        Command::Run(a) => cmd_run(&cli.out, &a),
        Command::Stability(a) => cmd_stability(&cli.out, &a),
        Command::Convergence(a) => cmd_convergence(&cli.out, &a),
        Command::Phase(a) => cmd_phase(&cli.out, &a),
    }
}

fn cmd_generate(out: &Path, model: Model) -> Result<(), CliError> {
    let (dataset, common, config) = match model {
        Model::Haystack { params, common } => {
            let p = HaystackParams {
                n_in: params.n_in,
                n_out: params.n_out,
                sigma_in: params.sigma_in,
                sigma_out: params.sigma_out,
                ambient: params.ambient,
                d: params.d,
            };
            p.validate()?;
            let ds = haystack(&p, &mut seeded_rng(common.seed))?;
            (ds, common, json!({ "model": "haystack", "params": p }))
        }
        Model::Generalized { ambient, params, common } => {
            let text = std::fs::read_to_string(&params).map_err(|e| CliError::io(&params, e))?;
            let p: GeneralizedHaystackParams = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", params.display())))?;
            let ds = generalized_haystack(&p, ambient, &mut seeded_rng(common.seed))?;
            (ds, common, json!({ "model": "generalized_haystack", "D": ambient, "params": p }))
        }
    };
    if common.name.is_empty() || common.name.contains(['/', '\\']) {
        return Err(CliError::Config(format!("invalid dataset name {:?}", common.name)));
    }
    let mut dataset = dataset;
    if let Some(eps) = common.noise {
        // Noise draws continue the generator stream on a separate channel.
        let mut rng = ggd_core::stability::sample_rng(common.seed, 1);
        dataset = add_noise(&dataset, eps, &mut rng)?;
    }
    dataset.meta.seed = Some(common.seed);

    let mut dir = OutDir::create(out)?;
    let file = format!("{}.csv", common.name);
    let path = dir.path(&file);
    dataset.write_files(&path)?;
    let check = Dataset::read_files(&path)?;
    if check.len() != dataset.len() {
        return Err(CliError::Schema { path, msg: "row count changed on reload".into() });
    }
    dir.record(&file);
    dir.record(&format!("{}.meta.json", common.name));
    let mut config = config;
    config["noise"] = json!(common.noise);
    config["name"] = json!(common.name);
    dir.write_manifest("generate", Some(common.seed), config)?;
    println!(
        "wrote {} ({} inliers, {} outliers, D={})",
        dir.path(&file).display(),
        dataset.n_inliers(),
        dataset.n_outliers(),
        dataset.ambient_dim()
    );
    Ok(())
}

fn resolve_d(arg: Option<usize>, ds: &Dataset) -> Result<usize, CliError> {
    match (arg, ds.ground_truth()) {
        (Some(d), _) => Ok(d),
        (None, Some(l)) => Ok(l.dim()),
        (None, None) => Err(CliError::Config("--d is required when the dataset has no ground truth".into())),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
    }
    Ok(Dataset::read_files(path)?)
}

fn cmd_run(out: &Path, a: &RunArgs) -> Result<(), CliError> {
    let ds = read_dataset(&a.data)?;
    let d = resolve_d(a.d, &ds)?;
    let s = a.s.unwrap_or(1.0 / ds.ambient_dim() as f64);
    let schedule = match a.schedule {
        ScheduleKind::Sqrt => StepSchedule::sqrt(s),
        ScheduleKind::Piecewise => StepSchedule::PiecewiseConstant { s, k: a.k, shrink: a.shrink },
        ScheduleKind::Adaptive => StepSchedule::adaptive(s),
    };
    let cfg = GgdConfig {
        schedule,
        tau: a.tau,
        max_iters: a.max_iters,
        init: match a.init {
            InitKind::Pca => Init::Pca,
            InitKind::Random => Init::Random,
        },
        ..GgdConfig::for_ambient(ds.ambient_dim())
    };
    cfg.validate()?;
    info!("running GGD with {} on {} points", cfg.schedule, ds.len());
    let (output, trace) = run_ggd_tracked(&ds.points(), d, &cfg, ds.ground_truth(), &mut seeded_rng(a.seed))?;

    let mut dir = OutDir::create(out)?;
    let text = trace.to_csv_string();
    dir.write_csv("trace.csv", TRACE_HEADER, &text)?;
    GgdTrace::from_csv_str(&text)?;
    write_subspace(&mut dir, "subspace.csv", &output)?;

    let last = trace.last();
    let final_theta = match ds.ground_truth() {
        Some(l) => Some(theta1(&output, l)?),
        None => None,
    };
    let summary = json!({
        "iterations": trace.iterations(),
        "stopped_reason": trace.stopped_reason.as_str(),
        "final_energy": last.energy,
        "final_grad_norm": last.grad_norm,
        "final_theta": final_theta,
    });
    let summary_path = dir.path("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
        .map_err(|e| CliError::io(&summary_path, e))?;
    dir.record("summary.json");
    dir.write_manifest(
        "run",
        Some(a.seed),
        json!({
            "data": a.data,
            "d": d,
            "schedule": cfg.schedule,
            "tau": cfg.tau,
            "max_iters": cfg.max_iters,
            "tol_active": cfg.tol_active,
            "init": format!("{:?}", a.init).to_lowercase(),
        }),
    )?;
    let theta = final_theta.map_or_else(|| "NA".to_string(), |t| format!("{t:.6e}"));
    println!(
        "iterations={} stopped_reason={} final_energy={:.10e} final_theta={theta}",
        trace.iterations(),
        trace.stopped_reason,
        last.energy
    );
    Ok(())
}

fn write_subspace(dir: &mut OutDir, name: &str, l: &Subspace) -> Result<(), CliError> {
    let path = dir.path(name);
    l.write_csv(&path)?;
    let back = Subspace::read_csv(&path)?;
    if back.ambient_dim() != l.ambient_dim() || back.dim() != l.dim() {
        return Err(CliError::Schema { path, msg: "subspace shape changed on reload".into() });
    }
    dir.record(name);
    Ok(())
}

fn cmd_stability(out: &Path, a: &StabilityArgs) -> Result<(), CliError> {
    if !(a.gamma > 0.0 && a.gamma < std::f64::consts::FRAC_PI_2) {
        return Err(CliError::Config(format!("--gamma must lie in (0, pi/2), got {}", a.gamma)));
    }
    if a.n_angles == 0 || a.per_angle == 0 {
        return Err(CliError::Config("the grid needs at least one angle and one sample".into()));
    }
    let ds = read_dataset(&a.data)?;
    let angles = angle_grid(a.gamma, a.n_angles);
    let grid = stability_grid(&ds, a.gamma, &angles, a.per_angle, a.seed)?;

    let mut dir = OutDir::create(out)?;
    dir.write_csv("stability_grid.csv", GRID_HEADER, &grid.to_csv_string())?;
    let header = StabilityReport::csv_header();
    let report = format!("{header}\n{}\n", grid.report.to_csv_row());
    dir.write_csv("stability_report.csv", &header, &report)?;
    dir.write_manifest(
        "stability",
        Some(a.seed),
        json!({ "data": a.data, "gamma": a.gamma, "angles": angles, "per_angle": a.per_angle }),
    )?;
    println!("min_simstab={:.6e}", grid.min_value());
    print!("{}", grid.report.to_key_value());
    Ok(())
}

fn cmd_convergence(out: &Path, a: &ConvergenceArgs) -> Result<(), CliError> {
    let ds = read_dataset(&a.data)?;
    let d = resolve_d(a.d, &ds)?;
    let s = a.s.unwrap_or(1.0 / ds.ambient_dim() as f64);
    let schedules = convergence_schedules(s);
    for (_, sch) in &schedules {
        sch.validate()?;
    }
    if !(a.tau > 0.0) || a.max_iters == 0 {
        return Err(CliError::Config("--tau must be positive and --max-iters at least 1".into()));
    }
    let runs = convergence(&ds, d, &schedules, a.tau, a.max_iters)?;

    let mut dir = OutDir::create(out)?;
    dir.write_csv("convergence.csv", CONVERGENCE_HEADER, &convergence_csv(&runs))?;
    let listed: Vec<_> = schedules.iter().map(|(label, sch)| json!({ "label": label, "schedule": sch })).collect();
    dir.write_manifest(
        "convergence",
        None,
        json!({ "data": a.data, "d": d, "schedules": listed, "tau": a.tau, "max_iters": a.max_iters }),
    )?;
    for run in &runs {
        let last = run.trace.last();
        let theta = last.theta_truth.map_or_else(|| "NA".to_string(), |t| format!("{t:.6e}"));
        println!(
            "{}: iterations={} stopped_reason={} final_theta={theta}",
            run.label,
            run.trace.iterations(),
            run.trace.stopped_reason
        );
    }
    Ok(())
}

fn cmd_phase(out: &Path, a: &PhaseArgs) -> Result<(), CliError> {
    let snrs = match &a.snrs {
        Some(v) => v.clone(),
        None => {
            if !(a.snr_min > 0.0 && a.snr_max >= a.snr_min) || a.n_snr == 0 {
                return Err(CliError::Config("need 0 < --snr-min <= --snr-max and --n-snr >= 1".into()));
            }
            log_grid(a.snr_min, a.snr_max, a.n_snr)
        }
    };
    let cfg = PhaseConfig {
        ambient: a.ambient,
        d: a.d,
        n_out: a.n_out,
        sigma_in: a.sigma_in,
        sigma_out: a.sigma_out,
        snrs,
        trials: a.trials,
        seed: a.seed,
        success_tol: a.success_tol,
        max_iters: a.max_iters,
        tau: a.tau,
    };
    cfg.validate()?;
    let rows = phase_sweep(&cfg)?;

    let mut dir = OutDir::create(out)?;
    dir.write_csv("phase.csv", PHASE_HEADER, &phase_csv(&cfg, &rows)?)?;
    dir.write_manifest("phase", Some(cfg.seed), json!(cfg))?;
    let small = snr_threshold(SnrRegime::SmallSample, cfg.sigma_in, cfg.sigma_out, cfg.ambient, cfg.d)?;
    println!("threshold_small={small:.6e}");
    for (snr, rate) in success_rates(&rows) {
        println!("snr={snr:.6e} success_rate={rate:.3}");
    }
    Ok(())
}
