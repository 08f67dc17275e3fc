//! Command implementations behind the `vendirl` binary.
//!
//! Output files:
//!
//! * `metrics.csv`: `epoch,scene,method,train_vs_mean,eval_vs,wall_time`, one
//!   row per scene per epoch. `eval_vs` is filled on evaluation epochs only,
//!   `wall_time` only when `train.record_wall_time` is set.
//! * `resolved_config.toml`: the run's configuration with every default
//!   written out; feeding it back reproduces the run.
//! * `checkpoints/epoch_NNNNN.ckpt` on evaluation epochs and `policy.ckpt`
//!   at the end.
//! * `trajectories.csv` (from `eval`): `skill,rollout,t,x,y`.

pub mod config;
pub mod svg;
pub mod trajectories;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use vendirl::env2d::OBS_DIM;
use vendirl::policy::{load_policy, save_policy, PolicySkillSet};
use vendirl::trainer::{sample_skills, score_samples, stream_rng, train_with, Method, MetricRow};

pub use config::ExperimentConfig;
use trajectories::{read_trajectories, write_trajectories, TrajectorySet};

pub const THREADS_ENV: &str = "VENDIRL_THREADS";
pub const METRICS_HEADER: [&str; 6] = ["epoch", "scene", "method", "train_vs_mean", "eval_vs", "wall_time"];
/// Random stream used by `eval`, disjoint from the training streams.
const EVAL_COMMAND_STREAM: u64 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error in {origin}: {message}")]
    Config { origin: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] vendirl::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Scene-worker pool sized by `VENDIRL_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let threads: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<Method>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(method) = self.method {
            cfg.train.method = method;
        }
    }
}

fn metric_record(row: &MetricRow) -> [String; 6] {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    [
        row.epoch.to_string(),
        row.scene.to_string(),
        row.method.name().to_string(),
        row.train_vs_mean.to_string(),
        opt(row.eval_vs),
        opt(row.wall_time),
    ]
}

pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub final_eval_vs: Option<f64>,
    pub rows: usize,
}

/// Train per `cfg`, writing metrics, checkpoints and the resolved config.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    let cfg = cfg.resolved();
    let train_cfg = cfg.train_config();
    train_cfg
        .validate()
        .map_err(|e| CliError::Config {
            origin: "resolved config".into(),
            message: e.to_string(),
        })?;
    let out = cfg.output.dir.clone();
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_at(&ckpt_dir))?;
    let snapshot = out.join("resolved_config.toml");
    fs::write(&snapshot, cfg.to_toml()).map_err(io_at(&snapshot))?;

    let metrics_path = out.join("metrics.csv");
    let file = fs::File::create(&metrics_path).map_err(io_at(&metrics_path))?;
    let mut metrics = csv::Writer::from_writer(BufWriter::new(file));
    metrics.write_record(METRICS_HEADER)?;
    metrics.flush().map_err(io_at(&metrics_path))?;

    let mut sink_error: Option<CliError> = None;
    let pool = thread_pool()?;
    let result = pool.install(|| {
        train_with(&train_cfg, cfg.train.method, &mut |report| {
            let mut write = || -> Result<(), CliError> {
                for row in report.rows {
                    metrics.write_record(metric_record(row))?;
                }
                metrics.flush().map_err(io_at(&metrics_path))?;
                if report.eval_vs.is_some() {
                    let path = ckpt_dir.join(format!("epoch_{:05}.ckpt", report.epoch));
                    save_policy(report.policy, &path)?;
                }
                Ok(())
            };
            write().map_err(|e| {
                let message = e.to_string();
                sink_error = Some(e);
                vendirl::Error::InvalidInput(message)
            })
        })
    });
    let output = match (result, sink_error) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    let final_path = out.join("policy.ckpt");
    save_policy(&output.policy, &final_path)?;
    Ok(TrainSummary {
        out_dir: out,
        final_eval_vs: output.log.iter().rev().find_map(|r| r.eval_vs),
        rows: output.log.len(),
    })
}

pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<TrainSummary, CliError> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    run_train(&cfg)
}

fn load_optional_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>, CliError> {
    path.map(ExperimentConfig::load).transpose()
}

pub struct EvalSummary {
    pub vendi_score: f64,
    pub trajectories_path: PathBuf,
}

/// Rollouts of every skill of `policy`, scored under the evaluation kernel.
pub fn run_eval(policy: &PolicySkillSet, cfg: &ExperimentConfig) -> Result<EvalSummary, CliError> {
    if policy.obs_dim() != OBS_DIM {
        return Err(vendirl::Error::Shape(format!(
            "checkpoint expects {}-dimensional observations, environment has {OBS_DIM}",
            policy.obs_dim()
        ))
        .into());
    }
    if policy.n_skills() != cfg.train.n_skills {
        return Err(vendirl::Error::Shape(format!(
            "checkpoint has {} skills, config expects {}",
            policy.n_skills(),
            cfg.train.n_skills
        ))
        .into());
    }
    cfg.eval_kernel.validate()?;
    let scored = cfg.eval_kernel.rollouts_per_skill;
    let plotted = cfg.output.plot_rollouts;
    let mut rng = stream_rng(cfg.train.seed, EVAL_COMMAND_STREAM);
    let pool = thread_pool()?;
    let (vendi_score, set) = pool.install(|| -> Result<_, CliError> {
        let samples = sample_skills(policy, &cfg.env, scored.max(plotted), &mut rng)?;
        let take = |n: usize| -> Result<Vec<_>, CliError> {
            samples
                .iter()
                .map(|s| vendirl::kernels::SkillSample::new(s.trajectories()[..n].to_vec()).map_err(CliError::Core))
                .collect()
        };
        let vs = score_samples(&take(scored)?, &cfg.eval_kernel)?;
        Ok((vs, TrajectorySet::from_samples(&take(plotted)?)))
    })?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let path = dir.join("trajectories.csv");
    let file = fs::File::create(&path).map_err(io_at(&path))?;
    write_trajectories(&set, BufWriter::new(file))?;
    Ok(EvalSummary {
        vendi_score,
        trajectories_path: path,
    })
}

pub fn cmd_eval(
    checkpoint: &Path,
    config_path: Option<&Path>,
    overrides: &Overrides,
) -> Result<EvalSummary, CliError> {
    let policy = load_policy(checkpoint).map_err(|e| match e {
        vendirl::Error::Io(source) => CliError::Io {
            path: checkpoint.to_path_buf(),
            source,
        },
        other => other.into(),
    })?;
    let mut cfg = match load_optional_config(config_path)? {
        Some(cfg) => cfg,
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.train.n_skills = policy.n_skills();
            cfg
        }
    };
    overrides.apply(&mut cfg);
    run_eval(&policy, &cfg)
}

pub struct PlotRequest<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    pub config: Option<&'a Path>,
    pub vendi_score: Option<f64>,
    pub title: Option<String>,
}

pub fn cmd_plot(req: &PlotRequest<'_>) -> Result<usize, CliError> {
    let cfg = load_optional_config(req.config)?.unwrap_or_default();
    let file = fs::File::open(req.input).map_err(io_at(req.input))?;
    let set = read_trajectories(file)?;
    let opts = svg::PlotOptions {
        bounds_min: cfg.env.bounds_min,
        bounds_max: cfg.env.bounds_max,
        colors: cfg.output.colors.clone(),
        title: req.title.clone().unwrap_or_else(|| "skill trajectories".into()),
        vendi_score: req.vendi_score,
    };
    let text = svg::render(&set, &opts);
    let mut out = fs::File::create(req.output).map_err(io_at(req.output))?;
    out.write_all(text.as_bytes()).map_err(io_at(req.output))?;
    Ok(set.rollout_count())
}

/// Vendi Score of an external trajectory table under the evaluation kernel.
pub fn cmd_score(input: &Path, config_path: Option<&Path>) -> Result<f64, CliError> {
    let cfg = load_optional_config(config_path)?.unwrap_or_default();
    let file = fs::File::open(input).map_err(io_at(input))?;
    let samples = read_trajectories(file)?.to_samples()?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{}: no trajectories", input.display())));
    }
    let pool = thread_pool()?;
    Ok(pool.install(|| score_samples(&samples, &cfg.eval_kernel))?)
}
