//! Command-line front end: a TOML experiment configuration and the
//! `simulate`, `train`, `predict`, `multiscale`, `bench` and `mv-sample`
//! subcommands. Every output file starts with the tool version and the hash
//! of the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    bench_emp, bench_operator, bench_table, ecdf_table, eval_seed, ks_distance, multiscale_eval,
    multiscale_table, parse_values, per_path_mse, report_header, sample_sensor_values,
    values_table, write_report, BenchRow, Ecdf, ExactOperator, InitialValue, MultiscaleOptions,
    PathOperator, TimingProtocol,
};
use crate::net::{NetConfig, SensorMode};
use crate::paths::{
    path_seeds, read_dataset, sample_brownian, sample_brownian_batch, write_dataset, BrownianPath,
    PathDataset, SensorSet, SolutionPath, TimeGrid,
};
use crate::solvers::{emp_solve_with, euler_maruyama, EmpOptions, ModelSpec};
use crate::training::{
    load_checkpoint, loss_history_to_string, save_checkpoint, train_validated, Checkpoint,
    TrainConfig,
};

pub const DATASET_FILE: &str = "dataset.csv";
pub const REFERENCE_FILE: &str = "reference_xT.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const MSE_FILE: &str = "per_path_mse.csv";
pub const MULTISCALE_FILE: &str = "multiscale.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const SAMPLES_FILE: &str = "mv_samples.csv";
pub const SAMPLES_ECDF_FILE: &str = "mv_ecdf.csv";
pub const REFERENCE_ECDF_FILE: &str = "reference_ecdf.csv";
pub const KS_FILE: &str = "ks.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Euler-Maruyama on each path.
    Em,
    /// Closed-form solution (OU, GBM).
    Exact,
    /// Euler-Maruyama particle system for mean-field models.
    Emp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub h: f64,
    pub m: usize,
}

impl GridConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.h, self.m).map_err(|e| Error::Config(format!("grid: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training paths.
    pub n_train: usize,
    /// Validation paths stored after the training paths.
    pub n_val: usize,
    /// Fresh evaluation paths for `predict` and `multiscale`.
    pub n_eval: usize,
    pub solver: SolverKind,
    /// Particle count of the particle solver.
    pub particles: usize,
    /// Use the sort-based drift of the particle solver when the model has one.
    pub sorted_drift: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 20,
            n_val: 0,
            n_eval: 800,
            solver: SolverKind::Exact,
            particles: 10_000,
            sorted_drift: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiscaleConfig {
    pub scales: Vec<f64>,
    pub reuse_increments: bool,
}

impl Default for MultiscaleConfig {
    fn default() -> Self {
        Self {
            scales: vec![0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
            reuse_increments: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            ns: vec![100, 1_000, 10_000],
            ms: vec![31, 51, 101],
            warmup: 1,
            repetitions: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub n: usize,
    /// Sampling time; the end of the grid when absent.
    pub t: Option<f64>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n: 10_000, t: None }
    }
}

/// Everything one experiment needs. Missing sections take their defaults,
/// which describe the Ornstein-Uhlenbeck experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed of all generated data.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelSpec,
    pub initial: InitialValue,
    pub grid: GridConfig,
    pub data: DataConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub multiscale: MultiscaleConfig,
    pub bench: BenchConfig,
    pub sample: SampleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: ModelSpec::Ou { a: 1.0, b: 1.0 },
            initial: InitialValue::Fixed { value: 1.0 },
            grid: GridConfig {
                t0: 0.0,
                h: 0.01,
                m: 31,
            },
            data: DataConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            multiscale: MultiscaleConfig::default(),
            bench: BenchConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let mut msg = e.to_string();
            if msg.contains("kind") {
                msg.push_str(&format!("\nknown models: {}", ModelSpec::NAMES.join(", ")));
            }
            Error::Config(msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn header(&self) -> String {
        report_header(&self.hash())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.grid.grid()?;
        if self.data.n_train == 0 {
            return cfg_err("data.n_train must be at least 1".into());
        }
        self.net
            .validate()
            .map_err(|e| Error::Config(format!("net: {e}")))?;
        self.train
            .validate()
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        match (self.data.solver, &self.model) {
            (SolverKind::Emp, m) if !m.is_mean_field() => {
                return cfg_err(format!(
                    "solver emp needs a mean-field model, got {}",
                    m.descriptor()
                ))
            }
            (SolverKind::Em | SolverKind::Exact, m) if m.is_mean_field() => {
                return cfg_err(format!("{} requires solver = \"emp\"", m.descriptor()))
            }
            (SolverKind::Exact, m @ ModelSpec::GaussianLangevin { .. }) => {
                return cfg_err(format!(
                    "{} has no closed form; use solver = \"em\"",
                    m.descriptor()
                ))
            }
            _ => {}
        }
        if self.data.solver == SolverKind::Emp
            && self.data.particles < self.data.n_train + self.data.n_val
        {
            return cfg_err("data.particles must cover n_train + n_val".into());
        }
        if let ModelSpec::GaussianLangevin { variance, .. } = self.model {
            if !(variance > 0.0) {
                return cfg_err("model.variance must be positive".into());
            }
        }
        if let Some(s) = self
            .multiscale
            .scales
            .iter()
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return cfg_err(format!("multiscale scale {s} must be positive"));
        }
        if self.bench.ns.contains(&0) || self.bench.ms.iter().any(|&m| m < 2) {
            return cfg_err("bench needs N >= 1 and M >= 2".into());
        }
        if let Some(t) = self.sample.t {
            if !(t > 0.0) {
                return cfg_err("sample.t must be positive".into());
            }
        }
        Ok(())
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn describe_defaults(&self) -> String {
        format!(
            "model={} x0={} solver={} seed={}",
            self.model.descriptor(),
            self.initial.describe(),
            format!("{:?}", self.data.solver).to_lowercase(),
            self.seed
        )
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sdeop",
    version,
    about = "Neural operators for stochastic differential equations"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct GlobalArgs {
    /// TOML experiment configuration; defaults describe the OU experiment.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for per-path work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate Brownian paths and reference solutions.
    Simulate,
    /// Fit the operator to a dataset.
    Train {
        /// Dataset to fit; defaults to dataset.csv in the output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate a trained operator on replayed or fresh Brownian inputs.
    Predict {
        /// Trained parameters; defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Replay the paths of this dataset instead of drawing fresh ones.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Query only the last grid time.
        #[arg(long)]
        terminal: bool,
    },
    /// Standardized error across rescaled grids.
    Multiscale {
        /// Trained parameters; defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the reference solver itself instead of a checkpoint.
        #[arg(long)]
        exact_stub: bool,
    },
    /// Noise, solve and training times of the particle method and the operator.
    Bench {
        /// Trained parameters; defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample the terminal law with the operator and compare it with a reference sample.
    MvSample {
        /// Trained parameters; defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// One-column file of reference samples.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

/// Resolves the configuration: file (or defaults), then flag overrides.
pub fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(d) = &global.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    let threads = if cli.global.deterministic {
        Some(1)
    } else {
        cli.global.threads
    };
    match threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(&cfg, &cli.command)),
        None => dispatch(&cfg, &cli.command),
    }
}

fn dispatch(cfg: &ExperimentConfig, command: &Command) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    match command {
        Command::Simulate => cmd_simulate(cfg).map(drop),
        Command::Train { dataset } => cmd_train(cfg, dataset.as_deref()).map(drop),
        Command::Predict {
            checkpoint,
            input,
            terminal,
        } => cmd_predict(cfg, checkpoint.as_deref(), input.as_deref(), *terminal).map(drop),
        Command::Multiscale {
            checkpoint,
            exact_stub,
        } => cmd_multiscale(cfg, checkpoint.as_deref(), *exact_stub).map(drop),
        Command::Bench { checkpoint } => cmd_bench(cfg, checkpoint.as_deref()).map(drop),
        Command::MvSample {
            checkpoint,
            reference,
        } => cmd_mv_sample(cfg, checkpoint.as_deref(), reference.as_deref()).map(drop),
    }
}

fn solve_paths(
    cfg: &ExperimentConfig,
    x0s: &[f64],
    paths: &[BrownianPath],
) -> Result<Vec<SolutionPath>> {
    use rayon::prelude::*;
    match cfg.data.solver {
        SolverKind::Exact => x0s
            .par_iter()
            .zip(paths)
            .map(|(&x0, b)| {
                cfg.model.exact(x0, b).ok_or_else(|| {
                    Error::Config(format!("{} has no closed form", cfg.model.descriptor()))
                })
            })
            .collect(),
        SolverKind::Em => {
            let model = cfg.model.sde_model().expect("validated path-by-path model");
            x0s.par_iter()
                .zip(paths)
                .map(|(&x0, b)| euler_maruyama(&model, x0, b))
                .collect()
        }
        SolverKind::Emp => {
            let model = cfg
                .model
                .mean_field_model()
                .expect("validated mean-field model");
            let opts = EmpOptions {
                sorted_drift: cfg.data.sorted_drift,
                parallel: true,
            };
            let ens = emp_solve_with(&model, x0s, paths, opts)?;
            Ok((0..ens.len()).map(|i| ens.solution(i)).collect())
        }
    }
}

/// Writes the dataset (and, for the particle solver, the terminal marginal
/// of the whole ensemble). Returns the dataset path.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let grid = cfg.grid.grid()?;
    let n = match cfg.data.solver {
        SolverKind::Emp => cfg.data.particles,
        _ => cfg.data.n_train + cfg.data.n_val,
    };
    let paths = sample_brownian_batch(&grid, cfg.seed, n);
    let x0s = cfg.initial.sample(n, cfg.seed);
    let solutions = solve_paths(cfg, &x0s, &paths)?;
    let mut meta = vec![
        (
            "tool".to_string(),
            format!("sdeop-{}", env!("CARGO_PKG_VERSION")),
        ),
        ("config".to_string(), cfg.hash()),
        ("x0".to_string(), cfg.initial.describe()),
        (
            "solver".to_string(),
            format!("{:?}", cfg.data.solver).to_lowercase(),
        ),
        ("base_seed".to_string(), cfg.seed.to_string()),
    ];
    if cfg.data.solver == SolverKind::Emp {
        meta.push(("particles".to_string(), n.to_string()));
        let terminal: Vec<f64> = solutions.iter().map(SolutionPath::terminal).collect();
        write_report(
            &cfg.out(REFERENCE_FILE),
            &values_table("x", &terminal, &cfg.header()),
        )?;
    }
    let ds = meta.into_iter().fold(
        PathDataset::new(grid, paths, solutions, cfg.model.descriptor().to_string())?,
        |ds, (k, v)| ds.with_metadata(k, v),
    );
    let path = cfg.out(DATASET_FILE);
    write_dataset(&ds, &path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub best_epoch: Option<usize>,
    pub stopped_by: crate::training::StopReason,
    /// Training wall time in seconds.
    pub t_time: f64,
}

/// Trains on the first `n_train` paths of the dataset, validating on the
/// next `n_val`. Writes the checkpoint, loss history and a summary with the
/// wall time.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: Option<&Path>) -> Result<TrainSummary> {
    let path = dataset.map_or_else(|| cfg.out(DATASET_FILE), Path::to_path_buf);
    let ds = read_dataset(&path)?;
    let grid = cfg.grid.grid()?;
    if ds.grid != grid {
        return Err(Error::Validation(format!(
            "dataset grid {:?} differs from configured grid {:?}",
            ds.grid, grid
        )));
    }
    let model = cfg.model.descriptor().to_string();
    if ds.model != model {
        return Err(Error::Validation(format!(
            "dataset model {} differs from configured model {model}",
            ds.model
        )));
    }
    let (n_train, n_val) = (cfg.data.n_train, cfg.data.n_val);
    if ds.len() < n_train + n_val {
        return Err(Error::Validation(format!(
            "dataset holds {} paths, {} needed",
            ds.len(),
            n_train + n_val
        )));
    }
    let train_ds = ds.subset(&(0..n_train).collect::<Vec<_>>())?;
    let val_ds = if n_val > 0 {
        Some(ds.subset(&(n_train..n_train + n_val).collect::<Vec<_>>())?)
    } else {
        None
    };
    let report = train_validated(&train_ds, val_ds.as_ref(), &cfg.net, &cfg.train)?;
    let provenance = format!("sdeop-{} config={}", env!("CARGO_PKG_VERSION"), cfg.hash());
    let ck = Checkpoint::from_report(&report, provenance);
    save_checkpoint(&ck, &cfg.out(CHECKPOINT_FILE))?;
    write_report(
        &cfg.out(LOSS_FILE),
        &loss_history_to_string(&report.loss_history, 0, &cfg.header()),
    )?;
    let summary = TrainSummary {
        config: cfg.hash(),
        epochs: report.total_epochs,
        final_loss: report.final_loss(),
        best_epoch: report.best_epoch,
        stopped_by: report.stopped_by,
        t_time: report.wall_time,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_report(&cfg.out(TRAIN_SUMMARY_FILE), &(text + "\n"))?;
    eprintln!(
        "trained {} epochs ({:?}), final loss {:e}, T-time {:.3} s",
        summary.epochs, summary.stopped_by, summary.final_loss, summary.t_time
    );
    Ok(summary)
}

fn load_matching_checkpoint(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<Checkpoint> {
    let path = path.map_or_else(|| cfg.out(CHECKPOINT_FILE), Path::to_path_buf);
    let ck = load_checkpoint(&path)?;
    if ck.params.config != cfg.net {
        return Err(Error::Validation(format!(
            "checkpoint {} was built with a different network configuration",
            path.display()
        )));
    }
    Ok(ck)
}

/// Output of [`cmd_predict`].
#[derive(Debug, Clone)]
pub struct Predictions {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Per-path MSE against the reference, when one is available.
    pub mse: Option<Vec<f64>>,
}

/// Evaluates the operator on the paths of `input` or on `n_eval` fresh
/// evaluation paths. With `terminal` only the last grid time is queried and,
/// for a terminal-sensor network, only `B_T` is sampled.
pub fn cmd_predict(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    terminal: bool,
) -> Result<Predictions> {
    let ck = load_matching_checkpoint(cfg, checkpoint)?;
    let params = &ck.params;
    let grid = cfg.grid.grid()?;
    let times = if terminal {
        vec![grid.end()]
    } else {
        grid.times()
    };

    let (values, mse) = if let Some(input) = input {
        let ds = read_dataset(input)?;
        if ds.grid != grid {
            return Err(Error::Validation(
                "input dataset grid differs from the configuration".into(),
            ));
        }
        let x0s = ds.x0s();
        let sensors = params.config.sensor_set(&grid)?;
        let bvalues: Vec<Vec<f64>> = ds
            .brownian
            .iter()
            .map(|b| params.config.sensor_values(b))
            .collect();
        let values = params.predict(&sensors, &x0s, &bvalues, &times)?;
        let mse = if terminal {
            None
        } else {
            Some(per_path_mse(params, &x0s, &ds.brownian, &ds.solutions)?)
        };
        (values, mse)
    } else {
        let seed = eval_seed(cfg.seed);
        let n = cfg.data.n_eval;
        let x0s = cfg.initial.sample(n, seed);
        if terminal && params.config.sensors == SensorMode::Terminal {
            let sensors = SensorSet::terminal(&grid)?;
            let mut flat = Vec::new();
            sample_sensor_values(&sensors, seed, n, &mut flat);
            let bvalues: Vec<Vec<f64>> = flat.into_iter().map(|b| vec![b]).collect();
            (params.predict(&sensors, &x0s, &bvalues, &times)?, None)
        } else {
            let paths = sample_brownian_batch(&grid, seed, n);
            let sensors = params.config.sensor_set(&grid)?;
            let bvalues: Vec<Vec<f64>> = paths
                .iter()
                .map(|b| params.config.sensor_values(b))
                .collect();
            let values = params.predict(&sensors, &x0s, &bvalues, &times)?;
            let mse = if terminal || cfg.model.is_mean_field() {
                None
            } else {
                let truths = solve_paths(cfg, &x0s, &paths)?;
                Some(per_path_mse(params, &x0s, &paths, &truths)?)
            };
            (values, mse)
        }
    };

    let mut text = format!(
        "{}\n# {}\npath_id,k,t,X\n",
        cfg.header(),
        cfg.describe_defaults()
    );
    for (i, row) in values.iter().enumerate() {
        for (k, (t, v)) in times.iter().zip(row).enumerate() {
            text.push_str(&format!("{i},{k},{t},{v}\n"));
        }
    }
    write_report(&cfg.out(PREDICTIONS_FILE), &text)?;
    if let Some(m) = &mse {
        write_report(&cfg.out(MSE_FILE), &values_table("mse", m, &cfg.header()))?;
    }
    Ok(Predictions { times, values, mse })
}

/// Multiscale table of a checkpoint, or of the reference solver with
/// `exact_stub`.
pub fn cmd_multiscale(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    exact_stub: bool,
) -> Result<Vec<crate::evaluation::MultiscaleRow>> {
    let grid = cfg.grid.grid()?;
    let opts = MultiscaleOptions {
        scales: cfg.multiscale.scales.clone(),
        n_paths: cfg.data.n_eval,
        base_seed: eval_seed(cfg.seed),
        initial: cfg.initial,
        reuse_increments: cfg.multiscale.reuse_increments,
    };
    let stub;
    let ck;
    let operator: &dyn PathOperator = if exact_stub {
        stub = ExactOperator(cfg.model.clone());
        &stub
    } else {
        ck = load_matching_checkpoint(cfg, checkpoint)?;
        &ck.params
    };
    let rows = multiscale_eval(operator, &cfg.model, &grid, &opts)?;
    let header = format!("{}\n# {}", cfg.header(), cfg.describe_defaults());
    write_report(&cfg.out(MULTISCALE_FILE), &multiscale_table(&rows, &header))?;
    Ok(rows)
}

/// Cost table over the configured `(N, M)` lattice: one particle-method row
/// and one operator row per cell.
pub fn cmd_bench(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Vec<BenchRow>> {
    let model = cfg.model.mean_field_model().ok_or_else(|| {
        Error::Config(format!(
            "bench compares against the particle method and needs a mean-field model, got {}",
            cfg.model.descriptor()
        ))
    })?;
    let ck = load_matching_checkpoint(cfg, checkpoint)?;
    let ck_path = checkpoint.map_or_else(|| cfg.out(CHECKPOINT_FILE), Path::to_path_buf);
    let t_time = ck_path
        .parent()
        .map(|d| d.join(TRAIN_SUMMARY_FILE))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|s| serde_json::from_str::<TrainSummary>(&s).ok())
        .map(|s| s.t_time);
    let protocol = TimingProtocol {
        warmup: cfg.bench.warmup,
        repetitions: cfg.bench.repetitions,
    };
    let h = cfg.grid.h;
    let mut rows = Vec::new();
    for &m in &cfg.bench.ms {
        for &n in &cfg.bench.ns {
            let emp = bench_emp(&model, n, m, h, cfg.seed, &protocol)?;
            rows.push(BenchRow {
                method: "EMP".into(),
                n,
                m,
                timing: emp,
            });
            let grid = TimeGrid::new(0.0, h, m)?;
            let sensors = ck.params.config.sensor_set(&grid)?;
            let op = bench_operator(&ck.params, &sensors, n, cfg.seed, t_time, &protocol)?;
            rows.push(BenchRow {
                method: "operator".into(),
                n,
                m,
                timing: op,
            });
        }
    }
    write_report(&cfg.out(BENCH_FILE), &bench_table(&rows, &cfg.header()))?;
    Ok(rows)
}

/// Result of [`cmd_mv_sample`].
#[derive(Debug, Clone)]
pub struct MvSample {
    pub samples: Vec<f64>,
    pub ks: Option<f64>,
}

/// Draws `sample.n` values of `X_T` from the operator using only `B_T`
/// (or the full path when the network reads every grid point), and compares
/// them with a reference sample.
pub fn cmd_mv_sample(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    reference: Option<&Path>,
) -> Result<MvSample> {
    let ck = load_matching_checkpoint(cfg, checkpoint)?;
    let params = &ck.params;
    let base = cfg.grid.grid()?;
    let t = cfg.sample.t.unwrap_or_else(|| base.end());
    let n = cfg.sample.n;
    if n == 0 {
        return Err(Error::Config("sample.n must be at least 1".into()));
    }
    let seed = eval_seed(cfg.seed);
    let x0s = cfg.initial.sample(n, seed);
    let seeds = path_seeds(seed, n);
    let samples: Vec<f64> = match params.config.sensors {
        SensorMode::Terminal => {
            let sensors = SensorSet::new(vec![t])?;
            let mut flat = Vec::new();
            sample_sensor_values(&sensors, seed, n, &mut flat);
            let bvalues: Vec<Vec<f64>> = flat.into_iter().map(|b| vec![b]).collect();
            params.predict(&sensors, &x0s, &bvalues, &[t])?
        }
        SensorMode::Grid => {
            let h = cfg.grid.h;
            let steps = ((t - cfg.grid.t0) / h).round();
            let grid = TimeGrid::new(cfg.grid.t0, h, steps as usize + 1)?;
            if (grid.end() - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::Config(format!("sample.t = {t} is not on the grid")));
            }
            let paths: Vec<BrownianPath> =
                seeds.iter().map(|&s| sample_brownian(&grid, s)).collect();
            let sensors = params.config.sensor_set(&grid)?;
            let bvalues: Vec<Vec<f64>> = paths
                .iter()
                .map(|b| params.config.sensor_values(b))
                .collect();
            params.predict(&sensors, &x0s, &bvalues, &[grid.end()])?
        }
    }
    .into_iter()
    .map(|row| row[0])
    .collect();

    let header = format!("{}\n# {} t={t}", cfg.header(), cfg.describe_defaults());
    write_report(
        &cfg.out(SAMPLES_FILE),
        &values_table("x", &samples, &header),
    )?;
    let ecdf = Ecdf::new(&samples)?;
    write_report(&cfg.out(SAMPLES_ECDF_FILE), &ecdf_table(&ecdf, &header))?;

    let reference = match reference {
        Some(p) => Some(p.to_path_buf()),
        None => Some(cfg.out(REFERENCE_FILE)).filter(|p| p.exists()),
    };
    let ks = match reference {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let r = Ecdf::new(&parse_values(&text)?)?;
            write_report(&cfg.out(REFERENCE_ECDF_FILE), &ecdf_table(&r, &header))?;
            let ks = ks_distance(&ecdf, &r);
            write_report(
                &cfg.out(KS_FILE),
                &format!(
                    "{header}\nn,reference_n,ks\n{},{},{ks}\n",
                    ecdf.len(),
                    r.len()
                ),
            )?;
            eprintln!("KS distance to reference: {ks:.4}");
            Some(ks)
        }
        None => None,
    };
    Ok(MvSample { samples, ks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_model_lists_known_ones() {
        let err = ExperimentConfig::from_toml("[model]\nkind = \"heston\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("burgers") && msg.contains("ou"), "{msg}");
    }

    #[test]
    fn rejects_inconsistent_configs() {
        assert!(ExperimentConfig::from_toml("[data]\nn_train = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[model]\nkind = \"burgers\"\nsigma = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nsolver = \"emp\"\n").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1\n").is_err());
        let ok =
            "[model]\nkind = \"burgers\"\nsigma = 1.0\n[data]\nsolver = \"emp\"\nparticles = 50\n";
        assert!(ExperimentConfig::from_toml(ok).is_ok());
    }
}
