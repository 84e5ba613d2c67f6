//! Error metrics, the multiscale error table, empirical CDF comparison and
//! the noise/solve/train timing protocol, plus plain-text report writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::DeepOnetParams;
use crate::paths::rng::{derive_seed, GaussianStream};
use crate::paths::{path_seeds, sample_brownian, BrownianPath, SensorSet, SolutionPath, TimeGrid};
use crate::solvers::{emp_solve_with, EmpOptions, McKeanVlasovModel, ModelSpec};

/// Added to a base seed to obtain evaluation seeds disjoint from training.
pub const EVAL_SEED_OFFSET: u64 = 0x5EED_0000_0000_0001;

/// Seed used for evaluation paths derived from `base_seed`.
pub fn eval_seed(base_seed: u64) -> u64 {
    base_seed.wrapping_add(EVAL_SEED_OFFSET)
}

fn check_same_grid(pred: &SolutionPath, truth: &SolutionPath) -> Result<()> {
    if pred.grid != truth.grid || pred.values.len() != truth.values.len() {
        return Err(Error::invalid(format!(
            "paths on different grids ({} vs {} points)",
            pred.values.len(),
            truth.values.len()
        )));
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean over grid points of the squared pointwise difference.
pub fn path_mse(pred: &SolutionPath, truth: &SolutionPath) -> Result<f64> {
    check_same_grid(pred, truth)?;
    Ok(mse(&pred.values, &truth.values))
}

fn min_max_normalize(values: &[f64], which: &str) -> Result<Vec<f64>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !(hi - lo).is_finite() {
        return Err(Error::Degenerate(format!(
            "{which} path is constant or non-finite; min-max normalization undefined"
        )));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// MSE after scaling prediction and truth independently to `[0, 1]` by their
/// own minimum and maximum.
pub fn standardized_mse(pred: &SolutionPath, truth: &SolutionPath) -> Result<f64> {
    check_same_grid(pred, truth)?;
    let p = min_max_normalize(&pred.values, "predicted")?;
    let t = min_max_normalize(&truth.values, "true")?;
    Ok(mse(&p, &t))
}

/// Anything that maps initial values and Brownian paths to solution values on
/// each path's grid.
pub trait PathOperator: Sync {
    fn predict_paths(&self, x0s: &[f64], paths: &[BrownianPath]) -> Result<Vec<Vec<f64>>>;
}

impl PathOperator for DeepOnetParams {
    fn predict_paths(&self, x0s: &[f64], paths: &[BrownianPath]) -> Result<Vec<Vec<f64>>> {
        DeepOnetParams::predict_paths(self, x0s, paths)
    }
}

/// Stand-in operator that answers with the reference solver itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactOperator(pub ModelSpec);

impl PathOperator for ExactOperator {
    fn predict_paths(&self, x0s: &[f64], paths: &[BrownianPath]) -> Result<Vec<Vec<f64>>> {
        x0s.par_iter()
            .zip(paths)
            .map(|(&x0, b)| self.0.reference(x0, b).map(|s| s.values))
            .collect()
    }
}

/// How evaluation paths obtain their initial value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialValue {
    Fixed { value: f64 },
    StandardNormal,
}

impl Default for InitialValue {
    fn default() -> Self {
        InitialValue::Fixed { value: 1.0 }
    }
}

impl InitialValue {
    /// `n` initial values; random draws are keyed by `seed` alone.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        match *self {
            InitialValue::Fixed { value } => vec![value; n],
            InitialValue::StandardNormal => {
                let mut g = GaussianStream::new(derive_seed(seed, u64::MAX));
                (0..n).map(|_| g.next()).collect()
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            InitialValue::Fixed { value } => format!("fixed({value})"),
            InitialValue::StandardNormal => "standard-normal".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleRow {
    pub scale_factor: f64,
    pub mean: f64,
    /// Population standard deviation over the successful paths.
    pub std: f64,
    pub n_paths: usize,
    /// Paths whose error could not be computed (solver failure or a
    /// constant path that cannot be normalized).
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct MultiscaleOptions {
    pub scales: Vec<f64>,
    pub n_paths: usize,
    pub base_seed: u64,
    pub initial: InitialValue,
    /// Reuse the same seeds at every scale instead of fresh ones per scale.
    pub reuse_increments: bool,
}

/// Mean and standard deviation of the standardized MSE of `operator` against
/// the model's reference solution, on `base_grid` rescaled by each factor.
pub fn multiscale_eval(
    operator: &dyn PathOperator,
    model: &ModelSpec,
    base_grid: &TimeGrid,
    opts: &MultiscaleOptions,
) -> Result<Vec<MultiscaleRow>> {
    if opts.n_paths == 0 {
        return Err(Error::invalid(
            "multiscale evaluation needs at least one path",
        ));
    }
    if model.is_mean_field() {
        return Err(Error::invalid(format!(
            "multiscale evaluation needs a path-by-path model, got {}",
            model.descriptor()
        )));
    }
    let mut rows = Vec::with_capacity(opts.scales.len());
    for (si, &scale) in opts.scales.iter().enumerate() {
        let grid = base_grid.rescale(scale)?;
        let seed = if opts.reuse_increments {
            opts.base_seed
        } else {
            derive_seed(opts.base_seed, si as u64)
        };
        let paths: Vec<BrownianPath> = path_seeds(seed, opts.n_paths)
            .into_par_iter()
            .map(|s| sample_brownian(&grid, s))
            .collect();
        let x0s = opts.initial.sample(opts.n_paths, seed);
        let preds = operator.predict_paths(&x0s, &paths)?;
        let errors: Vec<Option<f64>> = preds
            .into_par_iter()
            .zip(paths.par_iter().zip(&x0s))
            .map(|(pred, (b, &x0))| {
                let truth = model.reference(x0, b).ok()?;
                let pred = SolutionPath {
                    grid,
                    x0,
                    values: pred,
                };
                standardized_mse(&pred, &truth)
                    .ok()
                    .filter(|e| e.is_finite())
            })
            .collect();
        let ok: Vec<f64> = errors.iter().flatten().copied().collect();
        let failures = errors.len() - ok.len();
        let (mean, std) = mean_std(&ok);
        rows.push(MultiscaleRow {
            scale_factor: scale,
            mean,
            std,
            n_paths: ok.len(),
            failures,
        });
    }
    Ok(rows)
}

/// Mean and population standard deviation; NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-path MSE of `operator` on the given paths against `truths`.
pub fn per_path_mse(
    operator: &dyn PathOperator,
    x0s: &[f64],
    paths: &[BrownianPath],
    truths: &[SolutionPath],
) -> Result<Vec<f64>> {
    if truths.len() != paths.len() {
        return Err(Error::invalid("one truth path per Brownian path required"));
    }
    let preds = operator.predict_paths(x0s, paths)?;
    preds
        .into_iter()
        .zip(truths)
        .map(|(values, truth)| {
            let pred = SolutionPath {
                grid: truth.grid,
                x0: truth.x0,
                values,
            };
            path_mse(&pred, truth)
        })
        .collect()
}

/// Empirical distribution function of a finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical CDF of an empty sample"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::invalid("empirical CDF sample contains NaN"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `F(x) = #{samples <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// `(x, F(x))` at each distinct sample value.
    pub fn breakpoints(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => out.push((x, f)),
            }
        }
        out
    }
}

/// Supremum distance between two empirical CDFs.
pub fn ks_distance(a: &Ecdf, b: &Ecdf) -> f64 {
    let (xa, xb) = (&a.sorted, &b.sorted);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: f64 = 0.0;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Seconds spent generating noise, producing solutions and (for the
/// operator) training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingTriple {
    pub b_time: f64,
    pub o_time: f64,
    pub t_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingProtocol {
    pub warmup: usize,
    pub repetitions: usize,
}

impl Default for TimingProtocol {
    fn default() -> Self {
        Self {
            warmup: 1,
            repetitions: 5,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs `body` on a single-thread pool: warm-up runs first, then the median
/// of the timed repetitions for each of the two phases `body` reports.
fn time_phases<F>(protocol: &TimingProtocol, body: F) -> Result<(f64, f64)>
where
    F: Fn() -> Result<(f64, f64)> + Send + Sync,
{
    let reps = protocol.repetitions.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("cannot build timing thread pool: {e}")))?;
    pool.install(|| {
        for _ in 0..protocol.warmup {
            body()?;
        }
        let mut b = Vec::with_capacity(reps);
        let mut o = Vec::with_capacity(reps);
        for _ in 0..reps {
            let (tb, to) = body()?;
            b.push(tb);
            o.push(to);
        }
        Ok((median(b), median(o)))
    })
}

/// Timing of the particle method: `n` full Brownian paths on an `m`-point
/// grid of step `h`, then the synchronous particle iteration with the
/// generic empirical drift.
pub fn bench_emp(
    model: &McKeanVlasovModel,
    n: usize,
    m: usize,
    h: f64,
    seed: u64,
    protocol: &TimingProtocol,
) -> Result<TimingTriple> {
    let grid = TimeGrid::new(0.0, h, m)?;
    let x0s = InitialValue::StandardNormal.sample(n, seed);
    let seeds = path_seeds(seed, n);
    let (b_time, o_time) = time_phases(protocol, || {
        let start = Instant::now();
        let paths: Vec<BrownianPath> = seeds.iter().map(|&s| sample_brownian(&grid, s)).collect();
        let b = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let ens = emp_solve_with(model, &x0s, &paths, EmpOptions::default())?;
        let o = start.elapsed().as_secs_f64();
        std::hint::black_box(ens);
        Ok((b, o))
    })?;
    Ok(TimingTriple {
        b_time,
        o_time,
        t_time: None,
    })
}

/// `B` at the sensors for `n` paths, written path after path into one flat
/// buffer. All paths consume one Gaussian stream keyed by `seed`, so the
/// first path equals `sample_brownian_at_sensors(sensors, seed)`.
pub fn sample_sensor_values(sensors: &SensorSet, seed: u64, n: usize, out: &mut Vec<f64>) {
    let times = sensors.times();
    out.clear();
    out.reserve(n * times.len());
    let mut g = GaussianStream::new(seed);
    for _ in 0..n {
        let mut prev = 0.0;
        let mut b = 0.0;
        for &t in times {
            let gap = t - prev;
            if gap > 0.0 {
                b += gap.sqrt() * g.next();
            }
            out.push(b);
            prev = t;
        }
    }
}

/// Timing of the operator: sensor-only Brownian sampling for `n` paths,
/// then inference at the last sensor time. `t_time` is the training time
/// the caller attaches.
pub fn bench_operator(
    params: &DeepOnetParams,
    sensors: &SensorSet,
    n: usize,
    seed: u64,
    t_time: Option<f64>,
    protocol: &TimingProtocol,
) -> Result<TimingTriple> {
    let x0s = InitialValue::StandardNormal.sample(n, seed);
    let query = [*sensors.times().last().expect("sensor set is non-empty")];
    let k = sensors.len();
    let (b_time, o_time) = time_phases(protocol, || {
        let mut flat = Vec::new();
        let start = Instant::now();
        sample_sensor_values(sensors, seed, n, &mut flat);
        let b = start.elapsed().as_secs_f64();
        let bvalues: Vec<Vec<f64>> = flat.chunks(k).map(<[f64]>::to_vec).collect();
        let start = Instant::now();
        let out = params.predict(sensors, &x0s, &bvalues, &query)?;
        let o = start.elapsed().as_secs_f64();
        std::hint::black_box(out);
        Ok((b, o))
    })?;
    Ok(TimingTriple {
        b_time,
        o_time,
        t_time,
    })
}

/// One row of the cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub timing: TimingTriple,
}

/// First line of every report: tool version and configuration hash.
pub fn report_header(config_hash: &str) -> String {
    format!("# sdeop {} config={config_hash}", env!("CARGO_PKG_VERSION"))
}

fn with_header(header: &str, body: String) -> String {
    if header.is_empty() {
        body
    } else {
        format!("{header}\n{body}")
    }
}

pub fn multiscale_table(rows: &[MultiscaleRow], header: &str) -> String {
    let mut s = String::from("scale,mean,std,n\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{}",
            r.scale_factor, r.mean, r.std, r.n_paths
        );
    }
    with_header(header, s)
}

pub fn bench_table(rows: &[BenchRow], header: &str) -> String {
    let mut s = String::from("method,N,M,B-time,O-time,T-time\n");
    for r in rows {
        let t = r
            .timing
            .t_time
            .map_or_else(|| "x".to_string(), |t| format!("{t:e}"));
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{}",
            r.method, r.n, r.m, r.timing.b_time, r.timing.o_time, t
        );
    }
    with_header(header, s)
}

/// ECDF breakpoints `x,F` for plotting.
pub fn ecdf_table(ecdf: &Ecdf, header: &str) -> String {
    let mut s = String::from("x,F\n");
    for (x, f) in ecdf.breakpoints() {
        let _ = writeln!(s, "{x},{f}");
    }
    with_header(header, s)
}

/// One value per line under a single column name.
pub fn values_table(column: &str, values: &[f64], header: &str) -> String {
    let mut s = format!("{column}\n");
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    with_header(header, s)
}

/// Reads a file written by [`values_table`] (or any one-column table),
/// skipping `#` comment lines and the column header.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.parse::<f64>().is_err() {
                continue;
            }
        }
        let v = line.parse::<f64>().map_err(|e| Error::Format {
            line: i + 1,
            message: format!("{line:?}: {e}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_report(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
