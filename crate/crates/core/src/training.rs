//! Operator fitting: minimize the mean squared trajectory error of the network
//! over a path dataset with Adam, stopping once the loss reaches a threshold.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::net::{forward_batch, init_params, DeepOnetParams, NetConfig};
use crate::paths::rng::{derive_seed, SplitMix64};
use crate::paths::PathDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs run by one call of [`train`] or [`resume`].
    pub max_epochs: usize,
    /// Training stops once an epoch's loss is at or below this value.
    pub threshold: f64,
    /// Paths per optimizer step; `None` uses the whole dataset.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds the mini-batch order.
    pub seed: u64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// With a validation set: stop after this many validation checks without
    /// improvement and return the best parameters seen.
    pub patience: Option<usize>,
    /// Epochs between validation checks.
    pub validate_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 20_000,
            threshold: 1e-5,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            clip_norm: None,
            patience: None,
            validate_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::invalid("threshold must be non-negative"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.validate_every == 0 {
            return Err(Error::invalid("validate_every must be at least 1"));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("clip_norm must be positive"));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(Error::invalid(format!(
                "parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Records the mean squared trajectory error of `params` over the paths at
/// `indices` on `tape`; returns the loss node and the parameter leaves.
pub fn record_loss(
    tape: &mut Tape,
    params: &DeepOnetParams,
    dataset: &PathDataset,
    indices: &[usize],
    trainable: bool,
) -> Result<(Var, Vec<Var>)> {
    if indices.is_empty() {
        return Err(Error::invalid("trajectory loss over an empty dataset"));
    }
    let cfg = &params.config;
    let grid = dataset.grid;
    let sensors = cfg.sensor_set(&grid)?;
    let queries = grid.times();
    let bvalues: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| cfg.sensor_values(&dataset.brownian[i]))
        .collect();
    let refs: Vec<&[f64]> = bvalues.iter().map(Vec::as_slice).collect();
    let x0s: Vec<f64> = indices.iter().map(|&i| dataset.solutions[i].x0).collect();

    let pv = params.to_tape(tape, trainable);
    let (pred, _) = forward_batch(tape, &pv, cfg, sensors.times(), &x0s, &refs, &queries)?;
    let n = indices.len();
    let target: Vec<f64> = (0..grid.len())
        .flat_map(|k| indices.iter().map(move |&i| dataset.solutions[i].values[k]))
        .collect();
    let target = tape.constant(Tensor::matrix(grid.len(), n, target)?);
    let diff = tape.sub(pred, target)?;
    let loss = tape.mean_sq(diff)?;
    Ok((loss, pv.all))
}

/// `(1 / MN) sum_i sum_k (F(X0_i, B_i)(t_k) - X_i(t_k))^2` over the whole dataset.
pub fn trajectory_loss(params: &DeepOnetParams, dataset: &PathDataset) -> Result<f64> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut tape = Tape::new();
    let (loss, _) = record_loss(&mut tape, params, dataset, &all, false)?;
    Ok(tape.value(loss).data()[0])
}

/// Loss and its gradient with respect to every parameter tensor, over the
/// paths at `indices`.
pub fn loss_and_grads(
    params: &DeepOnetParams,
    dataset: &PathDataset,
    indices: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let (loss, leaves) = record_loss(&mut tape, params, dataset, indices, true)?;
    let grads = tape.backward(loss)?;
    let g = leaves.iter().map(|&v| grads.wrt(&tape, v)).collect();
    Ok((tape.value(loss).data()[0], g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    EpochCap,
    /// Validation loss stopped improving.
    EarlyStop,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub final_params: DeepOnetParams,
    /// Loss of each epoch of this call, measured before its update.
    pub loss_history: Vec<f64>,
    /// `(epoch, validation loss)` at each check, when validating.
    pub val_history: Vec<(usize, f64)>,
    /// Epoch whose parameters were returned, when validating.
    pub best_epoch: Option<usize>,
    pub stopped_by: StopReason,
    pub wall_time: f64,
    pub optimizer: AdamState,
    /// Epochs completed including any resumed from a checkpoint.
    pub total_epochs: usize,
    pub seed: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("at least one epoch")
    }
}

/// Fresh network trained on `dataset`.
pub fn train(
    dataset: &PathDataset,
    net_config: &NetConfig,
    train_config: &TrainConfig,
) -> Result<TrainReport> {
    train_validated(dataset, None, net_config, train_config)
}

/// Fresh network trained on `dataset`; with a `validation` set the returned
/// parameters are those with the lowest validation loss.
pub fn train_validated(
    dataset: &PathDataset,
    validation: Option<&PathDataset>,
    net_config: &NetConfig,
    train_config: &TrainConfig,
) -> Result<TrainReport> {
    let params = init_params(net_config)?;
    let optimizer = AdamState::new(&params.tensors);
    train_from(dataset, validation, params, optimizer, 0, train_config)
}

/// Continues training from a checkpoint, including its optimizer state.
pub fn resume(
    dataset: &PathDataset,
    validation: Option<&PathDataset>,
    checkpoint: Checkpoint,
    train_config: &TrainConfig,
) -> Result<TrainReport> {
    let optimizer = checkpoint
        .optimizer
        .ok_or_else(|| Error::Validation("checkpoint carries no optimizer state".into()))?;
    train_from(
        dataset,
        validation,
        checkpoint.params,
        optimizer,
        checkpoint.meta.epochs,
        train_config,
    )
}

fn batches(n: usize, batch: Option<usize>, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    match batch {
        Some(b) if b < n => {
            let mut rng = SplitMix64::new(derive_seed(seed, epoch as u64));
            for i in (1..n).rev() {
                order.swap(i, rng.index(i + 1));
            }
            order.chunks(b).map(<[usize]>::to_vec).collect()
        }
        _ => vec![order],
    }
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
}

fn train_from(
    dataset: &PathDataset,
    validation: Option<&PathDataset>,
    mut params: DeepOnetParams,
    mut optimizer: AdamState,
    start_epoch: usize,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if let Some(v) = validation {
        v.validate()?;
        if v.is_empty() || v.grid != dataset.grid {
            return Err(Error::Validation(
                "validation set must be non-empty and share the training grid".into(),
            ));
        }
    }
    let start = Instant::now();
    let n = dataset.len();
    let mut history = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(f64, usize, DeepOnetParams)> = None;
    let mut checks_since_best = 0usize;
    let mut stopped_by = StopReason::EpochCap;

    for e in 0..cfg.max_epochs {
        let epoch = start_epoch + e;
        if let Some(v) = validation {
            if e % cfg.validate_every == 0 {
                let vl = trajectory_loss(&params, v)?;
                val_history.push((epoch, vl));
                if best.as_ref().is_none_or(|b| vl < b.0) {
                    best = Some((vl, epoch, params.clone()));
                    checks_since_best = 0;
                } else {
                    checks_since_best += 1;
                    if cfg.patience.is_some_and(|p| checks_since_best >= p) {
                        stopped_by = StopReason::EarlyStop;
                        break;
                    }
                }
            }
        }
        let mut epoch_loss = 0.0;
        for idx in batches(n, cfg.batch_size, cfg.seed, epoch) {
            let (loss, mut grads) = loss_and_grads(&params, dataset, &idx)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            adam_step(&mut params.tensors, &grads, &mut optimizer, cfg)?;
            epoch_loss += loss * idx.len() as f64 / n as f64;
        }
        history.push(epoch_loss);
        if epoch_loss <= cfg.threshold {
            stopped_by = StopReason::Threshold;
            break;
        }
    }
    if history.is_empty() {
        return Err(Error::invalid("training stopped before the first epoch"));
    }

    let best_epoch = match (validation, best) {
        (Some(v), Some((vl, be, bp))) => {
            let last = trajectory_loss(&params, v)?;
            val_history.push((start_epoch + history.len(), last));
            if last < vl {
                Some(start_epoch + history.len())
            } else {
                params = bp;
                Some(be)
            }
        }
        _ => None,
    };

    Ok(TrainReport {
        final_params: params,
        total_epochs: start_epoch + history.len(),
        loss_history: history,
        val_history,
        best_epoch,
        stopped_by,
        wall_time: start.elapsed().as_secs_f64(),
        optimizer,
        seed: cfg.seed,
    })
}

pub const CHECKPOINT_FORMAT: &str = "sdeop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub final_loss: f64,
    pub epochs: usize,
    pub seed: u64,
    pub stopped_by: StopReason,
    /// Epoch of the returned parameters when a validation set chose them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    /// Free-form provenance, e.g. tool version and config hash.
    #[serde(default)]
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DeepOnetParams,
    pub meta: CheckpointMeta,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_report(report: &TrainReport, provenance: impl Into<String>) -> Self {
        Self {
            params: report.final_params.clone(),
            meta: CheckpointMeta {
                final_loss: report.final_loss(),
                epochs: report.total_epochs,
                seed: report.seed,
                stopped_by: report.stopped_by,
                best_epoch: report.best_epoch,
                provenance: provenance.into(),
            },
            optimizer: Some(report.optimizer.clone()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    net: NetConfig,
    training: CheckpointMeta,
    tensors: Vec<NamedTensor>,
    optimizer: Option<AdamState>,
}

pub fn checkpoint_to_string(ck: &Checkpoint) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        net: ck.params.config.clone(),
        training: ck.meta.clone(),
        tensors: ck
            .params
            .names()
            .into_iter()
            .zip(&ck.params.tensors)
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
        optimizer: ck.optimizer.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
    s.push('\n');
    s
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format {
        line: e.line(),
        message: e.to_string(),
    })?;
    let format = value.get("format").and_then(|v| v.as_str());
    if format != Some(CHECKPOINT_FORMAT) {
        return Err(Error::Validation(format!(
            "not a checkpoint (format {format:?})"
        )));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(CHECKPOINT_VERSION as u64) {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Format {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut tensors = Vec::with_capacity(file.tensors.len());
    let names = {
        let probe = init_params(&file.net)?;
        probe.names()
    };
    for (nt, expected) in file.tensors.into_iter().zip(&names) {
        if &nt.name != expected {
            return Err(Error::Validation(format!(
                "tensor {} found where {expected} was expected",
                nt.name
            )));
        }
        tensors.push(Tensor::new(nt.shape, nt.data)?);
    }
    let params = DeepOnetParams::from_tensors(file.net, tensors)?;
    if let Some(opt) = &file.optimizer {
        let ok = opt.m.len() == params.tensors.len()
            && opt.v.len() == params.tensors.len()
            && params
                .tensors
                .iter()
                .enumerate()
                .all(|(i, t)| opt.m[i].len() == t.len() && opt.v[i].len() == t.len());
        if !ok {
            return Err(Error::Validation(
                "optimizer state does not match the network".into(),
            ));
        }
    }
    Ok(Checkpoint {
        params,
        meta: file.training,
        optimizer: file.optimizer,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

/// Two-column `epoch,loss` table, epochs numbered from `first_epoch`.
pub fn loss_history_to_string(history: &[f64], first_epoch: usize, header: &str) -> String {
    let mut out = String::new();
    if !header.is_empty() {
        out.push_str(header);
        out.push('\n');
    }
    out.push_str("epoch,loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", first_epoch + i, l));
    }
    out
}
