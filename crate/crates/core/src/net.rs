//! Recurrent DeepONet for SDE solution operators.
//!
//! The branch network sees `concat(RNN(B), X0)`, the trunk network sees the
//! query time `t`, and the prediction is the dot product of the two
//! `p`-dimensional outputs:
//!
//! ```text
//! F(X0, B)(t) = < branch(rnn(B), X0), trunk(t) >
//! ```
//!
//! The RNN is a single tanh layer, `h_j = tanh(b_j W_in + h_{j-1} W_rec + bias)`
//! with `h_0 = 0`. Two ways of choosing which hidden state feeds the branch are
//! supported (see [`Encoding`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::paths::rng::SplitMix64;
use crate::paths::{BrownianPath, SensorSet, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

/// What the RNN reads at each sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RnnInput {
    /// Brownian values `B(s_j)`.
    #[default]
    Values,
    /// Increments `B(s_j) - B(s_{j-1})`, with `B(s_{-1}) = 0`.
    Increments,
}

/// Which RNN state the branch network consumes for a query time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// State after the sensors at times `<= t` (the zero state when there are
    /// none), so the prediction at `t` depends only on the path up to `t`.
    #[default]
    Causal,
    /// Final state after the whole sensor sequence, shared by every query.
    Terminal,
}

/// Where the Brownian input is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SensorMode {
    /// Every grid point.
    #[default]
    Grid,
    /// Only the last grid point, `B_T`.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub rnn_hidden: usize,
    /// Widths of the branch layers; the last one is `p`.
    pub branch_layers: Vec<usize>,
    /// Widths of the trunk layers; the last one is `p`.
    pub trunk_layers: Vec<usize>,
    pub p: usize,
    pub activation: Activation,
    pub init_seed: u64,
    pub rnn_input: RnnInput,
    pub encoding: Encoding,
    pub sensors: SensorMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            rnn_hidden: 64,
            branch_layers: vec![128, 128, 64],
            trunk_layers: vec![128, 128, 64],
            p: 64,
            activation: Activation::Tanh,
            init_seed: 0,
            rnn_input: RnnInput::Values,
            encoding: Encoding::Causal,
            sensors: SensorMode::Grid,
        }
    }
}

impl NetConfig {
    /// Small network used by tests and gradient checks.
    pub fn tiny(rnn_hidden: usize, p: usize) -> Self {
        Self {
            rnn_hidden,
            branch_layers: vec![p + 2, p],
            trunk_layers: vec![p + 2, p],
            p,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rnn_hidden == 0 || self.p == 0 {
            return Err(Error::invalid("rnn_hidden and p must be positive"));
        }
        for (name, layers) in [
            ("branch", &self.branch_layers),
            ("trunk", &self.trunk_layers),
        ] {
            match layers.last() {
                None => return Err(Error::invalid(format!("{name} network has no layers"))),
                Some(&w) if w != self.p => {
                    return Err(Error::invalid(format!(
                        "{name} network ends with width {w}, expected p = {}",
                        self.p
                    )))
                }
                _ => {}
            }
            if layers.contains(&0) {
                return Err(Error::invalid(format!(
                    "{name} network has a zero-width layer"
                )));
            }
        }
        Ok(())
    }

    /// Sensor set used for paths on `grid`.
    pub fn sensor_set(&self, grid: &TimeGrid) -> Result<SensorSet> {
        match self.sensors {
            SensorMode::Grid => SensorSet::from_grid(grid),
            SensorMode::Terminal => SensorSet::terminal(grid),
        }
    }

    /// Brownian values of `path` at the configured sensors.
    pub fn sensor_values(&self, path: &BrownianPath) -> Vec<f64> {
        match self.sensors {
            SensorMode::Grid => path.values.clone(),
            SensorMode::Terminal => vec![path.terminal()],
        }
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.rnn_hidden;
        let mut out = vec![
            ("rnn.w_in".to_string(), vec![1, h]),
            ("rnn.w_rec".to_string(), vec![h, h]),
            ("rnn.bias".to_string(), vec![h]),
        ];
        let mut fan_in = h + 1;
        for (i, &w) in self.branch_layers.iter().enumerate() {
            out.push((format!("branch.{i}.weight"), vec![fan_in, w]));
            out.push((format!("branch.{i}.bias"), vec![w]));
            fan_in = w;
        }
        let mut fan_in = 1;
        for (i, &w) in self.trunk_layers.iter().enumerate() {
            out.push((format!("trunk.{i}.weight"), vec![fan_in, w]));
            out.push((format!("trunk.{i}.bias"), vec![w]));
            fan_in = w;
        }
        out
    }
}

/// Every trainable tensor of the network, in a fixed order:
/// `rnn.w_in (1 x H)`, `rnn.w_rec (H x H)`, `rnn.bias (H)`, then
/// `weight (in x out)`, `bias (out)` for each branch layer and each trunk layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepOnetParams {
    pub config: NetConfig,
    pub tensors: Vec<Tensor>,
}

/// Glorot-uniform weights, zero biases, deterministic in `config.init_seed`.
pub fn init_params(config: &NetConfig) -> Result<DeepOnetParams> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.init_seed);
    let tensors = config
        .shapes()
        .into_iter()
        .map(|(_, shape)| {
            if shape.len() == 1 {
                return Tensor::zeros(&shape);
            }
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let data = (0..shape[0] * shape[1])
                .map(|_| rng.uniform_in(-bound, bound))
                .collect();
            Tensor::new(shape, data).expect("shape matches data")
        })
        .collect();
    Ok(DeepOnetParams {
        config: config.clone(),
        tensors,
    })
}

/// Parameter leaves of one tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub all: Vec<Var>,
    rnn_in: Var,
    rnn_rec: Var,
    rnn_bias: Var,
    branch: Vec<(Var, Var)>,
    trunk: Vec<(Var, Var)>,
}

/// Work done by one batched evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalStats {
    /// Paths encoded (one RNN pass each).
    pub encodes: usize,
    /// RNN steps per path.
    pub rnn_steps: usize,
    /// Branch network evaluations (rows).
    pub branch_passes: usize,
    /// Trunk network evaluations (rows).
    pub trunk_passes: usize,
}

impl DeepOnetParams {
    pub fn from_tensors(config: NetConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Validation(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Validation(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn names(&self) -> Vec<String> {
        self.config.shapes().into_iter().map(|(n, _)| n).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn rnn_in_mut(&mut self) -> &mut Tensor {
        &mut self.tensors[0]
    }

    pub fn rnn_rec_mut(&mut self) -> &mut Tensor {
        &mut self.tensors[1]
    }

    pub fn rnn_bias_mut(&mut self) -> &mut Tensor {
        &mut self.tensors[2]
    }

    /// Weight and bias of branch layer `i`.
    pub fn branch_layer_mut(&mut self, i: usize) -> (&mut Tensor, &mut Tensor) {
        let k = 3 + 2 * i;
        let (w, b) = self.tensors[k..k + 2].split_at_mut(1);
        (&mut w[0], &mut b[0])
    }

    /// Weight and bias of trunk layer `i`.
    pub fn trunk_layer_mut(&mut self, i: usize) -> (&mut Tensor, &mut Tensor) {
        let k = 3 + 2 * self.config.branch_layers.len() + 2 * i;
        let (w, b) = self.tensors[k..k + 2].split_at_mut(1);
        (&mut w[0], &mut b[0])
    }

    /// Puts the parameters on `tape`, as differentiable leaves when `trainable`.
    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let all: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self::bind(&self.config, all)
    }

    /// Associates already-recorded leaves with their roles.
    pub fn bind(config: &NetConfig, all: Vec<Var>) -> ParamVars {
        let nb = config.branch_layers.len();
        let pairs = |start: usize, n: usize| -> Vec<(Var, Var)> {
            (0..n)
                .map(|i| (all[start + 2 * i], all[start + 2 * i + 1]))
                .collect()
        };
        ParamVars {
            rnn_in: all[0],
            rnn_rec: all[1],
            rnn_bias: all[2],
            branch: pairs(3, nb),
            trunk: pairs(3 + 2 * nb, config.trunk_layers.len()),
            all,
        }
    }

    /// Final RNN state after reading `bvalues`.
    pub fn encode_path(&self, bvalues: &[f64]) -> Result<Vec<f64>> {
        if bvalues.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        let mut tape = Tape::new();
        let pv = self.to_tape(&mut tape, false);
        let states = rnn_states(&mut tape, &pv, &self.config, &[bvalues], bvalues.len())?;
        Ok(tape.value(states[bvalues.len()]).data().to_vec())
    }

    /// Branch output for a hidden state and initial value.
    pub fn branch_forward(&self, hidden: &[f64], x0: f64) -> Result<Vec<f64>> {
        if hidden.len() != self.config.rnn_hidden {
            return Err(Error::invalid(format!(
                "hidden state has length {}, expected {}",
                hidden.len(),
                self.config.rnn_hidden
            )));
        }
        let mut tape = Tape::new();
        let pv = self.to_tape(&mut tape, false);
        let h = tape.constant(Tensor::matrix(1, hidden.len(), hidden.to_vec())?);
        let out = branch_net(&mut tape, &pv, &self.config, h, &[x0])?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Trunk output at time `t`.
    pub fn trunk_forward(&self, t: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pv = self.to_tape(&mut tape, false);
        let out = trunk_net(&mut tape, &pv, &self.config, &[t])?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Operator output for one path at each query time.
    pub fn eval(
        &self,
        x0: f64,
        sensors: &SensorSet,
        bvalues: &[f64],
        queries: &[f64],
    ) -> Result<Vec<f64>> {
        Ok(self.eval_with_stats(x0, sensors, bvalues, queries)?.0)
    }

    pub fn eval_with_stats(
        &self,
        x0: f64,
        sensors: &SensorSet,
        bvalues: &[f64],
        queries: &[f64],
    ) -> Result<(Vec<f64>, EvalStats)> {
        let mut tape = Tape::new();
        let pv = self.to_tape(&mut tape, false);
        let (out, stats) = forward_batch(
            &mut tape,
            &pv,
            &self.config,
            sensors.times(),
            &[x0],
            &[bvalues],
            queries,
        )?;
        Ok((tape.value(out).data().to_vec(), stats))
    }

    /// Operator output for many paths sharing sensors and queries; row `i` of
    /// the result belongs to path `i`. Paths are processed in parallel chunks.
    pub fn predict(
        &self,
        sensors: &SensorSet,
        x0s: &[f64],
        bvalues: &[Vec<f64>],
        queries: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        const CHUNK: usize = 256;
        if x0s.len() != bvalues.len() {
            return Err(Error::invalid(format!(
                "{} initial values for {} paths",
                x0s.len(),
                bvalues.len()
            )));
        }
        let chunks: Vec<Vec<Vec<f64>>> = x0s
            .par_chunks(CHUNK)
            .zip(bvalues.par_chunks(CHUNK))
            .map(|(xs, bs)| -> Result<Vec<Vec<f64>>> {
                let mut tape = Tape::new();
                let pv = self.to_tape(&mut tape, false);
                let refs: Vec<&[f64]> = bs.iter().map(Vec::as_slice).collect();
                let (out, _) = forward_batch(
                    &mut tape,
                    &pv,
                    &self.config,
                    sensors.times(),
                    xs,
                    &refs,
                    queries,
                )?;
                let out = tape.value(out);
                let n = xs.len();
                Ok((0..n)
                    .map(|i| (0..queries.len()).map(|q| out.at(q, i)).collect())
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Predicted solution on the grid of each path, observing the configured sensors.
    pub fn predict_paths(&self, x0s: &[f64], paths: &[BrownianPath]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = paths.first() else {
            return Ok(Vec::new());
        };
        let grid = first.grid;
        if paths.iter().any(|p| p.grid != grid) {
            return Err(Error::invalid("paths must share one grid"));
        }
        let sensors = self.config.sensor_set(&grid)?;
        let bvalues: Vec<Vec<f64>> = paths.iter().map(|p| self.config.sensor_values(p)).collect();
        self.predict(&sensors, x0s, &bvalues, &grid.times())
    }
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

fn rnn_inputs(config: &NetConfig, bvalues: &[&[f64]], steps: usize) -> Vec<Vec<f64>> {
    // inputs[j][i]: input of path i at step j + 1
    (0..steps)
        .map(|j| {
            bvalues
                .iter()
                .map(|b| match config.rnn_input {
                    RnnInput::Values => b[j],
                    RnnInput::Increments => b[j] - if j == 0 { 0.0 } else { b[j - 1] },
                })
                .collect()
        })
        .collect()
}

/// States `h_0 .. h_steps`, each `n x H`.
fn rnn_states(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &NetConfig,
    bvalues: &[&[f64]],
    steps: usize,
) -> Result<Vec<Var>> {
    let n = bvalues.len();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(tape.constant(Tensor::zeros(&[n, config.rnn_hidden])));
    for (j, col) in rnn_inputs(config, bvalues, steps).into_iter().enumerate() {
        let x = tape.constant(Tensor::matrix(n, 1, col)?);
        let xin = tape.matmul(x, pv.rnn_in)?;
        let pre = if j == 0 {
            xin
        } else {
            let rec = tape.matmul(states[j], pv.rnn_rec)?;
            tape.add(xin, rec)?
        };
        let pre = tape.add_row(pre, pv.rnn_bias)?;
        states.push(tape.tanh(pre));
    }
    Ok(states)
}

/// Branch MLP on `concat(hidden, x0)`; the last layer is affine.
fn branch_net(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &NetConfig,
    hidden: Var,
    x0s: &[f64],
) -> Result<Var> {
    let rows = tape.value(hidden).rows();
    let x0col = tape.constant(Tensor::matrix(rows, 1, x0s.to_vec())?);
    let mut x = tape.concat(hidden, x0col)?;
    let last = pv.branch.len() - 1;
    for (i, &(w, b)) in pv.branch.iter().enumerate() {
        x = tape.matmul(x, w)?;
        x = tape.add_row(x, b)?;
        if i < last {
            x = activate(tape, x, config.activation);
        }
    }
    Ok(x)
}

/// Trunk MLP on the query times; every layer, including the last, is activated.
fn trunk_net(tape: &mut Tape, pv: &ParamVars, config: &NetConfig, queries: &[f64]) -> Result<Var> {
    let mut y = tape.constant(Tensor::matrix(queries.len(), 1, queries.to_vec())?);
    for &(w, b) in &pv.trunk {
        y = tape.matmul(y, w)?;
        y = tape.add_row(y, b)?;
        y = activate(tape, y, config.activation);
    }
    Ok(y)
}

/// Batched forward pass. Returns a `queries x paths` matrix of predictions.
///
/// All paths share `sensor_times` and `queries`. The RNN runs once per path;
/// the branch network runs once per distinct hidden state that some query
/// needs; the trunk network runs once per query.
pub fn forward_batch(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &NetConfig,
    sensor_times: &[f64],
    x0s: &[f64],
    bvalues: &[&[f64]],
    queries: &[f64],
) -> Result<(Var, EvalStats)> {
    let n = x0s.len();
    let l = sensor_times.len();
    if n == 0 || bvalues.len() != n {
        return Err(Error::invalid(format!(
            "{n} initial values for {} paths",
            bvalues.len()
        )));
    }
    if l == 0 {
        return Err(Error::invalid("cannot encode an empty sequence"));
    }
    if let Some(b) = bvalues.iter().find(|b| b.len() != l) {
        return Err(Error::invalid(format!(
            "path has {} values for {l} sensors",
            b.len()
        )));
    }
    if queries.is_empty() {
        return Err(Error::invalid("no query times"));
    }
    if let Some(t) = queries.iter().find(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("query time {t} is not finite")));
    }

    let prefix: Vec<usize> = queries
        .iter()
        .map(|&t| match config.encoding {
            Encoding::Terminal => l,
            Encoding::Causal => sensor_times.partition_point(|&s| s <= t),
        })
        .collect();
    let mut distinct = prefix.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let steps = *distinct.last().expect("non-empty");

    let states = rnn_states(tape, pv, config, bvalues, steps)?;
    let hidden = if distinct.len() == 1 {
        states[distinct[0]]
    } else {
        let parts: Vec<Var> = distinct.iter().map(|&u| states[u]).collect();
        tape.vstack(&parts)?
    };
    let x0_rep: Vec<f64> = (0..distinct.len())
        .flat_map(|_| x0s.iter().copied())
        .collect();
    let branch = branch_net(tape, pv, config, hidden, &x0_rep)?;
    let trunk = trunk_net(tape, pv, config, queries)?;

    let mut blocks: Vec<Option<Var>> = vec![None; distinct.len()];
    let mut preds = Vec::with_capacity(queries.len());
    for (q, u) in prefix.iter().enumerate() {
        let pos = distinct.binary_search(u).expect("prefix is present");
        let block = match blocks[pos] {
            Some(b) => b,
            None => {
                let b = if distinct.len() == 1 {
                    branch
                } else {
                    tape.rows(branch, pos * n, n)?
                };
                blocks[pos] = Some(b);
                b
            }
        };
        let tr = tape.row(trunk, q)?;
        preds.push(tape.matmul(block, tr)?);
    }
    let out = tape.vstack(&preds)?;
    let stats = EvalStats {
        encodes: n,
        rnn_steps: steps,
        branch_passes: distinct.len() * n,
        trunk_passes: queries.len(),
    };
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(config: &NetConfig) -> DeepOnetParams {
        let mut p = init_params(config).unwrap();
        for t in &mut p.tensors {
            t.data_mut().fill(0.0);
        }
        p
    }

    fn scalar_rnn(w_rec: f64) -> DeepOnetParams {
        let cfg = NetConfig {
            rnn_hidden: 1,
            branch_layers: vec![1],
            trunk_layers: vec![1],
            p: 1,
            ..NetConfig::default()
        };
        let mut p = zeroed(&cfg);
        p.rnn_in_mut().data_mut()[0] = 1.0;
        p.rnn_rec_mut().data_mut()[0] = w_rec;
        p
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = NetConfig::tiny(6, 4);
        let a = init_params(&cfg).unwrap();
        assert_eq!(a, init_params(&cfg).unwrap());
        for (name, t) in a.names().iter().zip(&a.tensors) {
            if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
        let other = init_params(&NetConfig {
            init_seed: 1,
            ..cfg
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn init_weight_mean_within_three_standard_errors() {
        let cfg = NetConfig {
            rnn_hidden: 128,
            ..NetConfig::default()
        };
        let p = init_params(&cfg).unwrap();
        let w = &p.tensors[1]; // 128 x 128
        let bound = (6.0f64 / 256.0).sqrt();
        let sd = bound / 3f64.sqrt();
        let mean = w.data().iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() <= 3.0 * sd / (w.len() as f64).sqrt());
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn inconsistent_widths_rejected() {
        let cfg = NetConfig {
            branch_layers: vec![16, 8],
            p: 4,
            trunk_layers: vec![4],
            ..NetConfig::default()
        };
        assert!(matches!(init_params(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_network_encodes_to_zero() {
        let p = zeroed(&NetConfig::tiny(5, 3));
        assert_eq!(p.encode_path(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0; 5]);
        assert!(p.encode_path(&[]).is_err());
    }

    #[test]
    fn scalar_rnn_steps() {
        let p = scalar_rnn(0.0);
        assert_eq!(p.encode_path(&[0.5]).unwrap(), vec![0.5f64.tanh()]);
        let p = scalar_rnn(1.0);
        let two = p.encode_path(&[0.5, 0.5]).unwrap()[0];
        assert!((two - (0.5 + 0.5f64.tanh()).tanh()).abs() < 1e-15);
    }

    #[test]
    fn branch_cases() {
        let cfg = NetConfig::tiny(3, 2);
        let p = zeroed(&cfg);
        assert_eq!(
            p.branch_forward(&[0.1, 0.2, 0.3], 1.0).unwrap(),
            vec![0.0; 2]
        );
        assert!(p.branch_forward(&[0.1], 1.0).is_err());

        let p = init_params(&cfg).unwrap();
        let a = p.branch_forward(&[0.1, 0.2, 0.3], 1.0).unwrap();
        let b = p.branch_forward(&[0.1, 0.2, 0.3], -1.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn branch_hand_computation() {
        // hidden 1 -> one tanh unit -> affine output (p = 1)
        let cfg = NetConfig {
            rnn_hidden: 1,
            branch_layers: vec![1, 1],
            trunk_layers: vec![1],
            p: 1,
            ..NetConfig::default()
        };
        let mut p = zeroed(&cfg);
        {
            let (w, b) = p.branch_layer_mut(0);
            w.data_mut().copy_from_slice(&[0.7, -0.4]); // rows: hidden, x0
            b.data_mut()[0] = 0.1;
        }
        {
            let (w, b) = p.branch_layer_mut(1);
            w.data_mut()[0] = 2.0;
            b.data_mut()[0] = -0.5;
        }
        let got = p.branch_forward(&[0.3], 1.5).unwrap()[0];
        let expected = 2.0 * (0.7 * 0.3 - 0.4 * 1.5 + 0.1f64).tanh() - 0.5;
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn trunk_cases() {
        let cfg = NetConfig::tiny(2, 3);
        assert_eq!(zeroed(&cfg).trunk_forward(0.7).unwrap(), vec![0.0; 3]);

        let single = NetConfig {
            rnn_hidden: 1,
            branch_layers: vec![1],
            trunk_layers: vec![1],
            p: 1,
            ..NetConfig::default()
        };
        let mut p = zeroed(&single);
        p.trunk_layer_mut(0).0.data_mut()[0] = 1.0;
        assert_eq!(p.trunk_forward(0.0).unwrap(), vec![0.0]);

        let two = NetConfig {
            trunk_layers: vec![2, 1],
            ..single
        };
        let mut p = zeroed(&two);
        {
            let (w, b) = p.trunk_layer_mut(0);
            w.data_mut().copy_from_slice(&[1.5, -2.0]);
            b.data_mut().copy_from_slice(&[0.1, 0.2]);
        }
        {
            let (w, b) = p.trunk_layer_mut(1);
            w.data_mut().copy_from_slice(&[0.5, 0.25]);
            b.data_mut()[0] = -0.3;
        }
        let t = 0.3;
        let h1 = (1.5 * t + 0.1f64).tanh();
        let h2 = (-2.0 * t + 0.2f64).tanh();
        let expected = (0.5 * h1 + 0.25 * h2 - 0.3).tanh();
        assert!((p.trunk_forward(t).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = zeroed(&NetConfig::tiny(4, 3));
        let s = SensorSet::new(vec![0.0, 0.1, 0.2]).unwrap();
        let out = p
            .eval(1.0, &s, &[0.0, 0.3, -0.2], &[0.0, 0.05, 0.2])
            .unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn query_batching_is_pure_reuse() {
        for encoding in [Encoding::Causal, Encoding::Terminal] {
            let p = init_params(&NetConfig {
                encoding,
                ..NetConfig::tiny(4, 3)
            })
            .unwrap();
            let s = SensorSet::new(vec![0.0, 0.1, 0.2, 0.3]).unwrap();
            let b = [0.0, 0.2, -0.1, 0.4];
            let qs = [0.0, 0.05, 0.1, 0.25, 0.3, 0.7];
            let batch = p.eval(0.5, &s, &b, &qs).unwrap();
            for (q, v) in qs.iter().zip(&batch) {
                assert_eq!(p.eval(0.5, &s, &b, &[*q]).unwrap()[0], *v);
            }
        }
    }

    #[test]
    fn terminal_encoding_is_separable() {
        let p = init_params(&NetConfig {
            encoding: Encoding::Terminal,
            ..NetConfig::tiny(4, 3)
        })
        .unwrap();
        let s = SensorSet::new(vec![0.0, 0.1, 0.2]).unwrap();
        let qs: Vec<f64> = (0..10_000).map(|i| i as f64 * 1e-4).collect();
        let (out, stats) = p.eval_with_stats(1.0, &s, &[0.0, 0.1, 0.05], &qs).unwrap();
        assert_eq!(out.len(), 10_000);
        assert_eq!(
            stats,
            EvalStats {
                encodes: 1,
                rnn_steps: 3,
                branch_passes: 1,
                trunk_passes: 10_000
            }
        );
    }

    #[test]
    fn causal_encoding_ignores_the_future() {
        let p = init_params(&NetConfig::tiny(4, 3)).unwrap();
        let s = SensorSet::new(vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let a = p
            .eval(1.0, &s, &[0.0, 0.2, -0.1, 0.4], &[0.1, 0.2, 0.3])
            .unwrap();
        let b = p
            .eval(1.0, &s, &[0.0, 0.2, -0.1, -3.0], &[0.1, 0.2, 0.3])
            .unwrap();
        assert_eq!(a[..2], b[..2]);
        assert_ne!(a[2], b[2]);
    }

    #[test]
    fn encode_accepts_any_length() {
        let p = init_params(&NetConfig::tiny(4, 3)).unwrap();
        for l in [1, 7, 31, 300] {
            let b: Vec<f64> = (0..l).map(|i| (i as f64 * 0.37).sin()).collect();
            assert_eq!(p.encode_path(&b).unwrap().len(), 4);
        }
    }

    #[test]
    fn batched_predict_matches_single_evaluation() {
        let p = init_params(&NetConfig::tiny(4, 3)).unwrap();
        let s = SensorSet::new(vec![0.0, 0.1, 0.2]).unwrap();
        let bs: Vec<Vec<f64>> = (0..600)
            .map(|i| vec![0.0, (i as f64 * 0.1).sin(), (i as f64 * 0.2).cos()])
            .collect();
        let x0s: Vec<f64> = (0..600).map(|i| i as f64 / 600.0).collect();
        let qs = [0.0, 0.15, 0.2];
        let all = p.predict(&s, &x0s, &bs, &qs).unwrap();
        for i in [0, 255, 256, 599] {
            let single = p.eval(x0s[i], &s, &bs[i], &qs).unwrap();
            for (a, b) in all[i].iter().zip(&single) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
