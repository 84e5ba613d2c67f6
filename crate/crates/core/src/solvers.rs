//! Reference integrators: Euler-Maruyama, closed-form GBM and OU solutions,
//! Langevin drift construction, and the Euler-Maruyama particle (EMP) scheme
//! for McKean-Vlasov equations.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{BrownianPath, SolutionPath, TimeGrid};

/// Name plus numeric parameters, rendered as `name[k=v,...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    pub name: String,
    pub params: Vec<(String, f64)>,
}

impl ModelDescriptor {
    pub fn new(name: impl Into<String>, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl fmt::Display for ModelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.name)?;
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("]")
    }
}

pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type MeanFieldCoefficient = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// Scalar SDE `dX = a(t, X) dt + b(t, X) dB`.
#[derive(Clone)]
pub struct SdeModel {
    pub drift: Coefficient,
    pub diffusion: Coefficient,
    pub descriptor: ModelDescriptor,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SdeModel({})", self.descriptor)
    }
}

impl SdeModel {
    pub fn new(
        descriptor: ModelDescriptor,
        drift: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            descriptor,
        }
    }

    /// `dX = a X dt + b X dB`.
    pub fn gbm(a: f64, b: f64) -> Self {
        Self::new(
            ModelDescriptor::new("gbm", &[("a", a), ("b", b)]),
            move |_, x| a * x,
            move |_, x| b * x,
        )
    }

    /// `dX = -a X dt + b dB`.
    pub fn ou(a: f64, b: f64) -> Self {
        Self::new(
            ModelDescriptor::new("ou", &[("a", a), ("b", b)]),
            move |_, x| -a * x,
            move |_, _| b,
        )
    }
}

/// Euler-Maruyama on the grid of `bpath`, coefficients at the left endpoint.
pub fn euler_maruyama(model: &SdeModel, x0: f64, bpath: &BrownianPath) -> Result<SolutionPath> {
    if !x0.is_finite() {
        return Err(Error::invalid(format!("initial value {x0} is not finite")));
    }
    let grid = bpath.grid;
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.len());
    let mut x = x0;
    values.push(x);
    for k in 0..grid.len() - 1 {
        let t = grid.time(k);
        let a = (model.drift)(t, x);
        let b = (model.diffusion)(t, x);
        x = x + a * h + b * bpath.increment(k);
        if !a.is_finite() || !b.is_finite() || !x.is_finite() {
            return Err(Error::NumericOverflow {
                location: format!("step {k}"),
                message: format!("{} produced a non-finite value", model.descriptor),
            });
        }
        values.push(x);
    }
    Ok(SolutionPath { grid, values, x0 })
}

/// `X_t = x0 exp((a - b^2/2) t + b B_t)` evaluated on the grid.
pub fn exact_gbm(a: f64, b: f64, x0: f64, bpath: &BrownianPath) -> SolutionPath {
    let grid = bpath.grid;
    let values = bpath
        .values
        .iter()
        .enumerate()
        .map(|(k, &bk)| {
            let t = grid.time(k) - grid.t0();
            x0 * ((a - 0.5 * b * b) * t + b * bk).exp()
        })
        .collect();
    SolutionPath { grid, values, x0 }
}

/// `X_t = e^{-a t} (x0 + b int_0^t e^{a s} dB_s)` with the stochastic integral
/// taken as a left-point sum on the grid of `bpath`.
///
/// Pathwise comparable with solvers run on the same Brownian path; converges to
/// the true solution as `h -> 0`.
pub fn exact_ou(a: f64, b: f64, x0: f64, bpath: &BrownianPath) -> SolutionPath {
    let grid = bpath.grid;
    let mut values = Vec::with_capacity(grid.len());
    values.push(x0);
    let mut integral = 0.0;
    for k in 1..grid.len() {
        let s = grid.time(k - 1) - grid.t0();
        integral += (a * s).exp() * bpath.increment(k - 1);
        let t = grid.time(k) - grid.t0();
        values.push((-a * t).exp() * (x0 + b * integral));
    }
    SolutionPath { grid, values, x0 }
}

/// Overdamped Langevin dynamics `dX = 1/2 grad log p(X) dt + dB` for a target density `p`.
pub fn langevin_model(grad_log_p: impl Fn(f64) -> f64 + Send + Sync + 'static) -> SdeModel {
    SdeModel::new(
        ModelDescriptor::new("langevin", &[]),
        move |_, x| 0.5 * grad_log_p(x),
        |_, _| 1.0,
    )
}

/// `(1/N) #{n : particles[n] <= x}`, the empirical integral of `H(x - y)` with
/// `H = 1_{[0, inf)}`.
pub fn burgers_drift(particles: &[f64], x: f64) -> Result<f64> {
    if particles.is_empty() {
        return Err(Error::invalid("empirical measure over zero particles"));
    }
    Ok(count_at_or_below(particles, x))
}

fn count_at_or_below(particles: &[f64], x: f64) -> f64 {
    let count = particles.iter().filter(|&&y| y <= x).count();
    count as f64 / particles.len() as f64
}

/// Same value as [`burgers_drift`] for ascending-sorted particles, in `O(log N)`.
pub fn burgers_drift_sorted(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&y| y <= x) as f64 / sorted.len() as f64
}

/// McKean-Vlasov SDE `dX = a(t, X, mu) dt + b(t, X, mu) dB`, with `mu` given as
/// the particle positions of the empirical measure.
#[derive(Clone)]
pub struct McKeanVlasovModel {
    pub drift: MeanFieldCoefficient,
    pub diffusion: MeanFieldCoefficient,
    pub descriptor: ModelDescriptor,
    /// Optional drift evaluated against ascending-sorted particles.
    pub sorted_drift: Option<MeanFieldCoefficient>,
}

impl fmt::Debug for McKeanVlasovModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "McKeanVlasovModel({})", self.descriptor)
    }
}

impl McKeanVlasovModel {
    pub fn new(
        descriptor: ModelDescriptor,
        drift: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
        diffusion: impl Fn(f64, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            descriptor,
            sorted_drift: None,
        }
    }

    /// `dX = (int H(X - y) mu(dy)) dt + sigma dB`.
    pub fn burgers(sigma: f64) -> Self {
        let mut model = Self::new(
            ModelDescriptor::new("burgers", &[("sigma", sigma)]),
            |_, x, ps| count_at_or_below(ps, x),
            move |_, _, _| sigma,
        );
        model.sorted_drift = Some(Arc::new(|_, x, sorted| burgers_drift_sorted(sorted, x)));
        model
    }
}

/// Particle trajectories `trajectories[n][m]` from one EMP run.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub grid: TimeGrid,
    pub trajectories: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Positions of all particles at grid index `m`.
    pub fn marginal(&self, m: usize) -> Vec<f64> {
        self.trajectories.iter().map(|tr| tr[m]).collect()
    }

    pub fn solution(&self, n: usize) -> SolutionPath {
        let values = self.trajectories[n].clone();
        SolutionPath {
            grid: self.grid,
            x0: values[0],
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmpOptions {
    /// Use the model's sorted drift when it has one.
    pub sorted_drift: bool,
    /// Update particles of one step in parallel (same results as sequential).
    pub parallel: bool,
}

/// EMP with the generic per-particle empirical drift, sequential.
pub fn emp_solve(
    model: &McKeanVlasovModel,
    x0s: &[f64],
    bpaths: &[BrownianPath],
) -> Result<ParticleEnsemble> {
    emp_solve_with(model, x0s, bpaths, EmpOptions::default())
}

/// Synchronous EMP: the empirical measure of step `m` is frozen from all
/// positions at step `m` before any particle advances.
pub fn emp_solve_with(
    model: &McKeanVlasovModel,
    x0s: &[f64],
    bpaths: &[BrownianPath],
    opts: EmpOptions,
) -> Result<ParticleEnsemble> {
    let n = x0s.len();
    if n == 0 {
        return Err(Error::invalid(
            "particle system needs at least one particle",
        ));
    }
    if bpaths.len() != n {
        return Err(Error::invalid(format!(
            "{n} initial values but {} Brownian paths",
            bpaths.len()
        )));
    }
    let grid = bpaths[0].grid;
    if let Some(i) = bpaths.iter().position(|b| b.grid != grid) {
        return Err(Error::invalid(format!(
            "Brownian path {i} is on a different grid"
        )));
    }
    if let Some(i) = x0s.iter().position(|x| !x.is_finite()) {
        return Err(Error::invalid(format!(
            "initial value of particle {i} is not finite"
        )));
    }
    let h = grid.step();
    let sorted_drift = if opts.sorted_drift {
        model.sorted_drift.as_ref()
    } else {
        None
    };

    let mut trajectories: Vec<Vec<f64>> = x0s
        .iter()
        .map(|&x| {
            let mut v = Vec::with_capacity(grid.len());
            v.push(x);
            v
        })
        .collect();
    let mut current = x0s.to_vec();
    let mut sorted = Vec::new();

    for m in 0..grid.len() - 1 {
        let t = grid.time(m);
        if sorted_drift.is_some() {
            sorted.clone_from(&current);
            sorted.sort_by(f64::total_cmp);
        }
        let snapshot = &current;
        let step = |i: usize| -> f64 {
            let x = snapshot[i];
            let a = match sorted_drift {
                Some(f) => f(t, x, &sorted),
                None => (model.drift)(t, x, snapshot),
            };
            let b = (model.diffusion)(t, x, snapshot);
            x + h * a + b * bpaths[i].increment(m)
        };
        let next: Vec<f64> = if opts.parallel {
            (0..n).into_par_iter().map(step).collect()
        } else {
            (0..n).map(step).collect()
        };
        if let Some(i) = next.iter().position(|x| !x.is_finite()) {
            return Err(Error::NumericOverflow {
                location: format!("particle {i}, step {m}"),
                message: format!("{} produced a non-finite value", model.descriptor),
            });
        }
        for (tr, &x) in trajectories.iter_mut().zip(&next) {
            tr.push(x);
        }
        current = next;
    }

    Ok(ParticleEnsemble {
        grid,
        trajectories,
        seeds: bpaths.iter().map(|b| b.seed).collect(),
    })
}

/// `sup_k |reference_k - approx_k|^2` for one path.
pub fn strong_error(reference: &SolutionPath, approx: &SolutionPath) -> Result<f64> {
    if reference.grid != approx.grid || reference.values.len() != approx.values.len() {
        return Err(Error::invalid("paths are on different grids"));
    }
    Ok(reference
        .values
        .iter()
        .zip(&approx.values)
        .map(|(r, a)| (r - a).powi(2))
        .fold(0.0, f64::max))
}

/// Models selectable from configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `dX = -a X dt + b dB`
    Ou { a: f64, b: f64 },
    /// `dX = a X dt + b X dB`
    Gbm { a: f64, b: f64 },
    /// Langevin dynamics targeting `N(mean, variance)`.
    GaussianLangevin {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        variance: f64,
    },
    /// Burgers-type McKean-Vlasov SDE with constant diffusion `sigma`.
    Burgers { sigma: f64 },
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub const NAMES: &'static [&'static str] = &["ou", "gbm", "gaussian-langevin", "burgers"];

    pub fn is_mean_field(&self) -> bool {
        matches!(self, ModelSpec::Burgers { .. })
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        match *self {
            ModelSpec::Ou { a, b } => ModelDescriptor::new("ou", &[("a", a), ("b", b)]),
            ModelSpec::Gbm { a, b } => ModelDescriptor::new("gbm", &[("a", a), ("b", b)]),
            ModelSpec::GaussianLangevin { mean, variance } => ModelDescriptor::new(
                "gaussian-langevin",
                &[("mean", mean), ("variance", variance)],
            ),
            ModelSpec::Burgers { sigma } => ModelDescriptor::new("burgers", &[("sigma", sigma)]),
        }
    }

    /// Path-by-path model; `None` for mean-field models.
    pub fn sde_model(&self) -> Option<SdeModel> {
        match *self {
            ModelSpec::Ou { a, b } => Some(SdeModel::ou(a, b)),
            ModelSpec::Gbm { a, b } => Some(SdeModel::gbm(a, b)),
            ModelSpec::GaussianLangevin { mean, variance } => {
                let mut m = langevin_model(move |x| -(x - mean) / variance);
                m.descriptor = self.descriptor();
                Some(m)
            }
            ModelSpec::Burgers { .. } => None,
        }
    }

    pub fn mean_field_model(&self) -> Option<McKeanVlasovModel> {
        match *self {
            ModelSpec::Burgers { sigma } => Some(McKeanVlasovModel::burgers(sigma)),
            _ => None,
        }
    }

    /// Closed-form solution where one exists (OU, GBM).
    pub fn exact(&self, x0: f64, bpath: &BrownianPath) -> Option<SolutionPath> {
        match *self {
            ModelSpec::Ou { a, b } => Some(exact_ou(a, b, x0, bpath)),
            ModelSpec::Gbm { a, b } => Some(exact_gbm(a, b, x0, bpath)),
            _ => None,
        }
    }

    /// Reference solution of a path-by-path model: the closed form where one
    /// exists, Euler-Maruyama otherwise.
    pub fn reference(&self, x0: f64, bpath: &BrownianPath) -> Result<SolutionPath> {
        if let Some(sol) = self.exact(x0, bpath) {
            return Ok(sol);
        }
        match self.sde_model() {
            Some(m) => euler_maruyama(&m, x0, bpath),
            None => Err(Error::invalid(format!(
                "{} is a mean-field model; use the particle solver",
                self.descriptor()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, sample_brownian, sample_brownian_batch};

    fn path_with_values(values: Vec<f64>, h: f64) -> BrownianPath {
        BrownianPath {
            grid: make_grid(0.0, h, values.len()).unwrap(),
            values,
            seed: 0,
        }
    }

    #[test]
    fn em_zero_coefficients_is_constant() {
        let m = SdeModel::new(ModelDescriptor::new("zero", &[]), |_, _| 0.0, |_, _| 0.0);
        let b = sample_brownian(&make_grid(0.0, 0.1, 20).unwrap(), 3);
        let x = euler_maruyama(&m, 2.0, &b).unwrap();
        assert!(x.values.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn em_pure_brownian_is_exact() {
        let m = SdeModel::new(ModelDescriptor::new("bm", &[]), |_, _| 0.0, |_, _| 1.0);
        let b = sample_brownian(&make_grid(0.0, 0.01, 50).unwrap(), 4);
        let x = euler_maruyama(&m, 0.0, &b).unwrap();
        assert_eq!(x.values, b.values);
    }

    #[test]
    fn em_gbm_one_step() {
        let b = path_with_values(vec![0.0, 0.1], 0.01);
        let x = euler_maruyama(&SdeModel::gbm(0.05, 0.2), 1.0, &b).unwrap();
        assert!((x.values[1] - 1.0205).abs() < 1e-15);
    }

    #[test]
    fn em_reports_overflow_step() {
        let m = SdeModel::new(
            ModelDescriptor::new("blowup", &[]),
            |_, x| x * x * 1e200,
            |_, _| 0.0,
        );
        let b = sample_brownian(&make_grid(0.0, 1.0, 10).unwrap(), 1);
        match euler_maruyama(&m, 10.0, &b) {
            Err(Error::NumericOverflow { location, .. }) => assert!(location.contains("step")),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn gbm_closed_form_cases() {
        let b = sample_brownian(&make_grid(0.0, 0.05, 21).unwrap(), 8);
        let x = exact_gbm(0.3, 0.7, 2.0, &b);
        assert_eq!(x.values[0], 2.0);

        let x = exact_gbm(0.3, 0.0, 2.0, &b);
        for (k, v) in x.values.iter().enumerate() {
            assert!((v - 2.0 * (0.3 * b.grid.time(k)).exp()).abs() < 1e-14);
        }

        let bb = 0.6;
        let x = exact_gbm(bb * bb / 2.0, bb, 1.5, &b);
        for (v, bk) in x.values.iter().zip(&b.values) {
            assert!((v - 1.5 * (bb * bk).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn ou_closed_form_cases() {
        let b = sample_brownian(&make_grid(0.0, 0.05, 21).unwrap(), 9);
        assert_eq!(exact_ou(1.0, 1.0, 3.0, &b).values[0], 3.0);

        let x = exact_ou(0.0, 0.5, 1.0, &b);
        for (v, bk) in x.values.iter().zip(&b.values) {
            assert!((v - (1.0 + 0.5 * bk)).abs() < 1e-14);
        }

        let x = exact_ou(2.0, 0.0, 1.0, &b);
        for (k, v) in x.values.iter().enumerate() {
            assert!((v - (-2.0 * b.grid.time(k)).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn ou_em_and_quadrature_agree_as_h_shrinks() {
        let model = SdeModel::ou(1.0, 1.0);
        let mut prev = f64::INFINITY;
        for m in [11usize, 101, 1001] {
            let g = make_grid(0.0, 1.0 / (m - 1) as f64, m).unwrap();
            let err: f64 = sample_brownian_batch(&g, 5, 200)
                .iter()
                .map(|b| {
                    let em = euler_maruyama(&model, 1.0, b).unwrap();
                    (em.terminal() - exact_ou(1.0, 1.0, 1.0, b).terminal()).abs()
                })
                .sum::<f64>()
                / 200.0;
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn langevin_drift_and_diffusion() {
        let m = langevin_model(|x| -x);
        assert_eq!((m.drift)(0.0, 2.0), -1.0);
        assert_eq!((m.diffusion)(0.0, 2.0), 1.0);

        let flat = langevin_model(|_| 0.0);
        let b = sample_brownian(&make_grid(0.0, 0.01, 30).unwrap(), 2);
        assert_eq!(euler_maruyama(&flat, 0.0, &b).unwrap().values, b.values);
    }

    #[test]
    fn burgers_drift_examples() {
        assert_eq!(burgers_drift(&[1.0, 2.0, 3.0], 2.0).unwrap(), 2.0 / 3.0);
        assert_eq!(burgers_drift(&[1.0, 2.0, 3.0], 0.0).unwrap(), 0.0);
        assert_eq!(burgers_drift(&[1.0, 2.0, 3.0], 3.0).unwrap(), 1.0);
        assert_eq!(burgers_drift(&[1.0, 2.0, 3.0], 7.0).unwrap(), 1.0);
        assert!(burgers_drift(&[], 0.0).is_err());
    }

    #[test]
    fn emp_single_particle_self_interaction() {
        let g = make_grid(0.0, 0.01, 11).unwrap();
        let b = sample_brownian(&g, 1);
        let ens = emp_solve(
            &McKeanVlasovModel::burgers(0.5),
            &[0.3],
            std::slice::from_ref(&b),
        )
        .unwrap();
        let mut x = 0.3;
        for k in 0..10 {
            x = x + 0.01 * 1.0 + 0.5 * b.increment(k);
            assert_eq!(ens.trajectories[0][k + 1], x);
        }
    }

    #[test]
    fn emp_decoupled_case() {
        let g = make_grid(0.0, 0.02, 16).unwrap();
        let model = McKeanVlasovModel::new(
            ModelDescriptor::new("free", &[]),
            |_, _, _| 0.0,
            |_, _, _| 1.0,
        );
        let bs = sample_brownian_batch(&g, 3, 5);
        let x0s = [0.0, 1.0, -1.0, 2.0, 0.5];
        let ens = emp_solve(&model, &x0s, &bs).unwrap();
        for (n, tr) in ens.trajectories.iter().enumerate() {
            for (k, v) in tr.iter().enumerate() {
                assert!((v - (x0s[n] + bs[n].values[k])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn emp_three_particle_step_by_hand() {
        let g = make_grid(0.0, 0.1, 2).unwrap();
        let incs = [0.2, -0.1, 0.05];
        let bs: Vec<_> = incs
            .iter()
            .map(|&d| BrownianPath {
                grid: g,
                values: vec![0.0, d],
                seed: 0,
            })
            .collect();
        let x0s = [0.5, -1.0, 0.5];
        let ens = emp_solve(&McKeanVlasovModel::burgers(1.0), &x0s, &bs).unwrap();
        // Indicator sums by brute force over pairs.
        for n in 0..3 {
            let mut cnt = 0;
            for y in x0s {
                if x0s[n] - y >= 0.0 {
                    cnt += 1;
                }
            }
            let expected = x0s[n] + 0.1 * (cnt as f64 / 3.0) + incs[n];
            assert!((ens.trajectories[n][1] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn emp_rejects_bad_inputs() {
        let g = make_grid(0.0, 0.1, 3).unwrap();
        let g2 = make_grid(0.0, 0.2, 3).unwrap();
        let m = McKeanVlasovModel::burgers(1.0);
        assert!(emp_solve(&m, &[], &[]).is_err());
        assert!(emp_solve(
            &m,
            &[0.0, 1.0],
            &[sample_brownian(&g, 1), sample_brownian(&g2, 2)]
        )
        .is_err());
        assert!(emp_solve(
            &m,
            &[0.0],
            &[sample_brownian(&g, 1), sample_brownian(&g, 2)]
        )
        .is_err());
    }

    #[test]
    fn emp_sorted_and_parallel_match_generic() {
        let g = make_grid(0.0, 0.01, 21).unwrap();
        let bs = sample_brownian_batch(&g, 11, 300);
        let x0s: Vec<f64> = (0..300)
            .map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
            .collect();
        let m = McKeanVlasovModel::burgers(1.0);
        let generic = emp_solve(&m, &x0s, &bs).unwrap();
        let fast = emp_solve_with(
            &m,
            &x0s,
            &bs,
            EmpOptions {
                sorted_drift: true,
                parallel: true,
            },
        )
        .unwrap();
        assert_eq!(generic, fast);
    }

    #[test]
    fn strong_error_cases() {
        let g = make_grid(0.0, 0.1, 3).unwrap();
        let a = SolutionPath::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        let b = SolutionPath::new(g, vec![1.0, 2.5, 3.0]).unwrap();
        assert_eq!(strong_error(&a, &a).unwrap(), 0.0);
        assert_eq!(strong_error(&a, &b).unwrap(), 0.25);
        let c = SolutionPath::new(make_grid(0.0, 0.2, 3).unwrap(), vec![1.0; 3]).unwrap();
        assert!(strong_error(&a, &c).is_err());
    }

    #[test]
    fn descriptor_rendering() {
        assert_eq!(
            ModelSpec::Ou { a: 1.0, b: 0.5 }.descriptor().to_string(),
            "ou[a=1,b=0.5]"
        );
        assert_eq!(
            McKeanVlasovModel::burgers(1.0).descriptor.to_string(),
            "burgers[sigma=1]"
        );
    }
}
