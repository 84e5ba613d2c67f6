//! Time grids, seeded Brownian paths and path datasets.

pub mod dataset;
pub mod rng;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rng::{derive_seed, GaussianStream};

pub use dataset::{read_dataset, write_dataset, PathDataset};

/// Uniform grid `t_k = t0 + k h`, `k = 0..m`.
///
/// Grid points are always recomputed from `(t0, h, k)`; nothing is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    h: f64,
    m: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, h: f64, m: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be positive, got {h}"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::invalid(format!(
                "start time must be finite, got {t0}"
            )));
        }
        if m < 2 {
            return Err(Error::invalid(format!(
                "a grid needs at least 2 points, got {m}"
            )));
        }
        Ok(Self { t0, h, m })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Number of grid points `M`.
    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.h
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.time(k)).collect()
    }

    /// `T = (M - 1) h`, measured from `t0`.
    pub fn horizon(&self) -> f64 {
        (self.m - 1) as f64 * self.h
    }

    pub fn end(&self) -> f64 {
        self.time(self.m - 1)
    }

    /// Same point count and origin, step multiplied by `factor`.
    pub fn rescale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::invalid(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        Self::new(self.t0, self.h * factor, self.m)
    }
}

pub fn make_grid(t0: f64, h: f64, m: usize) -> Result<TimeGrid> {
    TimeGrid::new(t0, h, m)
}

pub fn rescale_grid(grid: &TimeGrid, factor: f64) -> Result<TimeGrid> {
    grid.rescale(factor)
}

/// Brownian values on a grid, `values[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl BrownianPath {
    pub fn increment(&self, k: usize) -> f64 {
        self.values[k + 1] - self.values[k]
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Solution values on a grid, `values[0] = x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub x0: f64,
}

impl SolutionPath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "solution has {} values for a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        let x0 = values[0];
        Ok(Self { grid, values, x0 })
    }

    pub fn terminal(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Strictly increasing, non-negative query times at which a Brownian input is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSet {
    times: Vec<f64>,
}

impl SensorSet {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::invalid("sensor set is empty"));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::invalid(format!(
                "sensor time {t} is negative or non-finite"
            )));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "sensor times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    pub fn from_grid(grid: &TimeGrid) -> Result<Self> {
        Self::new(grid.times())
    }

    pub fn terminal(grid: &TimeGrid) -> Result<Self> {
        Self::new(vec![grid.end()])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Brownian path on `grid` from the Gaussian stream keyed by `seed`:
/// `values[k+1] = values[k] + sqrt(h) * xi_k`.
pub fn sample_brownian(grid: &TimeGrid, seed: u64) -> BrownianPath {
    let mut stream = GaussianStream::new(seed);
    let sqrt_h = grid.step().sqrt();
    let mut values = Vec::with_capacity(grid.len());
    let mut b = 0.0;
    values.push(b);
    for _ in 1..grid.len() {
        b += sqrt_h * stream.next();
        values.push(b);
    }
    BrownianPath {
        grid: *grid,
        values,
        seed,
    }
}

/// Exact joint sample of `B` at the sensor times.
///
/// Increments between consecutive sensors (and from time 0 to the first sensor)
/// are independent `N(0, gap)`; a sensor at time 0 returns 0 without a draw.
pub fn sample_brownian_at_sensors(sensors: &SensorSet, seed: u64) -> Vec<f64> {
    let mut stream = GaussianStream::new(seed);
    let mut out = Vec::with_capacity(sensors.len());
    let mut prev_t = 0.0;
    let mut b = 0.0;
    for &t in sensors.times() {
        let gap = t - prev_t;
        if gap > 0.0 {
            b += gap.sqrt() * stream.next();
        }
        out.push(b);
        prev_t = t;
    }
    out
}

/// Seeds of paths `0..n` under `base_seed`.
pub fn path_seeds(base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base_seed, i)).collect()
}

/// `n` Brownian paths, path `i` seeded with `derive_seed(base_seed, i)`.
///
/// Generated in parallel; the result does not depend on the thread count.
pub fn sample_brownian_batch(grid: &TimeGrid, base_seed: u64, n: usize) -> Vec<BrownianPath> {
    path_seeds(base_seed, n)
        .into_par_iter()
        .map(|s| sample_brownian(grid, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = make_grid(0.0, 0.01, 31).unwrap();
        assert!((g.horizon() - 0.3).abs() < 1e-15);
        assert!((g.time(30) - 0.3).abs() < 1e-15);

        let g = make_grid(0.0, 1.0, 2).unwrap();
        assert_eq!(g.times(), vec![0.0, 1.0]);

        let g = make_grid(0.0, 0.01, 101).unwrap();
        assert!((g.horizon() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(matches!(
            make_grid(0.0, 0.0, 10),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_grid(0.0, -0.1, 10),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_grid(0.0, 0.1, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            make_grid(0.0, f64::NAN, 10),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn grid_points_are_not_accumulated() {
        let g = make_grid(0.0, 0.1, 1001).unwrap();
        assert_eq!(g.time(1000), 1000.0 * 0.1);
    }

    #[test]
    fn rescale_examples() {
        let g = make_grid(0.0, 0.01, 31).unwrap();
        assert_eq!(rescale_grid(&g, 1.0).unwrap(), g);

        let g10 = rescale_grid(&g, 10.0).unwrap();
        assert!((g10.step() - 0.1).abs() < 1e-15);
        assert!((g10.horizon() - 3.0).abs() < 1e-12);
        assert_eq!(g10.len(), 31);

        let gm = rescale_grid(&g, 0.001).unwrap();
        assert!((gm.step() - 1e-5).abs() < 1e-18);
        assert!((gm.horizon() - 3e-4).abs() < 1e-16);

        assert!(rescale_grid(&g, 0.0).is_err());
        assert!(rescale_grid(&g, -2.0).is_err());
    }

    #[test]
    fn brownian_starts_at_zero_and_is_deterministic() {
        let g = make_grid(0.0, 0.01, 31).unwrap();
        let a = sample_brownian(&g, 99);
        let b = sample_brownian(&g, 99);
        assert_eq!(a.values[0], 0.0);
        assert_eq!(a, b);
        assert_ne!(a.values, sample_brownian(&g, 100).values);
    }

    #[test]
    fn sensors_validate() {
        assert!(SensorSet::new(vec![]).is_err());
        assert!(SensorSet::new(vec![-0.1, 0.2]).is_err());
        assert!(SensorSet::new(vec![0.2, 0.1]).is_err());
        assert!(SensorSet::new(vec![0.1, 0.1]).is_err());
        assert!(SensorSet::new(vec![0.0, 0.1]).is_ok());
    }

    #[test]
    fn sensor_at_zero_is_zero() {
        let s = SensorSet::new(vec![0.0]).unwrap();
        assert_eq!(sample_brownian_at_sensors(&s, 5), vec![0.0]);
    }

    #[test]
    fn sensors_on_grid_match_full_path() {
        // Same increment stream; gaps t_k - t_{k-1} differ from h only by rounding.
        let g = make_grid(0.0, 0.01, 31).unwrap();
        let s = SensorSet::from_grid(&g).unwrap();
        for seed in 0..20 {
            let full = sample_brownian(&g, seed);
            let sparse = sample_brownian_at_sensors(&s, seed);
            for (a, b) in full.values.iter().zip(&sparse) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_matches_individual_paths() {
        let g = make_grid(0.0, 0.01, 11).unwrap();
        let batch = sample_brownian_batch(&g, 7, 16);
        for (i, p) in batch.iter().enumerate() {
            assert_eq!(*p, sample_brownian(&g, derive_seed(7, i as u64)));
        }
    }
}
