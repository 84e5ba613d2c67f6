//! Plain-text dataset files.
//!
//! ```text
//! # sdeop-dataset version=1 t0=0 h=0.01 m=3 model=ou[a=1,b=1] particles=1
//! path_id,k,t_k,B,X,seed
//! 0,0,0,0,1,42
//! 0,1,0.01,-0.05,0.94,42
//! 0,2,0.02,0.031,1.0213,42
//! ```
//!
//! The first line holds whitespace-separated `key=value` pairs; `t0`, `h`, `m`
//! and `model` are required, anything else is carried through as metadata.
//! Values may not contain whitespace. Numbers are written in Rust's shortest
//! round-trip form so reading a file back reproduces every `f64` bit for bit.
//! One row per (path, grid point), paths in order, `k` ascending.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BrownianPath, SolutionPath, TimeGrid};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "# sdeop-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_COLUMNS: &str = "path_id,k,t_k,B,X,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct PathDataset {
    pub grid: TimeGrid,
    pub brownian: Vec<BrownianPath>,
    pub solutions: Vec<SolutionPath>,
    pub model: String,
    pub metadata: BTreeMap<String, String>,
}

impl PathDataset {
    pub fn new(
        grid: TimeGrid,
        brownian: Vec<BrownianPath>,
        solutions: Vec<SolutionPath>,
        model: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            grid,
            brownian,
            solutions,
            model: model.into(),
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.brownian.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brownian.is_empty()
    }

    pub fn x0s(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.x0).collect()
    }

    /// Dataset restricted to the paths at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut brownian = Vec::with_capacity(indices.len());
        let mut solutions = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "path index {i} out of range for {} paths",
                    self.len()
                )));
            }
            brownian.push(self.brownian[i].clone());
            solutions.push(self.solutions[i].clone());
        }
        Ok(Self {
            grid: self.grid,
            brownian,
            solutions,
            model: self.model.clone(),
            metadata: self.metadata.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.brownian.len() != self.solutions.len() {
            return Err(Error::Validation(format!(
                "{} Brownian paths but {} solution paths",
                self.brownian.len(),
                self.solutions.len()
            )));
        }
        for (i, (b, x)) in self.brownian.iter().zip(&self.solutions).enumerate() {
            if b.grid != self.grid || x.grid != self.grid {
                return Err(Error::Validation(format!(
                    "path {i} is not on the dataset grid"
                )));
            }
            if b.values.len() != self.grid.len() || x.values.len() != self.grid.len() {
                return Err(Error::Validation(format!("path {i} has the wrong length")));
            }
        }
        check_token("model", &self.model)?;
        for (k, v) in &self.metadata {
            check_token(k, k)?;
            check_token(k, v)?;
            if matches!(k.as_str(), "version" | "t0" | "h" | "m" | "model") {
                return Err(Error::Validation(format!("metadata key {k} is reserved")));
            }
        }
        Ok(())
    }
}

fn check_token(what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Validation(format!(
            "{what} value {s:?} must be non-empty without whitespace"
        )));
    }
    Ok(())
}

pub fn dataset_to_string(ds: &PathDataset) -> Result<String> {
    ds.validate()?;
    let g = &ds.grid;
    let mut out = String::new();
    write!(
        out,
        "{DATASET_MAGIC} version={DATASET_VERSION} t0={} h={} m={} model={}",
        g.t0(),
        g.step(),
        g.len(),
        ds.model
    )
    .unwrap();
    for (k, v) in &ds.metadata {
        write!(out, " {k}={v}").unwrap();
    }
    out.push('\n');
    out.push_str(DATASET_COLUMNS);
    out.push('\n');
    for (i, (b, x)) in ds.brownian.iter().zip(&ds.solutions).enumerate() {
        for k in 0..g.len() {
            writeln!(
                out,
                "{i},{k},{},{},{},{}",
                g.time(k),
                b.values[k],
                x.values[k],
                b.seed
            )
            .unwrap();
        }
    }
    Ok(out)
}

pub fn write_dataset(ds: &PathDataset, path: &Path) -> Result<()> {
    let text = dataset_to_string(ds)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<PathDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

fn fmt_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| fmt_err(line, format!("cannot parse {what} from {s:?}")))
}

pub fn parse_dataset(text: &str) -> Result<PathDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (_, header) = lines.next().ok_or_else(|| fmt_err(1, "empty file"))?;
    let rest = header
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| fmt_err(1, "missing dataset header"))?;
    let mut fields = BTreeMap::new();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| fmt_err(1, format!("header token {tok:?} is not key=value")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let mut take = |key: &str| {
        fields
            .remove(key)
            .ok_or_else(|| fmt_err(1, format!("header is missing {key}")))
    };
    let version: u32 = parse_num(1, "version", &take("version")?)?;
    if version != DATASET_VERSION {
        return Err(fmt_err(1, format!("unsupported dataset version {version}")));
    }
    let t0: f64 = parse_num(1, "t0", &take("t0")?)?;
    let h: f64 = parse_num(1, "h", &take("h")?)?;
    let m: usize = parse_num(1, "m", &take("m")?)?;
    let model = take("model")?;
    let grid = TimeGrid::new(t0, h, m).map_err(|e| fmt_err(1, e.to_string()))?;

    match lines.next() {
        Some((_, cols)) if cols.trim() == DATASET_COLUMNS => {}
        Some((n, cols)) => return Err(fmt_err(n, format!("unexpected column header {cols:?}"))),
        None => return Err(fmt_err(2, "missing column header")),
    }

    let mut brownian: Vec<BrownianPath> = Vec::new();
    let mut solutions: Vec<SolutionPath> = Vec::new();
    let mut bvals = Vec::with_capacity(m);
    let mut xvals = Vec::with_capacity(m);
    let mut seed = 0u64;
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(fmt_err(
                n,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let pid: usize = parse_num(n, "path_id", cols[0])?;
        let k: usize = parse_num(n, "k", cols[1])?;
        let t: f64 = parse_num(n, "t_k", cols[2])?;
        let b: f64 = parse_num(n, "B", cols[3])?;
        let x: f64 = parse_num(n, "X", cols[4])?;
        let s: u64 = parse_num(n, "seed", cols[5])?;

        if pid != brownian.len() || k != bvals.len() {
            return Err(fmt_err(
                n,
                format!(
                    "expected path {} point {}, found path {pid} point {k}",
                    brownian.len(),
                    bvals.len()
                ),
            ));
        }
        if t != grid.time(k) {
            return Err(Error::Validation(format!(
                "line {n}: time {t} does not lie on the header grid (expected {})",
                grid.time(k)
            )));
        }
        if k == 0 {
            seed = s;
        } else if s != seed {
            return Err(fmt_err(n, format!("seed changes within path {pid}")));
        }
        bvals.push(b);
        xvals.push(x);
        if bvals.len() == m {
            brownian.push(BrownianPath {
                grid,
                values: std::mem::take(&mut bvals),
                seed,
            });
            let values = std::mem::take(&mut xvals);
            solutions.push(SolutionPath {
                grid,
                x0: values[0],
                values,
            });
        }
    }
    if !bvals.is_empty() {
        return Err(fmt_err(
            text.lines().count(),
            format!(
                "path {} is truncated after {} points",
                brownian.len(),
                bvals.len()
            ),
        ));
    }
    let ds = PathDataset {
        grid,
        brownian,
        solutions,
        model,
        metadata: fields,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{make_grid, sample_brownian};

    fn toy(n: usize) -> PathDataset {
        let g = make_grid(0.0, 0.01, 4).unwrap();
        let brownian: Vec<_> = (0..n).map(|i| sample_brownian(&g, i as u64 + 10)).collect();
        let solutions = brownian
            .iter()
            .map(|b| {
                SolutionPath::new(g, b.values.iter().map(|v| 1.0 + v / 3.0).collect()).unwrap()
            })
            .collect();
        PathDataset::new(g, brownian, solutions, "test[c=1]")
            .unwrap()
            .with_metadata("particles", 7)
    }

    #[test]
    fn round_trip() {
        let ds = toy(3);
        let text = dataset_to_string(&ds).unwrap();
        assert_eq!(parse_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = toy(0);
        let text = dataset_to_string(&ds).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = parse_dataset(&text).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.grid, ds.grid);
    }

    #[test]
    fn wrong_column_count_names_the_row() {
        let ds = toy(1);
        let mut text = dataset_to_string(&ds).unwrap();
        text.push_str("1,0,0,0\n");
        match parse_dataset(&text) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn off_grid_time_is_a_validation_error() {
        let text = format!(
            "{DATASET_MAGIC} version=1 t0=0 h=0.5 m=2 model=x\n{DATASET_COLUMNS}\n0,0,0,0,1,3\n0,1,0.6,0.1,1,3\n"
        );
        assert!(matches!(parse_dataset(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn grid_mismatch_rejected_on_construction() {
        let g = make_grid(0.0, 0.01, 4).unwrap();
        let g2 = make_grid(0.0, 0.02, 4).unwrap();
        let b = sample_brownian(&g2, 1);
        let x = SolutionPath::new(g2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            PathDataset::new(g, vec![b], vec![x], "m"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = format!("{DATASET_MAGIC} version=9 t0=0 h=0.5 m=2 model=x\n{DATASET_COLUMNS}\n");
        assert!(matches!(
            parse_dataset(&text),
            Err(Error::Format { line: 1, .. })
        ));
    }
}
