//! Dense rank-0/1/2 tensors with tape-based reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. A node needs a
//! gradient when any of its inputs does, so evaluation-only tapes (built from
//! constants) never pay for the backward pass.
//!
//! Broadcasting is deliberately absent apart from [`Tape::add_row`], which adds
//! a bias vector to every row of a matrix, and matrix-vector products.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::invalid(format!(
                "rank {} tensors are not supported",
                shape.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    VStack(Vec<Var>),
    Rows { src: Var, start: usize },
    Row { src: Var, index: usize },
    Dot(Var, Var),
    MeanSq(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of evaluated operations, replayed backwards by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// C (m x n) [+]= A (m x k) * B (k x n) with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover the index ranges implied by the dimensions and
    // strides, checked by the callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// Matrix view (rows, cols) of a matmul operand; vectors are a row on the left
// and a column on the right.
fn lhs_dims(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape.len() {
        1 => Some((1, t.shape[0])),
        2 => Some((t.shape[0], t.shape[1])),
        _ => None,
    }
}

fn rhs_dims(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape.len() {
        1 => Some((t.shape[0], 1)),
        2 => Some((t.shape[0], t.shape[1])),
        _ => None,
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(d, s)| *d += s),
        None => *dst = Some(src.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (Some((m, k)), Some((k2, n))) = (lhs_dims(ta), rhs_dims(tb)) else {
            return Err(shape_err("matmul", &ta.shape, &tb.shape));
        };
        if k != k2 || (ta.rank() == 1 && tb.rank() == 1) {
            return Err(shape_err("matmul", &ta.shape, &tb.shape));
        }
        let shape = match (ta.rank(), tb.rank()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            _ => vec![n],
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, (k, 1), &tb.data, (n, 1), &mut out, false);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor { shape, data: out }, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(op, &ta.shape, &tb.shape));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `a[i, j] + bias[j]` for a matrix `a`; plain addition for a vector `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rank() != 1 || ta.rank() == 0 || ta.cols() != tb.len() {
            return Err(shape_err("add_row", &ta.shape, &tb.shape));
        }
        let cols = tb.len();
        let data = ta
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + tb.data[i % cols])
            .collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(t, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|x| x * c).collect(),
        };
        let ng = self.needs(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|x| x.tanh()).collect(),
        };
        let ng = self.needs(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        };
        let ng = self.needs(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    /// Vectors are joined end to end; matrices with equal row counts side by side.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let t = match (ta.rank(), tb.rank()) {
            (1, 1) => {
                let mut data = ta.data.clone();
                data.extend_from_slice(&tb.data);
                Tensor::vector(data)
            }
            (2, 2) if ta.rows() == tb.rows() => {
                let (ca, cb) = (ta.cols(), tb.cols());
                let mut data = Vec::with_capacity(ta.len() + tb.len());
                for r in 0..ta.rows() {
                    data.extend_from_slice(&ta.data[r * ca..(r + 1) * ca]);
                    data.extend_from_slice(&tb.data[r * cb..(r + 1) * cb]);
                }
                Tensor {
                    shape: vec![ta.rows(), ca + cb],
                    data,
                }
            }
            _ => return Err(shape_err("concat", &ta.shape, &tb.shape)),
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Concat(a, b), ng))
    }

    /// Stacks vectors as matrix rows, or matrices on top of each other.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("vstack of zero tensors"))?;
        let t0 = self.value(*first);
        let cols = t0.cols();
        let rank = t0.rank();
        if rank == 0 {
            return Err(Error::invalid("vstack of scalars"));
        }
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() != rank || t.cols() != cols {
                return Err(shape_err("vstack", &t0.shape, &t.shape));
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        let t = Tensor {
            shape: vec![rows, cols],
            data,
        };
        Ok(self.push(t, Op::VStack(parts.to_vec()), ng))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(src);
        if t.rank() != 2 || start + len > t.rows() {
            return Err(Error::invalid(format!(
                "rows {start}..{} out of range for shape {:?}",
                start + len,
                t.shape
            )));
        }
        let c = t.cols();
        let data = t.data[start * c..(start + len) * c].to_vec();
        let ng = self.needs(src);
        Ok(self.push(
            Tensor {
                shape: vec![len, c],
                data,
            },
            Op::Rows { src, start },
            ng,
        ))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, src: Var, index: usize) -> Result<Var> {
        let t = self.value(src);
        if t.rank() != 2 || index >= t.rows() {
            return Err(Error::invalid(format!(
                "row {index} out of range for shape {:?}",
                t.shape
            )));
        }
        let c = t.cols();
        let data = t.data[index * c..(index + 1) * c].to_vec();
        let ng = self.needs(src);
        Ok(self.push(Tensor::vector(data), Op::Row { src, index }, ng))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || ta.shape != tb.shape {
            return Err(shape_err("dot", &ta.shape, &tb.shape));
        }
        let v = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), ng))
    }

    /// Mean of squared entries.
    pub fn mean_sq(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.is_empty() {
            return Err(Error::invalid("mean_sq of an empty tensor"));
        }
        let v = ta.data.iter().map(|x| x * x).sum::<f64>() / ta.len() as f64;
        let ng = self.needs(a);
        Ok(self.push(Tensor::scalar(v), Op::MeanSq(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data.iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(v), Op::Sum(a), ng)
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = lhs_dims(ta).unwrap();
                let (_, n) = rhs_dims(tb).unwrap();
                if self.needs(*a) {
                    // dA = dC B^T, (m x n)(n x k)
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, g, (n, 1), &tb.data, (1, n), &mut d, false);
                    add_into(&mut grads[a.0], &d);
                }
                if self.needs(*b) {
                    // dB = A^T dC, (k x m)(m x n)
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, &ta.data, (1, k), g, (n, 1), &mut d, false);
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    add_into(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().zip(&tb.data).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = g.iter().zip(&ta.data).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.needs(*bias) {
                    let cols = val(*bias).len();
                    let mut d = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        d.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                    }
                    add_into(&mut grads[bias.0], &d);
                }
            }
            Op::Scale(a, c) => {
                let d: Vec<f64> = g.iter().map(|x| x * c).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Tanh(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(&node.value.data)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Sigmoid(a) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(&node.value.data)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (ga, gb) = if ta.rank() == 1 {
                    (g[..ta.len()].to_vec(), g[ta.len()..].to_vec())
                } else {
                    let (ca, cb) = (ta.cols(), tb.cols());
                    let mut ga = Vec::with_capacity(ta.len());
                    let mut gb = Vec::with_capacity(tb.len());
                    for row in g.chunks(ca + cb) {
                        ga.extend_from_slice(&row[..ca]);
                        gb.extend_from_slice(&row[ca..]);
                    }
                    (ga, gb)
                };
                if self.needs(*a) {
                    add_into(&mut grads[a.0], &ga);
                }
                if self.needs(*b) {
                    add_into(&mut grads[b.0], &gb);
                }
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    if self.needs(*p) {
                        add_into(&mut grads[p.0], &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Rows { src, start } => {
                let t = val(*src);
                let c = t.cols();
                let slot = grads[src.0].get_or_insert_with(|| vec![0.0; t.len()]);
                slot[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, x)| *d += x);
            }
            Op::Row { src, index } => {
                let t = val(*src);
                let c = t.cols();
                let slot = grads[src.0].get_or_insert_with(|| vec![0.0; t.len()]);
                slot[index * c..(index + 1) * c]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, x)| *d += x);
            }
            Op::Dot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.needs(*a) {
                    let d: Vec<f64> = tb.data.iter().map(|y| g[0] * y).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = ta.data.iter().map(|x| g[0] * x).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::MeanSq(a) => {
                let ta = val(*a);
                let c = 2.0 * g[0] / ta.len() as f64;
                let d: Vec<f64> = ta.data.iter().map(|x| c * x).collect();
                add_into(&mut grads[a.0], &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; val(*a).len()];
                add_into(&mut grads[a.0], &d);
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, zero when `v` does not influence the output.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.value(v).shape.clone();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Number of randomly chosen coordinates; `None` checks all of them.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            samples: None,
            seed: 0,
        }
    }
}

/// Largest `|autodiff - central difference| / max(|central difference|, 1e-8)`
/// over the checked coordinates of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: GradCheckOptions) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(&tape, v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let o = f(&mut t, &vs)?;
        Ok(t.value(o).data[0])
    };

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = match opts.samples {
        Some(n) if n < coords.len() => {
            let mut rng = SplitMix64::new(opts.seed);
            (0..n).map(|_| coords[rng.index(coords.len())]).collect()
        }
        _ => coords,
    };

    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for (i, j) in chosen {
        let orig = work[i].data[j];
        work[i].data[j] = orig + opts.eps;
        let plus = eval(&work)?;
        work[i].data[j] = orig - opts.eps;
        let minus = eval(&work)?;
        work[i].data[j] = orig;
        let fd = (plus - minus) / (2.0 * opts.eps);
        let ad = analytic[i].data[j];
        worst = worst.max((ad - fd).abs() / fd.abs().max(1e-8));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let a = t.constant(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = t.matmul(i, a).unwrap();
        assert_eq!(t.value(p), t.value(a));
    }

    #[test]
    fn matmul_vector_forms() {
        let mut t = Tape::new();
        let a = t.constant(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let x = t.constant(Tensor::vector(vec![1.0, 0.0, -1.0]));
        let y = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let ax = t.matmul(a, x).unwrap();
        assert_eq!(t.value(ax).data(), &[-2.0, -2.0]);
        let ya = t.matmul(y, a).unwrap();
        assert_eq!(t.value(ya).data(), &[5.0, 7.0, 9.0]);
        assert!(t.matmul(x, a).is_err());
        assert!(t.matmul(x, x).is_err());
    }

    #[test]
    fn tanh_of_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[4]));
        let y = t.tanh(z);
        assert_eq!(t.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn dot_arithmetic() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let d = t.dot(a, b).unwrap();
        assert_eq!(t.value(d).item(), Some(11.0));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        assert!(t.matmul(a, b).is_err());
    }

    #[test]
    fn gradient_of_squared_norm() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let y = t.dot(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn gradient_at_minimum_is_zero() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::vector(vec![0.5, -1.5, 3.0]));
        let x = t.param(Tensor::vector(vec![0.5, -1.5, 3.0]));
        let d = t.sub(x, c).unwrap();
        let l = t.mean_sq(d).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(&t, x).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = t.param(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let y = t.sum(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, unused).data(), &[0.0; 4]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn grad_check_linear_and_quadratic() {
        let w = Tensor::vector(vec![0.3, -0.7, 1.1]);
        let c = Tensor::vector(vec![2.0, 1.0, -1.0]);
        let lin = grad_check(
            |t, v| {
                let cc = t.constant(c.clone());
                t.dot(v[0], cc)
            },
            std::slice::from_ref(&w),
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(lin <= 1e-9, "{lin}");

        let quad = grad_check(
            |t, v| {
                let cc = t.constant(c.clone());
                let d = t.sub(v[0], cc)?;
                t.mean_sq(d)
            },
            &[w],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(quad <= 1e-7, "{quad}");
    }

    #[test]
    fn all_ops_pass_grad_check() {
        let a = mat(3, 2, &[0.1, -0.4, 0.7, 0.2, -0.3, 0.5]);
        let b = mat(2, 4, &[0.3, 0.1, -0.2, 0.6, -0.5, 0.4, 0.8, -0.1]);
        let bias = Tensor::vector(vec![0.05, -0.1, 0.2, 0.0]);
        let v = Tensor::vector(vec![0.9, -0.6, 0.3]);
        let err = grad_check(
            |t, p| {
                let ab = t.matmul(p[0], p[1])?;
                let ab = t.add_row(ab, p[2])?;
                let h = t.tanh(ab);
                let s = t.sigmoid(h);
                let c = t.concat(h, s)?; // 3 x 8
                let r0 = t.row(c, 0)?;
                let top = t.rows(c, 1, 2)?;
                let st = t.vstack(&[top, c])?; // 5 x 8
                let m = t.mul(st, st)?;
                let sc = t.scale(m, 0.7);
                let y = t.matmul(p[3], c)?; // 8-vector
                let d = t.dot(y, r0)?;
                let ms = t.mean_sq(sc)?;
                let e = t.add(d, ms)?;
                let total = t.sum(sc);
                let f = t.sub(e, total)?;
                Ok(f)
            },
            &[a, b, bias, v],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn backward_is_linear() {
        let x0 = Tensor::vector(vec![0.2, -0.5, 0.9]);
        let grad = |which: u8| {
            let mut t = Tape::new();
            let x = t.param(x0.clone());
            let f = t.tanh(x);
            let f = t.sum(f);
            let g = t.dot(x, x).unwrap();
            let out = match which {
                0 => f,
                1 => g,
                _ => t.add(f, g).unwrap(),
            };
            let gr = t.backward(out).unwrap();
            gr.wrt(&t, x).into_data()
        };
        let (gf, gg, gs) = (grad(0), grad(1), grad(2));
        for i in 0..3 {
            assert_eq!(gs[i], gf[i] + gg[i]);
        }
    }
}
