//! Dense rank-2 tensors with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: a [`Tape`] records one forward pass and a
//! single [`Tape::backward`] sweep populates gradients of every reachable
//! `requires_grad` leaf. Tensors are `f64` throughout and at most rank 2;
//! vectors are 1xN or Nx1 matrices and scalars are 1x1. There is no
//! broadcasting beyond the explicit [`Tape::add_row`] bias op.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("backward requires a scalar loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("duplicate parameter name: {0}")]
    DuplicateParameter(String),
    #[error("parameter sets are incompatible: {0}")]
    IncompatibleParameterSets(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Plain row-major matrix of f64 values, used wherever no gradient is needed
/// (bag features, attention snapshots, oracles).
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        Mat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat::new(r, c, data)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

struct TensorData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Shared handle to a tensor value. Cloning is shallow; two clones see the
/// same data and gradient buffer.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<TensorData>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        write!(
            f,
            "Tensor({}x{}, requires_grad={}, data={:?})",
            d.rows, d.cols, d.requires_grad, d.data
        )
    }
}

impl Tensor {
    fn build(rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must match shape");
        let grad = requires_grad.then(|| vec![0.0; rows * cols]);
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                rows,
                cols,
                data,
                requires_grad,
                grad,
            })),
        }
    }

    /// Constant tensor: never tracked on a tape.
    pub fn constant(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::build(rows, cols, data, false)
    }

    /// Trainable leaf: tracked, with a zeroed gradient buffer.
    pub fn param(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Tensor::build(rows, cols, data, true)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::constant(1, 1, vec![v])
    }

    pub fn from_mat(m: &Mat) -> Self {
        Tensor::constant(m.rows, m.cols, m.data.clone())
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.inner.borrow();
        (d.rows, d.cols)
    }

    pub fn rows(&self) -> usize {
        self.inner.borrow().rows
    }

    pub fn cols(&self) -> usize {
        self.inner.borrow().cols
    }

    pub fn len(&self) -> usize {
        let d = self.inner.borrow();
        d.rows * d.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn value(&self) -> Mat {
        let d = self.inner.borrow();
        Mat::new(d.rows, d.cols, d.data.clone())
    }

    pub fn data_clone(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let d = self.inner.borrow();
        d.data[r * d.cols + c]
    }

    /// Scalar value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.borrow();
        assert_eq!((d.rows, d.cols), (1, 1), "item() needs a 1x1 tensor");
        d.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut d = self.inner.borrow_mut();
        if let Some(g) = d.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Detached copy: same values, no gradient tracking.
    pub fn detach(&self) -> Tensor {
        let d = self.inner.borrow();
        Tensor::constant(d.rows, d.cols, d.data.clone())
    }

    /// Deep copy preserving the requires_grad flag (fresh grad buffer).
    pub fn deep_clone(&self) -> Tensor {
        let d = self.inner.borrow();
        Tensor::build(d.rows, d.cols, d.data.clone(), d.requires_grad)
    }

    /// In-place additive perturbation of one coordinate (finite differences).
    pub fn nudge(&self, idx: usize, delta: f64) {
        self.inner.borrow_mut().data[idx] += delta;
    }

    pub fn overwrite(&self, data: &[f64]) {
        let mut d = self.inner.borrow_mut();
        assert_eq!(d.data.len(), data.len());
        d.data.copy_from_slice(data);
    }

    /// Apply an in-place update to the raw data (optimizer steps).
    pub fn update_data(&self, f: impl FnMut(usize, &mut f64)) {
        let mut d = self.inner.borrow_mut();
        let mut f = f;
        for (i, v) in d.data.iter_mut().enumerate() {
            f(i, v);
        }
    }

    fn grad_snapshot(&self) -> Vec<f64> {
        self.inner
            .borrow()
            .grad
            .clone()
            .expect("tracked tensor must have a grad buffer")
    }

    fn add_to_grad(&self, contrib: &[f64]) {
        let mut d = self.inner.borrow_mut();
        let g = d.grad.as_mut().expect("tracked tensor must have grad");
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += *ci;
        }
    }

    fn set_grad_scalar(&self, v: f64) {
        let mut d = self.inner.borrow_mut();
        if let Some(g) = d.grad.as_mut() {
            g[0] = v;
        }
    }
}

fn matmul_raw(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for k in 0..ac {
            let aik = a[i * ac + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * bc..(k + 1) * bc];
            let orow = &mut out[i * bc..(i + 1) * bc];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

type BackwardFn = Box<dyn Fn()>;

/// Append-only record of one forward pass. Nodes are replayed in reverse by
/// [`Tape::backward`]; gradient fan-out accumulates by summation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<BackwardFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.borrow().len()
    }

    fn record(&self, f: impl Fn() + 'static) {
        self.nodes.borrow_mut().push(Box::new(f));
    }

    fn output(&self, rows: usize, cols: usize, data: Vec<f64>, track: bool) -> Tensor {
        Tensor::build(rows, cols, data, track)
    }

    /// Run the backward sweep from a scalar loss. Call at most once per tape;
    /// a second call would double-accumulate.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        let (r, c) = loss.shape();
        if (r, c) != (1, 1) {
            return Err(TensorError::NonScalarLoss(r, c));
        }
        loss.set_grad_scalar(1.0);
        for node in self.nodes.borrow().iter().rev() {
            node();
        }
        Ok(())
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        let (br, bc) = b.shape();
        if ac != br {
            return Err(TensorError::ShapeMismatch(format!(
                "matmul: {}x{} * {}x{}",
                ar, ac, br, bc
            )));
        }
        let out_data = matmul_raw(&a.data_clone(), ar, ac, &b.data_clone(), bc);
        let track = a.requires_grad() || b.requires_grad();
        let out = self.output(ar, bc, out_data, track);
        if track {
            let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                if a2.requires_grad() {
                    // dA = G * B^T
                    let bt = transpose_raw(&b2.data_clone(), br, bc);
                    let ga = matmul_raw(&g, ar, bc, &bt, br);
                    a2.add_to_grad(&ga);
                }
                if b2.requires_grad() {
                    // dB = A^T * G
                    let at = transpose_raw(&a2.data_clone(), ar, ac);
                    let gb = matmul_raw(&at, ac, ar, &g, bc);
                    b2.add_to_grad(&gb);
                }
            });
        }
        Ok(out)
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_pair(a, b, "add", |x, y| x + y, |_x, _y, g| (g, g))
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_pair(a, b, "sub", |x, y| x - y, |_x, _y, g| (g, -g))
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.elementwise_pair(a, b, "mul", |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    fn elementwise_pair(
        &self,
        a: &Tensor,
        b: &Tensor,
        name: &str,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        if (ar, ac) != b.shape() {
            let (br, bc) = b.shape();
            return Err(TensorError::ShapeMismatch(format!(
                "{}: {}x{} vs {}x{}",
                name, ar, ac, br, bc
            )));
        }
        let av = a.data_clone();
        let bv = b.data_clone();
        let out_data: Vec<f64> = av.iter().zip(&bv).map(|(&x, &y)| f(x, y)).collect();
        let track = a.requires_grad() || b.requires_grad();
        let out = self.output(ar, ac, out_data, track);
        if track {
            let (a2, b2, o2) = (a.clone(), b.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                let av = a2.data_clone();
                let bv = b2.data_clone();
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; g.len()];
                for i in 0..g.len() {
                    let (da, db) = df(av[i], bv[i], g[i]);
                    ga[i] = da;
                    gb[i] = db;
                }
                if a2.requires_grad() {
                    a2.add_to_grad(&ga);
                }
                if b2.requires_grad() {
                    b2.add_to_grad(&gb);
                }
            });
        }
        Ok(out)
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Tensor {
        self.elementwise_unary(a, move |x| c * x, move |_x, _y| c)
    }

    pub fn tanh(&self, a: &Tensor) -> Tensor {
        self.elementwise_unary(a, f64::tanh, |_x, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, a: &Tensor) -> Tensor {
        self.elementwise_unary(a, sigmoid_scalar, |_x, y| y * (1.0 - y))
    }

    pub fn relu(&self, a: &Tensor) -> Tensor {
        self.elementwise_unary(a, |x| x.max(0.0), |x, _y| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Natural log; inputs must be positive (clamp first when in doubt).
    pub fn ln(&self, a: &Tensor) -> Tensor {
        self.elementwise_unary(a, f64::ln, |x, _y| 1.0 / x)
    }

    /// Clamp values to [lo, hi]; gradient passes through strictly inside.
    pub fn clamp(&self, a: &Tensor, lo: f64, hi: f64) -> Tensor {
        self.elementwise_unary(
            a,
            move |x| x.clamp(lo, hi),
            move |x, _y| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    fn elementwise_unary(
        &self,
        a: &Tensor,
        f: impl Fn(f64) -> f64 + 'static,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let (ar, ac) = a.shape();
        let av = a.data_clone();
        let out_data: Vec<f64> = av.iter().map(|&x| f(x)).collect();
        let track = a.requires_grad();
        let out = self.output(ar, ac, out_data, track);
        if track {
            let (a2, o2) = (a.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                let av = a2.data_clone();
                let yv = o2.data_clone();
                let ga: Vec<f64> = (0..g.len()).map(|i| g[i] * df(av[i], yv[i])).collect();
                a2.add_to_grad(&ga);
            });
        }
        out
    }

    /// Add a 1xD row vector to every row of an NxD matrix (bias term).
    pub fn add_row(&self, m: &Tensor, row: &Tensor) -> Result<Tensor> {
        let (mr, mc) = m.shape();
        let (rr, rc) = row.shape();
        if rr != 1 || rc != mc {
            return Err(TensorError::ShapeMismatch(format!(
                "add_row: {}x{} + {}x{}",
                mr, mc, rr, rc
            )));
        }
        let mv = m.data_clone();
        let rv = row.data_clone();
        let mut out_data = mv;
        for r in 0..mr {
            for c in 0..mc {
                out_data[r * mc + c] += rv[c];
            }
        }
        let track = m.requires_grad() || row.requires_grad();
        let out = self.output(mr, mc, out_data, track);
        if track {
            let (m2, r2, o2) = (m.clone(), row.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                if m2.requires_grad() {
                    m2.add_to_grad(&g);
                }
                if r2.requires_grad() {
                    let mut gr = vec![0.0; mc];
                    for r in 0..mr {
                        for c in 0..mc {
                            gr[c] += g[r * mc + c];
                        }
                    }
                    r2.add_to_grad(&gr);
                }
            });
        }
        Ok(out)
    }

    /// Sum of all elements, as a 1x1 tensor.
    pub fn sum(&self, a: &Tensor) -> Tensor {
        let (ar, ac) = a.shape();
        let s: f64 = a.data_clone().iter().sum();
        let track = a.requires_grad();
        let out = self.output(1, 1, vec![s], track);
        if track {
            let (a2, o2) = (a.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot()[0];
                a2.add_to_grad(&vec![g; ar * ac]);
            });
        }
        out
    }

    pub fn transpose(&self, a: &Tensor) -> Tensor {
        let (ar, ac) = a.shape();
        let out_data = transpose_raw(&a.data_clone(), ar, ac);
        let track = a.requires_grad();
        let out = self.output(ac, ar, out_data, track);
        if track {
            let (a2, o2) = (a.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                a2.add_to_grad(&transpose_raw(&g, ac, ar));
            });
        }
        out
    }

    /// Row-wise softmax of `x / temperature`, stabilized by row-max
    /// subtraction.
    pub fn row_softmax(&self, x: &Tensor, temperature: f64) -> Result<Tensor> {
        if temperature <= 0.0 {
            return Err(TensorError::NonPositiveTemperature(temperature));
        }
        let (rows, cols) = x.shape();
        let xv = x.data_clone();
        let mut out_data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..cols {
                let e = ((row[c] - m) / temperature).exp();
                out_data[r * cols + c] = e;
                denom += e;
            }
            for c in 0..cols {
                out_data[r * cols + c] /= denom;
            }
        }
        let track = x.requires_grad();
        let out = self.output(rows, cols, out_data, track);
        if track {
            let (x2, o2) = (x.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                let y = o2.data_clone();
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols).map(|c| g[base + c] * y[base + c]).sum();
                    for c in 0..cols {
                        gx[base + c] = y[base + c] * (g[base + c] - dot) / temperature;
                    }
                }
                x2.add_to_grad(&gx);
            });
        }
        Ok(out)
    }

    /// Row-wise log-softmax, computed in log space (never as log(softmax)).
    pub fn row_log_softmax(&self, x: &Tensor) -> Tensor {
        let (rows, cols) = x.shape();
        let xv = x.data_clone();
        let mut out_data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            for c in 0..cols {
                out_data[r * cols + c] = row[c] - lse;
            }
        }
        let track = x.requires_grad();
        let out = self.output(rows, cols, out_data, track);
        if track {
            let (x2, o2) = (x.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                let y = o2.data_clone();
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let base = r * cols;
                    let gsum: f64 = (0..cols).map(|c| g[base + c]).sum();
                    for c in 0..cols {
                        gx[base + c] = g[base + c] - y[base + c].exp() * gsum;
                    }
                }
                x2.add_to_grad(&gx);
            });
        }
        out
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        let rows = parts[0].rows();
        let mut total_cols = 0;
        for p in parts {
            if p.rows() != rows {
                return Err(TensorError::ShapeMismatch(
                    "concat_cols: row counts differ".into(),
                ));
            }
            total_cols += p.cols();
        }
        let mut out_data = vec![0.0; rows * total_cols];
        let mut offset = 0;
        for p in parts {
            let pc = p.cols();
            let pv = p.data_clone();
            for r in 0..rows {
                out_data[r * total_cols + offset..r * total_cols + offset + pc]
                    .copy_from_slice(&pv[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let track = parts.iter().any(|p| p.requires_grad());
        let out = self.output(rows, total_cols, out_data, track);
        if track {
            let parts2: Vec<Tensor> = parts.to_vec();
            let o2 = out.clone();
            self.record(move || {
                let g = o2.grad_snapshot();
                let mut offset = 0;
                for p in &parts2 {
                    let pc = p.cols();
                    if p.requires_grad() {
                        let mut gp = vec![0.0; rows * pc];
                        for r in 0..rows {
                            gp[r * pc..(r + 1) * pc].copy_from_slice(
                                &g[r * total_cols + offset..r * total_cols + offset + pc],
                            );
                        }
                        p.add_to_grad(&gp);
                    }
                    offset += pc;
                }
            });
        }
        Ok(out)
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&self, parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        let cols = parts[0].cols();
        let mut total_rows = 0;
        for p in parts {
            if p.cols() != cols {
                return Err(TensorError::ShapeMismatch(
                    "concat_rows: column counts differ".into(),
                ));
            }
            total_rows += p.rows();
        }
        let mut out_data = Vec::with_capacity(total_rows * cols);
        for p in parts {
            out_data.extend_from_slice(&p.data_clone());
        }
        let track = parts.iter().any(|p| p.requires_grad());
        let out = self.output(total_rows, cols, out_data, track);
        if track {
            let parts2: Vec<Tensor> = parts.to_vec();
            let o2 = out.clone();
            self.record(move || {
                let g = o2.grad_snapshot();
                let mut offset = 0;
                for p in &parts2 {
                    let n = p.rows() * cols;
                    if p.requires_grad() {
                        p.add_to_grad(&g[offset..offset + n]);
                    }
                    offset += n;
                }
            });
        }
        Ok(out)
    }

    /// Contiguous row slice `[start, start+len)`.
    pub fn slice_rows(&self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        let (ar, ac) = a.shape();
        if start + len > ar {
            return Err(TensorError::ShapeMismatch(format!(
                "slice_rows: [{}, {}) of {} rows",
                start,
                start + len,
                ar
            )));
        }
        let av = a.data_clone();
        let out_data = av[start * ac..(start + len) * ac].to_vec();
        let track = a.requires_grad();
        let out = self.output(len, ac, out_data, track);
        if track {
            let (a2, o2) = (a.clone(), out.clone());
            self.record(move || {
                let g = o2.grad_snapshot();
                let mut ga = vec![0.0; ar * ac];
                ga[start * ac..(start + len) * ac].copy_from_slice(&g);
                a2.add_to_grad(&ga);
            });
        }
        Ok(out)
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Flat, named collection of trainable tensors. Iteration order is always
/// lexicographic by name.
#[derive(Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) {
        for t in self.entries.values() {
            t.zero_grad();
        }
    }

    /// Deep copy preserving tracking flags.
    pub fn deep_clone(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (name, t) in &self.entries {
            out.entries.insert(name.clone(), t.deep_clone());
        }
        out
    }

    /// Deep copy with gradient tracking removed (teacher parameters).
    pub fn deep_clone_detached(&self) -> ParameterSet {
        let mut out = ParameterSet::new();
        for (name, t) in &self.entries {
            out.entries.insert(name.clone(), t.detach());
        }
        out
    }

    /// Check that `other` has exactly the same names and shapes.
    pub fn compatible_with(&self, other: &ParameterSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(TensorError::IncompatibleParameterSets(format!(
                "{} vs {} parameters",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb {
                return Err(TensorError::IncompatibleParameterSets(format!(
                    "name {} vs {}",
                    na, nb
                )));
            }
            if ta.shape() != tb.shape() {
                return Err(TensorError::IncompatibleParameterSets(format!(
                    "shape of {}: {:?} vs {:?}",
                    na,
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Copy values from `other` in place, keeping this set's tensors (and any
    /// handles to them) alive.
    pub fn copy_values_from(&self, other: &ParameterSet) -> Result<()> {
        self.compatible_with(other)?;
        for (name, t) in &self.entries {
            t.overwrite(&other.entries[name].data_clone());
        }
        Ok(())
    }
}

/// Max relative error between autodiff and central-difference gradients of a
/// deterministic scalar function of `params`.
pub fn finite_diff_check<F>(f: F, params: &ParameterSet, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &ParameterSet) -> Result<Tensor>,
{
    assert!(h > 0.0, "step size must be positive");
    params.zero_grads();
    let tape = Tape::new();
    let loss = f(&tape, params)?;
    tape.backward(&loss)?;
    let grads: Vec<(Tensor, Vec<f64>)> = params
        .iter()
        .map(|(_, t)| (t.clone(), t.grad().unwrap_or_else(|| vec![0.0; t.len()])))
        .collect();

    let eval = |params: &ParameterSet| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, params)?.item())
    };

    let mut max_err: f64 = 0.0;
    for (tensor, g_ad) in &grads {
        for i in 0..tensor.len() {
            tensor.nudge(i, h);
            let fp = eval(params)?;
            tensor.nudge(i, -2.0 * h);
            let fm = eval(params)?;
            tensor.nudge(i, h);
            let g_fd = (fp - fm) / (2.0 * h);
            let err = (g_ad[i] - g_fd).abs() / (1e-8_f64).max(g_ad[i].abs() + g_fd.abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
