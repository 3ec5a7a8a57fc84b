//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for the backward pass. Node indices are therefore already a topological
//! order, and [`Tape::backward`] just walks them in reverse.

use rand::Rng;

use crate::numerics::kernels::{self, ConvGeometry};
use crate::numerics::{NumericsError, Result, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul { a: Var, b: Var, b_t: bool },
    BatchedMatMul { a: Var, b: Var, b_t: bool },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    GatherRows { table: Var, rows: Vec<usize> },
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normalized: Vec<T>, rstd: Vec<T> },
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var, groups: usize, queries: usize, keys: usize },
    Dropout { x: Var, multiplier: Vec<T> },
    Conv2d { input: Var, filters: Var, bias: Var, geometry: ConvGeometry },
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<u32>>, probs: Vec<T>, active: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications and replays their gradients in reverse.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when `v` is unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let shape = &self.shapes[v.0];
                if shape.is_empty() {
                    Tensor::scalar(T::zero())
                } else {
                    Tensor::zeros(shape.clone())
                }
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let shape = self.shapes[v.0].clone();
                if shape.is_empty() {
                    Tensor::scalar(T::zero())
                } else {
                    Tensor::zeros(shape)
                }
            }
        }
    }
}

fn mismatch(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("add", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (v, b) = (self.value(x), self.value(bias));
        let width = v.last_dim();
        if b.len() != width {
            return Err(mismatch("add_bias", format!("{:?} + {:?}", v.shape(), b.shape())));
        }
        let data = v.data().iter().enumerate().map(|(i, &p)| p + b.data()[i % width]).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.requires(x) || self.requires(bias);
        self.push(out, Op::AddBias(x, bias), rg, "add_bias")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("mul", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let rg = self.requires(x);
        self.push(out, Op::Scale(x, s), rg, "scale")
    }

    /// `[m,k] x [k,n]`, or `[m,k] x [n,k]^T` when `b_t`.
    pub fn matmul(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 2 || y.rank() != 2 {
            return Err(mismatch("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (m, k) = (x.shape()[0], x.shape()[1]);
        let (k2, n) = if b_t { (y.shape()[1], y.shape()[0]) } else { (y.shape()[0], y.shape()[1]) };
        if k != k2 {
            return Err(mismatch("matmul", format!("{:?} x {:?} (b_t={b_t})", x.shape(), y.shape())));
        }
        let mut c = vec![T::zero(); m * n];
        kernels::gemm(x.data(), false, y.data(), b_t, m, k, n, &mut c);
        let out = Tensor::from_parts(vec![m, n], c);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::MatMul { a, b, b_t }, rg, "matmul")
    }

    /// `[g,m,k] x [g,k,n]`, or with `b` stored `[g,n,k]` when `b_t`.
    pub fn batched_matmul(&mut self, a: Var, b: Var, b_t: bool) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rank() != 3 || y.rank() != 3 || x.shape()[0] != y.shape()[0] {
            return Err(mismatch("batched_matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (g, m, k) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (k2, n) = if b_t { (y.shape()[2], y.shape()[1]) } else { (y.shape()[1], y.shape()[2]) };
        if k != k2 {
            return Err(mismatch("batched_matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let mut c = vec![T::zero(); g * m * n];
        kernels::gemm_batched(x.data(), false, y.data(), b_t, g, m, k, n, &mut c);
        let out = Tensor::from_parts(vec![g, m, n], c);
        let rg = self.requires(a) || self.requires(b);
        self.push(out, Op::BatchedMatMul { a, b, b_t }, rg, "batched_matmul")
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.requires(x);
        self.push(out, Op::Reshape(x), rg, "reshape")
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = kernels::permute(self.value(x), axes)?;
        let rg = self.requires(x);
        self.push(out, Op::Permute { x, axes: axes.to_vec() }, rg, "permute")
    }

    /// Selects rows of a 2-D tensor. Serves both embedding lookup and
    /// position pooling.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(mismatch("gather_rows", format!("table {:?}", t.shape())));
        }
        let (n, width) = (t.shape()[0], t.shape()[1]);
        if rows.is_empty() {
            return Err(NumericsError::InvalidShape(vec![0, width]));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(NumericsError::IndexOutOfRange { index: r, len: n });
            }
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let out = Tensor::from_parts(vec![rows.len(), width], data);
        let rg = self.requires(table);
        self.push(out, Op::GatherRows { table, rows: rows.to_vec() }, rg, "gather_rows")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        let rg = self.requires(x);
        self.push(out, Op::Gelu(x), rg, "gelu")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let parts = kernels::layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps)?;
        let rg = self.requires(x) || self.requires(gain) || self.requires(bias);
        self.push(
            parts.output,
            Op::LayerNorm { x, gain, bias, normalized: parts.normalized, rstd: parts.rstd },
            rg,
            "layer_norm",
        )
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = kernels::softmax(self.value(x), axis)?;
        let rg = self.requires(x);
        self.push(out, Op::Softmax { x, axis }, rg, "softmax")
    }

    /// Last-axis softmax of `[groups, queries, keys]` scores; `keep` is
    /// `[groups, keys]` and masked keys receive exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 3 || keep.len() != v.shape()[0] * v.shape()[2] {
            return Err(mismatch("masked_softmax", format!("{:?} with {} mask entries", v.shape(), keep.len())));
        }
        let (groups, queries, keys) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let data = kernels::masked_softmax_rows(v.data(), keep, groups, queries, keys);
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.requires(x);
        self.push(out, Op::MaskedSoftmax { x, groups, queries, keys }, rg, "masked_softmax")
    }

    /// Inverted dropout. `rate == 0` records nothing and returns `x`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let scale = T::lit(1.0 / keep);
        let v = self.value(x);
        let multiplier: Vec<T> =
            (0..v.len()).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect();
        let data = v.data().iter().zip(&multiplier).map(|(&a, &m)| a * m).collect();
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        let rg = self.requires(x);
        self.push(out, Op::Dropout { x, multiplier }, rg, "dropout")
    }

    /// Same-padded stride-1 convolution of `[batch, in_ch, rows, cols]` input.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var> {
        let (x, f, b) = (self.value(input), self.value(filters), self.value(bias));
        if x.rank() != 4 || f.rank() != 4 {
            return Err(mismatch("conv2d", format!("input {:?}, filters {:?}", x.shape(), f.shape())));
        }
        let geometry = kernels::conv_geometry(x.shape()[0], &x.shape()[1..], f.shape(), b.len())?;
        let data = kernels::conv2d_forward(x.data(), f.data(), b.data(), geometry);
        let out = Tensor::from_parts(vec![geometry.batch, geometry.out_ch, geometry.rows, geometry.cols], data);
        let rg = self.requires(input) || self.requires(filters) || self.requires(bias);
        self.push(out, Op::Conv2d { input, filters, bias, geometry }, rg, "conv2d")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.requires(x);
        self.push(out, Op::Sum(x), rg, "sum")
    }

    /// Mean cross-entropy over rows with a target. Returns the scalar loss
    /// and the number of contributing rows; zero rows give a zero loss.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<u32>]) -> Result<(Var, usize)> {
        let parts = kernels::masked_cross_entropy(self.value(logits), targets)?;
        let rg = self.requires(logits);
        let active = parts.active;
        let v = self.push(
            Tensor::scalar(parts.loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs: parts.probs, active },
            rg,
            "cross_entropy",
        )?;
        Ok((v, active))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value
    /// that requires one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![T::one()]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !matches!(self.nodes[i].op, Op::Leaf) {
                    continue;
                }
                g.check_finite("backward")?;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.requires(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.requires(*bias) {
                    let width = g.last_dim();
                    let mut db = vec![T::zero(); width];
                    for row in gd.chunks(width) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.shape(*bias).to_vec();
                    self.accumulate(grads, *bias, Tensor::from_parts(shape, db));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), d));
                }
                if self.requires(*b) {
                    let d = gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), d));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.map(|v| v * *s)),
            Op::MatMul { a, b, b_t } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = g.shape()[1];
                if self.requires(*a) {
                    // dA = dC · op(B)^T
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm(gd, false, bv.data(), !*b_t, m, n, k, &mut da);
                    self.accumulate(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.requires(*b) {
                    let mut db = vec![T::zero(); k * n];
                    if *b_t {
                        // B stored [n,k]: dB = dC^T · A
                        kernels::gemm(gd, true, av.data(), false, n, m, k, &mut db);
                    } else {
                        kernels::gemm(av.data(), true, gd, false, k, m, n, &mut db);
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::BatchedMatMul { a, b, b_t } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (groups, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = g.shape()[2];
                if self.requires(*a) {
                    let mut da = vec![T::zero(); groups * m * k];
                    kernels::gemm_batched(gd, false, bv.data(), !*b_t, groups, m, n, k, &mut da);
                    self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.requires(*b) {
                    let mut db = vec![T::zero(); groups * k * n];
                    if *b_t {
                        kernels::gemm_batched(gd, true, av.data(), false, groups, n, m, k, &mut db);
                    } else {
                        kernels::gemm_batched(av.data(), true, gd, false, groups, k, m, n, &mut db);
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, g.clone().reshape(shape)?);
            }
            Op::Permute { x, axes } => {
                let back = kernels::permute(g, &kernels::inverse_axes(axes))?;
                self.accumulate(grads, *x, back);
            }
            Op::GatherRows { table, rows } => {
                if self.requires(*table) {
                    let shape = self.shape(*table).to_vec();
                    let width = shape[1];
                    let mut dt = vec![T::zero(); shape[0] * width];
                    for (i, &r) in rows.iter().enumerate() {
                        let dst = &mut dt[r * width..(r + 1) * width];
                        for (d, &v) in dst.iter_mut().zip(&gd[i * width..(i + 1) * width]) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *table, Tensor::from_parts(shape, dt));
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = gd.iter().zip(xv.data()).map(|(&gv, &v)| gv * kernels::gelu_derivative(v)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d));
            }
            Op::LayerNorm { x, gain, bias, normalized, rstd } => {
                let width = g.last_dim();
                let gain_v = self.value(*gain).data();
                if self.requires(*gain) || self.requires(*bias) {
                    let mut dg = vec![T::zero(); width];
                    let mut db = vec![T::zero(); width];
                    for (row, nrow) in gd.chunks(width).zip(normalized.chunks(width)) {
                        for j in 0..width {
                            dg[j] += row[j] * nrow[j];
                            db[j] += row[j];
                        }
                    }
                    let gs = self.shape(*gain).to_vec();
                    let bs = self.shape(*bias).to_vec();
                    self.accumulate(grads, *gain, Tensor::from_parts(gs, dg));
                    self.accumulate(grads, *bias, Tensor::from_parts(bs, db));
                }
                if self.requires(*x) {
                    let n = T::lit(width as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let row = &gd[r * width..(r + 1) * width];
                        let nrow = &normalized[r * width..(r + 1) * width];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..width {
                            let dh = row[j] * gain_v[j];
                            s1 += dh;
                            s2 += dh * nrow[j];
                        }
                        for j in 0..width {
                            let dh = row[j] * gain_v[j];
                            dx[r * width + j] = rs / n * (n * dh - s1 - nrow[j] * s2);
                        }
                    }
                    let shape = self.shape(*x).to_vec();
                    self.accumulate(grads, *x, Tensor::from_parts(shape, dx));
                }
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let shape = y.shape();
                let outer: usize = shape[..*axis].iter().product();
                let len = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for a in 0..len {
                            dot += gd[base + a * inner] * y.data()[base + a * inner];
                        }
                        for a in 0..len {
                            let at = base + a * inner;
                            dx[at] = y.data()[at] * (gd[at] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(shape.to_vec(), dx));
            }
            Op::MaskedSoftmax { x, groups, queries, keys } => {
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for row in 0..groups * queries {
                    let off = row * keys;
                    let mut dot = T::zero();
                    for j in 0..*keys {
                        dot += gd[off + j] * y[off + j];
                    }
                    for j in 0..*keys {
                        dx[off + j] = y[off + j] * (gd[off + j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(node.value.shape().to_vec(), dx));
            }
            Op::Dropout { x, multiplier } => {
                let d = gd.iter().zip(multiplier).map(|(&a, &m)| a * m).collect();
                self.accumulate(grads, *x, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Conv2d { input, filters, bias, geometry } => {
                let (d_in, d_f, d_b) = kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*filters).data(),
                    gd,
                    *geometry,
                );
                let (si, sf, sb) =
                    (self.shape(*input).to_vec(), self.shape(*filters).to_vec(), self.shape(*bias).to_vec());
                self.accumulate(grads, *input, Tensor::from_parts(si, d_in));
                self.accumulate(grads, *filters, Tensor::from_parts(sf, d_f));
                self.accumulate(grads, *bias, Tensor::from_parts(sb, d_b));
            }
            Op::Sum(x) => {
                let shape = self.shape(*x).to_vec();
                let n = shape.iter().product();
                self.accumulate(grads, *x, Tensor::from_parts(shape, vec![gd[0]; n]));
            }
            Op::CrossEntropy { logits, targets, probs, active } => {
                let shape = self.shape(*logits).to_vec();
                let classes = shape[1];
                let mut d = vec![T::zero(); probs.len()];
                if *active > 0 {
                    let scale = gd[0] / T::lit(*active as f64);
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for c in 0..classes {
                            let p = probs[r * classes + c];
                            let onehot = if c == t as usize { T::one() } else { T::zero() };
                            d[r * classes + c] = (p - onehot) * scale;
                        }
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_parts(shape, d));
            }
        }
        Ok(())
    }
}
