//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every op applied during a forward pass. Leaves are
//! either borrowed parameters (no copy, gradients tracked), owned
//! variables, or constants. [`Graph::backward`] walks the tape in reverse
//! from a scalar loss and returns a gradient for every node that depends
//! on a tracked leaf.
//!
//! ```
//! use aesthyper::nn::{Graph, Tensor};
//!
//! let w = Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap();
//! let mut g = Graph::new();
//! let x = g.input(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
//! let wv = g.param(&w);
//! let y = g.matmul(x, wv).unwrap();
//! let loss = g.sum(y);
//! assert_eq!(g.value(loss).data(), &[5.0]);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(wv).unwrap().data(), &[1.0, 1.0]);
//! ```

use std::borrow::Cow;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How the EMD loss is reduced per row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmdForm {
    /// `(mean |dCDF|^r)^(1/r)`
    #[default]
    Root,
    /// `mean |dCDF|^r`, the squared EMD when r = 2
    Power,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        x: Var,
        w: Var,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Relu(Var),
    Softmax(Var),
    L2Normalize(Var),
    BatchMatVec {
        x: Var,
        w: Var,
        n_in: usize,
        n_out: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    MulConst {
        x: Var,
        mask: Vec<f64>,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    Bce {
        logits: Var,
        targets: Vec<f64>,
    },
    Emd {
        probs: Var,
        target: Vec<f64>,
        r: f64,
        form: EmdForm,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for `v`, or zeros of `like`'s shape
    /// when `v` received none.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// Borrowed leaf without gradient tracking.
    pub fn constant(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// Owned trainable leaf.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Owned leaf without gradient tracking.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `x[..., in] @ w[in, out]`
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape().len() != 2 || xt.cols() != wt.shape()[0] {
            return Err(shape_err("matmul", xt, wt));
        }
        let (rows, n_in, n_out) = (xt.rows(), xt.cols(), wt.shape()[1]);
        let data = kernels::matmul(xt.data(), rows, n_in, wt.data(), n_out);
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = n_out;
        let y = Tensor::new(shape, data)?;
        Ok(self.push_op(y, Op::MatMul { x, w }, &[x, w]))
    }

    /// Adds a `[cols]` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        if bt.shape() != [xt.cols()] {
            return Err(shape_err("add_bias", xt, bt));
        }
        let mut y = xt.clone();
        let c = bt.numel();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += bt.data()[i % c];
        }
        Ok(self.push_op(y, Op::AddBias { x, b }, &[x, b]))
    }

    /// Affine map `x w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("add", at, bt));
        }
        let mut y = at.clone();
        for (v, w) in y.data_mut().iter_mut().zip(bt.data()) {
            *v += w;
        }
        Ok(self.push_op(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v = v.max(0.0);
        }
        self.push_op(y, Op::Relu(x), &[x])
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let mut y = xt.clone();
        let c = xt.cols();
        for (zr, yr) in xt.data().chunks(c).zip(y.data_mut().chunks_mut(c)) {
            kernels::softmax_row(zr, yr);
        }
        self.push_op(y, Op::Softmax(x), &[x])
    }

    /// Row-wise l2 normalization; fails on any zero-norm row.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        if let Some(r) = self
            .value(x)
            .data()
            .chunks(self.value(x).cols())
            .position(|row| kernels::l2_norm(row) == 0.0)
        {
            return Err(Error::Degenerate(format!("l2_normalize: row {r} has norm 0")));
        }
        self.l2_normalize_or_zero(x)
    }

    /// Row-wise l2 normalization that maps all-zero rows to zero; those
    /// rows get a zero gradient.
    pub fn l2_normalize_or_zero(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("l2_normalize: non-finite input".into()));
        }
        let y = super::ops::l2_normalize_or_zero(xt);
        Ok(self.push_op(y, Op::L2Normalize(x), &[x]))
    }

    /// Per-row matrix-vector product: row `n` of `x` (`[N, n_in]`) times the
    /// `[n_in, n_out]` matrix stored row-major in row `n` of `w`
    /// (`[N, n_in * n_out]`).
    pub fn batch_matvec(&mut self, x: Var, w: Var, n_in: usize, n_out: usize) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if xt.shape().len() != 2
            || wt.shape().len() != 2
            || xt.shape()[1] != n_in
            || wt.shape()[1] != n_in * n_out
            || xt.shape()[0] != wt.shape()[0]
        {
            return Err(shape_err("batch_matvec", xt, wt));
        }
        let rows = xt.shape()[0];
        let mut data = Vec::with_capacity(rows * n_out);
        for r in 0..rows {
            data.extend(kernels::matmul(xt.row(r), 1, n_in, wt.row(r), n_out));
        }
        let y = Tensor::new(vec![rows, n_out], data)?;
        Ok(self.push_op(y, Op::BatchMatVec { x, w, n_in, n_out }, &[x, w]))
    }

    /// Selects rows of a 2-D tensor (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape().len() != 2 || rows.is_empty() {
            return Err(Error::Invalid(format!(
                "gather_rows needs a 2-D tensor and a non-empty row list, got {:?}",
                xt.shape()
            )));
        }
        let n = xt.shape()[0];
        let mut data = Vec::with_capacity(rows.len() * xt.cols());
        for &r in rows {
            if r >= n {
                return Err(Error::Index { index: r, len: n });
            }
            data.extend_from_slice(xt.row(r));
        }
        let y = Tensor::new(vec![rows.len(), xt.cols()], data)?;
        Ok(self.push_op(y, Op::GatherRows { x, rows: rows.to_vec() }, &[x]))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xt = self.value(x);
        if mask.len() != xt.numel() {
            return Err(Error::Shape {
                op: "mul_const",
                left: xt.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let mut y = xt.clone();
        for (v, m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push_op(y, Op::MulConst { x, mask }, &[x]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v *= factor;
        }
        self.push_op(y, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean cross-entropy over rows of `[N, K]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let zt = self.value(logits);
        let k = zt.cols();
        if targets.len() != zt.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: zt.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(Error::Index { index: t, len: k });
            }
            total += kernels::cross_entropy_row(zt.row(r), t);
        }
        let loss = Tensor::scalar(total / targets.len() as f64);
        Ok(self.push_op(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy over every element of the logits.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let zt = self.value(logits);
        if targets.len() != zt.numel() {
            return Err(Error::Shape {
                op: "binary_cross_entropy",
                left: zt.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::Invalid(format!("BCE target {t} is not 0 or 1")));
        }
        let total: f64 = zt
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| kernels::bce_element(z, t))
            .sum();
        let loss = Tensor::scalar(total / targets.len() as f64);
        Ok(self.push_op(
            loss,
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Mean EMD over rows of `[N, B]` predicted distributions against the
    /// row-major `target` distributions.
    pub fn emd(&mut self, probs: Var, target: &[f64], r: f64, form: EmdForm) -> Result<Var> {
        let pt = self.value(probs);
        if target.len() != pt.numel() {
            return Err(Error::Shape {
                op: "emd",
                left: pt.shape().to_vec(),
                right: vec![target.len()],
            });
        }
        if !(r >= 1.0 && r.is_finite()) {
            return Err(Error::Invalid(format!("EMD exponent must be >= 1, got {r}")));
        }
        let b = pt.cols();
        for (i, q) in target.chunks(b).enumerate() {
            super::loss::check_distribution(q, "EMD target", i)?;
        }
        let total: f64 = pt
            .data()
            .chunks(b)
            .zip(target.chunks(b))
            .map(|(p, q)| kernels::emd_row(p, q, r, form == EmdForm::Root))
            .sum();
        let loss = Tensor::scalar(total / pt.rows() as f64);
        Ok(self.push_op(
            loss,
            Op::Emd {
                probs,
                target: target.to_vec(),
                r,
                form,
            },
            &[probs],
        ))
    }

    /// Reverse pass from a `[1]` scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape().to_vec(), d).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(buf);
        };
        let val = |v: Var| -> &Tensor { &nodes[v.0].value };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w } => {
                let (xt, wt) = (val(*x), val(*w));
                let (rows, n_in, n_out) = (xt.rows(), xt.cols(), wt.shape()[1]);
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        for i in 0..n_in {
                            let wi = &wt.data()[i * n_out..(i + 1) * n_out];
                            dx[r * n_in + i] += gr.iter().zip(wi).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        for i in 0..n_in {
                            let xi = xt.data()[r * n_in + i];
                            if xi == 0.0 {
                                continue;
                            }
                            for (d, &go) in dw[i * n_out..(i + 1) * n_out].iter_mut().zip(gr) {
                                *d += xi * go;
                            }
                        }
                    }
                });
            }
            Op::AddBias { x, b } => {
                acc(*x, &mut |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc(*b, &mut |db| {
                    let c = db.len();
                    for (i, &gv) in g.iter().enumerate() {
                        db[i % c] += gv;
                    }
                });
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    acc(v, &mut |d| {
                        for (d, &gv) in d.iter_mut().zip(g) {
                            *d += gv;
                        }
                    });
                }
            }
            Op::Relu(x) => {
                let xt = val(*x);
                acc(*x, &mut |dx| {
                    for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xt.data()) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                acc(*x, &mut |dx| {
                    for ((yr, gr), dr) in y.data().chunks(c).zip(g.chunks(c)).zip(dx.chunks_mut(c)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::L2Normalize(x) => {
                let (xt, y) = (val(*x), &node.value);
                let c = y.cols();
                acc(*x, &mut |dx| {
                    for (r, dr) in dx.chunks_mut(c).enumerate() {
                        let norm = kernels::l2_norm(xt.row(r));
                        if norm == 0.0 {
                            continue;
                        }
                        let (yr, gr) = (y.row(r), &g[r * c..(r + 1) * c]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d += (gv - yv * dot) / norm;
                        }
                    }
                });
            }
            Op::BatchMatVec { x, w, n_in, n_out } => {
                let (xt, wt) = (val(*x), val(*w));
                let (n_in, n_out) = (*n_in, *n_out);
                let rows = xt.shape()[0];
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        let wr = wt.row(r);
                        for i in 0..n_in {
                            let wi = &wr[i * n_out..(i + 1) * n_out];
                            dx[r * n_in + i] += gr.iter().zip(wi).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*w, &mut |dw| {
                    let stride = n_in * n_out;
                    for r in 0..rows {
                        let gr = &g[r * n_out..(r + 1) * n_out];
                        let dwr = &mut dw[r * stride..(r + 1) * stride];
                        for (i, &xi) in xt.row(r).iter().enumerate() {
                            for (d, &go) in dwr[i * n_out..(i + 1) * n_out].iter_mut().zip(gr) {
                                *d += xi * go;
                            }
                        }
                    }
                });
            }
            Op::GatherRows { x, rows } => {
                let c = val(*x).cols();
                acc(*x, &mut |dx| {
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, &gv) in dx[r * c..(r + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::MulConst { x, mask } => {
                acc(*x, &mut |dx| {
                    for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                });
            }
            Op::Scale { x, factor } => {
                acc(*x, &mut |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * factor;
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let zt = val(*logits);
                let k = zt.cols();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |dz| {
                    let mut p = vec![0.0; k];
                    for (r, &t) in targets.iter().enumerate() {
                        kernels::softmax_row(zt.row(r), &mut p);
                        p[t] -= 1.0;
                        for (d, pv) in dz[r * k..(r + 1) * k].iter_mut().zip(&p) {
                            *d += scale * pv;
                        }
                    }
                });
            }
            Op::Bce { logits, targets } => {
                let zt = val(*logits);
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |dz| {
                    for ((d, &z), &t) in dz.iter_mut().zip(zt.data()).zip(targets) {
                        *d += scale * (kernels::sigmoid(z) - t);
                    }
                });
            }
            Op::Emd { probs, target, r, form } => {
                let pt = val(*probs);
                let b = pt.cols();
                let scale = g[0] / pt.rows() as f64;
                acc(*probs, &mut |dp| {
                    for ((p, q), dr) in pt.data().chunks(b).zip(target.chunks(b)).zip(dp.chunks_mut(b)) {
                        emd_row_grad(p, q, *r, *form, scale, dr);
                    }
                });
            }
        }
    }
}

fn emd_row_grad(p: &[f64], q: &[f64], r: f64, form: EmdForm, scale: f64, out: &mut [f64]) {
    let b = p.len() as f64;
    let diffs = kernels::cdf_diff(p, q);
    let mean = diffs.iter().map(|d| d.abs().powf(r)).sum::<f64>() / b;
    // d loss / d mean
    let outer = match form {
        EmdForm::Power => 1.0,
        EmdForm::Root if mean > 0.0 => mean.powf(1.0 / r - 1.0) / r,
        EmdForm::Root => return,
    };
    // d loss / d c_k, then reverse cumulative sum maps CDF grads onto bucket grads
    let mut tail = 0.0;
    for k in (0..p.len()).rev() {
        let c = diffs[k];
        let dc = if c == 0.0 {
            0.0
        } else {
            outer * r * c.abs().powf(r - 1.0) * c.signum() / b
        };
        tail += dc;
        out[k] += scale * tail;
    }
}
