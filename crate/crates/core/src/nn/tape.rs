//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node; nodes only reference earlier nodes, so the
//! tape is topologically ordered by construction and the backward pass is
//! a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Result, StmError};
use crate::kernels::{self, Conv2dShape};
use crate::scalar::Real;
use crate::transformer::TransformerGrid;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-channel batch statistics produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance over the batch.
    pub var: Vec<T>,
    pub count: usize,
}

enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Gather { x: Var, grid: Arc<TransformerGrid>, c: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, shape: Conv2dShape },
    Affine { x: Var, w: Var, b: Option<Var>, k: usize, n: usize },
    Pool { x: Var, argmax: Vec<u32>, c: usize },
    Unpool { x: Var, w: Var, b: Option<Var>, cin: usize, cout: usize },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Concat { parts: Vec<(Var, usize)> },
    GlobalAvg { x: Var, n: usize, c: usize },
    SoftmaxXent { logits: Var, probs: Vec<T>, labels: Vec<Option<usize>>, k: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

/// Gradients from one backward pass, indexed by tape node.
pub struct Gradients<T> {
    per_node: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.per_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of every trainable parameter the loss reaches, in parameter
    /// order.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.per_node[v.0].clone().map(|g| (id, g)))
            .collect()
    }
}

fn check_rank(t: &Tensor<impl Real>, rank: usize, what: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(StmError::contract(format!(
            "{what} expects a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn last_dim<T: Real>(t: &Tensor<T>) -> usize {
    *t.shape().last().expect("tensors have rank >= 1")
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: HashMap::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Input data: no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A free leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Places a parameter on the tape (once; later calls return the same var).
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(StmError::contract(format!("add: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(StmError::contract(format!("mul: {:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let out = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `[B, N, C]` signal batch to `[B, 3, 3N, C]` patches.
    pub fn gather(&mut self, x: Var, grid: &Arc<TransformerGrid>) -> Result<Var> {
        let v = self.value(x);
        check_rank(v, 3, "gather")?;
        let (b, n, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if n != grid.n_pix() {
            return Err(StmError::contract(format!(
                "gather: {n} pixels but the grid has {}",
                grid.n_pix()
            )));
        }
        let mut out = vec![T::zero(); b * 9 * n * c];
        for (src, dst) in v.data().chunks_exact(n * c).zip(out.chunks_exact_mut(9 * n * c)) {
            kernels::gather_forward(src, c, grid.rows(), dst);
        }
        let out = Tensor::new(vec![b, 3, 3 * n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Gather { x, grid: grid.clone(), c }, rg))
    }

    /// Valid convolution of `[B, H, W, Cin]` with `[kh, kw, Cin, Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride_h: usize, stride_w: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        check_rank(vx, 4, "conv2d input")?;
        check_rank(vw, 4, "conv2d weights")?;
        let shape = Conv2dShape {
            h: vx.shape()[1],
            w: vx.shape()[2],
            cin: vx.shape()[3],
            kh: vw.shape()[0],
            kw: vw.shape()[1],
            cout: vw.shape()[3],
            stride_h,
            stride_w,
        };
        if vw.shape()[2] != shape.cin || shape.h < shape.kh || shape.w < shape.kw || stride_h == 0 || stride_w == 0 {
            return Err(StmError::contract(format!(
                "conv2d: input {:?} incompatible with weights {:?}",
                vx.shape(),
                vw.shape()
            )));
        }
        if (shape.w - shape.kw) % stride_w != 0 || (shape.h - shape.kh) % stride_h != 0 {
            return Err(StmError::contract("conv2d: stride does not tile the input"));
        }
        let bias = match b {
            Some(b) => {
                let vb = self.value(b);
                if vb.len() != shape.cout {
                    return Err(StmError::contract("conv2d: bias length differs from output channels"));
                }
                Some(vb.data())
            }
            None => None,
        };
        let batch = vx.shape()[0];
        let mut out = vec![T::zero(); batch * shape.output_len()];
        for (xi, oi) in vx.data().chunks_exact(shape.input_len()).zip(out.chunks_exact_mut(shape.output_len())) {
            kernels::conv2d_forward(&shape, xi, vw.data(), bias, oi);
        }
        let out = Tensor::new(vec![batch, shape.out_h(), shape.out_w(), shape.cout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, shape }, rg))
    }

    /// Gather then 3x3 / stride (1, 3) convolution: `[B, N, Cin]` to `[B, N, Cout]`.
    pub fn spherical_conv(&mut self, x: Var, w: Var, b: Option<Var>, grid: &Arc<TransformerGrid>) -> Result<Var> {
        let batch = self.value(x).shape()[0];
        let n = grid.n_pix();
        let patches = self.gather(x, grid)?;
        let y = self.conv2d(patches, w, b, 1, 3)?;
        let cout = last_dim(self.value(y));
        self.reshape(y, &[batch, n, cout])
    }

    /// Affine map over the last axis: `[.., K]` times `[K, M]` plus bias.
    fn affine(&mut self, x: Var, w: Var, b: Option<Var>, what: &str) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        check_rank(vw, 2, what)?;
        let (k, n) = (vw.shape()[0], vw.shape()[1]);
        if last_dim(vx) != k {
            return Err(StmError::contract(format!(
                "{what}: input {:?} incompatible with weights {:?}",
                vx.shape(),
                vw.shape()
            )));
        }
        let bias = match b {
            Some(b) if self.value(b).len() != n => {
                return Err(StmError::contract(format!("{what}: bias length differs from {n}")));
            }
            Some(b) => Some(self.value(b).data()),
            None => None,
        };
        let rows = vx.len() / k;
        let mut out = vec![T::zero(); rows * n];
        kernels::affine_forward(vx.data(), k, vw.data(), n, bias, &mut out);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Affine { x, w, b, k, n }, rg))
    }

    /// Per-pixel channel mixing: `[B, N, Cin]` x `[Cin, Cout]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        check_rank(self.value(x), 3, "conv1x1")?;
        self.affine(x, w, b, "conv1x1")
    }

    /// Fully connected layer: `[B, K]` x `[K, M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        check_rank(self.value(x), 2, "linear")?;
        self.affine(x, w, b, "linear")
    }

    /// 1x4 max pooling along the pixel axis of `[B, N, C]`.
    pub fn maxpool1x4(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        check_rank(v, 3, "maxpool1x4")?;
        let (b, n, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if n % 4 != 0 {
            return Err(StmError::contract(format!("maxpool1x4: {n} pixels is not a multiple of 4")));
        }
        let mut out = vec![T::zero(); b * n / 4 * c];
        let mut argmax = vec![0u32; out.len()];
        for ((xi, oi), ai) in v
            .data()
            .chunks_exact(n * c)
            .zip(out.chunks_exact_mut(n / 4 * c))
            .zip(argmax.chunks_exact_mut(n / 4 * c))
        {
            kernels::pool1x4_forward(xi, c, oi, ai);
        }
        let out = Tensor::new(vec![b, n / 4, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Pool { x, argmax, c }, rg))
    }

    /// Transposed 1x4 convolution along the pixel axis, `w: [4, Cin, Cout]`.
    pub fn unpool_conv(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        check_rank(vx, 3, "unpool_conv")?;
        check_rank(vw, 3, "unpool_conv weights")?;
        let (batch, n, cin) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let cout = vw.shape()[2];
        if vw.shape()[0] != 4 || vw.shape()[1] != cin {
            return Err(StmError::contract(format!(
                "unpool_conv: input {:?} incompatible with weights {:?}",
                vx.shape(),
                vw.shape()
            )));
        }
        let bias = b.map(|b| self.value(b).data());
        if bias.is_some_and(|bb| bb.len() != cout) {
            return Err(StmError::contract("unpool_conv: bias length differs from output channels"));
        }
        let mut out = vec![T::zero(); batch * 4 * n * cout];
        for (xi, oi) in vx.data().chunks_exact(n * cin).zip(out.chunks_exact_mut(4 * n * cout)) {
            kernels::unpool_forward(xi, cin, vw.data(), cout, bias, oi);
        }
        let out = Tensor::new(vec![batch, 4 * n, cout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Unpool { x, w, b, cin, cout }, rg))
    }

    fn bn_common(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        train: bool,
    ) -> Result<Var> {
        let v = self.value(x);
        let c = last_dim(v);
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); v.len()];
        let mut out = vec![T::zero(); v.len()];
        for (i, &xv) in v.data().iter().enumerate() {
            let ch = i % c;
            let h = (xv - mean[ch]) * inv_std[ch];
            xhat[i] = h;
            out[i] = g[ch] * h + bt[ch];
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, rg))
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<usize> {
        let v = self.value(x);
        let c = last_dim(v);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(StmError::contract("batchnorm: affine parameters differ from channel count"));
        }
        Ok(c)
    }

    /// Batch norm with statistics over every axis but the last.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let c = self.bn_check(x, gamma, beta)?;
        let v = self.value(x);
        let count = v.len() / c;
        if count == 0 {
            return Err(StmError::contract("batchnorm on an empty batch"));
        }
        let m = T::from_f64(count as f64);
        let mut mean = vec![T::zero(); c];
        for row in v.data().chunks_exact(c) {
            for (s, &x) in mean.iter_mut().zip(row) {
                *s += x;
            }
        }
        mean.iter_mut().for_each(|s| *s /= m);
        let mut var = vec![T::zero(); c];
        for row in v.data().chunks_exact(c) {
            for ((s, &x), &mu) in var.iter_mut().zip(row).zip(&mean) {
                *s += (x - mu) * (x - mu);
            }
        }
        var.iter_mut().for_each(|s| *s /= m);
        let inv_std = var.iter().map(|&s| T::one() / (s + T::from_f64(eps)).sqrt()).collect();
        let out = self.bn_common(x, gamma, beta, &mean.clone(), inv_std, true)?;
        Ok((out, BatchStats { mean, var, count }))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let c = self.bn_check(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(StmError::contract("batchnorm: running statistics differ from channel count"));
        }
        if self.value(x).is_empty() {
            return Err(StmError::contract("batchnorm on an empty batch"));
        }
        let inv_std = var.iter().map(|&s| T::one() / (s + T::from_f64(eps)).sqrt()).collect();
        self.bn_common(x, gamma, beta, mean, inv_std, false)
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| StmError::contract("concat of nothing"))?;
        let lead = self.value(first).shape()[..self.value(first).shape().len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(StmError::contract(format!("concat: {:?} vs leading {:?}", s, lead)));
            }
            widths.push((p, *s.last().unwrap()));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(p, w) in &widths {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat { parts: widths }, rg))
    }

    /// Mean over the pixel axis: `[B, N, C]` to `[B, C]`.
    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        check_rank(v, 3, "global_avg")?;
        let (b, n, c) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        let inv = T::one() / T::from_f64(n as f64);
        let mut out = vec![T::zero(); b * c];
        for (xi, oi) in v.data().chunks_exact(n * c).zip(out.chunks_exact_mut(c)) {
            for row in xi.chunks_exact(c) {
                for (o, &x) in oi.iter_mut().zip(row) {
                    *o += x;
                }
            }
            oi.iter_mut().for_each(|o| *o *= inv);
        }
        let out = Tensor::new(vec![b, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GlobalAvg { x, n, c }, rg))
    }

    /// Mean softmax cross-entropy of `[M, K]` logits. Rows whose label equals
    /// `ignore` are excluded from the mean.
    pub fn softmax_xent(&mut self, logits: Var, labels: &[u32], ignore: Option<u32>) -> Result<Var> {
        let v = self.value(logits);
        check_rank(v, 2, "softmax_xent")?;
        let (m, k) = (v.shape()[0], v.shape()[1]);
        if labels.len() != m {
            return Err(StmError::contract(format!("softmax_xent: {m} rows but {} labels", labels.len())));
        }
        let mut probs = vec![T::zero(); m * k];
        let mut labs = Vec::with_capacity(m);
        let mut loss = 0.0f64;
        let mut count = 0usize;
        for (i, (row, pr)) in v.data().chunks_exact(k).zip(probs.chunks_exact_mut(k)).enumerate() {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in pr.iter_mut().zip(row) {
                *p = (x - mx).exp();
                z += *p;
            }
            pr.iter_mut().for_each(|p| *p /= z);
            let lab = labels[i];
            if Some(lab) == ignore {
                labs.push(None);
                continue;
            }
            if lab as usize >= k {
                return Err(StmError::contract(format!("label {lab} outside {k} classes")));
            }
            loss -= ((row[lab as usize] - mx) - z.ln()).as_f64();
            count += 1;
            labs.push(Some(lab as usize));
        }
        if count == 0 {
            return Err(StmError::EmptyEvaluation);
        }
        let out = Tensor::scalar(T::from_f64(loss / count as f64));
        let rg = self.rg(logits);
        Ok(self.push(out, Op::SoftmaxXent { logits, probs, labels: labs, k }, rg))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(StmError::contract("backward already ran on this tape; run a new forward pass"));
        }
        if self.value(loss).len() != 1 {
            return Err(StmError::contract("backward needs a scalar loss"));
        }
        if !self.rg(loss) {
            return Err(StmError::contract("loss is detached: no tracked input reaches it"));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let per_node = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| g.map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("same shape")))
            .collect();
        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        params.sort_by_key(|p| p.0);
        Ok(Gradients { per_node, params })
    }

    /// Moves the gradient buffer of `v` out of `grads` (zeros if untouched),
    /// or `None` when `v` does not track gradients.
    fn take(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.rg(v) {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len]))
    }

    fn put(grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
        if g.is_some() {
            grads[v.0] = g;
        }
    }

    /// Accumulates `f(buffer)` into the gradient of a single input.
    fn with_grad(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(mut d) = self.take(grads, v) {
            f(&mut d);
            grads[v.0] = Some(d);
        }
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        match &nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.with_grad(grads, v, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                self.with_grad(grads, *a, |d| {
                    for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb) {
                        *d += g * y;
                    }
                });
                self.with_grad(grads, *b, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(va) {
                        *d += g * x;
                    }
                });
            }
            Op::Sum(a) => self.with_grad(grads, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                self.with_grad(grads, *a, |d| {
                    for ((d, &g), &x) in d.iter_mut().zip(g).zip(x) {
                        if x > T::zero() {
                            *d += g;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.with_grad(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g)),
            Op::Gather { x, grid, c } => {
                let n = grid.n_pix();
                self.with_grad(grads, *x, |d| {
                    for (gi, di) in g.chunks_exact(9 * n * c).zip(d.chunks_exact_mut(n * c)) {
                        kernels::gather_backward(gi, *c, grid.rows(), di);
                    }
                });
            }
            Op::Conv2d { x, w, b, shape } => {
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                let mut dx = self.take(grads, *x);
                let mut dw = self.take(grads, *w);
                let mut db = b.and_then(|b| self.take(grads, b));
                let il = shape.input_len();
                for (bi, (xi, gi)) in xv.chunks_exact(il).zip(g.chunks_exact(shape.output_len())).enumerate() {
                    kernels::conv2d_backward(
                        shape,
                        xi,
                        wv,
                        gi,
                        dx.as_deref_mut().map(|d| &mut d[bi * il..(bi + 1) * il]),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                }
                Self::put(grads, *x, dx);
                Self::put(grads, *w, dw);
                if let Some(b) = b {
                    Self::put(grads, *b, db);
                }
            }
            Op::Affine { x, w, b, k, n } => {
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                let mut dx = self.take(grads, *x);
                let mut dw = self.take(grads, *w);
                let mut db = b.and_then(|b| self.take(grads, b));
                kernels::affine_backward(xv, *k, wv, *n, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                Self::put(grads, *x, dx);
                Self::put(grads, *w, dw);
                if let Some(b) = b {
                    Self::put(grads, *b, db);
                }
            }
            Op::Pool { x, argmax, c } => {
                let n_in = nodes[x.0].value.shape()[1];
                let n_out = n_in / 4;
                self.with_grad(grads, *x, |d| {
                    for ((gi, ai), di) in g
                        .chunks_exact(n_out * c)
                        .zip(argmax.chunks_exact(n_out * c))
                        .zip(d.chunks_exact_mut(n_in * c))
                    {
                        kernels::pool1x4_backward(gi, *c, ai, di);
                    }
                });
            }
            Op::Unpool { x, w, b, cin, cout } => {
                let xv = nodes[x.0].value.data();
                let wv = nodes[w.0].value.data();
                let n = nodes[x.0].value.shape()[1];
                let mut dx = self.take(grads, *x);
                let mut dw = self.take(grads, *w);
                let mut db = b.and_then(|b| self.take(grads, b));
                for (bi, (xi, gi)) in xv.chunks_exact(n * cin).zip(g.chunks_exact(4 * n * cout)).enumerate() {
                    kernels::unpool_backward(
                        xi,
                        *cin,
                        wv,
                        *cout,
                        gi,
                        dx.as_deref_mut().map(|d| &mut d[bi * n * cin..(bi + 1) * n * cin]),
                        dw.as_deref_mut(),
                        db.as_deref_mut(),
                    );
                }
                Self::put(grads, *x, dx);
                Self::put(grads, *w, dw);
                if let Some(b) = b {
                    Self::put(grads, *b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let c = inv_std.len();
                let gam = nodes[gamma.0].value.data();
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for (i, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
                    sum_g[i % c] += gv;
                    sum_gx[i % c] += gv * h;
                }
                self.with_grad(grads, *gamma, |d| d.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s));
                self.with_grad(grads, *beta, |d| d.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s));
                let m = T::from_f64((g.len() / c) as f64);
                self.with_grad(grads, *x, |d| {
                    for (i, (d, (&gv, &h))) in d.iter_mut().zip(g.iter().zip(xhat)).enumerate() {
                        let ch = i % c;
                        let scale = gam[ch] * inv_std[ch];
                        if *train {
                            *d += scale * (gv - sum_g[ch] / m - h * sum_gx[ch] / m);
                        } else {
                            *d += scale * gv;
                        }
                    }
                });
            }
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total;
                let mut off = 0;
                for &(p, w) in parts {
                    self.with_grad(grads, p, |d| {
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + w];
                            d[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    });
                    off += w;
                }
            }
            Op::GlobalAvg { x, n, c } => {
                let inv = T::one() / T::from_f64(*n as f64);
                self.with_grad(grads, *x, |d| {
                    for (gi, di) in g.chunks_exact(*c).zip(d.chunks_exact_mut(n * c)) {
                        for row in di.chunks_exact_mut(*c) {
                            row.iter_mut().zip(gi).for_each(|(d, &g)| *d += g * inv);
                        }
                    }
                });
            }
            Op::SoftmaxXent { logits, probs, labels, k } => {
                let count = labels.iter().filter(|l| l.is_some()).count();
                let scale = g[0] / T::from_f64(count as f64);
                self.with_grad(grads, *logits, |d| {
                    for ((dr, pr), lab) in d.chunks_exact_mut(*k).zip(probs.chunks_exact(*k)).zip(labels) {
                        let Some(lab) = lab else { continue };
                        for (j, (d, &p)) in dr.iter_mut().zip(pr).enumerate() {
                            let target = if j == *lab { T::one() } else { T::zero() };
                            *d += scale * (p - target);
                        }
                    }
                });
            }
        }
    }
}
