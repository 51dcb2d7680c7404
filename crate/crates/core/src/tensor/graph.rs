//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding the output value, whether the output depends on a
//! gradient-requiring leaf, and the rule needed to push gradients back to
//! its inputs. Nodes are appended in evaluation order, so the tape is
//! topologically sorted by construction and [`Graph::backward`] is a
//! single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    MaskedSoftmax(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: T, probs: Vec<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Im2col { x: Var, k: usize, stride: usize, pad: usize },
    DepthwiseConv { x: Var, w: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T> },
    Sum(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// The computation tape.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<usize, Var>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Output length of a 1-D convolution: `floor((L + 2p - k) / s) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Geometry(format!(
            "kernel {kernel} and stride {stride} must be positive"
        )));
    }
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(Error::Geometry(format!(
            "length {len} with padding {pad} is shorter than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

#[inline]
fn gelu_scalar<T: Scalar>(x: T) -> T {
    x * T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_deriv<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
            backward_done: false,
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant input.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// A leaf whose gradient is tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Binds an externally owned parameter, identified by `key`. Binding the
    /// same key twice returns the same node.
    pub fn param(&mut self, key: usize, value: &Tensor<T>, requires_grad: bool) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.leaf(value.clone(), requires_grad);
        self.params.insert(key, v);
        v
    }

    /// Gradients of all bound parameters that required one.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, Option<&[T]>)> + '_ {
        self.params
            .iter()
            .map(move |(&key, &v)| (key, self.grads.get(v.0).and_then(|g| g.as_deref())))
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- operations ------------------------------------------------------

    /// `a · b`, with `a` viewed as rows × k.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.shape().is_empty() {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (m, k) = (av.rows(), av.cols());
        let (bk, n) = if trans_b {
            (bv.shape()[1], bv.shape()[0])
        } else {
            (bv.shape()[0], bv.shape()[1])
        };
        if k != bk {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, av.data(), false, bv.data(), trans_b, &mut out, T::zero());
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::MatMul { a, b, trans_b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("add", av.shape(), bv.shape())?;
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::Add(a, b)))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = xv.cols();
        if bv.len() != n {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let b = bv.data();
        let out = xv
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::AddBias { x, bias }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("mul", av.shape(), bv.shape())?;
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let shape = av.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, rg, Op::Scale(x, c))
    }

    /// `x · Φ(x)` with the exact Gaussian CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_scalar);
        let rg = self.rg(x);
        self.push(out, rg, Op::Gelu(x))
    }

    /// Softmax along `axis`, stabilized by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "softmax axis {axis} out of bounds for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * n + i) * inner + j;
                let max = (0..n).map(|i| src[at(i)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for i in 0..n {
                    let e = (src[at(i)] - max).exp();
                    out[at(i)] = e;
                    total += e;
                }
                for i in 0..n {
                    out[at(i)] /= total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            rg,
            Op::Softmax { x, outer, n, inner },
        ))
    }

    /// Row softmax over the last axis where `keep[i] == false` entries get
    /// exactly zero weight. A row with nothing kept is an error.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.len() {
            return Err(Error::shape("masked_softmax", xv.shape(), &[keep.len()]));
        }
        let n = xv.cols();
        let mut out = vec![T::zero(); xv.len()];
        for (r, (row, mask)) in xv.data().chunks(n).zip(keep.chunks(n)).enumerate() {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(Error::InvalidArgument(format!(
                    "attention row {r} is fully masked"
                )));
            }
            let dst = &mut out[r * n..(r + 1) * n];
            let mut total = T::zero();
            for ((d, &v), &k) in dst.iter_mut().zip(row).zip(mask) {
                if k {
                    *d = (v - max).exp();
                    total += *d;
                }
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::MaskedSoftmax(x)))
    }

    /// Multi-head scaled dot-product attention on already projected
    /// `q (Lq × D)`, `k, v (Lk × D)`: head `h` uses columns
    /// `h·D/heads .. (h+1)·D/heads`, scores are scaled by `1/sqrt(D/heads)`,
    /// and head outputs are laid side by side (`Lq × D`). `keep` (`Lq × Lk`)
    /// zeroes the weight of `false` entries; a fully masked row is an error.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, keep: Option<&[bool]>) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape().len() != 2 || kv.shape().len() != 2 || qv.cols() != kv.cols() {
            return Err(Error::shape("attention q/k", qv.shape(), kv.shape()));
        }
        if kv.shape() != vv.shape() {
            return Err(Error::shape("attention k/v", kv.shape(), vv.shape()));
        }
        let (lq, lk, d) = (qv.rows(), kv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return Err(Error::InvalidArgument(format!("{d} columns do not split into {heads} heads")));
        }
        if let Some(mask) = keep {
            if mask.len() != lq * lk {
                return Err(Error::shape("attention mask", &[mask.len()], &[lq, lk]));
            }
            if let Some(r) = mask.chunks(lk).position(|row| !row.contains(&true)) {
                return Err(Error::InvalidArgument(format!("attention row {r} is fully masked")));
            }
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut probs = vec![T::zero(); heads * lq * lk];
        let mut out = vec![T::zero(); lq * d];
        for h in 0..heads {
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            T::gemm_strided(lq, dh, lk, &qv.data()[h * dh..], (d, 1), &kv.data()[h * dh..], (1, d), p, (lk, 1), T::zero());
            for (r, row) in p.chunks_mut(lk).enumerate() {
                let mask = keep.map(|m| &m[r * lk..(r + 1) * lk]);
                let kept = |j: usize| mask.is_none_or(|m| m[j]);
                let mut max = T::neg_infinity();
                for (j, x) in row.iter_mut().enumerate() {
                    *x *= scale;
                    if kept(j) && *x > max {
                        max = *x;
                    }
                }
                let mut total = T::zero();
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if kept(j) { (*x - max).exp() } else { T::zero() };
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            T::gemm_strided(lq, lk, dh, p, (lk, 1), &vv.data()[h * dh..], (d, 1), &mut out[h * dh..], (d, 1), T::zero());
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            Tensor::from_parts(vec![lq, d], out),
            rg,
            Op::Attention { q, k, v, heads, scale, probs },
        ))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance
    /// (ε = 1e-5), then applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.len() != d {
            return Err(Error::shape("layernorm", xv.shape(), gv.shape()));
        }
        if bv.len() != d {
            return Err(Error::shape("layernorm", xv.shape(), bv.shape()));
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        let inv_d = T::of(1.0 / d as f64);
        let (g, b) = (gv.data(), bv.data());
        let mut out = Vec::with_capacity(xv.len());
        let mut xhat_all = Vec::with_capacity(if rg { xv.len() } else { 0 });
        let mut rstds = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rstd = T::one() / (var + T::of(EPS)).sqrt();
            rstds.push(rstd);
            for (i, &v) in row.iter().enumerate() {
                let xh = (v - mean) * rstd;
                if rg {
                    xhat_all.push(xh);
                }
                out.push(xh * g[i] + b[i]);
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat: xhat_all,
                rstd: rstds,
            },
        ))
    }

    /// Unfolds `x` (L × D) into sliding windows (L' × k·D) with zero padding.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::shape("im2col", xv.shape(), &[kernel, stride, pad]));
        }
        let (len, d) = (xv.shape()[0], xv.shape()[1]);
        let out_len = conv_out_len(len, kernel, stride, pad)?;
        let src = xv.data();
        let mut out = vec![T::zero(); out_len * kernel * d];
        for t in 0..out_len {
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let pos = pos as usize;
                let dst = (t * kernel + j) * d;
                out[dst..dst + d].copy_from_slice(&src[pos * d..(pos + 1) * d]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![out_len, kernel * d], out),
            rg,
            Op::Im2col {
                x,
                k: kernel,
                stride,
                pad,
            },
        ))
    }

    /// 1-D convolution of `x` (L × D_in) with `weight` ((k·D_in) × D_out),
    /// optional bias, zero padding. Output is L' × D_out.
    pub fn conv1d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let d_in = self.value(x).cols();
        let wshape = self.value(weight).shape().to_vec();
        if wshape.len() != 2 || wshape[0] != kernel * d_in {
            return Err(Error::shape("conv1d", self.value(x).shape(), &wshape));
        }
        let cols = self.im2col(x, kernel, stride, pad)?;
        let y = self.matmul(cols, weight)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Per-channel convolution with odd kernel `w` (k × D), "same" padding.
    pub fn depthwise_conv(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 2
            || wv.shape().len() != 2
            || wv.shape()[1] != xv.shape()[1]
            || wv.shape()[0] % 2 == 0
        {
            return Err(Error::shape("depthwise_conv", xv.shape(), wv.shape()));
        }
        let (len, d) = (xv.shape()[0], xv.shape()[1]);
        let k = wv.shape()[0];
        let half = k / 2;
        let (src, wd) = (xv.data(), wv.data());
        let mut out = vec![T::zero(); len * d];
        for t in 0..len {
            let dst = &mut out[t * d..(t + 1) * d];
            for j in 0..k {
                let pos = (t + j) as isize - half as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let row = &src[pos as usize * d..(pos as usize + 1) * d];
                let wr = &wd[j * d..(j + 1) * d];
                for ((o, &a), &b) in dst.iter_mut().zip(row).zip(wr) {
                    *o += a * b;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::from_parts(shape, out), rg, Op::DepthwiseConv { x, w }))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if xv.shape().len() != 2 || start + len > n || len == 0 {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, len]));
        }
        let out = xv
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rows = xv.rows();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![rows, len], out),
            rg,
            Op::SliceCols { x, start },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(Error::shape("concat_cols", self.value(*first).shape(), v.shape()));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let c = v.cols();
                out.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            rg,
            Op::ConcatCols(parts.to_vec()),
        ))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(Error::shape("gather", tv.shape(), &[ids.len()]));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::InvalidArgument(format!("row {id} out of range {v}")));
            }
            out.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            rg,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Summed token cross-entropy of `logits` (N × V) against `targets`;
    /// rows with `None` are ignored. Returns a 1-element tensor.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() {
            return Err(Error::shape("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let v = lv.cols();
        let rg = self.rg(logits);
        let mut probs = if rg { vec![T::zero(); lv.len()] } else { Vec::new() };
        let mut total = T::zero();
        for (r, (row, target)) in lv.data().chunks(v).zip(targets).enumerate() {
            let Some(t) = *target else { continue };
            if t >= v {
                return Err(Error::InvalidArgument(format!("target {t} out of vocab {v}")));
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
            let lse = max + sum.ln();
            total += lse - row[t];
            if rg {
                for (p, &x) in probs[r * v..(r + 1) * v].iter_mut().zip(row) {
                    *p = (x - lse).exp();
                }
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            rg,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::of(1.0 / n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    // ---- reverse sweep ---------------------------------------------------

    /// Clears gradients so `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Propagates d(loss)/d(node) to every gradient-requiring node that
    /// `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("gradients already computed; call reset first".into()));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        fn slot<'g, T: Scalar>(
            nodes: &[Node<T>],
            grads: &'g mut [Option<Vec<T>>],
            v: Var,
        ) -> Option<&'g mut Vec<T>> {
            let node = &nodes[v.0];
            if !node.requires_grad {
                return None;
            }
            let len = node.value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
        }
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (av.rows(), av.cols());
                let n = node.value.cols();
                if let Some(ga) = slot(nodes, grads, *a) {
                    // dA = G · op(B)ᵀ
                    T::gemm(m, n, k, g, false, bv.data(), !*trans_b, ga, T::one());
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    if *trans_b {
                        // B is n × k: dB = Gᵀ · A
                        T::gemm(n, m, k, g, true, av.data(), false, gb, T::one());
                    } else {
                        // dB = Aᵀ · G
                        T::gemm(k, m, n, av.data(), true, g, false, gb, T::one());
                    }
                }
            }
            Op::Attention { q, k, v, heads, scale, probs } => {
                let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                let (lq, lk, d) = (qv.rows(), kv.rows(), qv.cols());
                let dh = d / heads;
                let mut dp = vec![T::zero(); lq * lk];
                for h in 0..*heads {
                    let p = &probs[h * lq * lk..(h + 1) * lq * lk];
                    if let Some(gv) = slot(nodes, grads, *v) {
                        // dV_h += P_hᵀ · G_h
                        T::gemm_strided(lk, lq, dh, p, (1, lk), &g[h * dh..], (d, 1), &mut gv[h * dh..], (d, 1), T::one());
                    }
                    if !(nodes[q.0].requires_grad || nodes[k.0].requires_grad) {
                        continue;
                    }
                    // dP_h = G_h · V_hᵀ, then the softmax Jacobian and scale.
                    T::gemm_strided(lq, dh, lk, &g[h * dh..], (d, 1), &vv.data()[h * dh..], (1, d), &mut dp, (lk, 1), T::zero());
                    for (drow, prow) in dp.chunks_mut(lk).zip(p.chunks(lk)) {
                        let dot = drow.iter().zip(prow).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for (x, &pj) in drow.iter_mut().zip(prow) {
                            *x = pj * (*x - dot) * *scale;
                        }
                    }
                    if let Some(gq) = slot(nodes, grads, *q) {
                        T::gemm_strided(lq, lk, dh, &dp, (lk, 1), &kv.data()[h * dh..], (d, 1), &mut gq[h * dh..], (d, 1), T::one());
                    }
                    if let Some(gk) = slot(nodes, grads, *k) {
                        T::gemm_strided(lk, lq, dh, &dp, (1, lk), &qv.data()[h * dh..], (d, 1), &mut gk[h * dh..], (d, 1), T::one());
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = slot(nodes, grads, v) {
                        gv.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d += s * o;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d += s * o;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *c);
                }
            }
            Op::Gelu(x) => {
                let xv = nodes[x.0].value.data();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((d, &s), &v) in gx.iter_mut().zip(g).zip(xv) {
                        *d += s * gelu_deriv(v);
                    }
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                let y = node.value.data();
                let (outer, n, inner) = (*outer, *n, *inner);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |i: usize| (o * n + i) * inner + j;
                            let dot: T = (0..n).map(|i| g[at(i)] * y[at(i)]).sum();
                            for i in 0..n {
                                gx[at(i)] += y[at(i)] * (g[at(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                let y = node.value.data();
                let n = node.value.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((gxr, gr), yr) in gx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &s), &p) in gxr.iter_mut().zip(gr).zip(yr) {
                            *d += p * (s - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let gv = nodes[gain.0].value.data();
                if let Some(gg) = slot(nodes, grads, *gain) {
                    for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, &s), &xh) in gg.iter_mut().zip(gr).zip(xr) {
                            *o += s * xh;
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(o, &s)| *o += s);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let inv_d = T::of(1.0 / d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for (r, ((gxr, gr), xr)) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        for ((o, &s), &w) in dxhat.iter_mut().zip(gr).zip(gv) {
                            *o = s * w;
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() * inv_d;
                        let mean_dx = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        for ((o, &dh), &xh) in gxr.iter_mut().zip(&dxhat).zip(xr) {
                            *o += rstd[r] * (dh - mean_d - xh * mean_dx);
                        }
                    }
                }
            }
            Op::Im2col { x, k, stride, pad } => {
                let xv = &nodes[x.0].value;
                let (len, d) = (xv.shape()[0], xv.shape()[1]);
                let out_len = node.value.shape()[0];
                if let Some(gx) = slot(nodes, grads, *x) {
                    for t in 0..out_len {
                        for j in 0..*k {
                            let pos = (t * stride + j) as isize - *pad as isize;
                            if pos < 0 || pos as usize >= len {
                                continue;
                            }
                            let pos = pos as usize;
                            let src = &g[(t * k + j) * d..(t * k + j + 1) * d];
                            gx[pos * d..(pos + 1) * d]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, &s)| *o += s);
                        }
                    }
                }
            }
            Op::DepthwiseConv { x, w } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                let (len, d) = (xv.shape()[0], xv.shape()[1]);
                let k = wv.shape()[0];
                let half = k / 2;
                let (xd, wd) = (xv.data(), wv.data());
                if let Some(gx) = slot(nodes, grads, *x) {
                    for t in 0..len {
                        for j in 0..k {
                            let pos = (t + j) as isize - half as isize;
                            if pos < 0 || pos as usize >= len {
                                continue;
                            }
                            let pos = pos as usize;
                            for c in 0..d {
                                gx[pos * d + c] += wd[j * d + c] * g[t * d + c];
                            }
                        }
                    }
                }
                if let Some(gw) = slot(nodes, grads, *w) {
                    for t in 0..len {
                        for j in 0..k {
                            let pos = (t + j) as isize - half as isize;
                            if pos < 0 || pos as usize >= len {
                                continue;
                            }
                            let pos = pos as usize;
                            for c in 0..d {
                                gw[j * d + c] += xd[pos * d + c] * g[t * d + c];
                            }
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let n = nodes[x.0].value.cols();
                let len = node.value.cols();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (dst, src) in gx.chunks_mut(n).zip(g.chunks(len)) {
                        dst[*start..start + len]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, &s)| *o += s);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = nodes[p.0].value.cols();
                    if let Some(gp) = slot(nodes, grads, p) {
                        for (dst, src) in gp.chunks_mut(c).zip(g.chunks(total)) {
                            dst.iter_mut()
                                .zip(&src[offset..offset + c])
                                .for_each(|(o, &s)| *o += s);
                        }
                    }
                    offset += c;
                }
            }
            Op::Gather { table, ids } => {
                let d = node.value.cols();
                if let Some(gt) = slot(nodes, grads, *table) {
                    for (&id, src) in ids.iter().zip(g.chunks(d)) {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(o, &s)| *o += s);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = nodes[logits.0].value.cols();
                let s = g[0];
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let row = &mut gl[r * v..(r + 1) * v];
                        for (o, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                            *o += s * p;
                        }
                        row[t] -= s;
                    }
                }
            }
            Op::Sum(x) => {
                let s = g[0];
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, *x) {
                    gx.iter_mut().zip(g).for_each(|(o, &s)| *o += s);
                }
            }
        }
    }
}

/// Values kept alive for a whole forward pass, e.g. attention masks, can be
/// shared between graphs.
pub type SharedMask = Arc<Vec<bool>>;
