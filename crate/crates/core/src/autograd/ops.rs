//! Differentiable primitives. Each records one node on the graph.

use std::rc::Rc;

use crate::autograd::attention::{self, AttentionLayout};
use crate::autograd::graph::{Op, Var};
use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn same_graph<T: Scalar>(a: &Var<'_, T>, b: &Var<'_, T>) {
    assert!(std::ptr::eq(a.graph, b.graph), "vars from different graphs");
}

impl<'g, T: Scalar> Var<'g, T> {
    fn record(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var<'g, T> {
        let requires = inputs.iter().any(|&i| self.graph.requires_grad(i));
        self.graph.var(self.graph.push(value, op, requires))
    }

    /// `x·Wᵀ + b` for `x: n×d_in`, `W: d_out×d_in`, `b: d_out`.
    pub fn linear(&self, w: &Var<'g, T>, b: Option<&Var<'g, T>>) -> Result<Var<'g, T>> {
        same_graph(self, w);
        let x = self.value_ref();
        let wv = w.value_ref();
        if x.rank() != 2 || wv.rank() != 2 || x.cols() != wv.cols() {
            return Err(Error::shape("linear", x.shape(), wv.shape()));
        }
        let (n, d_in, d_out) = (x.rows(), x.cols(), wv.rows());
        let mut out = vec![T::zero(); n * d_out];
        let beta = if let Some(b) = b {
            same_graph(self, b);
            let bv = b.value_ref();
            if bv.numel() != d_out {
                return Err(Error::shape("linear bias", wv.shape(), bv.shape()));
            }
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(bv.data());
            }
            T::one()
        } else {
            T::zero()
        };
        T::gemm(
            n,
            d_in,
            d_out,
            x.data(),
            (d_in, 1),
            wv.data(),
            (1, d_in),
            beta,
            &mut out,
        );
        let value = Tensor::new(vec![n, d_out], out)?;
        drop((x, wv));
        let mut inputs = vec![self.id, w.id];
        inputs.extend(b.map(|b| b.id));
        Ok(self.record(
            value,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
            &inputs,
        ))
    }

    pub fn matmul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        same_graph(self, other);
        let a = self.value_ref();
        let b = other.value_ref();
        if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
            return Err(Error::shape("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            a.data(),
            (k, 1),
            b.data(),
            (n, 1),
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(vec![m, n], out)?;
        drop((a, b));
        Ok(self.record(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    pub fn transpose(&self) -> Result<Var<'g, T>> {
        let a = self.value_ref();
        if a.rank() != 2 {
            return Err(Error::shape("transpose", a.shape(), &[2]));
        }
        let (r, c) = (a.rows(), a.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a.data()[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        drop(a);
        Ok(self.record(value, Op::Transpose { a: self.id }, &[self.id]))
    }

    fn zip_with(
        &self,
        other: &Var<'g, T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        same_graph(self, other);
        let a = self.value_ref();
        let b = other.value_ref();
        if a.shape() != b.shape() {
            return Err(Error::shape(name, a.shape(), b.shape()));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        let value = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(self.record(
            value,
            Op::Add {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        let value = self.zip_with(other, "mul", |x, y| x * y)?;
        Ok(self.record(
            value,
            Op::Mul {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    pub fn scale(&self, factor: T) -> Var<'g, T> {
        let value = self.value_ref().map(|x| x * factor);
        self.record(value, Op::Scale { a: self.id, factor }, &[self.id])
    }

    pub fn sum(&self) -> Var<'g, T> {
        let value = Tensor::scalar(self.value_ref().sum());
        self.record(value, Op::Sum { a: self.id }, &[self.id])
    }

    pub fn relu(&self) -> Var<'g, T> {
        let value = self.value_ref().map(|x| x.max(T::zero()));
        self.record(value, Op::Relu { a: self.id }, &[self.id])
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value_ref();
        let shape = x.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax axis", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = x.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                if len == 1 {
                    out[idx(0)] = T::one();
                    continue;
                }
                let max = (0..len)
                    .map(|j| src[idx(j)])
                    .fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[idx(j)] = out[idx(j)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        drop(x);
        Ok(self.record(
            value,
            Op::Softmax {
                a: self.id,
                outer,
                len,
                inner,
            },
            &[self.id],
        ))
    }

    /// Row-wise normalization with optional affine gain and bias.
    pub fn layer_norm(
        &self,
        eps: f64,
        gain: Option<&Var<'g, T>>,
        bias: Option<&Var<'g, T>>,
    ) -> Result<Var<'g, T>> {
        let x = self.value_ref();
        let (rows, d) = (x.rows(), x.cols());
        for p in [gain, bias].into_iter().flatten() {
            same_graph(self, p);
            if p.value_ref().numel() != d {
                return Err(Error::shape("layer_norm affine", x.shape(), &p.shape()));
            }
        }
        let eps = T::lit(eps);
        let d_t = T::from_usize(d).unwrap();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); rows];
        for (r, row) in x.data().chunks_exact(d).enumerate() {
            let mean = row.iter().copied().sum::<T>() / d_t;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / d_t;
            let s = T::one() / (var + eps).sqrt();
            rstd[r] = s;
            for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *h = (v - mean) * s;
            }
        }
        let mut out = xhat.clone();
        if let Some(g) = gain {
            let gv = g.value_ref();
            for row in out.chunks_exact_mut(d) {
                for (o, &w) in row.iter_mut().zip(gv.data()) {
                    *o = *o * w;
                }
            }
        }
        if let Some(b) = bias {
            let bv = b.value_ref();
            for row in out.chunks_exact_mut(d) {
                for (o, &w) in row.iter_mut().zip(bv.data()) {
                    *o = *o + w;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        drop(x);
        let mut inputs = vec![self.id];
        inputs.extend(gain.map(|g| g.id));
        inputs.extend(bias.map(|b| b.id));
        Ok(self.record(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.map(|g| g.id),
                bias: bias.map(|b| b.id),
                xhat,
                rstd,
            },
            &inputs,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; eval mode is the
    /// identity and records no node.
    pub fn dropout(&self, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var<'g, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(*self);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let x = self.value_ref();
        let mask: Vec<T> = (0..x.numel())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        drop(x);
        Ok(self.record(value, Op::Dropout { a: self.id, mask }, &[self.id]))
    }

    /// Row lookup; the backward pass scatter-adds into the table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Var<'g, T>> {
        let table = self.value_ref();
        let (v, d) = (table.rows(), table.cols());
        if ids.is_empty() {
            return Err(Error::shape("gather_rows", table.shape(), &[0]));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfVocab { id, vocab: v });
            }
            out.extend_from_slice(table.row(id));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        drop(table);
        Ok(self.record(
            value,
            Op::GatherRows {
                table: self.id,
                ids: ids.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'g, T>> {
        let a = self.value_ref();
        if start >= end || end > a.rows() {
            return Err(Error::shape("slice_rows", a.shape(), &[start, end]));
        }
        let d = a.cols();
        let value = Tensor::new(vec![end - start, d], a.data()[start * d..end * d].to_vec())?;
        drop(a);
        Ok(self.record(value, Op::SliceRows { a: self.id, start }, &[self.id]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy_with_logits(&self, targets: &[usize]) -> Result<Var<'g, T>> {
        let logits = self.value_ref();
        let (n, v) = (logits.rows(), logits.cols());
        if logits.rank() != 2 || targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                logits.shape(),
                &[targets.len()],
            ));
        }
        let mut probs = vec![T::zero(); n * v];
        let mut loss = T::zero();
        for (i, (&t, row)) in targets
            .iter()
            .zip(logits.data().chunks_exact(v))
            .enumerate()
        {
            if t >= v {
                return Err(Error::OutOfVocab { id: t, vocab: v });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_z = max + total.ln();
            for (p, &z) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (z - log_z).exp();
            }
            loss = loss + (log_z - row[t]);
        }
        let value = Tensor::scalar(loss / T::from_usize(n).unwrap());
        drop(logits);
        Ok(self.record(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            &[self.id],
        ))
    }
}

/// Stacks matrices with equal widths on top of each other.
pub fn concat_rows<'g, T: Scalar>(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat_rows of nothing".into()))?;
    let d = first.value_ref().cols();
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        same_graph(first, p);
        let v = p.value_ref();
        if v.cols() != d || v.rank() != 2 {
            return Err(Error::shape("concat_rows", &[d], v.shape()));
        }
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let value = Tensor::new(vec![rows, d], data)?;
    Ok(first.record(value, Op::ConcatRows { parts: ids.clone() }, &ids))
}

/// Joins matrices with equal row counts side by side.
pub fn concat_cols<'g, T: Scalar>(parts: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("concat_cols of nothing".into()))?;
    let rows = first.value_ref().rows();
    let values: Vec<_> = parts.iter().map(|p| p.value_ref()).collect();
    for v in &values {
        if v.rows() != rows || v.rank() != 2 {
            return Err(Error::shape("concat_cols", &[rows], v.shape()));
        }
    }
    let total: usize = values.iter().map(|v| v.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for v in &values {
            data.extend_from_slice(v.row(r));
        }
    }
    drop(values);
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let value = Tensor::new(vec![rows, total], data)?;
    Ok(first.record(value, Op::ConcatCols { parts: ids.clone() }, &ids))
}

/// Scaled dot-product attention of already-projected queries, keys and
/// values, split into `heads` column groups; head outputs are concatenated.
pub fn attention_heads<'g, T: Scalar>(
    q: &Var<'g, T>,
    k: &Var<'g, T>,
    v: &Var<'g, T>,
    layout: Rc<AttentionLayout>,
    heads: usize,
) -> Result<Var<'g, T>> {
    same_graph(q, k);
    same_graph(q, v);
    let (value, probs) = attention::forward(
        &q.value_ref(),
        &k.value_ref(),
        &v.value_ref(),
        &layout,
        heads,
    )?;
    Ok(q.record(
        value,
        Op::Attention {
            q: q.id,
            k: k.id,
            v: v.id,
            layout,
            heads,
            probs,
        },
        &[q.id, k.id, v.id],
    ))
}
