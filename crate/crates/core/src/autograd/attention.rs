//! Fused multi-head scaled dot-product attention over a batch of sets.
//!
//! Queries and keys are grouped into segments; a query only attends to keys
//! of its own segment, which is how a batch of variable-length outfits is
//! processed without padding.

use std::ops::Range;

use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which query rows may attend to which key rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub query_segments: Vec<Range<usize>>,
    pub key_segments: Vec<Range<usize>>,
    /// Optional per-segment permission matrix, row-major `queries × keys`,
    /// `true` where attending is allowed.
    pub masks: Option<Vec<Vec<bool>>>,
}

impl AttentionLayout {
    /// Self-attention over consecutive sets with the given lengths.
    pub fn sets(lengths: &[usize]) -> Self {
        let mut segments = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for &len in lengths {
            segments.push(start..start + len);
            start += len;
        }
        Self {
            query_segments: segments.clone(),
            key_segments: segments,
            masks: None,
        }
    }

    /// A single segment covering every row.
    pub fn dense(queries: usize, keys: usize) -> Self {
        Self {
            query_segments: vec![0..queries],
            key_segments: vec![0..keys],
            masks: None,
        }
    }

    pub fn with_masks(mut self, masks: Vec<Vec<bool>>) -> Self {
        self.masks = Some(masks);
        self
    }

    pub fn segment_count(&self) -> usize {
        self.query_segments.len()
    }

    pub fn query_rows(&self) -> usize {
        self.query_segments.last().map_or(0, |r| r.end)
    }

    pub fn key_rows(&self) -> usize {
        self.key_segments.last().map_or(0, |r| r.end)
    }

    pub(crate) fn validate(&self, q_rows: usize, k_rows: usize) -> Result<()> {
        if self.query_segments.len() != self.key_segments.len() {
            return Err(Error::shape(
                "attention layout",
                &[self.query_segments.len()],
                &[self.key_segments.len()],
            ));
        }
        let contiguous = |segs: &[Range<usize>], rows: usize| {
            let mut next = 0;
            for s in segs {
                if s.start != next || s.end <= s.start {
                    return false;
                }
                next = s.end;
            }
            next == rows
        };
        if !contiguous(&self.query_segments, q_rows) {
            return Err(Error::shape(
                "attention queries",
                &[self.query_rows()],
                &[q_rows],
            ));
        }
        if !contiguous(&self.key_segments, k_rows) {
            return Err(Error::shape(
                "attention keys",
                &[self.key_rows()],
                &[k_rows],
            ));
        }
        if let Some(masks) = &self.masks {
            for (s, m) in masks.iter().enumerate() {
                let expect = self.query_segments[s].len() * self.key_segments[s].len();
                if m.len() != expect {
                    return Err(Error::shape("attention mask", &[expect], &[m.len()]));
                }
            }
            if masks.len() != self.query_segments.len() {
                return Err(Error::shape(
                    "attention mask",
                    &[self.query_segments.len()],
                    &[masks.len()],
                ));
            }
        }
        Ok(())
    }

    fn allowed(&self, seg: usize, qi: usize, kj: usize) -> bool {
        match &self.masks {
            None => true,
            Some(m) => m[seg][qi * self.key_segments[seg].len() + kj],
        }
    }

    /// Offsets into the flat probability buffer, one per (segment, head).
    fn prob_offsets(&self, heads: usize) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.segment_count() * heads + 1);
        let mut acc = 0;
        for (qs, ks) in self.query_segments.iter().zip(&self.key_segments) {
            for _ in 0..heads {
                offsets.push(acc);
                acc += qs.len() * ks.len();
            }
        }
        offsets.push(acc);
        offsets
    }
}

/// Returns the concatenated head outputs and the attention probabilities.
pub(crate) fn forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    layout: &AttentionLayout,
    heads: usize,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (dqk, dv) = (q.cols(), v.cols());
    if heads == 0 || dqk % heads != 0 || dv % heads != 0 {
        return Err(Error::Config(format!(
            "attention width {dqk}/{dv} not divisible by {heads} heads"
        )));
    }
    if k.cols() != dqk {
        return Err(Error::shape("attention q/k", q.shape(), k.shape()));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape("attention k/v", k.shape(), v.shape()));
    }
    layout.validate(q.rows(), k.rows())?;

    let hq = dqk / heads;
    let hv = dv / heads;
    let scale = T::one() / T::from_usize(hq).unwrap().sqrt();
    let offsets = layout.prob_offsets(heads);
    let mut probs = vec![T::zero(); *offsets.last().unwrap()];
    let mut out = vec![T::zero(); q.rows() * dv];
    let (qd, kd, vd) = (q.data(), k.data(), v.data());

    for (s, (qs, ks)) in layout
        .query_segments
        .iter()
        .zip(&layout.key_segments)
        .enumerate()
    {
        let nk = ks.len();
        for h in 0..heads {
            let base = offsets[s * heads + h];
            for (qi, qrow) in qs.clone().enumerate() {
                let p = &mut probs[base + qi * nk..base + (qi + 1) * nk];
                let mut max = T::neg_infinity();
                let mut any_allowed = false;
                for (kj, krow) in ks.clone().enumerate() {
                    if !layout.allowed(s, qi, kj) {
                        p[kj] = T::neg_infinity();
                        continue;
                    }
                    any_allowed = true;
                    let mut dot = T::zero();
                    for c in h * hq..(h + 1) * hq {
                        dot = dot + qd[qrow * dqk + c] * kd[krow * dqk + c];
                    }
                    p[kj] = dot * scale;
                    if p[kj] > max {
                        max = p[kj];
                    }
                }
                // Overflowed scores fall through and surface as a non-finite loss.
                if !any_allowed {
                    return Err(Error::AllMaskedRow { row: qrow });
                }
                let mut total = T::zero();
                for x in p.iter_mut() {
                    *x = (*x - max).exp();
                    total = total + *x;
                }
                for x in p.iter_mut() {
                    *x = *x / total;
                }
                let orow = &mut out[qrow * dv + h * hv..qrow * dv + (h + 1) * hv];
                for (kj, krow) in ks.clone().enumerate() {
                    let w = p[kj];
                    if w == T::zero() {
                        continue;
                    }
                    for (o, &x) in orow
                        .iter_mut()
                        .zip(&vd[krow * dv + h * hv..krow * dv + (h + 1) * hv])
                    {
                        *o = *o + w * x;
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![q.rows(), dv], out)?, probs))
}

pub(crate) fn backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    layout: &AttentionLayout,
    heads: usize,
    probs: &[T],
    g: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (dqk, dvw) = (q.cols(), v.cols());
    let hq = dqk / heads;
    let hv = dvw / heads;
    let scale = T::one() / T::from_usize(hq).unwrap().sqrt();
    let offsets = layout.prob_offsets(heads);
    let (qd, kd, vd) = (q.data(), k.data(), v.data());
    let mut dq = vec![T::zero(); q.numel()];
    let mut dk = vec![T::zero(); k.numel()];
    let mut dv = vec![T::zero(); v.numel()];
    let mut dp = Vec::new();

    for (s, (qs, ks)) in layout
        .query_segments
        .iter()
        .zip(&layout.key_segments)
        .enumerate()
    {
        let nk = ks.len();
        for h in 0..heads {
            let base = offsets[s * heads + h];
            for (qi, qrow) in qs.clone().enumerate() {
                let p = &probs[base + qi * nk..base + (qi + 1) * nk];
                let grow = &g[qrow * dvw + h * hv..qrow * dvw + (h + 1) * hv];
                // dP = dO · Vᵀ, dV += Pᵀ · dO
                dp.clear();
                for (kj, krow) in ks.clone().enumerate() {
                    let vrow = &vd[krow * dvw + h * hv..krow * dvw + (h + 1) * hv];
                    dp.push(grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum::<T>());
                    let dvrow = &mut dv[krow * dvw + h * hv..krow * dvw + (h + 1) * hv];
                    for (d, &go) in dvrow.iter_mut().zip(grow) {
                        *d = *d + p[kj] * go;
                    }
                }
                let dot: T = dp.iter().zip(p).map(|(&a, &b)| a * b).sum();
                for (kj, krow) in ks.clone().enumerate() {
                    let ds = p[kj] * (dp[kj] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    for c in h * hq..(h + 1) * hq {
                        dq[qrow * dqk + c] = dq[qrow * dqk + c] + ds * kd[krow * dqk + c];
                        dk[krow * dqk + c] = dk[krow * dqk + c] + ds * qd[qrow * dqk + c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
