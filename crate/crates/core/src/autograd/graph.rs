//! Tape of recorded operations and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so node ids are already a
//! topological order and backward is a single reverse pass over the tape.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::autograd::attention::{self, AttentionLayout};
use crate::autograd::params::{ParamId, ParamStore};
use crate::autograd::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) enum Op<T> {
    Leaf,
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        a: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        factor: T,
    },
    Sum {
        a: usize,
    },
    Relu {
        a: usize,
    },
    Softmax {
        a: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: usize,
        gain: Option<usize>,
        bias: Option<usize>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        a: usize,
        mask: Vec<T>,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    GatherRows {
        table: usize,
        ids: Vec<usize>,
    },
    SliceRows {
        a: usize,
        start: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        layout: Rc<AttentionLayout>,
        heads: usize,
        probs: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Recording of one forward computation. Build a fresh graph per step.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    param_leaves: RefCell<HashMap<ParamId, usize>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_leaves: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.var(self.push(value, Op::Leaf, false))
    }

    /// Leaf that receives a gradient.
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.var(self.push(value, Op::Leaf, true))
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.param_leaves.borrow().get(&id) {
            return self.var(node);
        }
        let node = self.push(store.value(id).clone(), Op::Leaf, true);
        self.param_leaves.borrow_mut().insert(id, node);
        self.var(node)
    }

    pub(crate) fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        nodes.len() - 1
    }

    /// Sign of every ReLU input recorded so far, in recording order. Two
    /// forward passes with equal patterns lie on the same linear piece of
    /// every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let nodes = self.nodes.borrow();
        let mut out = Vec::new();
        for node in nodes.iter() {
            if let Op::Relu { a } = node.op {
                out.extend(nodes[a].value.data().iter().map(|&x| x > T::zero()));
            }
        }
        out
    }

    pub(crate) fn value_ref(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Gradients are summed over fan-out. A graph can only be swept once;
    /// a second call returns [`Error::GraphConsumed`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if self.consumed.get() {
            return Err(Error::GraphConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            for (input, contribution) in backward_op(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contribution) {
                            *a = *a + c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let params = self
            .param_leaves
            .borrow()
            .iter()
            .map(|(&pid, &node)| (pid, node))
            .collect();
        Ok(Gradients { leaves, params })
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value_ref(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.value_ref(self.id).clone()
    }

    pub(crate) fn value_ref(&self) -> Ref<'g, Tensor<T>> {
        self.graph.value_ref(self.id)
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        self.value_ref().data()[0]
    }
}

/// Gradients of leaf nodes after a backward sweep.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(var.id).and_then(Option::as_ref)
    }

    /// Gradients of parameter leaves that were reached from the loss.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|&(pid, node)| self.leaves[node].as_ref().map(|g| (pid, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|&(_, node)| self.leaves[node].as_ref())
    }
}

fn backward_op<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T]) -> Vec<(usize, Vec<T>)> {
    let val = |id: usize| &nodes[id].value;
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Linear { x, w, b } => {
            let xv = val(*x);
            let wv = val(*w);
            let (n, d_in) = (xv.rows(), xv.cols());
            let d_out = wv.rows();
            let mut out = Vec::with_capacity(3);
            if needs(*x) {
                // dx = g · W
                let mut dx = vec![T::zero(); n * d_in];
                T::gemm(
                    n,
                    d_out,
                    d_in,
                    g,
                    (d_out, 1),
                    wv.data(),
                    (d_in, 1),
                    T::zero(),
                    &mut dx,
                );
                out.push((*x, dx));
            }
            if needs(*w) {
                // dW = gᵀ · x
                let mut dw = vec![T::zero(); d_out * d_in];
                T::gemm(
                    d_out,
                    n,
                    d_in,
                    g,
                    (1, d_out),
                    xv.data(),
                    (d_in, 1),
                    T::zero(),
                    &mut dw,
                );
                out.push((*w, dw));
            }
            if let Some(b) = b {
                if needs(*b) {
                    let mut db = vec![T::zero(); d_out];
                    for row in g.chunks_exact(d_out) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    out.push((*b, db));
                }
            }
            out
        }
        Op::MatMul { a, b } => {
            let av = val(*a);
            let bv = val(*b);
            let (m, k) = (av.rows(), av.cols());
            let n = bv.cols();
            let mut out = Vec::with_capacity(2);
            if needs(*a) {
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, g, (n, 1), bv.data(), (1, n), T::zero(), &mut da);
                out.push((*a, da));
            }
            if needs(*b) {
                let mut db = vec![T::zero(); k * n];
                T::gemm(k, m, n, av.data(), (1, k), g, (n, 1), T::zero(), &mut db);
                out.push((*b, db));
            }
            out
        }
        Op::Transpose { a } => {
            let av = val(*a);
            let (r, c) = (av.rows(), av.cols());
            // g is c×r
            let mut da = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    da[i * c + j] = g[j * r + i];
                }
            }
            vec![(*a, da)]
        }
        Op::Add { a, b } => vec![(*a, g.to_vec()), (*b, g.to_vec())],
        Op::Mul { a, b } => {
            let av = val(*a).data();
            let bv = val(*b).data();
            vec![
                (*a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect()),
                (*b, g.iter().zip(av).map(|(&g, &a)| g * a).collect()),
            ]
        }
        Op::Scale { a, factor } => vec![(*a, g.iter().map(|&v| v * *factor).collect())],
        Op::Sum { a } => vec![(*a, vec![g[0]; val(*a).numel()])],
        Op::Relu { a } => {
            let av = val(*a).data();
            let da = g
                .iter()
                .zip(av)
                .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                .collect();
            vec![(*a, da)]
        }
        Op::Softmax {
            a,
            outer,
            len,
            inner,
        } => {
            let y = node.value.data();
            let mut da = vec![T::zero(); y.len()];
            for o in 0..*outer {
                for i in 0..*inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let dot: T = (0..*len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..*len {
                        da[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            vec![(*a, da)]
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let d = val(*x).cols();
            let d_t = T::from_usize(d).unwrap();
            let gain_v = gain.map(|id| val(id).data());
            let mut out = Vec::with_capacity(3);
            let mut dx = vec![T::zero(); g.len()];
            for (r, (grow, hrow)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                let dxhat: Vec<T> = match gain_v {
                    Some(gv) => grow.iter().zip(gv).map(|(&g, &w)| g * w).collect(),
                    None => grow.to_vec(),
                };
                let sum_d: T = dxhat.iter().copied().sum();
                let sum_dh: T = dxhat.iter().zip(hrow).map(|(&a, &b)| a * b).sum();
                let s = rstd[r] / d_t;
                for j in 0..d {
                    dx[r * d + j] = s * (d_t * dxhat[j] - sum_d - hrow[j] * sum_dh);
                }
            }
            out.push((*x, dx));
            if let Some(gid) = gain {
                let mut dg = vec![T::zero(); d];
                for (grow, hrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                    for j in 0..d {
                        dg[j] = dg[j] + grow[j] * hrow[j];
                    }
                }
                out.push((*gid, dg));
            }
            if let Some(bid) = bias {
                let mut db = vec![T::zero(); d];
                for grow in g.chunks_exact(d) {
                    for j in 0..d {
                        db[j] = db[j] + grow[j];
                    }
                }
                out.push((*bid, db));
            }
            out
        }
        Op::Dropout { a, mask } => {
            vec![(*a, g.iter().zip(mask).map(|(&g, &m)| g * m).collect())]
        }
        Op::ConcatRows { parts } => {
            let mut offset = 0;
            parts
                .iter()
                .map(|&p| {
                    let n = val(p).numel();
                    let slice = g[offset..offset + n].to_vec();
                    offset += n;
                    (p, slice)
                })
                .collect()
        }
        Op::ConcatCols { parts } => {
            let total = node.value.cols();
            let rows = node.value.rows();
            let mut col = 0;
            parts
                .iter()
                .map(|&p| {
                    let w = val(p).cols();
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + col..r * total + col + w]);
                    }
                    col += w;
                    (p, dp)
                })
                .collect()
        }
        Op::GatherRows { table, ids } => {
            let tv = val(*table);
            let d = tv.cols();
            let mut dt = vec![T::zero(); tv.numel()];
            for (i, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] = dt[id * d + j] + g[i * d + j];
                }
            }
            vec![(*table, dt)]
        }
        Op::SliceRows { a, start } => {
            let av = val(*a);
            let d = av.cols();
            let mut da = vec![T::zero(); av.numel()];
            da[start * d..start * d + g.len()].copy_from_slice(g);
            vec![(*a, da)]
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let v = val(*logits).cols();
            let n = T::from_usize(targets.len()).unwrap();
            let scale = g[0] / n;
            let mut dl: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                dl[i * v + t] = dl[i * v + t] - scale;
            }
            vec![(*logits, dl)]
        }
        Op::Attention {
            q,
            k,
            v,
            layout,
            heads,
            probs,
        } => {
            let (dq, dk, dv) =
                attention::backward(val(*q), val(*k), val(*v), layout, *heads, probs, g);
            vec![(*q, dq), (*k, dk), (*v, dv)]
        }
    }
}
