//! Reverse-mode differentiation over a per-example tape.
//!
//! A [`Tape`] borrows the [`ParamStore`] read-only, so independent examples can
//! be differentiated concurrently and their [`Grads`] summed afterwards.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm_into, Tensor};

/// The sub-component a parameter belongs to; trainability is decided per component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    SpeechEncoder,
    Connector,
    TextEncoder,
    LanguageModel,
    Adapter,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::SpeechEncoder,
        Component::Connector,
        Component::TextEncoder,
        Component::LanguageModel,
        Component::Adapter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::SpeechEncoder => "speech_encoder",
            Component::Connector => "connector",
            Component::TextEncoder => "text_encoder",
            Component::LanguageModel => "language_model",
            Component::Adapter => "adapter",
        }
    }
}

/// Which components receive gradient updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMask {
    pub speech_encoder: bool,
    pub connector: bool,
    pub text_encoder: bool,
    pub language_model: bool,
    pub adapter: bool,
}

impl TrainMask {
    pub const FROZEN: TrainMask = TrainMask {
        speech_encoder: false,
        connector: false,
        text_encoder: false,
        language_model: false,
        adapter: false,
    };

    /// Foundation language-model pretraining.
    pub const LM: TrainMask = TrainMask {
        language_model: true,
        ..TrainMask::FROZEN
    };

    /// ASR pretraining: encoder and connector only.
    pub const ASR: TrainMask = TrainMask {
        speech_encoder: true,
        connector: true,
        ..TrainMask::FROZEN
    };

    /// DST finetuning: connector, text encoder and adapters.
    pub const DST: TrainMask = TrainMask {
        connector: true,
        text_encoder: true,
        adapter: true,
        ..TrainMask::FROZEN
    };

    pub fn allows(&self, component: Component) -> bool {
        match component {
            Component::SpeechEncoder => self.speech_encoder,
            Component::Connector => self.connector,
            Component::TextEncoder => self.text_encoder,
            Component::LanguageModel => self.language_model,
            Component::Adapter => self.adapter,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub component: Component,
    pub value: Tensor,
    /// Removed parameters keep their slot so ids stay stable.
    pub removed: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    mask: Option<TrainMask>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, component: Component, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            component,
            value,
            removed: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.removed)
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_mask(&mut self, mask: TrainMask) {
        self.mask = Some(mask);
    }

    pub fn mask(&self) -> TrainMask {
        self.mask.unwrap_or(TrainMask::FROZEN)
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        let p = &self.params[id.0];
        !p.removed && self.mask().allows(p.component)
    }

    /// Drops every parameter of a component, releasing its memory.
    pub fn remove_component(&mut self, component: Component) {
        for p in self.params.iter_mut().filter(|p| p.component == component) {
            p.removed = true;
            p.value = Tensor::zeros(0, 0);
        }
    }

    pub fn count(&self, component: Component) -> usize {
        self.iter()
            .filter(|(_, p)| p.component == component)
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter()
            .map(|(id, _)| id)
            .filter(|&id| self.is_trainable(id))
            .collect()
    }

    /// Names mapped to values for every live parameter of a component.
    pub fn component_values(&self, component: Component) -> BTreeMap<String, Tensor> {
        self.iter()
            .filter(|(_, p)| p.component == component)
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.iter().find(|(_, p)| p.name == name).map(|(id, _)| id)
    }
}

/// Gradient accumulator indexed like the store.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Self {
            slots: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(Option::as_ref)
    }

    fn accumulate(&mut self, id: ParamId, g: Tensor) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// `self += alpha * other`
    pub fn merge_scaled(&mut self, other: &Grads, alpha: f64) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(g) = theirs {
                match mine {
                    Some(acc) => acc.axpy(alpha, g),
                    None => {
                        let mut g = g.clone();
                        g.scale_in_place(alpha);
                        *mine = Some(g);
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_in_place(alpha);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt()
    }

    /// Squared gradient norm restricted to one component.
    pub fn component_sq_norm(&self, store: &ParamStore, component: Component) -> f64 {
        self.iter()
            .filter(|(id, _)| store.param(*id).component == component)
            .map(|(_, g)| g.sq_norm())
            .sum()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Softmax { x: Var },
    Gather { table: Var, ids: Vec<usize> },
    Reshape(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

const LN_EPS: f64 = 1e-5;

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs_grad = self.store.is_trainable(id);
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = Tensor::matmul(self.value(a), false, self.value(b), false);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, trans_b: false }, ng)
    }

    /// `a @ b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = Tensor::matmul(self.value(a), false, self.value(b), true);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, trans_b: true }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!(r.shape(), (1, out.cols()), "bias shape mismatch");
        let bias = r.data().to_vec();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(alpha);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, alpha), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let mut xhat = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = input.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked when
    /// `j > i + offset`, where `offset = cols - rows`.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Var {
        let input = self.value(x);
        let (rows, cols) = input.shape();
        let offset = cols as isize - rows as isize;
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let limit = if causal {
                ((r as isize + offset + 1).clamp(0, cols as isize)) as usize
            } else {
                cols
            };
            let row = &input.row(r)[..limit];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out.row_mut(r)[..limit];
            let mut sum = 0.0;
            for (oi, &v) in o.iter_mut().zip(row) {
                *oi = (v - max).exp();
                sum += *oi;
            }
            for oi in o.iter_mut() {
                *oi /= sum;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax { x }, ng)
    }

    /// Rows of an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Tensor::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshaped(rows, cols);
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice_rows(start, end);
        let ng = self.ng(x);
        self.push(out, Op::SliceRows(x, start), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice_cols(start, end);
        let ng = self.ng(x);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&vals);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&vals);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean token cross-entropy; row `i` of `logits` predicts `targets[i]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len(), "one target per logit row");
        assert!(!targets.is_empty(), "cross-entropy over zero targets");
        let mut probs = Tensor::zeros(l.rows(), l.cols());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = l.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (v - max).exp();
                sum += *p;
            }
            for p in probs.row_mut(r) {
                *p /= sum;
            }
            total += -(row[t] - max - sum.ln());
        }
        let loss = total / targets.len() as f64;
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Gradients of a scalar node with respect to every trainable parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads = Grads::new(self.store.len());
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.accumulate(*id, g),
                Op::MatMul { a, b, trans_b } => {
                    let (a, b, trans_b) = (*a, *b, *trans_b);
                    if self.ng(a) {
                        // dA = dC @ op(B)^T
                        let bv = self.value(b);
                        let mut da = Tensor::zeros(self.value(a).rows(), self.value(a).cols());
                        gemm_into(1.0, &g, false, bv, !trans_b, 0.0, &mut da);
                        add_adj(&mut adj, a, da);
                    }
                    if self.ng(b) {
                        let av = self.value(a);
                        let (br, bc) = self.value(b).shape();
                        let mut db = Tensor::zeros(br, bc);
                        if trans_b {
                            // C = A B^T  =>  dB = dC^T A
                            gemm_into(1.0, &g, true, av, false, 0.0, &mut db);
                        } else {
                            gemm_into(1.0, av, true, &g, false, 0.0, &mut db);
                        }
                        add_adj(&mut adj, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        add_adj(&mut adj, *b, g.clone());
                    }
                    if self.ng(*a) {
                        add_adj(&mut adj, *a, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                        add_adj(&mut adj, *row, db);
                    }
                    if self.ng(*a) {
                        add_adj(&mut adj, *a, g);
                    }
                }
                Op::Scale(a, alpha) => {
                    let mut g = g;
                    g.scale_in_place(*alpha);
                    add_adj(&mut adj, *a, g);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut g = g;
                    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
                        *gi *= gelu_grad(xi);
                    }
                    add_adj(&mut adj, *a, g);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = xhat.shape();
                    if self.ng(*gain) || self.ng(*bias) {
                        let mut dg = Tensor::zeros(1, cols);
                        let mut db = Tensor::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                                db.data_mut()[c] += g.get(r, c);
                            }
                        }
                        if self.ng(*gain) {
                            add_adj(&mut adj, *gain, dg);
                        }
                        if self.ng(*bias) {
                            add_adj(&mut adj, *bias, db);
                        }
                    }
                    if self.ng(*x) {
                        let gv = self.value(*gain).data();
                        let n = cols as f64;
                        let mut dx = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            let gr = g.row(r);
                            let xr = xhat.row(r);
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for c in 0..cols {
                                let d = gr[c] * gv[c];
                                sum_d += d;
                                sum_dx += d * xr[c];
                            }
                            let is = inv_std[r];
                            for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                                let d = gr[c] * gv[c];
                                *o = is / n * (n * d - sum_d - xr[c] * sum_dx);
                            }
                        }
                        add_adj(&mut adj, *x, dx);
                    }
                }
                Op::Softmax { x } => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yi * (gi - dot);
                        }
                    }
                    add_adj(&mut adj, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let (tr, tc) = self.value(*table).shape();
                    let mut dt = Tensor::zeros(tr, tc);
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    add_adj(&mut adj, *table, dt);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.shape(*x);
                    add_adj(&mut adj, *x, g.reshaped(r, c));
                }
                Op::SliceRows(x, start) => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor::zeros(r, c);
                    dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    add_adj(&mut adj, *x, dx);
                }
                Op::SliceCols(x, start) => {
                    let (r, c) = self.shape(*x);
                    let mut dx = Tensor::zeros(r, c);
                    for i in 0..r {
                        dx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    add_adj(&mut adj, *x, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        if self.ng(p) {
                            add_adj(&mut adj, p, g.slice_rows(offset, offset + rows));
                        }
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.shape(p).1;
                        if self.ng(p) {
                            add_adj(&mut adj, p, g.slice_cols(offset, offset + cols));
                        }
                        offset += cols;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g.get(0, 0) / targets.len() as f64;
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl.row_mut(r)[t] -= 1.0;
                    }
                    dl.scale_in_place(scale);
                    add_adj(&mut adj, *logits, dl);
                }
            }
        }
        grads
    }
}

fn add_adj(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}
