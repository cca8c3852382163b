//! The continuously relaxed network.
//!
//! Every edge of the cell carries all operations of its pool, mixed by the
//! softmax of that edge's architecture logits over the currently active ops.
//! Cell inputs are linear stems of the raw features; an intermediate node is
//! the sum of its incoming edge outputs, and the head classifies the mean of
//! all intermediate nodes.

mod checkpoint;
mod discrete;
mod layers;

use std::collections::{BTreeMap, BTreeSet};

pub use discrete::GenotypeNet;
pub use layers::{bind_weights, predict, Linear, Network};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::searchspace::{CellSpec, Genotype, GenotypeEdge, OpKind};

/// How masked operations are removed from an edge mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Softmax over the remaining active ops only.
    Renormalize,
    /// Softmax over the whole pool; masked terms are dropped from the sum.
    ZeroOut,
}

impl MaskMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Renormalize => "renormalize",
            MaskMode::ZeroOut => "zero_out",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "renormalize" => Some(MaskMode::Renormalize),
            "zero_out" => Some(MaskMode::ZeroOut),
            _ => None,
        }
    }
}

/// Architecture logits and op masks, one row per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaTable {
    pub alpha: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub frozen: bool,
}

impl AlphaTable {
    pub fn zeros(spec: &CellSpec) -> Self {
        Self {
            alpha: spec.edges.iter().map(|e| vec![0.0; e.pool.len()]).collect(),
            mask: spec.edges.iter().map(|e| vec![true; e.pool.len()]).collect(),
            frozen: false,
        }
    }

    /// Mixing weights of `edge` under `mode`; masked ops get weight 0.
    pub fn weights(&self, edge: usize, mode: MaskMode) -> Vec<f64> {
        let a = &self.alpha[edge];
        let m = &self.mask[edge];
        let support: Vec<bool> = match mode {
            MaskMode::Renormalize => m.clone(),
            MaskMode::ZeroOut => vec![true; a.len()],
        };
        let max = a
            .iter()
            .zip(&support)
            .filter(|(_, &s)| s)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = a
            .iter()
            .zip(&support)
            .map(|(v, &s)| if s { (v - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = exps.iter().sum();
        exps.iter()
            .zip(m)
            .map(|(e, &active)| if active { e / total } else { 0.0 })
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.alpha.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Supernet {
    spec: CellSpec,
    input_dim: usize,
    num_classes: usize,
    stems: Vec<Linear>,
    ops: Vec<Vec<Option<Linear>>>,
    head: Linear,
    pub alpha: AlphaTable,
    discretized: Vec<Option<usize>>,
    pruned: BTreeSet<usize>,
    muted: BTreeSet<usize>,
    mask_mode: MaskMode,
    noise_seed: u64,
    rng: SplitMix64,
}

/// Seed of the noise op on `edge` for a batch of `rows` samples.
pub(crate) fn noise_seed_for(base: u64, edge: usize, rows: usize) -> u64 {
    derive_seed(base, ((edge as u64) << 32) | rows as u64)
}

/// Applies one operation of the pool to `x`; `None` means an all-zero output.
pub(crate) fn apply_op(
    tape: &mut Tape,
    op: OpKind,
    x: Var,
    params: Option<(Var, Var)>,
    noise_seed: u64,
) -> Result<Option<Var>> {
    let out = match op {
        OpKind::Skip => x,
        OpKind::Zero => return Ok(None),
        OpKind::Noise => {
            let shape = tape.value(x).shape().to_vec();
            tape.gaussian_noise_const(&shape, noise_seed)?
        }
        OpKind::Dense | OpKind::DenseRelu | OpKind::DenseTanh => {
            let (w, b) = params.expect("parametric op without weights");
            // activation first, as in relu-conv-bn blocks
            let a = match op {
                OpKind::DenseRelu => tape.relu(x)?,
                OpKind::DenseTanh => tape.tanh(x)?,
                _ => x,
            };
            Linear::apply(tape, a, w, b)?
        }
    };
    Ok(Some(out))
}

/// Sums optional node contributions, substituting zeros when none exist.
pub(crate) fn sum_or_zeros(tape: &mut Tape, terms: &[Var], shape: &[usize]) -> Result<Var> {
    let mut iter = terms.iter();
    match iter.next() {
        None => tape.constant(Tensor::zeros(shape)),
        Some(&first) => {
            let mut acc = first;
            for &t in iter {
                acc = tape.add(acc, t)?;
            }
            Ok(acc)
        }
    }
}

impl Supernet {
    pub fn new(spec: CellSpec, input_dim: usize, num_classes: usize, seed: u64) -> Self {
        let width = spec.feature_width;
        let mut init = SplitMix64::new(derive_seed(seed, 1));
        let stems = (0..spec.num_inputs)
            .map(|_| Linear::new(input_dim, width, &mut init))
            .collect();
        let ops = spec
            .edges
            .iter()
            .map(|e| {
                e.pool
                    .iter()
                    .map(|op| op.is_parametric().then(|| Linear::new(width, width, &mut init)))
                    .collect()
            })
            .collect();
        let head = Linear::new(width, num_classes, &mut init);
        let alpha = AlphaTable::zeros(&spec);
        let discretized = vec![None; spec.edges.len()];
        Self {
            spec,
            input_dim,
            num_classes,
            stems,
            ops,
            head,
            alpha,
            discretized,
            pruned: BTreeSet::new(),
            muted: BTreeSet::new(),
            mask_mode: MaskMode::Renormalize,
            noise_seed: derive_seed(seed, 3),
            rng: SplitMix64::new(derive_seed(seed, 2)),
        }
    }

    pub fn spec(&self) -> &CellSpec {
        &self.spec
    }

    pub fn mask_mode(&self) -> MaskMode {
        self.mask_mode
    }

    pub fn set_mask_mode(&mut self, mode: MaskMode) {
        self.mask_mode = mode;
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed
    }

    /// Training stream; advanced by batch shuffling and random-smoothing noise.
    pub fn rng_mut(&mut self) -> &mut SplitMix64 {
        &mut self.rng
    }

    pub fn rng_state(&self) -> u64 {
        self.rng.state()
    }

    pub fn stems(&self) -> &[Linear] {
        &self.stems
    }

    pub fn op_weights(&self, edge: usize, op: usize) -> Option<&Linear> {
        self.ops[edge][op].as_ref()
    }

    pub fn op_weights_mut(&mut self, edge: usize, op: usize) -> Option<&mut Linear> {
        self.ops[edge][op].as_mut()
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn is_discretized(&self, edge: usize) -> bool {
        self.discretized[edge].is_some()
    }

    /// Decided edges and their operations.
    pub fn discretized(&self) -> BTreeMap<usize, OpKind> {
        self.discretized
            .iter()
            .enumerate()
            .filter_map(|(e, c)| c.map(|k| (e, self.spec.edges[e].pool[k])))
            .collect()
    }

    pub fn discretized_index(&self, edge: usize) -> Option<usize> {
        self.discretized[edge]
    }

    pub fn pruned_edges(&self) -> &BTreeSet<usize> {
        &self.pruned
    }

    pub fn is_pruned(&self, edge: usize) -> bool {
        self.pruned.contains(&edge)
    }

    pub fn undecided_edges(&self) -> Vec<usize> {
        (0..self.spec.edges.len())
            .filter(|&e| self.discretized[e].is_none() && !self.pruned.contains(&e))
            .collect()
    }

    /// Input edges of `node` that are not pruned.
    pub fn active_inputs(&self, node: usize) -> Vec<usize> {
        self.spec
            .input_edges(node)
            .into_iter()
            .filter(|e| !self.pruned.contains(e))
            .collect()
    }

    /// Whether the α row of `edge` may change during training.
    pub fn alpha_trainable(&self, edge: usize) -> bool {
        !self.alpha.frozen && self.discretized[edge].is_none() && !self.pruned.contains(&edge)
    }

    pub fn alpha_softmax(&self, edge: usize) -> Vec<f64> {
        self.alpha.weights(edge, self.mask_mode)
    }

    /// Mean over edges of `softmax(α)_skip - softmax(α)_conv`. Defined only
    /// when every edge pool is exactly one skip plus one parametric op.
    pub fn skip_conv_gap(&self) -> Result<f64> {
        let mut total = 0.0;
        for (i, e) in self.spec.edges.iter().enumerate() {
            let skip = e.op_index(OpKind::Skip);
            let conv = e.pool.iter().position(|o| o.is_parametric());
            let (Some(s), Some(c)) = (skip, conv) else {
                return Err(Error::Undefined("skip/conv gap"));
            };
            if e.pool.len() != 2 {
                return Err(Error::Undefined("skip/conv gap"));
            }
            let w = self.alpha.weights(i, MaskMode::Renormalize);
            total += w[s] - w[c];
        }
        Ok(total / self.spec.edges.len() as f64)
    }

    pub fn mask_op(&mut self, edge: usize, op: usize) -> Result<()> {
        self.check_edge(edge)?;
        if self.discretized[edge].is_some() {
            return Err(Error::Supernet(format!("edge {edge} is already discretized")));
        }
        let mask = &mut self.alpha.mask[edge];
        if op >= mask.len() {
            return Err(Error::Supernet(format!("op {op} outside pool of edge {edge}")));
        }
        if mask[op] && mask.iter().filter(|&&m| m).count() == 1 {
            return Err(Error::Supernet(format!("cannot mask the last active op of edge {edge}")));
        }
        mask[op] = false;
        Ok(())
    }

    pub fn unmask_op(&mut self, edge: usize, op: usize) -> Result<()> {
        self.check_edge(edge)?;
        if self.discretized[edge].is_some() {
            return Err(Error::Supernet(format!("edge {edge} is already discretized")));
        }
        let mask = &mut self.alpha.mask[edge];
        if op >= mask.len() {
            return Err(Error::Supernet(format!("op {op} outside pool of edge {edge}")));
        }
        mask[op] = true;
        Ok(())
    }

    /// Fixes `edge` to `op` permanently. Its α row is kept but no longer trained.
    pub fn discretize_edge(&mut self, edge: usize, op: OpKind) -> Result<()> {
        self.check_edge(edge)?;
        if self.discretized[edge].is_some() {
            return Err(Error::Supernet(format!("edge {edge} is already discretized")));
        }
        if op == OpKind::Zero {
            return Err(Error::Supernet("the zero op cannot be selected".into()));
        }
        let k = self.spec.edges[edge]
            .op_index(op)
            .ok_or_else(|| Error::Supernet(format!("op {op} is not in the pool of edge {edge}")))?;
        self.discretized[edge] = Some(k);
        for (i, m) in self.alpha.mask[edge].iter_mut().enumerate() {
            *m = i == k;
        }
        Ok(())
    }

    /// Keeps exactly the two `keep` edges among the inputs of `node`.
    pub fn prune_node_inputs(&mut self, node: usize, keep: &[usize]) -> Result<()> {
        if keep.len() != 2 || keep[0] == keep[1] {
            return Err(Error::Supernet("exactly two distinct edges must be kept".into()));
        }
        let active = self.active_inputs(node);
        if active.len() <= 2 {
            return Err(Error::Supernet(format!("node {node} has {} active inputs", active.len())));
        }
        for k in keep {
            if !active.contains(k) {
                return Err(Error::Supernet(format!(
                    "edge {k} is not an active input of node {node}"
                )));
            }
        }
        for e in active {
            if !keep.contains(&e) {
                self.pruned.insert(e);
            }
        }
        Ok(())
    }

    /// Temporarily removes the whole output of `edge` (topology probing).
    pub fn mute_edge(&mut self, edge: usize) -> Result<()> {
        self.check_edge(edge)?;
        self.muted.insert(edge);
        Ok(())
    }

    pub fn unmute_edge(&mut self, edge: usize) {
        self.muted.remove(&edge);
    }

    /// Copy with two randomly chosen edges of identical pools exchanging their
    /// weights, logits, masks and decisions.
    pub fn shuffle_edges(&self, seed: u64) -> Result<Supernet> {
        let n = self.spec.edges.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.spec.edges[i].pool == self.spec.edges[j].pool
                    && !self.pruned.contains(&i)
                    && !self.pruned.contains(&j)
                {
                    pairs.push((i, j));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Supernet("no pair of swappable edges".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let (i, j) = pairs[rng.below(pairs.len())];
        let mut out = self.clone();
        out.swap_edges(i, j);
        Ok(out)
    }

    /// Exchanges the trainable state of two edges with identical pools.
    pub fn swap_edges(&mut self, i: usize, j: usize) {
        assert_eq!(self.spec.edges[i].pool, self.spec.edges[j].pool);
        self.ops.swap(i, j);
        self.alpha.alpha.swap(i, j);
        self.alpha.mask.swap(i, j);
        self.discretized.swap(i, j);
    }

    /// The genotype implied by a fully decided supernet.
    pub fn decided_genotype(&self) -> Result<Genotype> {
        let mut edges = Vec::new();
        for (i, e) in self.spec.edges.iter().enumerate() {
            if self.pruned.contains(&i) {
                continue;
            }
            let k = self.discretized[i]
                .ok_or_else(|| Error::Supernet(format!("edge {} is undecided", e.label())))?;
            edges.push(GenotypeEdge {
                source: e.source,
                target: e.target,
                op: e.pool[k],
            });
        }
        Genotype::new(&self.spec, edges)
    }

    fn check_edge(&self, edge: usize) -> Result<()> {
        if edge >= self.spec.edges.len() {
            return Err(Error::Supernet(format!("edge {edge} does not exist")));
        }
        if self.pruned.contains(&edge) {
            return Err(Error::Supernet(format!("edge {edge} is pruned")));
        }
        Ok(())
    }

    fn op_params(&self, weight_vars: &[Var], edge: usize, op: usize) -> Option<(Var, Var)> {
        // weights() order: stems, then ops edge-major, then head
        self.ops[edge][op].as_ref()?;
        let mut idx = 2 * self.stems.len();
        for (e, row) in self.ops.iter().enumerate() {
            for (o, slot) in row.iter().enumerate() {
                if slot.is_some() {
                    if e == edge && o == op {
                        return Some((weight_vars[idx], weight_vars[idx + 1]));
                    }
                    idx += 2;
                }
            }
        }
        None
    }

    /// Output of one edge given its input, or `None` when it contributes zeros.
    fn edge_graph(
        &self,
        tape: &mut Tape,
        edge: usize,
        x: Var,
        weight_vars: &[Var],
        alpha_var: Var,
    ) -> Result<Option<Var>> {
        if self.pruned.contains(&edge) || self.muted.contains(&edge) {
            return Ok(None);
        }
        let pool = &self.spec.edges[edge].pool;
        let rows = tape.value(x).rows();
        let nseed = noise_seed_for(self.noise_seed, edge, rows);
        if let Some(k) = self.discretized[edge] {
            return apply_op(tape, pool[k], x, self.op_params(weight_vars, edge, k), nseed);
        }
        let mask = &self.alpha.mask[edge];
        if !mask.iter().any(|&m| m) {
            return Err(Error::Supernet(format!("every op of edge {edge} is masked")));
        }
        let weights = match self.mask_mode {
            MaskMode::Renormalize => tape.masked_softmax(alpha_var, mask)?,
            MaskMode::ZeroOut => tape.softmax(alpha_var)?,
        };
        let mut terms = Vec::new();
        for (k, &op) in pool.iter().enumerate() {
            if !mask[k] {
                continue;
            }
            if let Some(out) = apply_op(tape, op, x, self.op_params(weight_vars, edge, k), nseed)? {
                terms.push((k, out));
            }
        }
        if terms.is_empty() {
            return Ok(None);
        }
        tape.weighted_sum(weights, &terms).map(Some)
    }

    /// Logits with explicit architecture variables, one vector per edge.
    pub fn logits_with_alpha(
        &self,
        tape: &mut Tape,
        x: Var,
        weight_vars: &[Var],
        alpha_vars: &[Var],
    ) -> Result<Var> {
        let rows = tape.value(x).rows();
        let shape = [rows, self.spec.feature_width];
        let mut nodes: Vec<Var> = Vec::with_capacity(self.spec.num_nodes());
        for i in 0..self.spec.num_inputs {
            nodes.push(Linear::apply(tape, x, weight_vars[2 * i], weight_vars[2 * i + 1])?);
        }
        for node in self.spec.intermediate_nodes() {
            let mut terms = Vec::new();
            for e in self.spec.input_edges(node) {
                let src = nodes[self.spec.edges[e].source];
                if let Some(out) = self.edge_graph(tape, e, src, weight_vars, alpha_vars[e])? {
                    terms.push(out);
                }
            }
            let v = sum_or_zeros(tape, &terms, &shape)?;
            nodes.push(v);
        }
        let inter: Vec<Var> = nodes[self.spec.num_inputs..].to_vec();
        let total = sum_or_zeros(tape, &inter, &shape)?;
        let cell = tape.scale(total, 1.0 / self.spec.num_intermediate as f64)?;
        let n = weight_vars.len();
        Linear::apply(tape, cell, weight_vars[n - 2], weight_vars[n - 1])
    }

    /// Records the α rows on `tape`; trainable rows become gradient leaves when `train`.
    pub fn bind_alpha(&self, tape: &mut Tape, alpha: &[Vec<f64>], train: bool) -> Result<Vec<Var>> {
        alpha
            .iter()
            .enumerate()
            .map(|(e, row)| {
                let t = Tensor::vector(row.clone());
                if train && self.alpha_trainable(e) {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    /// Node values (cell inputs followed by intermediate nodes) on `inputs`.
    pub fn node_values(&self, inputs: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let wv = bind_weights(self, &mut tape, false)?;
        let av = self.bind_alpha(&mut tape, &self.alpha.alpha, false)?;
        let x = tape.constant(inputs.clone())?;
        let rows = inputs.rows();
        let shape = [rows, self.spec.feature_width];
        let mut nodes = Vec::new();
        for i in 0..self.spec.num_inputs {
            nodes.push(Linear::apply(&mut tape, x, wv[2 * i], wv[2 * i + 1])?);
        }
        for node in self.spec.intermediate_nodes() {
            let mut terms = Vec::new();
            for e in self.spec.input_edges(node) {
                let src = nodes[self.spec.edges[e].source];
                if let Some(out) = self.edge_graph(&mut tape, e, src, &wv, av[e])? {
                    terms.push(out);
                }
            }
            nodes.push(sum_or_zeros(&mut tape, &terms, &shape)?);
        }
        Ok(nodes.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    /// Output of a single operation of `edge` applied to `x` (no mixing).
    pub fn op_forward(&self, edge: usize, op: usize, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let wv = bind_weights(self, &mut tape, false)?;
        let xv = tape.constant(x.clone())?;
        let kind = self.spec.edges[edge].pool[op];
        let nseed = noise_seed_for(self.noise_seed, edge, x.rows());
        match apply_op(&mut tape, kind, xv, self.op_params(&wv, edge, op), nseed)? {
            Some(v) => Ok(tape.value(v).clone()),
            None => Ok(Tensor::zeros(x.shape())),
        }
    }

    /// Mixed output of `edge` on a `(batch, feature_width)` input.
    pub fn mixed_edge_forward(&self, edge: usize, x: &Tensor) -> Result<Tensor> {
        if edge >= self.spec.edges.len() {
            return Err(Error::Supernet(format!("edge {edge} does not exist")));
        }
        if self.pruned.contains(&edge) {
            return Err(Error::Supernet(format!("edge {edge} is pruned")));
        }
        if x.shape().len() != 2 || x.cols() != self.spec.feature_width {
            return Err(Error::ShapeMismatch {
                op: "mixed_edge_forward",
                left: x.shape().to_vec(),
                right: vec![x.rows(), self.spec.feature_width],
            });
        }
        let mut tape = Tape::new();
        let wv = bind_weights(self, &mut tape, false)?;
        let av = self.bind_alpha(&mut tape, &self.alpha.alpha, false)?;
        let xv = tape.constant(x.clone())?;
        match self.edge_graph(&mut tape, edge, xv, &wv, av[edge])? {
            Some(v) => Ok(tape.value(v).clone()),
            None => Ok(Tensor::zeros(x.shape())),
        }
    }

    /// Weights in binding order: stem (w, b) per input, parametric ops
    /// edge-major, head (w, b).
    fn weight_refs(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for s in &self.stems {
            out.push(&s.weight);
            out.push(&s.bias);
        }
        for row in &self.ops {
            for l in row.iter().flatten() {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }
}

impl Network for Supernet {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn weights(&self) -> Vec<&Tensor> {
        self.weight_refs()
    }

    fn weights_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for s in &mut self.stems {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        for row in &mut self.ops {
            for l in row.iter_mut().flatten() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    fn logits(&self, tape: &mut Tape, x: Var, weight_vars: &[Var]) -> Result<Var> {
        let av = self.bind_alpha(tape, &self.alpha.alpha, false)?;
        self.logits_with_alpha(tape, x, weight_vars, &av)
    }
}

#[cfg(test)]
mod tests;
