//! Architecture selection: α magnitude, perturbation-based operation and
//! topology selection, the progressive magnitude hybrid, and measured
//! operation strength.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::searchspace::{Genotype, GenotypeEdge, OpKind};
use crate::supernet::Supernet;
use crate::trainer::{evaluate, fine_tune, Dataset, Split, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMethod {
    Magnitude,
    Pt,
    PtMag,
}

impl SelectMethod {
    pub fn name(self) -> &'static str {
        match self {
            SelectMethod::Magnitude => "mag",
            SelectMethod::Pt => "pt",
            SelectMethod::PtMag => "pt-mag",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mag" | "magnitude" => Some(SelectMethod::Magnitude),
            "pt" => Some(SelectMethod::Pt),
            "pt-mag" | "pt_mag" => Some(SelectMethod::PtMag),
            _ => None,
        }
    }
}

impl fmt::Display for SelectMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectConfig {
    /// Optimizer settings for fine-tuning; `train.finetune_epochs` is the
    /// budget after each operation decision.
    pub train: TrainConfig,
    /// Seed of the edge and node visiting order.
    pub seed: u64,
    /// Budget after each topology decision; defaults to `train.finetune_epochs`.
    pub topology_finetune_epochs: Option<usize>,
    /// Budget of each strength measurement; defaults to 3x `train.finetune_epochs`.
    pub strength_epochs: Option<usize>,
}

impl SelectConfig {
    pub fn new(train: TrainConfig, seed: u64) -> Self {
        Self {
            train,
            seed,
            topology_finetune_epochs: None,
            strength_epochs: None,
        }
    }

    pub fn op_epochs(&self) -> usize {
        self.train.finetune_epochs
    }

    pub fn topology_epochs(&self) -> usize {
        self.topology_finetune_epochs.unwrap_or(self.train.finetune_epochs)
    }

    pub fn strength_epochs(&self) -> usize {
        self.strength_epochs.unwrap_or(3 * self.train.finetune_epochs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Operation,
    Topology,
}

/// One scored candidate: an op index (operation phase) or an edge index
/// (topology phase).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub label: String,
    /// Validation accuracy with the candidate removed; `None` when the
    /// decision did not need an evaluation.
    pub score: Option<f64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub method: SelectMethod,
    pub seed: u64,
    pub step: usize,
    pub phase: Phase,
    /// Edge index (operation phase) or node index (topology phase).
    pub item: usize,
    pub candidates: Vec<Candidate>,
    /// Chosen op index, or the kept edge indices.
    pub chosen: Vec<usize>,
    pub chosen_label: String,
    /// Supernet validation accuracy after the decision and its fine-tuning;
    /// absent for magnitude selection, which never evaluates.
    pub val_accuracy: Option<f64>,
    /// α table when the decision was taken.
    pub alpha: Vec<Vec<f64>>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub method: SelectMethod,
    pub seed: u64,
    pub decisions: Vec<Decision>,
}

impl SelectionTrace {
    pub fn new(method: SelectMethod, seed: u64) -> Self {
        Self {
            method,
            seed,
            decisions: Vec::new(),
        }
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &Decision> {
        self.decisions.iter().filter(move |d| d.phase == phase)
    }

    /// One JSON object per decision.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.decisions {
            out.push_str(&serde_json::to_string(d).expect("decision serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let decisions = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str::<Decision>(l)
                    .map_err(|e| Error::format("selection trace", format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let first = decisions
            .first()
            .ok_or_else(|| Error::format("selection trace", "no decisions"))?;
        Ok(Self {
            method: first.method,
            seed: first.seed,
            decisions,
        })
    }

    fn push(&mut self, mut d: Decision) {
        d.step = self.decisions.len();
        self.decisions.push(d);
    }
}

/// Active, selectable (non-zero) ops of `edge` as `(index, kind, α)`.
fn candidates(net: &Supernet, edge: usize) -> Vec<(usize, OpKind, f64)> {
    let e = &net.spec().edges[edge];
    e.selectable()
        .filter(|&(k, _)| net.alpha.mask[edge][k])
        .map(|(k, op)| (k, op, net.alpha.alpha[edge][k]))
        .collect()
}

/// Index of the largest α among `cands`, first one on ties.
fn argmax_alpha(cands: &[(usize, OpKind, f64)]) -> Option<usize> {
    let mut best: Option<&(usize, OpKind, f64)> = None;
    for c in cands {
        if best.is_none_or(|b| c.2 > b.2) {
            best = Some(c);
        }
    }
    best.map(|c| c.0)
}

/// Largest α over the selectable active ops of `edge`, or the α of its
/// decided op.
fn edge_strength(net: &Supernet, edge: usize) -> f64 {
    if let Some(k) = net.discretized_index(edge) {
        return net.alpha.alpha[edge][k];
    }
    candidates(net, edge)
        .iter()
        .map(|c| c.2)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Indices of the two smallest `(score, edge)` pairs; lower edge index wins ties.
fn two_lowest(scores: &[(usize, f64)]) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut keep: Vec<usize> = sorted.iter().take(2).map(|s| s.0).collect();
    keep.sort_unstable();
    keep
}

/// The genotype read off α: the largest selectable α per edge, and per node
/// the inputs whose best α is largest. Ties go to the lowest op index, then
/// the lowest edge index.
pub fn magnitude_select(net: &Supernet) -> Result<Genotype> {
    magnitude_select_traced(net).map(|(g, _)| g)
}

pub fn magnitude_select_traced(net: &Supernet) -> Result<(Genotype, SelectionTrace)> {
    let spec = net.spec();
    let mut trace = SelectionTrace::new(SelectMethod::Magnitude, 0);
    let mut choice = vec![None; spec.edges.len()];
    for e in 0..spec.edges.len() {
        if net.is_pruned(e) {
            continue;
        }
        let cands = candidates(net, e);
        let k = match net.discretized_index(e) {
            Some(k) => k,
            None => argmax_alpha(&cands)
                .ok_or_else(|| Error::Supernet(format!("edge {e} has no selectable op")))?,
        };
        choice[e] = Some(k);
        trace.push(Decision {
            method: SelectMethod::Magnitude,
            seed: 0,
            step: 0,
            phase: Phase::Operation,
            item: e,
            candidates: cands
                .iter()
                .map(|&(i, op, a)| Candidate { index: i, label: op.tag().into(), score: None, alpha: a })
                .collect(),
            chosen: vec![k],
            chosen_label: spec.edges[e].pool[k].tag().into(),
            val_accuracy: None,
            alpha: net.alpha.alpha.clone(),
            note: None,
        });
    }
    let mut edges = Vec::new();
    for node in spec.intermediate_nodes() {
        let active = net.active_inputs(node);
        let want = spec.retained_per_node(node);
        let mut ranked: Vec<(usize, f64)> = active.iter().map(|&e| (e, edge_strength(net, e))).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut keep: Vec<usize> = ranked.iter().take(want).map(|r| r.0).collect();
        keep.sort_unstable();
        trace.push(Decision {
            method: SelectMethod::Magnitude,
            seed: 0,
            step: 0,
            phase: Phase::Topology,
            item: node,
            candidates: ranked
                .iter()
                .map(|&(e, a)| Candidate { index: e, label: spec.edges[e].label(), score: None, alpha: a })
                .collect(),
            chosen: keep.clone(),
            chosen_label: keep.iter().map(|&e| spec.edges[e].label()).collect::<Vec<_>>().join(","),
            val_accuracy: None,
            alpha: net.alpha.alpha.clone(),
            note: None,
        });
        for e in keep {
            let k = choice[e].expect("kept edge has a choice");
            let edge = &spec.edges[e];
            edges.push(GenotypeEdge { source: edge.source, target: edge.target, op: edge.pool[k] });
        }
    }
    Ok((Genotype::new(spec, edges)?, trace))
}

fn val_accuracy(net: &Supernet, data: &Dataset) -> Result<f64> {
    evaluate(net, data, Split::Val).map(|r| r.0)
}

/// Progressive operation phase shared by perturbation and magnitude choice.
fn progressive_ops(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
    method: SelectMethod,
    trace: &mut SelectionTrace,
    rng: &mut SplitMix64,
) -> Result<()> {
    let mut order = net.undecided_edges();
    rng.shuffle(&mut order);
    for e in order {
        let cands = candidates(net, e);
        if cands.is_empty() {
            return Err(Error::Supernet(format!("edge {e} has no selectable op")));
        }
        let alpha_snapshot = net.alpha.alpha.clone();
        let mut scored: Vec<Candidate> = cands
            .iter()
            .map(|&(k, op, a)| Candidate { index: k, label: op.tag().into(), score: None, alpha: a })
            .collect();
        let mut note = None;
        let chosen = if cands.len() == 1 {
            note = Some("single selectable op; decided without evaluation".to_string());
            cands[0].0
        } else if method == SelectMethod::PtMag {
            argmax_alpha(&cands).expect("non-empty")
        } else {
            score_ops(net, data, e, &mut scored)?;
            pick_by_score(&scored)
        };
        let op = net.spec().edges[e].pool[chosen];
        net.discretize_edge(e, op)?;
        fine_tune(net, data, cfg.op_epochs(), &cfg.train)?;
        trace.push(Decision {
            method,
            seed: cfg.seed,
            step: 0,
            phase: Phase::Operation,
            item: e,
            candidates: scored,
            chosen: vec![chosen],
            chosen_label: op.tag().into(),
            val_accuracy: Some(val_accuracy(net, data)?),
            alpha: alpha_snapshot,
            note,
        });
    }
    Ok(())
}

/// Fills in the validation accuracy of `net` with each candidate op of
/// `edge` masked in turn.
fn score_ops(net: &mut Supernet, data: &Dataset, edge: usize, scored: &mut [Candidate]) -> Result<()> {
    for c in scored.iter_mut() {
        net.mask_op(edge, c.index)?;
        let acc = val_accuracy(net, data);
        net.unmask_op(edge, c.index)?;
        c.score = Some(acc?);
    }
    Ok(())
}

/// Lowest accuracy without the op; then larger α, then lower index.
fn pick_by_score(scored: &[Candidate]) -> usize {
    scored
        .iter()
        .min_by(|a, b| {
            let (sa, sb) = (a.score.expect("scored"), b.score.expect("scored"));
            sa.total_cmp(&sb)
                .then(b.alpha.total_cmp(&a.alpha))
                .then(a.index.cmp(&b.index))
        })
        .expect("non-empty")
        .index
}

fn edge_order_rng(seed: u64) -> SplitMix64 {
    SplitMix64::new(derive_seed(seed, 0xED6E))
}

fn node_order_rng(seed: u64) -> SplitMix64 {
    SplitMix64::new(derive_seed(seed, 0x40DE))
}

/// Perturbation-based operation selection on every undecided edge, visited
/// in seeded random order: each candidate op is masked in turn, the one whose
/// removal hurts validation accuracy most is kept, then the supernet is
/// fine-tuned.
/// Returns the decided op of every edge so far.
pub fn pt_select_operations(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
) -> Result<(BTreeMap<usize, OpKind>, SelectionTrace)> {
    let mut trace = SelectionTrace::new(SelectMethod::Pt, cfg.seed);
    progressive_ops(net, data, cfg, SelectMethod::Pt, &mut trace, &mut edge_order_rng(cfg.seed))?;
    Ok((net.discretized(), trace))
}

/// Perturbation-based topology selection after the operation phase. Each
/// node keeps the two inputs whose removal lowers validation accuracy most.
pub fn pt_select_topology(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
) -> Result<(Genotype, SelectionTrace)> {
    let mut trace = SelectionTrace::new(SelectMethod::Pt, cfg.seed);
    topology_phase(net, data, cfg, SelectMethod::Pt, &mut trace, &mut node_order_rng(cfg.seed))?;
    Ok((net.decided_genotype()?, trace))
}

fn topology_phase(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
    method: SelectMethod,
    trace: &mut SelectionTrace,
    rng: &mut SplitMix64,
) -> Result<()> {
    if !net.undecided_edges().is_empty() {
        return Err(Error::Supernet("operation phase is incomplete".into()));
    }
    let mut nodes: Vec<usize> = net.spec().intermediate_nodes().collect();
    rng.shuffle(&mut nodes);
    for node in nodes {
        let active = net.active_inputs(node);
        let want = net.spec().retained_per_node(node);
        let alpha_snapshot = net.alpha.alpha.clone();
        let label = |net: &Supernet, e: usize| net.spec().edges[e].label();
        if active.len() <= want {
            trace.push(Decision {
                method,
                seed: cfg.seed,
                step: 0,
                phase: Phase::Topology,
                item: node,
                candidates: active
                    .iter()
                    .map(|&e| Candidate { index: e, label: label(net, e), score: None, alpha: edge_strength(net, e) })
                    .collect(),
                chosen: active.clone(),
                chosen_label: active.iter().map(|&e| label(net, e)).collect::<Vec<_>>().join(","),
                val_accuracy: Some(val_accuracy(net, data)?),
                alpha: alpha_snapshot,
                note: Some(format!("{} inputs; kept without evaluation", active.len())),
            });
            continue;
        }
        let mut scores = Vec::with_capacity(active.len());
        for &e in &active {
            net.mute_edge(e)?;
            let acc = val_accuracy(net, data);
            net.unmute_edge(e);
            scores.push((e, acc?));
        }
        let keep = two_lowest(&scores);
        net.prune_node_inputs(node, &keep)?;
        fine_tune(net, data, cfg.topology_epochs(), &cfg.train)?;
        trace.push(Decision {
            method,
            seed: cfg.seed,
            step: 0,
            phase: Phase::Topology,
            item: node,
            candidates: scores
                .iter()
                .map(|&(e, s)| Candidate { index: e, label: label(net, e), score: Some(s), alpha: edge_strength(net, e) })
                .collect(),
            chosen: keep.clone(),
            chosen_label: keep.iter().map(|&e| label(net, e)).collect::<Vec<_>>().join(","),
            val_accuracy: Some(val_accuracy(net, data)?),
            alpha: alpha_snapshot,
            note: None,
        });
    }
    Ok(())
}

/// Full perturbation pipeline: operations, then topology.
pub fn pt_select(net: &mut Supernet, data: &Dataset, cfg: &SelectConfig) -> Result<(Genotype, SelectionTrace)> {
    progressive(net, data, cfg, SelectMethod::Pt)
}

/// The progressive schedule of [`pt_select`] with each edge's op chosen by
/// largest α instead of perturbation scores. The topology phase is the same
/// perturbation-based one.
pub fn pt_mag_select(net: &mut Supernet, data: &Dataset, cfg: &SelectConfig) -> Result<(Genotype, SelectionTrace)> {
    progressive(net, data, cfg, SelectMethod::PtMag)
}

fn progressive(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
    method: SelectMethod,
) -> Result<(Genotype, SelectionTrace)> {
    let mut trace = SelectionTrace::new(method, cfg.seed);
    progressive_ops(net, data, cfg, method, &mut trace, &mut edge_order_rng(cfg.seed))?;
    topology_phase(net, data, cfg, method, &mut trace, &mut node_order_rng(cfg.seed))?;
    Ok((net.decided_genotype()?, trace))
}

/// Dispatches to one of the selection methods. Magnitude selection leaves
/// `net` untouched.
pub fn select(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
    method: SelectMethod,
) -> Result<(Genotype, SelectionTrace)> {
    match method {
        SelectMethod::Magnitude => magnitude_select_traced(net),
        SelectMethod::Pt => pt_select(net, data, cfg),
        SelectMethod::PtMag => pt_mag_select(net, data, cfg),
    }
}

/// Strength of one op: validation accuracy after discretizing the edge to it
/// and fine-tuning to the convergence budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpStrength {
    pub index: usize,
    pub op: String,
    pub accuracy: f64,
}

/// Measures every selectable op of `edge` on independent clones; `net` is
/// not modified.
pub fn measure_op_strength(
    net: &Supernet,
    edge: usize,
    data: &Dataset,
    cfg: &SelectConfig,
) -> Result<Vec<OpStrength>> {
    if edge >= net.spec().edges.len() {
        return Err(Error::Supernet(format!("edge {edge} does not exist")));
    }
    if net.is_discretized(edge) || net.is_pruned(edge) {
        return Err(Error::Supernet(format!("edge {edge} is already decided")));
    }
    let epochs = cfg.strength_epochs();
    candidates(net, edge)
        .par_iter()
        .map(|&(k, op, _)| {
            let mut clone = net.clone();
            clone.discretize_edge(edge, op)?;
            fine_tune(&mut clone, data, epochs, &cfg.train)?;
            Ok(OpStrength {
                index: k,
                op: op.tag().into(),
                accuracy: val_accuracy(&clone, data)?,
            })
        })
        .collect()
}


#[cfg(test)]
mod tests;
