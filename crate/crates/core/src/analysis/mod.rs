//! Diagnostics on trained supernets: the closed-form optimal skip/conv
//! mixing weights, the skip-gap trajectory, shuffle robustness, and α
//! against measured op strength.

use std::fmt::Write as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::searchspace::OpKind;
use crate::selection::{measure_op_strength, SelectConfig};
use crate::supernet::{Linear, Network, Supernet};
use crate::trainer::{evaluate, Dataset, RunLog, Split};

mod stats;

pub use stats::{kendall_tau, mean, sample_std, spearman};

/// Edge input `x`, conv-path output `o` and target feature map `m_star`, each
/// `(n, d)`.
#[derive(Clone, Debug)]
pub struct FeatureSamples {
    pub x: Tensor,
    pub o: Tensor,
    pub m_star: Tensor,
}

impl FeatureSamples {
    pub fn new(x: Tensor, o: Tensor, m_star: Tensor) -> Result<Self> {
        for t in [&o, &m_star] {
            if t.shape() != x.shape() {
                return Err(Error::ShapeMismatch {
                    op: "feature samples",
                    left: x.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        if x.shape().len() != 2 || x.rows() < 2 {
            return Err(Error::InvalidArgument("feature samples need shape (n, d) with n >= 2".into()));
        }
        if !(x.is_finite() && o.is_finite() && m_star.is_finite()) {
            return Err(Error::InvalidArgument("feature samples must be finite".into()));
        }
        Ok(Self { x, o, m_star })
    }

    /// Copy with each array shifted and scaled to zero mean and unit variance.
    pub fn standardized(&self) -> Result<Self> {
        let std = |t: &Tensor| -> Result<Tensor> {
            let m = mean(t.data());
            let s = sample_std(t.data());
            if s == 0.0 {
                return Err(Error::Degenerate("constant feature array".into()));
            }
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| (v - m) / s).collect())
        };
        Self::new(std(&self.x)?, std(&self.o)?, std(&self.m_star)?)
    }

    pub fn stats(&self) -> ResidualStats {
        let m = self.m_star.data();
        let rx: Vec<f64> = self.x.data().iter().zip(m).map(|(a, b)| a - b).collect();
        let ro: Vec<f64> = self.o.data().iter().zip(m).map(|(a, b)| a - b).collect();
        ResidualStats {
            var_x: covariance(&rx, &rx),
            var_o: covariance(&ro, &ro),
            cov: covariance(&ro, &rx),
        }
    }
}

/// Target `m*` plus independent and shared Gaussian noise on both paths,
/// with per-set noise scales drawn from `seed`.
pub fn synthetic_samples(seed: u64, n: usize, d: usize) -> FeatureSamples {
    let mut rng = SplitMix64::new(derive_seed(seed, 0x9A01));
    let sx = rng.uniform_range(0.2, 2.0);
    let so = rng.uniform_range(0.2, 2.0);
    let shared = rng.uniform_range(-0.8, 0.8);
    let mut draw = || -> Vec<f64> { (0..n * d).map(|_| rng.normal()).collect() };
    let (m, common, nx, no) = (draw(), draw(), draw(), draw());
    let x = (0..n * d).map(|i| m[i] + sx * nx[i] + shared * common[i]).collect();
    let o = (0..n * d).map(|i| m[i] + so * no[i] + shared * common[i]).collect();
    let t = |v| Tensor::new(vec![n, d], v).expect("shape");
    FeatureSamples::new(t(x), t(o), t(m)).expect("finite samples")
}

/// Samples whose two residuals are `u` and `-u`, so both variances agree
/// bit for bit. Values sit on a 1/64 grid to keep every difference exact.
pub fn symmetric_samples(seed: u64, n: usize, d: usize) -> FeatureSamples {
    let mut rng = SplitMix64::new(derive_seed(seed, 0x9A02));
    let mut dyadic = || (rng.normal() * 64.0).round() / 64.0;
    let m: Vec<f64> = (0..n * d).map(|_| dyadic()).collect();
    let u: Vec<f64> = (0..n * d).map(|_| dyadic()).collect();
    let t = |v| Tensor::new(vec![n, d], v).expect("shape");
    let x = m.iter().zip(&u).map(|(a, b)| a + b).collect();
    let o = m.iter().zip(&u).map(|(a, b)| a - b).collect();
    FeatureSamples::new(t(x), t(o), t(m)).expect("finite samples")
}

/// Samples with `x = m*` exactly and an unrelated conv path.
pub fn perfect_skip_samples(seed: u64, n: usize, d: usize) -> FeatureSamples {
    let mut rng = SplitMix64::new(derive_seed(seed, 0x9A03));
    let m: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    let o: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    let t = |v| Tensor::new(vec![n, d], v).expect("shape");
    FeatureSamples::new(t(m.clone()), t(o), t(m)).expect("finite samples")
}

/// Unbiased covariance over all scalar entries.
fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

/// `Var(x - m*)`, `Var(o - m*)` and `Cov(o - m*, x - m*)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualStats {
    pub var_x: f64,
    pub var_o: f64,
    pub cov: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaSolution {
    pub theta_conv: f64,
    pub theta_skip: f64,
    /// Logits up to a shared constant; `None` unless both numerators are positive.
    pub alpha_conv: Option<f64>,
    pub alpha_skip: Option<f64>,
    /// False when a θ leaves [0, 1]; the grid oracle then gives the
    /// constrained optimum.
    pub in_unit_interval: bool,
}

pub fn prop1_closed_form(samples: &FeatureSamples) -> Result<ThetaSolution> {
    prop1_from_stats(samples.stats())
}

pub fn prop1_from_stats(s: ResidualStats) -> Result<ThetaSolution> {
    let num_conv = s.var_x - s.cov;
    let num_skip = s.var_o - s.cov;
    let z = s.var_o + s.var_x - 2.0 * s.cov;
    if z == 0.0 || !z.is_finite() {
        return Err(Error::Degenerate(format!(
            "residuals are perfectly correlated with equal variance (Z = {z})"
        )));
    }
    let theta_conv = num_conv / z;
    let theta_skip = 1.0 - theta_conv;
    let logs = num_conv > 0.0 && num_skip > 0.0;
    Ok(ThetaSolution {
        theta_conv,
        theta_skip,
        alpha_conv: logs.then(|| num_conv.ln()),
        alpha_skip: logs.then(|| num_skip.ln()),
        in_unit_interval: (0.0..=1.0).contains(&theta_conv),
    })
}

/// Largest violation of the Lagrangian first-order conditions at `sol`.
pub fn stationarity_residual(s: ResidualStats, sol: &ThetaSolution) -> f64 {
    let (tc, ts) = (sol.theta_conv, sol.theta_skip);
    let lambda_conv = 2.0 * tc * s.var_o + 2.0 * ts * s.cov;
    let lambda_skip = 2.0 * tc * s.cov + 2.0 * ts * s.var_x;
    (lambda_conv - lambda_skip).abs().max((tc + ts - 1.0).abs())
}

/// `Var(θ·o + (1 - θ)·x - m*)`, computed directly from the samples.
pub fn prop1_objective(samples: &FeatureSamples, theta: f64) -> f64 {
    let r: Vec<f64> = samples
        .o
        .data()
        .iter()
        .zip(samples.x.data())
        .zip(samples.m_star.data())
        .map(|((o, x), m)| theta * o + (1.0 - theta) * x - m)
        .collect();
    covariance(&r, &r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridOptimum {
    pub theta_conv: f64,
    pub objective: f64,
}

/// Brute-force sweep of θ_conv over `[0, 1]` in steps of `step`; the first
/// grid point wins ties.
pub fn prop1_grid_oracle(samples: &FeatureSamples, step: f64) -> Result<GridOptimum> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(Error::InvalidArgument(format!("grid step {step} outside (0, 0.1]")));
    }
    let points = (1.0 / step).round() as usize;
    let mut best = GridOptimum { theta_conv: 0.0, objective: f64::INFINITY };
    for i in 0..=points {
        let theta = (i as f64 * step).min(1.0);
        let objective = prop1_objective(samples, theta);
        if objective < best.objective {
            best = GridOptimum { theta_conv: theta, objective };
        }
    }
    Ok(best)
}

/// One edge of [`supernet_prop1_probe`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub edge: usize,
    pub label: String,
    pub stats: ResidualStats,
    pub predicted_theta_skip: Option<f64>,
    pub standardized_stats: Option<ResidualStats>,
    pub standardized_theta_skip: Option<f64>,
    pub alpha_skip: f64,
    pub alpha_conv: f64,
    pub softmax_skip: f64,
    pub softmax_conv: f64,
}

/// Per-edge residual variances on the validation split with the last
/// intermediate node's mixed output standing in for m*, next to the trained
/// mixing weights. Every edge must hold exactly skip and one parametric op.
pub fn supernet_prop1_probe(net: &Supernet, data: &Dataset) -> Result<Vec<ProbeRow>> {
    let spec = net.spec();
    let mut pairs = Vec::new();
    for e in &spec.edges {
        let skip = e.op_index(OpKind::Skip);
        let conv = e.pool.iter().position(|o| o.is_parametric());
        match (skip, conv) {
            (Some(s), Some(c)) if e.pool.len() == 2 => pairs.push((s, c)),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "edge {} is not a skip/parametric pair",
                    e.label()
                )))
            }
        }
    }
    let (inputs, _) = data.batch(data.indices(Split::Val));
    let nodes = net.node_values(&inputs)?;
    let m_star = nodes.last().expect("cell has nodes").clone();
    let mut rows = Vec::new();
    for (i, e) in spec.edges.iter().enumerate() {
        if net.is_pruned(i) {
            continue;
        }
        let (s, c) = pairs[i];
        let x = nodes[e.source].clone();
        let o = net.op_forward(i, c, &x)?;
        let samples = FeatureSamples::new(x, o, m_star.clone())?;
        let stats = samples.stats();
        let standardized = samples.standardized().ok();
        let std_stats = standardized.as_ref().map(FeatureSamples::stats);
        let w = net.alpha_softmax(i);
        rows.push(ProbeRow {
            edge: i,
            label: e.label(),
            stats,
            predicted_theta_skip: prop1_from_stats(stats).ok().map(|t| t.theta_skip),
            standardized_stats: std_stats,
            standardized_theta_skip: std_stats.and_then(|s| prop1_from_stats(s).ok()).map(|t| t.theta_skip),
            alpha_skip: net.alpha.alpha[i][s],
            alpha_conv: net.alpha.alpha[i][c],
            softmax_skip: w[s],
            softmax_conv: w[c],
        });
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn probe_tsv(rows: &[ProbeRow]) -> String {
    let mut out = String::from(
        "edge\tvar_x_resid\tvar_o_resid\tcov\ttheta_skip_pred\tstd_var_x_resid\tstd_var_o_resid\tstd_theta_skip_pred\talpha_skip\talpha_conv\tsoftmax_skip\tsoftmax_conv\n",
    );
    for r in rows {
        let ss = r.standardized_stats;
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.label,
            r.stats.var_x,
            r.stats.var_o,
            r.stats.cov,
            opt(r.predicted_theta_skip),
            opt(ss.map(|s| s.var_x)),
            opt(ss.map(|s| s.var_o)),
            opt(r.standardized_theta_skip),
            r.alpha_skip,
            r.alpha_conv,
            r.softmax_skip,
            r.softmax_conv,
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapPoint {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGapTrajectory {
    pub points: Vec<GapPoint>,
    /// Spearman correlation of epoch and gap; `None` when the gap is constant.
    pub spearman: Option<f64>,
}

pub fn skip_gap_trajectory(log: &RunLog) -> Result<SkipGapTrajectory> {
    let points = log
        .records
        .iter()
        .map(|r| {
            r.skip_conv_gap
                .map(|gap| GapPoint { epoch: r.epoch, val_accuracy: r.val_accuracy, gap })
                .ok_or(Error::Undefined("skip/conv gap"))
        })
        .collect::<Result<Vec<_>>>()?;
    let spearman = if points.len() < 2 {
        None
    } else {
        let epochs: Vec<f64> = points.iter().map(|p| p.epoch as f64).collect();
        let gaps: Vec<f64> = points.iter().map(|p| p.gap).collect();
        spearman(&epochs, &gaps)?
    };
    Ok(SkipGapTrajectory { points, spearman })
}

impl SkipGapTrajectory {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# spearman\t{}\nepoch\tval_accuracy\tgap\n", opt(self.spearman));
        for p in &self.points {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}", p.epoch, p.val_accuracy, p.gap);
        }
        out
    }
}

/// Plain feed-forward baseline: a linear stem, `depth` pre-activation dense
/// layers and a linear head, so any two hidden layers can be swapped.
#[derive(Clone, Debug)]
pub struct VanillaChain {
    pub stem: Linear,
    pub layers: Vec<Linear>,
    pub head: Linear,
}

impl VanillaChain {
    pub fn new(input_dim: usize, width: usize, depth: usize, classes: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(derive_seed(seed, 0xC4A1));
        Self {
            stem: Linear::new(input_dim, width, &mut rng),
            layers: (0..depth).map(|_| Linear::new(width, width, &mut rng)).collect(),
            head: Linear::new(width, classes, &mut rng),
        }
    }
}

impl Network for VanillaChain {
    fn input_dim(&self) -> usize {
        self.stem.weight.rows()
    }

    fn num_classes(&self) -> usize {
        self.head.weight.cols()
    }

    fn weights(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.stem.weight, &self.stem.bias];
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    fn weights_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.stem.weight, &mut self.stem.bias];
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    fn logits(&self, tape: &mut Tape, x: Var, w: &[Var]) -> Result<Var> {
        let mut h = Linear::apply(tape, x, w[0], w[1])?;
        for i in 0..self.layers.len() {
            let a = tape.relu(h)?;
            h = Linear::apply(tape, a, w[2 + 2 * i], w[3 + 2 * i])?;
        }
        let n = w.len();
        Linear::apply(tape, h, w[n - 2], w[n - 1])
    }
}

/// A model whose interchangeable units can be permuted.
pub trait Shuffle: Network + Sized {
    /// Copy with two randomly chosen units exchanged.
    fn shuffled(&self, seed: u64) -> Result<Self>;
}

impl Shuffle for Supernet {
    fn shuffled(&self, seed: u64) -> Result<Self> {
        self.shuffle_edges(seed)
    }
}

impl Shuffle for VanillaChain {
    fn shuffled(&self, seed: u64) -> Result<Self> {
        let n = self.layers.len();
        if n < 2 {
            return Err(Error::InvalidArgument("fewer than 2 swappable layers".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let i = rng.below(n);
        let j = (i + 1 + rng.below(n - 1)) % n;
        let mut out = self.clone();
        out.layers.swap(i, j);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShuffleReport {
    pub baseline: f64,
    pub shuffled: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ShuffleReport {
    pub fn from_accuracies(baseline: f64, shuffled: Vec<f64>) -> Self {
        Self { baseline, mean: mean(&shuffled), std: sample_std(&shuffled), shuffled }
    }

    pub fn drop(&self) -> f64 {
        self.baseline - self.mean
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# baseline\t{:.6}\n# mean\t{:.6}\n# std\t{:.6}\ntrial\taccuracy\n",
            self.baseline, self.mean, self.std
        );
        for (t, a) in self.shuffled.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{a:.6}");
        }
        out
    }
}

/// Test accuracy of `model` before and after `trials` independent random
/// swaps of two units.
pub fn edge_shuffle_robustness<M: Shuffle>(
    model: &M,
    data: &Dataset,
    trials: usize,
    seed: u64,
) -> Result<ShuffleReport> {
    if trials < 5 {
        return Err(Error::InvalidArgument(format!("{trials} trials; need at least 5")));
    }
    let baseline = evaluate(model, data, Split::Test)?.0;
    let shuffled = (0..trials)
        .map(|t| {
            let m = model.shuffled(derive_seed(seed, t as u64))?;
            Ok(evaluate(&m, data, Split::Test)?.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShuffleReport::from_accuracies(baseline, shuffled))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpRow {
    pub op: String,
    pub alpha_softmax: f64,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeStrengthReport {
    pub edge: usize,
    pub label: String,
    pub ops: Vec<OpRow>,
    /// Kendall τ-b between softmax α and strength; `None` when either side is all ties.
    pub tau: Option<f64>,
}

/// Softmax α against measured op strength on each of `edges`.
pub fn alpha_vs_strength_report(
    net: &Supernet,
    data: &Dataset,
    cfg: &SelectConfig,
    edges: &[usize],
) -> Result<Vec<EdgeStrengthReport>> {
    edges
        .iter()
        .map(|&e| {
            let strengths = measure_op_strength(net, e, data, cfg)?;
            let w = net.alpha_softmax(e);
            let ops: Vec<OpRow> = strengths
                .iter()
                .map(|s| OpRow { op: s.op.clone(), alpha_softmax: w[s.index], strength: s.accuracy })
                .collect();
            Ok(EdgeStrengthReport {
                edge: e,
                label: net.spec().edges[e].label(),
                tau: tau_of(&ops)?,
                ops,
            })
        })
        .collect()
}

fn tau_of(ops: &[OpRow]) -> Result<Option<f64>> {
    if ops.len() < 2 {
        return Ok(None);
    }
    let a: Vec<f64> = ops.iter().map(|r| r.alpha_softmax).collect();
    let s: Vec<f64> = ops.iter().map(|r| r.strength).collect();
    kendall_tau(&a, &s)
}

pub fn strength_tsv(reports: &[EdgeStrengthReport]) -> String {
    let mut out = String::from("edge\top\talpha_softmax\tstrength\ttau\n");
    for r in reports {
        for o in &r.ops {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{}",
                r.label,
                o.op,
                o.alpha_softmax,
                o.strength,
                opt(r.tau)
            );
        }
    }
    out
}
