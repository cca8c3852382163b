//! Datasets, supernet training (bilevel, fixed-α and randomly smoothed),
//! fine-tuning, evaluation and from-scratch genotype training.

mod dataset;
mod runlog;

pub use dataset::{cache_key, make_dataset, make_dataset_with_ratios, Dataset, DatasetKind, Split};
pub use runlog::{EpochRecord, RunLog};

use std::time::Instant;

use crate::autodiff::{gradient_descent_step, sgd_momentum_step, OptState, Tape, Tensor, Var};
use crate::bench::BenchRecord;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::searchspace::{CellSpec, Genotype};
use crate::supernet::{bind_weights, GenotypeNet, Linear, Network, Supernet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaMode {
    Bilevel,
    /// α held at zero: every edge mixes its ops uniformly.
    FixedZero,
    /// Weight steps see α plus Gaussian noise; the stored α stays clean.
    SdartsRs,
}

impl AlphaMode {
    pub fn name(self) -> &'static str {
        match self {
            AlphaMode::Bilevel => "bilevel",
            AlphaMode::FixedZero => "fixed_zero",
            AlphaMode::SdartsRs => "sdarts_rs",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bilevel" => Some(AlphaMode::Bilevel),
            "fixed_zero" => Some(AlphaMode::FixedZero),
            "sdarts_rs" => Some(AlphaMode::SdartsRs),
            _ => None,
        }
    }
}

/// How often the randomly smoothed mode redraws its α perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RsSchedule {
    PerBatch,
    PerEpoch,
}

impl RsSchedule {
    pub fn name(self) -> &'static str {
        match self {
            RsSchedule::PerBatch => "per_batch",
            RsSchedule::PerEpoch => "per_epoch",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per_batch" => Some(RsSchedule::PerBatch),
            "per_epoch" => Some(RsSchedule::PerEpoch),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_w: f64,
    pub lr_alpha: f64,
    pub momentum: f64,
    pub alpha_mode: AlphaMode,
    pub rs_sigma: f64,
    pub rs_schedule: RsSchedule,
    pub finetune_epochs: usize,
    /// Fine-tuning updates weights only, leaving undecided α untouched.
    pub finetune_w_only: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            lr_w: 0.03,
            lr_alpha: 0.03,
            momentum: 0.9,
            alpha_mode: AlphaMode::Bilevel,
            rs_sigma: 0.0,
            rs_schedule: RsSchedule::PerBatch,
            finetune_epochs: 5,
            finetune_w_only: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.rs_sigma >= 0.0 && self.rs_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "rs_sigma {} must be finite and >= 0",
                self.rs_sigma
            )));
        }
        OptState::new(self.lr_w, self.lr_alpha, self.momentum).map(|_| ())
    }

    fn opt_state(&self) -> Result<OptState> {
        self.validate()?;
        OptState::new(self.lr_w, self.lr_alpha, self.momentum)
    }

    /// Hash of the from-scratch training recipe on `data`.
    pub fn scratch_hash(&self, data: &Dataset) -> String {
        crate::hash_hex(&format!(
            "scratch;data={};split={}/{}/{};epochs={};batch={};lr_w={:016x};momentum={:016x}",
            data.cache_key(),
            data.train.len(),
            data.val.len(),
            data.test.len(),
            self.epochs,
            self.batch_size,
            self.lr_w.to_bits(),
            self.momentum.to_bits()
        ))
    }
}

/// Accuracy and mean cross-entropy of `net` on one split, in a single pass.
/// Ties among logits go to the lowest class index.
pub fn evaluate<N: Network + ?Sized>(net: &N, data: &Dataset, split: Split) -> Result<(f64, f64)> {
    let rows = data.indices(split);
    if rows.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    let (x, labels) = data.batch(rows);
    let mut tape = Tape::new();
    let wv = bind_weights(net, &mut tape, false)?;
    let xv = tape.constant(x)?;
    let z = net.logits(&mut tape, xv, &wv)?;
    let loss = tape.cross_entropy(z, &labels)?;
    let logits = tape.value(z);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok((correct as f64 / labels.len() as f64, tape.value(loss).item()))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Mean cross-entropy of `net` on `rows` and its weight gradients.
fn weight_grads<N: Network + ?Sized>(
    net: &N,
    data: &Dataset,
    rows: &[usize],
    logits: impl FnOnce(&mut Tape, Var, &[Var]) -> Result<Var>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (x, labels) = data.batch(rows);
    let mut tape = Tape::new();
    let wv = bind_weights(net, &mut tape, true)?;
    let xv = tape.constant(x)?;
    let z = logits(&mut tape, xv, &wv)?;
    let loss = tape.cross_entropy(z, &labels)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, wv.iter().map(|&v| grads.wrt(v).to_vec()).collect()))
}

fn apply_weight_step<N: Network + ?Sized>(net: &mut N, grads: &[Vec<f64>], opt: &mut OptState) -> Result<()> {
    let g: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut params = net.weights_mut();
    sgd_momentum_step(&mut params, &g, opt)
}

/// α gradient on a validation batch with the weights held fixed.
fn alpha_step(net: &mut Supernet, data: &Dataset, rows: &[usize], lr: f64) -> Result<()> {
    let (x, labels) = data.batch(rows);
    let mut tape = Tape::new();
    let wv = bind_weights(net, &mut tape, false)?;
    let av = net.bind_alpha(&mut tape, &net.alpha.alpha, true)?;
    let xv = tape.constant(x)?;
    let z = net.logits_with_alpha(&mut tape, xv, &wv, &av)?;
    let loss = tape.cross_entropy(z, &labels)?;
    let grads = tape.backward(loss)?;
    for (e, &v) in av.iter().enumerate() {
        if net.alpha_trainable(e) {
            let g = grads.wrt(v).to_vec();
            gradient_descent_step(&mut net.alpha.alpha[e], &g, lr)?;
        }
    }
    Ok(())
}

fn record(net: &Supernet, data: &Dataset, epoch: usize, train_loss: f64, start: Instant) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        train_loss,
        val_accuracy: evaluate(net, data, Split::Val)?.0,
        alpha: net.alpha.alpha.clone(),
        skip_conv_gap: net.skip_conv_gap().ok(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Shared epoch loop of search and fine-tuning.
fn run_epochs(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    update_alpha: bool,
    log: &mut RunLog,
    start: Instant,
    on_epoch: &mut dyn FnMut(&Supernet, &EpochRecord) -> Result<()>,
) -> Result<()> {
    let mut opt = cfg.opt_state()?;
    let smoothing = (cfg.alpha_mode == AlphaMode::SdartsRs).then_some((cfg.rs_sigma, cfg.rs_schedule));
    // One unconditional draw keeps the batch stream independent of sigma.
    let mut noise_rng = SplitMix64::new(net.rng_mut().next_u64());
    let first_epoch = log.last().map_or(1, |r| r.epoch + 1);
    for epoch in first_epoch..first_epoch + epochs {
        let train_order = net.rng_mut().permutation(data.train.len());
        let train_rows: Vec<usize> = train_order.iter().map(|&i| data.train[i]).collect();
        let val_batches = if update_alpha {
            let val_order = net.rng_mut().permutation(data.val.len());
            let rows: Vec<usize> = val_order.iter().map(|&i| data.val[i]).collect();
            batches(&rows, cfg.batch_size)
        } else {
            Vec::new()
        };
        let mut epoch_noise: Option<Vec<Vec<f64>>> = None;
        let mut loss_sum = 0.0;
        let train_batches = batches(&train_rows, cfg.batch_size);
        for (b, rows) in train_batches.iter().enumerate() {
            let (loss, grads) = match smoothing {
                Some((sigma, schedule)) if sigma > 0.0 => {
                    let fresh = schedule == RsSchedule::PerBatch || epoch_noise.is_none();
                    if fresh {
                        epoch_noise = Some(
                            net.alpha
                                .alpha
                                .iter()
                                .map(|row| row.iter().map(|_| sigma * noise_rng.normal()).collect())
                                .collect(),
                        );
                    }
                    let noise = epoch_noise.as_ref().expect("noise drawn");
                    let perturbed: Vec<Vec<f64>> = net
                        .alpha
                        .alpha
                        .iter()
                        .zip(noise)
                        .map(|(a, n)| a.iter().zip(n).map(|(x, y)| x + y).collect())
                        .collect();
                    let snapshot = &*net;
                    weight_grads(snapshot, data, rows, |tape, x, wv| {
                        let av = snapshot.bind_alpha(tape, &perturbed, false)?;
                        snapshot.logits_with_alpha(tape, x, wv, &av)
                    })?
                }
                _ => {
                    let snapshot = &*net;
                    weight_grads(snapshot, data, rows, |tape, x, wv| snapshot.logits(tape, x, wv))?
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss;
            apply_weight_step(net, &grads, &mut opt).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { epoch },
                other => other,
            })?;
            if update_alpha {
                let vb = &val_batches[b % val_batches.len()];
                alpha_step(net, data, vb, cfg.lr_alpha).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFiniteLoss { epoch },
                    other => other,
                })?;
            }
        }
        let mean_loss = loss_sum / train_batches.len() as f64;
        log.push(record(net, data, epoch, mean_loss, start)?)?;
        on_epoch(net, log.last().expect("just pushed"))?;
    }
    Ok(())
}

/// First-order alternating optimization: per train batch one weight step with
/// α fixed, then one α step on a validation batch with the weights fixed.
/// The returned log starts with the untrained state at epoch 0.
pub fn bilevel_train(net: &mut Supernet, data: &Dataset, cfg: &TrainConfig) -> Result<RunLog> {
    bilevel_train_with(net, data, cfg, |_, _| Ok(()))
}

/// [`bilevel_train`] calling `on_epoch` after every logged epoch, epoch 0
/// included.
pub fn bilevel_train_with(
    net: &mut Supernet,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Supernet, &EpochRecord) -> Result<()>,
) -> Result<RunLog> {
    cfg.validate()?;
    check_compatible(net, data)?;
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if cfg.alpha_mode == AlphaMode::FixedZero {
        for row in &mut net.alpha.alpha {
            row.iter_mut().for_each(|a| *a = 0.0);
        }
        net.alpha.frozen = true;
    }
    let update_alpha = cfg.alpha_mode != AlphaMode::FixedZero && !net.alpha.frozen;
    if update_alpha && data.val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    let start = Instant::now();
    let mut log = RunLog::new();
    let init_loss = evaluate(net, data, Split::Train)?.1;
    log.push(record(net, data, 0, init_loss, start)?)?;
    on_epoch(net, log.last().expect("just pushed"))?;
    run_epochs(net, data, cfg, cfg.epochs, update_alpha, &mut log, start, &mut on_epoch)?;
    Ok(log)
}

/// Continues training a (partly decided) supernet for `epochs`. Undecided α
/// keep updating unless `cfg.finetune_w_only`; decided and pruned edges only
/// see weight updates. Zero epochs leave the network untouched.
pub fn fine_tune(net: &mut Supernet, data: &Dataset, epochs: usize, cfg: &TrainConfig) -> Result<RunLog> {
    let mut log = RunLog::new();
    if epochs == 0 {
        return Ok(log);
    }
    cfg.validate()?;
    check_compatible(net, data)?;
    let update_alpha = !cfg.finetune_w_only
        && !net.alpha.frozen
        && (0..net.spec().edges.len()).any(|e| net.alpha_trainable(e));
    if update_alpha && data.val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    run_epochs(net, data, cfg, epochs, update_alpha, &mut log, Instant::now(), &mut |_, _| Ok(()))?;
    Ok(log)
}

fn check_compatible<N: Network + ?Sized>(net: &N, data: &Dataset) -> Result<()> {
    if net.input_dim() != data.dim() {
        return Err(Error::ConfigMismatch {
            expected: format!("input dimension {}", net.input_dim()),
            found: format!("{}", data.dim()),
        });
    }
    if net.num_classes() != data.classes {
        return Err(Error::ConfigMismatch {
            expected: format!("{} classes", net.num_classes()),
            found: format!("{}", data.classes),
        });
    }
    Ok(())
}

/// Plain minibatch SGD on the weights of any network; returns the mean train
/// loss of each epoch.
pub fn train_weights<N: Network + ?Sized>(
    net: &mut N,
    data: &Dataset,
    cfg: &TrainConfig,
    epochs: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<f64>> {
    check_compatible(net, data)?;
    if data.train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    let mut opt = cfg.opt_state()?;
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let order = rng.permutation(data.train.len());
        let rows: Vec<usize> = order.iter().map(|&i| data.train[i]).collect();
        let mut sum = 0.0;
        let bs = batches(&rows, cfg.batch_size);
        for b in &bs {
            let snapshot = &*net;
            let (loss, grads) = weight_grads(snapshot, data, b, |tape, x, wv| snapshot.logits(tape, x, wv))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            sum += loss;
            apply_weight_step(net, &grads, &mut opt)?;
        }
        losses.push(sum / bs.len() as f64);
    }
    Ok(losses)
}

/// Trains `genotype` from fresh weights with the fixed recipe in `cfg`
/// (`cfg.epochs` weight-only epochs) and reports val/test accuracy.
pub fn train_from_scratch(
    spec: &CellSpec,
    genotype: &Genotype,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BenchRecord> {
    let start = Instant::now();
    let mut net = GenotypeNet::new(spec, genotype, data.dim(), data.classes, seed)?;
    let mut rng = SplitMix64::new(derive_seed(seed, 4));
    train_weights(&mut net, data, cfg, cfg.epochs, &mut rng)?;
    let val = evaluate(&net, data, Split::Val)?.0;
    let test = evaluate(&net, data, Split::Test)?.0;
    Ok(BenchRecord::from_runs(
        genotype.to_string(),
        cfg.scratch_hash(data),
        &[(seed, val, test)],
        start.elapsed().as_secs_f64(),
    ))
}

/// Affine classifier on the raw inputs. Reference model for genotypes whose
/// cell collapses to an affine map.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearModel {
    pub fn new(input_dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(derive_seed(seed, 1));
        Self {
            weight: Tensor::uniform_init(&[input_dim, classes], input_dim, &mut rng),
            bias: Tensor::uniform_init(&[classes], input_dim, &mut rng),
        }
    }
}

impl Network for LinearModel {
    fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    fn weights(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn weights_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn logits(&self, tape: &mut Tape, x: Var, w: &[Var]) -> Result<Var> {
        Linear::apply(tape, x, w[0], w[1])
    }
}

#[cfg(test)]
mod tests;
