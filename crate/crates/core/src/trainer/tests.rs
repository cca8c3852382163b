use super::*;
use crate::searchspace::{build_space, SpaceVariant};
use crate::supernet::predict;
use crate::searchspace::OpKind;
use crate::toy::ToySetup;

fn small() -> (Supernet, Dataset) {
    let spec = build_space(SpaceVariant::S2p, 2, 2, 4, None).unwrap();
    let data = make_dataset(DatasetKind::Spirals, 150, 3, 0.1, 3).unwrap();
    (Supernet::new(spec, 2, 3, 5), data)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..TrainConfig::default() }
}

fn weight_bits(net: &Supernet) -> Vec<u64> {
    net.weights()
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn alpha_bits(net: &Supernet) -> Vec<u64> {
    net.alpha.flat().iter().map(|v| v.to_bits()).collect()
}

fn strip_times(mut log: RunLog) -> RunLog {
    log.records.iter_mut().for_each(|r| r.wall_time = 0.0);
    log
}

#[test]
fn fixed_zero_alpha_stays_exactly_zero() {
    let (mut net, data) = small();
    net.alpha.alpha[0] = vec![0.7, -0.1];
    let cfg = TrainConfig { alpha_mode: AlphaMode::FixedZero, ..quick(4) };
    let log = bilevel_train(&mut net, &data, &cfg).unwrap();
    assert_eq!(log.len(), 5);
    for r in &log.records {
        assert!(r.alpha.iter().flatten().all(|a| a.to_bits() == 0));
    }
    for e in 0..5 {
        assert_eq!(net.alpha_softmax(e), vec![0.5, 0.5]);
    }
}

#[test]
fn weight_step_keeps_alpha_and_alpha_step_keeps_weights() {
    let (mut net, data) = small();
    net.alpha.alpha[1] = vec![0.2, -0.4];
    let rows = &data.train[..16];

    let a0 = alpha_bits(&net);
    let w0 = weight_bits(&net);
    let snapshot = net.clone();
    let (_, grads) = weight_grads(&snapshot, &data, rows, |t, x, wv| snapshot.logits(t, x, wv)).unwrap();
    let mut opt = quick(1).opt_state().unwrap();
    apply_weight_step(&mut net, &grads, &mut opt).unwrap();
    assert_eq!(alpha_bits(&net), a0);
    assert_ne!(weight_bits(&net), w0);

    let w1 = weight_bits(&net);
    alpha_step(&mut net, &data, &data.val[..16], 0.5).unwrap();
    assert_eq!(weight_bits(&net), w1);
    assert_ne!(alpha_bits(&net), a0);
}

#[test]
fn zero_alpha_gradient_leaves_alpha_unchanged() {
    let (mut net, data) = small();
    net.alpha.alpha[2] = vec![0.3, 0.1];
    // a zero head makes the logits independent of every edge
    let n = net.weights().len();
    net.weights_mut()[n - 2].data_mut().fill(0.0);
    let before = alpha_bits(&net);
    alpha_step(&mut net, &data, &data.val[..20], 1.0).unwrap();
    assert_eq!(alpha_bits(&net), before);
}

#[test]
fn smoothing_with_zero_sigma_is_plain_bilevel() {
    let (net, data) = small();
    let mut a = net.clone();
    let mut b = net;
    let base = quick(3);
    let la = bilevel_train(&mut a, &data, &base).unwrap();
    let rs = TrainConfig { alpha_mode: AlphaMode::SdartsRs, rs_sigma: 0.0, ..base };
    let lb = bilevel_train(&mut b, &data, &rs).unwrap();
    assert_eq!(strip_times(la), strip_times(lb));
    assert_eq!(a.to_checkpoint(), b.to_checkpoint());
}

#[test]
fn smoothing_keeps_stored_alpha_clean_but_changes_weights() {
    let (net, data) = small();
    let mut a = net.clone();
    let mut b = net;
    bilevel_train(&mut a, &data, &quick(2)).unwrap();
    let rs = TrainConfig { alpha_mode: AlphaMode::SdartsRs, rs_sigma: 0.5, ..quick(2) };
    bilevel_train(&mut b, &data, &rs).unwrap();
    assert_ne!(weight_bits(&a), weight_bits(&b));
    let per_epoch = TrainConfig { rs_schedule: RsSchedule::PerEpoch, ..rs };
    let mut c = Supernet::new(a.spec().clone(), 2, 3, 5);
    bilevel_train(&mut c, &data, &per_epoch).unwrap();
    assert_ne!(weight_bits(&b), weight_bits(&c));
}

#[test]
fn fine_tune_zero_epochs_is_identity() {
    let (mut net, data) = small();
    bilevel_train(&mut net, &data, &quick(2)).unwrap();
    let before = net.to_checkpoint();
    let log = fine_tune(&mut net, &data, 0, &quick(2)).unwrap();
    assert!(log.is_empty());
    assert_eq!(net.to_checkpoint(), before);
}

#[test]
fn fine_tune_w_only_leaves_alpha() {
    let (mut net, data) = small();
    net.alpha.alpha[0] = vec![0.1, 0.2];
    let before = alpha_bits(&net);
    let cfg = TrainConfig { finetune_w_only: true, ..quick(1) };
    fine_tune(&mut net, &data, 2, &cfg).unwrap();
    assert_eq!(alpha_bits(&net), before);
}

#[test]
fn decided_edges_keep_their_alpha_during_fine_tune() {
    let (mut net, data) = small();
    net.alpha.alpha[3] = vec![0.4, -0.4];
    net.discretize_edge(3, OpKind::Skip).unwrap();
    fine_tune(&mut net, &data, 2, &quick(1)).unwrap();
    assert_eq!(net.alpha.alpha[3], vec![0.4, -0.4]);
    assert_ne!(net.alpha.alpha[0], vec![0.0, 0.0]);
}

#[test]
fn evaluate_matches_hand_count() {
    let (net, data) = small();
    let rows: Vec<usize> = data.test[..10].to_vec();
    let fixture = Dataset { test: rows.clone(), ..data.clone() };
    let (x, labels) = data.batch(&rows);
    let logits = predict(&net, &x).unwrap();
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    let (acc, loss) = evaluate(&net, &fixture, Split::Test).unwrap();
    assert_eq!(acc, correct as f64 / 10.0);
    assert_eq!(evaluate(&net, &fixture, Split::Test).unwrap(), (acc, loss));
}

#[test]
fn untrained_supernet_is_near_chance() {
    let toy = ToySetup::default();
    let data = toy.dataset().unwrap();
    for seed in 0..5 {
        let net = Supernet::new(toy.space().unwrap(), 2, 3, seed);
        let (acc, _) = evaluate(&net, &data, Split::Test).unwrap();
        assert!((acc - 1.0 / 3.0).abs() <= 0.1, "seed {seed}: {acc}");
    }
}

#[test]
fn empty_split_is_an_error() {
    let (mut net, data) = small();
    let no_val = Dataset { val: vec![], ..data };
    assert!(matches!(evaluate(&net, &no_val, Split::Val), Err(Error::EmptySplit("val"))));
    assert!(bilevel_train(&mut net, &no_val, &quick(1)).is_err());
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (mut net, _) = small();
    let two_class = make_dataset(DatasetKind::Moons, 100, 2, 0.1, 1).unwrap();
    assert!(matches!(
        bilevel_train(&mut net, &two_class, &quick(1)),
        Err(Error::ConfigMismatch { .. })
    ));
}

#[test]
fn divergence_reports_the_epoch() {
    let (mut net, data) = small();
    let cfg = TrainConfig { lr_w: 1e6, momentum: 0.0, ..quick(50) };
    match bilevel_train(&mut net, &data, &cfg) {
        Err(Error::NonFiniteLoss { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn toy_runs_improve_and_grow_the_skip_gap() {
    let toy = ToySetup::default();
    let data = toy.dataset().unwrap();
    let mut grew = 0;
    for seed in 0..5 {
        let mut net = Supernet::new(toy.space().unwrap(), 2, 3, seed);
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let log = bilevel_train(&mut net, &data, &cfg).unwrap();
        let (first, last) = (log.first().unwrap(), log.last().unwrap());
        if last.val_accuracy > first.val_accuracy && last.skip_conv_gap.unwrap() > first.skip_conv_gap.unwrap() {
            grew += 1;
        }
    }
    assert!(grew >= 4, "grew in {grew}/5");
}

#[test]
#[ignore = "does not hold at the toy defaults: 5 epochs recover about half of the drop"]
fn five_epochs_recover_most_of_a_discretization_drop() {
    let toy = ToySetup::default();
    let data = toy.dataset().unwrap();
    let cfg = TrainConfig::default();
    let mut recovered = 0;
    for seed in 0..5 {
        let mut net = Supernet::new(toy.space().unwrap(), 2, 3, seed);
        bilevel_train(&mut net, &data, &TrainConfig { seed, ..cfg.clone() }).unwrap();
        let base = evaluate(&net, &data, Split::Val).unwrap().0;
        // the op with the smaller weight gives the larger drop
        let w = net.alpha_softmax(0);
        let op = if w[0] < w[1] { OpKind::Skip } else { OpKind::DenseRelu };
        net.discretize_edge(0, op).unwrap();
        let dropped = evaluate(&net, &data, Split::Val).unwrap().0;
        fine_tune(&mut net, &data, 5, &cfg).unwrap();
        let after = evaluate(&net, &data, Split::Val).unwrap().0;
        if base - dropped <= 0.0 || after - dropped >= 0.9 * (base - dropped) {
            recovered += 1;
        }
    }
    assert!(recovered >= 4, "recovered in {recovered}/5");
}

#[test]
fn fine_tune_of_discretized_supernet_lowers_train_loss() {
    let toy = ToySetup::default();
    let data = toy.dataset().unwrap();
    let genotype = Genotype::parse("dense_relu@0->2;skip@1->2;skip@0->3;dense_relu@2->3", &toy.space().unwrap()).unwrap();
    let mut monotone = 0;
    for seed in 0..5 {
        let mut net = Supernet::new(toy.space().unwrap(), 2, 3, seed);
        for g in genotype.edges() {
            let e = net.spec().edge_index(g.source, g.target).unwrap();
            net.discretize_edge(e, g.op).unwrap();
        }
        net.prune_node_inputs(3, &[net.spec().edge_index(0, 3).unwrap(), net.spec().edge_index(2, 3).unwrap()])
            .unwrap();
        let log = fine_tune(&mut net, &data, 3, &TrainConfig::default()).unwrap();
        let l: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
        if l.windows(2).all(|w| w[1] < w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone >= 4, "monotone in {monotone}/5");
}

#[test]
fn scratch_training_is_deterministic() {
    let toy = ToySetup::default();
    let spec = toy.space().unwrap();
    let data = toy.dataset().unwrap();
    let g = Genotype::parse("dense_relu@0->2;skip@1->2;skip@0->3;dense_relu@2->3", &spec).unwrap();
    let cfg = quick(20);
    let a = train_from_scratch(&spec, &g, &data, &cfg, 3).unwrap();
    let b = train_from_scratch(&spec, &g, &data, &cfg, 3).unwrap();
    assert_eq!(a.to_line(), b.to_line());
}

#[test]
fn all_skip_genotype_matches_a_linear_classifier() {
    let toy = ToySetup::default();
    let spec = toy.space().unwrap();
    let data = toy.dataset().unwrap();
    let g = Genotype::parse("skip@0->2;skip@1->2;skip@0->3;skip@1->3", &spec).unwrap();
    let cfg = TrainConfig { epochs: 300, lr_w: 0.05, ..TrainConfig::default() };
    for seed in 0..3 {
        let rec = train_from_scratch(&spec, &g, &data, &cfg, seed).unwrap();
        let mut linear = LinearModel::new(2, 3, seed);
        let mut rng = SplitMix64::new(derive_seed(seed, 4));
        train_weights(&mut linear, &data, &cfg, cfg.epochs, &mut rng).unwrap();
        let baseline = evaluate(&linear, &data, Split::Test).unwrap().0;
        assert!((rec.mean_test - baseline).abs() <= 0.05, "{} vs {baseline}", rec.mean_test);
    }
}

#[test]
fn noise_fed_genotype_stays_at_chance() {
    let toy = ToySetup::default();
    let spec = build_space(SpaceVariant::S4p, 2, 2, 12, None).unwrap();
    let data = toy.dataset().unwrap();
    let g = Genotype::parse("noise@0->2;noise@1->2;noise@0->3;noise@1->3", &spec).unwrap();
    let cfg = TrainConfig { epochs: 100, ..TrainConfig::default() };
    let rec = train_from_scratch(&spec, &g, &data, &cfg, 1).unwrap();
    assert!(rec.mean_test <= 1.0 / 3.0 + 0.1, "{}", rec.mean_test);
}

#[test]
fn config_validation() {
    assert!(TrainConfig { batch_size: 0, ..quick(1) }.validate().is_err());
    assert!(TrainConfig { rs_sigma: -0.1, ..quick(1) }.validate().is_err());
    assert!(TrainConfig { momentum: 1.0, ..quick(1) }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn mode_names_round_trip() {
    for m in [AlphaMode::Bilevel, AlphaMode::FixedZero, AlphaMode::SdartsRs] {
        assert_eq!(AlphaMode::from_name(m.name()), Some(m));
    }
    for s in [RsSchedule::PerBatch, RsSchedule::PerEpoch] {
        assert_eq!(RsSchedule::from_name(s.name()), Some(s));
    }
}
