use super::*;
use crate::rng::SplitMix64;
use crate::searchspace::{build_space, SpaceVariant};

fn s2p_net(seed: u64) -> Supernet {
    let spec = build_space(SpaceVariant::S2p, 2, 2, 4, None).unwrap();
    Supernet::new(spec, 2, 3, seed)
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn skip_zero_pool_halves_the_input() {
    let spec = build_space(SpaceVariant::S3p, 2, 2, 4, None).unwrap();
    let mut net = Supernet::new(spec, 2, 3, 1);
    // mask dense_relu so the pool is effectively {zero, skip}
    net.mask_op(0, 2).unwrap();
    let x = random_batch(5, 4, 2);
    let y = net.mixed_edge_forward(0, &x).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - 0.5 * b).abs() < 1e-15);
    }
}

#[test]
fn equal_outputs_mix_to_the_same_output() {
    let spec = build_space(SpaceVariant::Full, 2, 2, 4, None).unwrap();
    let mut net = Supernet::new(spec, 2, 3, 1);
    let edge = 0;
    // identity weights, zero bias: dense == dense_relu == skip on positive input
    for k in [3, 4] {
        let l = net.op_weights_mut(edge, k).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                l.weight.data_mut()[i * 4 + j] = if i == j { 1.0 } else { 0.0 };
            }
        }
        l.bias.data_mut().fill(0.0);
    }
    for k in [1, 2, 5] {
        net.mask_op(edge, k).unwrap();
    }
    let x = Tensor::matrix(2, 4, vec![0.5, 1.0, 2.0, 3.0, 0.1, 0.2, 0.3, 0.4]).unwrap();
    let y = net.mixed_edge_forward(edge, &x).unwrap();
    assert!(max_abs_diff(&y, &x) < 1e-15);
}

#[test]
fn masking_renormalizes_the_mixture() {
    let spec = build_space(SpaceVariant::S3p, 2, 2, 4, None).unwrap();
    let mut net = Supernet::new(spec, 2, 3, 1);
    net.mask_op(0, 1).unwrap();
    assert_eq!(net.alpha_softmax(0), vec![0.5, 0.0, 0.5]);
    net.set_mask_mode(MaskMode::ZeroOut);
    let w = net.alpha_softmax(0);
    assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && w[1] == 0.0);
}

#[test]
fn mask_then_unmask_is_bit_identical() {
    let mut net = s2p_net(4);
    net.alpha.alpha[2] = vec![0.3, -0.2];
    let x = random_batch(6, 2, 9);
    let before = predict(&net, &x).unwrap();
    let snapshot = net.clone();
    net.mask_op(2, 0).unwrap();
    assert_ne!(predict(&net, &x).unwrap(), before);
    net.unmask_op(2, 0).unwrap();
    assert_eq!(predict(&net, &x).unwrap(), before);
    assert_eq!(net, snapshot);
}

#[test]
fn single_op_support_returns_that_op() {
    let mut net = s2p_net(5);
    net.alpha.alpha[1] = vec![2.0, -1.0];
    net.mask_op(1, 0).unwrap();
    let x = random_batch(4, 4, 1);
    let y = net.mixed_edge_forward(1, &x).unwrap();
    let o = net.op_forward(1, 1, &x).unwrap();
    assert_eq!(y, o);
}

#[test]
fn masking_last_op_is_rejected() {
    let mut net = s2p_net(5);
    net.mask_op(0, 0).unwrap();
    assert!(net.mask_op(0, 1).is_err());
}

#[test]
fn masking_change_is_bounded_by_weight_times_deviation() {
    let mut net = s2p_net(6);
    net.alpha.alpha[3] = vec![0.7, -0.4];
    let x = random_batch(8, 4, 3);
    let mixed = net.mixed_edge_forward(3, &x).unwrap();
    let w = net.alpha_softmax(3);
    for k in 0..2 {
        let ok = net.op_forward(3, k, &x).unwrap();
        let bound = w[k] * max_abs_diff(&ok, &mixed);
        let mut masked = net.clone();
        masked.mask_op(3, k).unwrap();
        let y = masked.mixed_edge_forward(3, &x).unwrap();
        // renormalized two-op mixture: the change is w_k/(1-w_k) * |o_k - m|
        let change = max_abs_diff(&y, &mixed);
        assert!(change <= bound / (1.0 - w[k]) + 1e-12, "{change} vs {bound}");
    }
}

#[test]
fn discretize_to_skip_is_identity() {
    let mut net = s2p_net(7);
    net.discretize_edge(0, OpKind::Skip).unwrap();
    let x = random_batch(3, 4, 4);
    assert_eq!(net.mixed_edge_forward(0, &x).unwrap(), x);
    assert!(net.discretize_edge(0, OpKind::DenseRelu).is_err());
    assert!(!net.alpha_trainable(0));
    assert!(net.mask_op(0, 1).is_err());
}

#[test]
fn zero_op_is_not_selectable() {
    let spec = build_space(SpaceVariant::S3p, 2, 2, 4, None).unwrap();
    let mut net = Supernet::new(spec, 2, 3, 1);
    assert!(net.discretize_edge(0, OpKind::Zero).is_err());
    assert!(net.discretize_edge(0, OpKind::Noise).is_err());
}

#[test]
fn fully_decided_supernet_matches_genotype_network() {
    let mut net = s2p_net(8);
    net.alpha.alpha[0] = vec![0.1, 0.9];
    let ops = [OpKind::Skip, OpKind::DenseRelu, OpKind::DenseRelu, OpKind::Skip, OpKind::DenseRelu];
    for (e, op) in ops.into_iter().enumerate() {
        net.discretize_edge(e, op).unwrap();
    }
    let node3 = 3;
    let inputs = net.spec().input_edges(node3);
    net.prune_node_inputs(node3, &[inputs[0], inputs[2]]).unwrap();
    let g = net.decided_genotype().unwrap();
    assert_eq!(g.to_string(), "skip@0->2;dense_relu@1->2;dense_relu@0->3;dense_relu@2->3");
    let standalone = GenotypeNet::from_supernet(&net).unwrap();
    let x = random_batch(7, 2, 5);
    let a = predict(&net, &x).unwrap();
    let b = predict(&standalone, &x).unwrap();
    assert!(max_abs_diff(&a, &b) <= 1e-12);
}

#[test]
fn prune_rules() {
    let mut net = s2p_net(9);
    assert!(net.prune_node_inputs(2, &[0, 1]).is_err(), "node 2 has only two inputs");
    assert!(net.prune_node_inputs(3, &[2]).is_err());
    assert!(net.prune_node_inputs(3, &[2, 9]).is_err());
    net.prune_node_inputs(3, &[2, 4]).unwrap();
    assert!(net.is_pruned(3));
    let x = random_batch(4, 2, 1);
    assert_eq!(predict(&net, &x).unwrap().shape(), &[4, 3]);
    assert!(net.prune_node_inputs(3, &[2, 4]).is_err());
}

#[test]
fn pruning_a_muted_edge_changes_nothing() {
    let mut net = s2p_net(10);
    let x = random_batch(5, 2, 2);
    let mut muted = net.clone();
    muted.mute_edge(3).unwrap();
    let reference = predict(&muted, &x).unwrap();
    net.prune_node_inputs(3, &[2, 4]).unwrap();
    assert_eq!(predict(&net, &x).unwrap(), reference);
}

#[test]
fn swapping_identical_edges_is_invisible() {
    let mut net = s2p_net(11);
    let w = net.op_weights(2, 1).unwrap().clone();
    *net.op_weights_mut(3, 1).unwrap() = w;
    net.alpha.alpha[2] = vec![0.2, 0.1];
    net.alpha.alpha[3] = vec![0.2, 0.1];
    let x = random_batch(5, 2, 3);
    let before = predict(&net, &x).unwrap();
    let mut swapped = net.clone();
    swapped.swap_edges(2, 3);
    assert_eq!(predict(&swapped, &x).unwrap(), before);
}

#[test]
fn shuffle_is_deterministic_and_leaves_original() {
    let net = s2p_net(12);
    let snapshot = net.clone();
    let a = net.shuffle_edges(77).unwrap();
    let b = net.shuffle_edges(77).unwrap();
    assert_eq!(a, b);
    assert_eq!(net, snapshot);
    assert_ne!(a, net);
}

#[test]
fn shuffle_needs_a_compatible_pair() {
    let spec = build_space(SpaceVariant::S2p, 1, 1, 4, None).unwrap();
    let net = Supernet::new(spec, 2, 3, 1);
    assert!(net.shuffle_edges(1).is_err());
}

#[test]
fn skip_conv_gap_limits() {
    let mut net = s2p_net(13);
    assert_eq!(net.skip_conv_gap().unwrap(), 0.0);
    for row in &mut net.alpha.alpha {
        *row = vec![60.0, 0.0];
    }
    assert!((net.skip_conv_gap().unwrap() - 1.0).abs() < 1e-12);
    let full = Supernet::new(build_space(SpaceVariant::Full, 2, 2, 4, None).unwrap(), 2, 3, 1);
    assert!(full.skip_conv_gap().is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut net = s2p_net(14);
    net.alpha.alpha[1] = vec![0.123456789, -1.5e-7];
    net.discretize_edge(0, OpKind::DenseRelu).unwrap();
    net.prune_node_inputs(3, &[2, 4]).unwrap();
    net.mask_op(1, 1).unwrap();
    let text = net.to_checkpoint();
    let back = Supernet::from_checkpoint(&text, net.spec()).unwrap();
    assert_eq!(back, net);
    assert_eq!(back.to_checkpoint(), text);
}

#[test]
fn checkpoint_rejects_other_space() {
    let net = s2p_net(15);
    let other = build_space(SpaceVariant::S3p, 2, 2, 4, None).unwrap();
    assert!(Supernet::from_checkpoint(&net.to_checkpoint(), &other).is_err());
}

#[test]
fn forward_shape_is_stable() {
    let mut net = s2p_net(16);
    let x = random_batch(9, 2, 1);
    assert_eq!(predict(&net, &x).unwrap().shape(), &[9, 3]);
    net.mask_op(0, 0).unwrap();
    net.discretize_edge(1, OpKind::Skip).unwrap();
    assert_eq!(predict(&net, &x).unwrap().shape(), &[9, 3]);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mixture_is_convex(seed in 0u64..10_000, a0 in -3.0f64..3.0, a1 in -3.0f64..3.0) {
            let spec = build_space(SpaceVariant::Full, 2, 1, 3, None).unwrap();
            let mut net = Supernet::new(spec, 2, 3, seed);
            net.alpha.alpha[0][3] = a0;
            net.alpha.alpha[0][4] = a1;
            let x = random_batch(4, 3, seed + 1);
            let y = net.mixed_edge_forward(0, &x).unwrap();
            let outs: Vec<Tensor> = (0..6).map(|k| net.op_forward(0, k, &x).unwrap()).collect();
            let w = net.alpha_softmax(0);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for i in 0..y.numel() {
                let lo = outs.iter().map(|o| o.data()[i]).fold(f64::INFINITY, f64::min);
                let hi = outs.iter().map(|o| o.data()[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(y.data()[i] >= lo - 1e-12 && y.data()[i] <= hi + 1e-12);
            }
        }

        #[test]
        fn weights_sum_to_one_under_masks(seed in 0u64..1000, bits in 1u8..63) {
            let spec = build_space(SpaceVariant::Full, 2, 1, 3, None).unwrap();
            let mut net = Supernet::new(spec, 2, 3, seed);
            let mut rng = SplitMix64::new(seed);
            for v in net.alpha.alpha[0].iter_mut() {
                *v = rng.normal() * 3.0;
            }
            for k in 0..6 {
                if bits & (1 << k) != 0 {
                    net.mask_op(0, k).unwrap();
                }
            }
            let w = net.alpha_softmax(0);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
        }
    }
}
