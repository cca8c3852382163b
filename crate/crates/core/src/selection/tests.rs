use super::*;
use crate::searchspace::{build_space, enumerate_genotypes, SpaceVariant};
use crate::supernet::Linear;
use crate::autodiff::Tensor;
use crate::testutil::trained_toys;
use crate::trainer::{make_dataset, DatasetKind};

fn small() -> (Supernet, Dataset) {
    let spec = build_space(SpaceVariant::S2p, 2, 2, 4, None).unwrap();
    let data = make_dataset(DatasetKind::Spirals, 150, 3, 0.1, 3).unwrap();
    (Supernet::new(spec, 2, 3, 5), data)
}

fn quick_cfg(finetune: usize, seed: u64) -> SelectConfig {
    SelectConfig::new(TrainConfig { finetune_epochs: finetune, ..TrainConfig::default() }, seed)
}

fn cand(index: usize, score: f64, alpha: f64) -> Candidate {
    Candidate { index, label: String::new(), score: Some(score), alpha }
}

#[test]
fn one_hot_alpha_gives_that_op_everywhere() {
    let (mut net, _) = small();
    for row in net.alpha.alpha.iter_mut() {
        *row = vec![0.0, 5.0];
    }
    let g = magnitude_select(&net).unwrap();
    assert!(g.edges().iter().all(|e| e.op == OpKind::DenseRelu));
}

#[test]
fn all_zero_alpha_takes_lowest_indices() {
    let (net, _) = small();
    let g = magnitude_select(&net).unwrap();
    assert!(g.edges().iter().all(|e| e.op == OpKind::Skip));
    assert_eq!(g.retained(3), vec![0, 1]);
}

#[test]
fn perturbation_keeps_the_op_whose_removal_hurts_most() {
    // from 0.80: removing op 0 gives 0.60, removing op 1 gives 0.79
    assert_eq!(pick_by_score(&[cand(0, 0.60, 0.1), cand(1, 0.79, 0.9)]), 0);
    assert_eq!(pick_by_score(&[cand(0, 0.79, 0.9), cand(1, 0.60, 0.1)]), 1);
}

#[test]
fn perturbation_ties_go_to_larger_alpha_then_lower_index() {
    assert_eq!(pick_by_score(&[cand(0, 0.5, 0.1), cand(1, 0.5, 0.3)]), 1);
    assert_eq!(pick_by_score(&[cand(0, 0.5, 0.2), cand(1, 0.5, 0.2)]), 0);
}

#[test]
fn topology_keeps_the_two_lowest() {
    assert_eq!(two_lowest(&[(0, 0.50), (1, 0.80), (2, 0.79)]), vec![0, 2]);
    assert_eq!(two_lowest(&[(4, 0.7), (2, 0.7), (3, 0.7)]), vec![2, 3]);
}

#[test]
fn discretized_supernet_passes_through() {
    let (mut net, data) = small();
    for e in 0..5 {
        net.discretize_edge(e, OpKind::DenseRelu).unwrap();
    }
    let before = net.to_checkpoint();
    let (ops, trace) = pt_select_operations(&mut net, &data, &quick_cfg(2, 0)).unwrap();
    assert!(trace.decisions.is_empty());
    assert_eq!(ops.len(), 5);
    assert_eq!(net.to_checkpoint(), before);
}

#[test]
fn topology_needs_a_finished_operation_phase() {
    let (mut net, data) = small();
    assert!(pt_select_topology(&mut net, &data, &quick_cfg(0, 0)).is_err());
}

#[test]
fn masked_scoring_restores_the_supernet() {
    let (mut net, data) = small();
    net.alpha.alpha[3] = vec![0.4, -0.2];
    let before = net.to_checkpoint();
    let mut scored: Vec<Candidate> = candidates(&net, 3)
        .iter()
        .map(|&(k, op, a)| Candidate { index: k, label: op.tag().into(), score: None, alpha: a })
        .collect();
    score_ops(&mut net, &data, 3, &mut scored).unwrap();
    assert!(scored.iter().all(|c| c.score.is_some()));
    assert_eq!(net.to_checkpoint(), before);
}

#[test]
fn pt_trace_is_complete_and_checkable() {
    let (mut net, data) = small();
    let spec = net.spec().clone();
    let (g, trace) = pt_select(&mut net, &data, &quick_cfg(1, 3)).unwrap();
    assert!(enumerate_genotypes(&spec, 100).unwrap().contains(&g));

    assert_eq!(trace.phase(Phase::Operation).count(), 5);
    assert_eq!(trace.phase(Phase::Topology).count(), 2);
    for (i, d) in trace.decisions.iter().enumerate() {
        assert_eq!(d.step, i);
        assert_eq!(d.alpha.len(), 5);
        assert!(d.val_accuracy.is_some());
    }
    for d in trace.phase(Phase::Operation) {
        let score = |i: usize| d.candidates.iter().find(|c| c.index == i).unwrap();
        let chosen = score(d.chosen[0]);
        for c in &d.candidates {
            let (sc, s) = (chosen.score.unwrap(), c.score.unwrap());
            assert!(sc < s || (sc == s && chosen.alpha >= c.alpha), "{d:?}");
        }
        assert_eq!(g.op_on(spec.edges[d.item].source, spec.edges[d.item].target).map(|o| o.tag()), {
            let kept = g.retained(spec.edges[d.item].target).contains(&spec.edges[d.item].source);
            kept.then_some(d.chosen_label.as_str())
        });
    }
    let node2 = trace.phase(Phase::Topology).find(|d| d.item == 2).unwrap();
    assert!(node2.candidates.iter().all(|c| c.score.is_none()));
    assert!(node2.note.is_some());
    let node3 = trace.phase(Phase::Topology).find(|d| d.item == 3).unwrap();
    assert_eq!(node3.candidates.len(), 3);
    assert_eq!(node3.chosen.len(), 2);

    let back = SelectionTrace::from_jsonl(&trace.to_jsonl()).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn selection_is_deterministic() {
    let run = || {
        let (mut net, data) = small();
        let (g, trace) = pt_select(&mut net, &data, &quick_cfg(1, 9)).unwrap();
        (g, trace.to_jsonl(), net.to_checkpoint())
    };
    assert_eq!(run(), run());
}

#[test]
fn pt_mag_follows_one_hot_alpha() {
    let (mut net, data) = small();
    for row in net.alpha.alpha.iter_mut() {
        *row = vec![6.0, 0.0];
    }
    let mag = magnitude_select(&net).unwrap();
    let (g, _) = pt_mag_select(&mut net, &data, &quick_cfg(0, 1)).unwrap();
    assert!(g.edges().iter().all(|e| e.op == OpKind::Skip));
    assert!(mag.edges().iter().all(|e| e.op == OpKind::Skip));
}

#[test]
fn magnitude_leaves_supernet_alone() {
    let (mut net, data) = small();
    net.alpha.alpha[2] = vec![-0.3, 0.8];
    let before = net.to_checkpoint();
    select(&mut net, &data, &quick_cfg(3, 0), SelectMethod::Magnitude).unwrap();
    assert_eq!(net.to_checkpoint(), before);
}

#[test]
fn op_strength_measures_each_op_without_touching_the_supernet() {
    let spec = build_space(SpaceVariant::Full, 2, 2, 4, None).unwrap();
    let data = make_dataset(DatasetKind::Spirals, 150, 3, 0.1, 3).unwrap();
    let mut net = Supernet::new(spec, 2, 3, 5);
    // an identity dense layer computes exactly what skip computes
    let k = net.spec().edges[0].op_index(OpKind::Dense).unwrap();
    let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    *net.op_weights_mut(0, k).unwrap() = Linear {
        weight: Tensor::new(vec![4, 4], eye).unwrap(),
        bias: Tensor::zeros(&[4]),
    };
    let before = net.to_checkpoint();
    let mut cfg = quick_cfg(2, 0);
    cfg.strength_epochs = Some(0);
    let s = measure_op_strength(&net, 0, &data, &cfg).unwrap();
    assert_eq!(s.len(), 5);
    let acc = |op: &str| s.iter().find(|x| x.op == op).unwrap().accuracy;
    assert_eq!(acc(OpKind::Skip.tag()), acc(OpKind::Dense.tag()));
    assert_eq!(net.to_checkpoint(), before);

    cfg.strength_epochs = Some(2);
    let twice = (
        measure_op_strength(&net, 1, &data, &cfg).unwrap(),
        measure_op_strength(&net, 1, &data, &cfg).unwrap(),
    );
    assert_eq!(twice.0, twice.1);
}

#[test]
fn op_strength_rejects_decided_edges() {
    let (mut net, data) = small();
    net.discretize_edge(0, OpKind::Skip).unwrap();
    assert!(measure_op_strength(&net, 0, &data, &quick_cfg(0, 0)).is_err());
    assert!(measure_op_strength(&net, 9, &data, &quick_cfg(0, 0)).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in [SelectMethod::Magnitude, SelectMethod::Pt, SelectMethod::PtMag] {
        assert_eq!(SelectMethod::from_name(m.name()), Some(m));
    }
    assert_eq!(SelectMethod::from_name("random"), None);
}

#[test]
fn trained_toy_magnitude_picks_mostly_skip() {
    let (_, runs) = trained_toys();
    let majority_skip = runs
        .iter()
        .filter(|(net, _)| {
            let spec = net.spec();
            let skips = (0..spec.edges.len())
                .filter(|&e| argmax_alpha(&candidates(net, e)) == spec.edges[e].op_index(OpKind::Skip))
                .count();
            2 * skips > spec.edges.len()
        })
        .count();
    assert!(majority_skip >= 4, "{majority_skip}/5 seeds");
}
