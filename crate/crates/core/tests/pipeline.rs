use std::fs;

use ptnas::bench::{build_bench, trajectory_eval, BenchConfig, BenchDB};
use ptnas::searchspace::{build_space, enumerate_genotypes, SpaceVariant};
use ptnas::selection::{select, SelectConfig, SelectMethod};
use ptnas::supernet::Supernet;
use ptnas::trainer::{bilevel_train, make_dataset, DatasetKind, TrainConfig};

fn quick_bench() -> BenchConfig {
    BenchConfig {
        train: TrainConfig { epochs: 3, ..TrainConfig::default() },
        seeds_per_arch: 2,
        ..BenchConfig::default()
    }
}

#[test]
fn interrupted_bench_resumes_to_the_same_file() {
    let spec = build_space(SpaceVariant::S2p, 2, 2, 4, None).unwrap();
    let data = make_dataset(DatasetKind::Moons, 120, 2, 0.1, 1).unwrap();
    let cfg = quick_bench();
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full.db");
    let cut = tmp.path().join("cut.db");
    let db = build_bench(&spec, &data, &cfg, Some(&full)).unwrap();
    assert_eq!(db.len(), 48);

    // keep the header and a few records, with the last line half written
    let text = fs::read_to_string(&full).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut partial = lines[..14].join("\n");
    partial.push('\n');
    partial.push_str(&lines[14][..lines[14].len() / 2]);
    fs::write(&cut, partial).unwrap();

    let resumed = build_bench(&spec, &data, &cfg, Some(&cut)).unwrap();
    assert_eq!(fs::read(&cut).unwrap(), fs::read(&full).unwrap());
    assert_eq!(resumed.to_text(), db.to_text());
    let loaded = BenchDB::load(&full, &spec.descriptor(), &cfg.hash(&spec, &data)).unwrap();
    assert_eq!(loaded.to_text(), db.to_text());
    assert!(BenchDB::load(&full, &spec.descriptor(), "other recipe").is_err());
}

#[test]
fn search_checkpoint_select_and_score() {
    let spec = build_space(SpaceVariant::S2p, 2, 2, 4, None).unwrap();
    let data = make_dataset(DatasetKind::Spirals, 150, 3, 0.1, 2).unwrap();
    let cfg = TrainConfig { epochs: 6, finetune_epochs: 1, ..TrainConfig::default() };
    let mut net = Supernet::new(spec.clone(), data.dim(), data.classes, 4);
    let mut snapshots = vec![(0, Some(net.clone()))];
    bilevel_train(&mut net, &data, &cfg).unwrap();
    let restored = Supernet::from_checkpoint(&net.to_checkpoint(), &spec).unwrap();
    assert_eq!(restored.to_checkpoint(), net.to_checkpoint());
    snapshots.push((3, None));
    snapshots.push((6, Some(restored)));

    let db = build_bench(&spec, &data, &quick_bench(), None).unwrap();
    let all = enumerate_genotypes(&spec, 100).unwrap();
    let scfg = SelectConfig::new(cfg, 1);
    for method in [SelectMethod::Magnitude, SelectMethod::Pt, SelectMethod::PtMag] {
        let (g, trace) = select(&mut net.clone(), &data, &scfg, method).unwrap();
        assert!(all.contains(&g));
        assert_eq!(trace.method, method);
        let r = db.rank_of(&g).unwrap();
        assert!((0.0..1.0).contains(&r));

        let points = trajectory_eval(&snapshots, method, &db, &data, &scfg).unwrap();
        assert_eq!(points.len(), 3);
        assert!(points[1].warning.is_some() && points[1].oracle_test.is_none());
        assert_eq!(points[2].genotype.as_deref(), Some(g.to_string().as_str()));
    }
}
