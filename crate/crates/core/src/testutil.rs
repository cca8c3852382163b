use std::sync::OnceLock;

use rayon::prelude::*;

use crate::supernet::Supernet;
use crate::toy::ToySetup;
use crate::trainer::{bilevel_train, Dataset, RunLog, TrainConfig};

/// Supernets searched at the toy defaults for seeds 0..5, with their logs.
pub(crate) fn trained_toys() -> &'static (Dataset, Vec<(Supernet, RunLog)>) {
    static CELL: OnceLock<(Dataset, Vec<(Supernet, RunLog)>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let toy = ToySetup::default();
        let data = toy.dataset().unwrap();
        let runs = (0..5u64)
            .into_par_iter()
            .map(|seed| {
                let mut net = Supernet::new(toy.space().unwrap(), data.dim(), toy.classes, seed);
                let log = bilevel_train(&mut net, &data, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
                (net, log)
            })
            .collect();
        (data, runs)
    })
}
