use std::fs;
use std::path::Path;

use ptnas::bench::BenchDB;
use ptnas::selection::{select, SelectMethod};

use super::{dataset, load_checkpoint, run_dir};
use crate::config::Config;
use crate::error::CliResult;

/// Runs `method` on the checkpoint and writes `genotype.txt` and
/// `trace.jsonl` under `select-<method>`. With `bench`, also reports the
/// genotype's oracle accuracy and percentile.
pub fn run(cfg: &Config, checkpoint: &Path, method: SelectMethod, bench: Option<&Path>) -> CliResult<()> {
    let mut net = load_checkpoint(cfg, checkpoint)?;
    let data = dataset(cfg)?;
    let dir = run_dir(cfg, &format!("select-{}", method.name()))?;
    let (genotype, trace) = select(&mut net, &data, &cfg.select_config(), method)?;
    fs::write(dir.join("genotype.txt"), format!("{genotype}\n"))?;
    fs::write(dir.join("trace.jsonl"), trace.to_jsonl())?;
    println!("{genotype}");
    if let Some(path) = bench {
        let spec = cfg.spec()?;
        let db = BenchDB::load(path, &spec.descriptor(), &cfg.bench.hash(&spec, &data))?;
        let rec = db.query(&genotype)?;
        println!(
            "oracle test accuracy {:.4} +- {:.4}  percentile {:.3}",
            rec.mean_test,
            rec.std_test,
            db.rank_of(&genotype)?
        );
    }
    Ok(())
}
