use std::time::Instant;

use ptnas::bench::build_bench;

use super::{dataset, run_dir};
use crate::config::Config;
use crate::error::CliResult;

/// Builds (or resumes) `bench/bench.db` for the configured space.
pub fn run(cfg: &Config) -> CliResult<()> {
    let dir = run_dir(cfg, "bench")?;
    let data = dataset(cfg)?;
    let spec = cfg.spec()?;
    let path = dir.join("bench.db");
    let start = Instant::now();
    let db = build_bench(&spec, &data, &cfg.bench, Some(&path))?;
    println!("{} genotypes in {:.1}s", db.len(), start.elapsed().as_secs_f64());
    if let (Some(best), Some(worst)) = (db.best(), db.worst()) {
        println!("best  {:.4}  {}", best.mean_test, best.genotype);
        println!("worst {:.4}  {}", worst.mean_test, worst.genotype);
    }
    println!("wrote {}", path.display());
    Ok(())
}
