use std::fs;

use ptnas::supernet::Supernet;
use ptnas::trainer::bilevel_train_with;

use super::{dataset, run_dir};
use crate::config::Config;
use crate::error::CliResult;

/// Trains a supernet. Writes `checkpoints/epoch-NNNNNN.ckpt` every
/// `io.checkpoint_every` epochs and at the end, `supernet.ckpt` and
/// `runlog.jsonl`.
pub fn run(cfg: &Config) -> CliResult<()> {
    let dir = run_dir(cfg, "search")?;
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let data = dataset(cfg)?;
    let mut net = Supernet::new(cfg.spec()?, data.dim(), data.classes, cfg.train.seed);
    let every = cfg.checkpoint_every;
    let last = cfg.train.epochs;
    let log = bilevel_train_with(&mut net, &data, &cfg.train, |n, r| {
        if r.epoch == last || (every > 0 && r.epoch % every == 0) {
            fs::write(ckpt_dir.join(format!("epoch-{:06}.ckpt", r.epoch)), n.to_checkpoint())?;
        }
        Ok(())
    })?;
    fs::write(dir.join("supernet.ckpt"), net.to_checkpoint())?;
    fs::write(dir.join("runlog.jsonl"), log.to_jsonl())?;
    let end = log.last().expect("log has epoch 0");
    let gap = end.skip_conv_gap.map_or_else(|| "n/a".to_string(), |g| format!("{g:.4}"));
    println!("epochs {}  val accuracy {:.4}  skip gap {gap}", end.epoch, end.val_accuracy);
    println!("wrote {}", dir.join("supernet.ckpt").display());
    Ok(())
}
