use std::fs;
use std::path::Path;

use ptnas::analysis::{
    alpha_vs_strength_report, edge_shuffle_robustness, probe_tsv, prop1_closed_form, prop1_grid_oracle,
    skip_gap_trajectory, stationarity_residual, strength_tsv, FeatureSamples, VanillaChain,
};
use ptnas::autodiff::Tensor;
use ptnas::bench::{trajectory_eval, BenchDB};
use ptnas::rng::{derive_seed, SplitMix64};
use ptnas::selection::SelectMethod;
use ptnas::supernet::Supernet;
use ptnas::trainer::{train_weights, RunLog};

use super::{dataset, load_checkpoint, read, run_dir};
use crate::config::Config;
use crate::error::{CliError, CliResult};

/// Reads feature samples written one row per line as
/// `x_1 .. x_d | o_1 .. o_d | m_1 .. m_d`; `#` starts a comment.
pub fn parse_samples(text: &str) -> CliResult<FeatureSamples> {
    let bad = |i: usize, m: &str| CliError::Usage(format!("samples line {}: {m}", i + 1));
    let (mut x, mut o, mut m) = (Vec::new(), Vec::new(), Vec::new());
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('|').collect();
        if parts.len() != 3 {
            return Err(bad(i, "expected three groups separated by '|'"));
        }
        let mut groups = Vec::new();
        for p in parts {
            let vals = p
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(i, &format!("bad number {v:?}"))))
                .collect::<CliResult<Vec<_>>>()?;
            groups.push(vals);
        }
        let d = groups[0].len();
        if d == 0 || groups.iter().any(|g| g.len() != d) || width.is_some_and(|w| w != d) {
            return Err(bad(i, "groups must have one common, non-zero width"));
        }
        width = Some(d);
        x.extend_from_slice(&groups[0]);
        o.extend_from_slice(&groups[1]);
        m.extend_from_slice(&groups[2]);
        rows += 1;
    }
    let d = width.ok_or_else(|| CliError::Usage("samples file has no rows".into()))?;
    let t = |v| Tensor::new(vec![rows, d], v);
    Ok(FeatureSamples::new(t(x)?, t(o)?, t(m)?)?)
}

/// Closed-form and grid optimum for a samples file, or the per-edge probe
/// of a trained supernet.
pub fn prop1(cfg: &Config, samples: Option<&Path>, checkpoint: Option<&Path>, step: f64) -> CliResult<()> {
    let dir = run_dir(cfg, "analyze-prop1")?;
    match (samples, checkpoint) {
        (Some(path), None) => {
            let s = parse_samples(&read(path)?)?;
            let t = prop1_closed_form(&s)?;
            let g = prop1_grid_oracle(&s, step)?;
            let stats = s.stats();
            let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
            let report = format!(
                "var_x_resid\tvar_o_resid\tcov\ttheta_conv\ttheta_skip\talpha_conv\talpha_skip\tin_unit_interval\tgrid_theta_conv\tgrid_objective\tstationarity_residual\n\
                 {:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3e}\n",
                stats.var_x,
                stats.var_o,
                stats.cov,
                t.theta_conv,
                t.theta_skip,
                opt(t.alpha_conv),
                opt(t.alpha_skip),
                t.in_unit_interval,
                g.theta_conv,
                g.objective,
                stationarity_residual(stats, &t)
            );
            fs::write(dir.join("prop1.tsv"), &report)?;
            println!("theta_conv {:.6}  theta_skip {:.6}  grid theta_conv {:.4}", t.theta_conv, t.theta_skip, g.theta_conv);
            if !t.in_unit_interval {
                println!("closed form lies outside [0, 1]; the grid optimum is the constrained answer");
            }
        }
        (None, Some(path)) => {
            let net = load_checkpoint(cfg, path)?;
            let data = dataset(cfg)?;
            let rows = ptnas::analysis::supernet_prop1_probe(&net, &data)?;
            let text = probe_tsv(&rows);
            fs::write(dir.join("probe.tsv"), &text)?;
            println!("# m* is the last intermediate node's mixed output (a proxy)");
            print!("{text}");
        }
        _ => return Err(CliError::Usage("give exactly one of --samples or --checkpoint".into())),
    }
    Ok(())
}

pub fn skip_gap(cfg: &Config, log: &Path) -> CliResult<()> {
    let dir = run_dir(cfg, "analyze-skip-gap")?;
    let t = skip_gap_trajectory(&RunLog::from_jsonl(&read(log)?)?)?;
    fs::write(dir.join("skip_gap.tsv"), t.to_tsv())?;
    match t.spearman {
        Some(r) => println!("{} epochs  spearman(epoch, gap) {r:.4}", t.points.len()),
        None => println!("{} epochs  spearman undefined (constant series)", t.points.len()),
    }
    Ok(())
}

/// Shuffle robustness of the checkpoint next to a chain of `depth` dense
/// layers trained with the same recipe.
pub fn shuffle(cfg: &Config, checkpoint: &Path, trials: usize, depth: usize) -> CliResult<()> {
    let dir = run_dir(cfg, "analyze-shuffle")?;
    let net = load_checkpoint(cfg, checkpoint)?;
    let data = dataset(cfg)?;
    let seed = cfg.train.seed;
    let mut chain = VanillaChain::new(data.dim(), cfg.feature_width, depth, data.classes, seed);
    let mut rng = SplitMix64::new(derive_seed(seed, 0xC4A2));
    train_weights(&mut chain, &data, &cfg.train, cfg.train.epochs, &mut rng)?;
    let a = edge_shuffle_robustness(&net, &data, trials, derive_seed(seed, 0x5B1))?;
    let b = edge_shuffle_robustness(&chain, &data, trials, derive_seed(seed, 0x5B2))?;
    fs::write(dir.join("supernet.tsv"), a.to_tsv())?;
    fs::write(dir.join("chain.tsv"), b.to_tsv())?;
    for (name, r) in [("supernet", &a), ("chain", &b)] {
        println!(
            "{name:<8} {:.4} -> {:.4} +- {:.4}  (drop {:.4})",
            r.baseline,
            r.mean,
            r.std,
            r.drop()
        );
    }
    Ok(())
}

/// Softmax α against measured strength; without `edges`, three edges drawn
/// from `select.seed`.
pub fn alpha_vs_strength(cfg: &Config, checkpoint: &Path, edges: &[usize]) -> CliResult<()> {
    let dir = run_dir(cfg, "analyze-alpha-vs-strength")?;
    let net = load_checkpoint(cfg, checkpoint)?;
    let data = dataset(cfg)?;
    let edges = if edges.is_empty() {
        let mut undecided = net.undecided_edges();
        SplitMix64::new(derive_seed(cfg.select_seed, 0xA5)).shuffle(&mut undecided);
        undecided.truncate(3);
        undecided.sort_unstable();
        undecided
    } else {
        edges.to_vec()
    };
    let reports = alpha_vs_strength_report(&net, &data, &cfg.select_config(), &edges)?;
    let text = strength_tsv(&reports);
    fs::write(dir.join("alpha_vs_strength.tsv"), &text)?;
    print!("{text}");
    Ok(())
}

/// Selection over every `epoch-NNNNNN.ckpt` in `dir` (or only `epochs`),
/// scored against the bench.
pub fn trajectory(
    cfg: &Config,
    ckpt_dir: &Path,
    bench: &Path,
    method: SelectMethod,
    epochs: &[usize],
) -> CliResult<()> {
    let out = run_dir(cfg, "analyze-trajectory")?;
    let data = dataset(cfg)?;
    let spec = cfg.spec()?;
    let db = BenchDB::load(bench, &spec.descriptor(), &cfg.bench.hash(&spec, &data))?;
    let wanted: Vec<usize> = if epochs.is_empty() {
        let mut found = Vec::new();
        for entry in fs::read_dir(ckpt_dir).map_err(|source| CliError::Read { path: ckpt_dir.to_path_buf(), source })? {
            let name = entry?.file_name().to_string_lossy().to_string();
            if let Some(e) = name.strip_prefix("epoch-").and_then(|n| n.strip_suffix(".ckpt")) {
                if let Ok(e) = e.parse() {
                    found.push(e);
                }
            }
        }
        found.sort_unstable();
        found
    } else {
        epochs.to_vec()
    };
    let snapshots = wanted
        .iter()
        .map(|&e| {
            let path = ckpt_dir.join(format!("epoch-{e:06}.ckpt"));
            let net: Option<Supernet> = if path.exists() { Some(load_checkpoint(cfg, &path)?) } else { None };
            Ok((e, net))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let points = trajectory_eval(&snapshots, method, &db, &data, &cfg.select_config())?;
    let mut text = String::from("epoch\tgenotype\toracle_test\twarning\n");
    for p in &points {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.epoch,
            p.genotype.as_deref().unwrap_or("NA"),
            p.oracle_test.map_or_else(|| "NA".to_string(), |a| format!("{a:.6}")),
            p.warning.as_deref().unwrap_or("")
        ));
    }
    fs::write(out.join("trajectory.tsv"), &text)?;
    print!("{text}");
    Ok(())
}
