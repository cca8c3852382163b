use std::fs;

use ptnas::analysis::{
    perfect_skip_samples, prop1_closed_form, prop1_grid_oracle, stationarity_residual, symmetric_samples,
    synthetic_samples,
};
use ptnas::autodiff::RandomNet;
use ptnas::rng::derive_seed;
use ptnas::selection::SelectMethod;
use ptnas::trainer::RunLog;

use super::{read, run_dir, search, select};
use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const CHECKS: [&str; 3] = ["gradcheck", "prop1-oracle", "determinism"];

fn report(name: &str, ok: bool, detail: &str) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn gradcheck(seed: u64) -> CliResult<bool> {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let err = RandomNet::generate(derive_seed(seed, i))?.check(1e-4)?;
        worst = worst.max(err);
    }
    Ok(report("gradcheck", worst <= 1e-4, &format!("100 random graphs, worst relative error {worst:.2e}")))
}

fn prop1_oracle(seed: u64) -> CliResult<bool> {
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut inside = 0;
    for i in 0..20 {
        let s = synthetic_samples(derive_seed(seed, i), 1000, 8);
        let t = prop1_closed_form(&s)?;
        ok &= stationarity_residual(s.stats(), &t) <= 1e-10;
        if t.in_unit_interval {
            inside += 1;
            let g = prop1_grid_oracle(&s, 0.001)?;
            worst = worst.max((g.theta_conv - t.theta_conv).abs());
        }
    }
    ok &= worst <= 5e-3;
    let sym = prop1_closed_form(&symmetric_samples(seed, 200, 4))?;
    ok &= sym.theta_conv == 0.5 && sym.theta_skip == 0.5;
    let skip = prop1_closed_form(&perfect_skip_samples(seed, 200, 4))?;
    ok &= skip.theta_skip == 1.0 && skip.alpha_conv.is_none();
    Ok(report(
        "prop1-oracle",
        ok,
        &format!("{inside}/20 interior sets, worst grid gap {worst:.2e}; symmetric and x = m* cases"),
    ))
}

fn determinism(cfg: &Config) -> CliResult<bool> {
    let base = run_dir(cfg, "verify")?;
    let mut outputs = Vec::new();
    for name in ["run-a", "run-b"] {
        let mut c = cfg.clone();
        c.out_dir = base.join(name);
        search::run(&c)?;
        let ckpt = c.out_dir.join("search").join("supernet.ckpt");
        select::run(&c, &ckpt, SelectMethod::Pt, None)?;
        let files = ["search/supernet.ckpt", "select-pt/genotype.txt", "select-pt/trace.jsonl"];
        let mut bytes = files.iter().map(|f| fs::read(c.out_dir.join(f))).collect::<Result<Vec<_>, _>>()?;
        // wall times are the only field allowed to differ
        let mut log = RunLog::from_jsonl(&read(&c.out_dir.join("search/runlog.jsonl"))?)?;
        for r in &mut log.records {
            r.wall_time = 0.0;
        }
        bytes.push(log.to_jsonl().into_bytes());
        outputs.push(bytes);
    }
    let same = outputs[0] == outputs[1];
    Ok(report("determinism", same, "search and pt selection run twice, outputs equal apart from wall times"))
}

/// Runs the named checks (all of them when `only` is empty).
pub fn run(cfg: &Config, only: &[String]) -> CliResult<()> {
    for name in only {
        if !CHECKS.contains(&name.as_str()) {
            return Err(CliError::Usage(format!("unknown check {name:?}; expected one of {CHECKS:?}")));
        }
    }
    let wanted = |n: &str| only.is_empty() || only.iter().any(|o| o == n);
    let mut failed = 0;
    if wanted("gradcheck") && !gradcheck(cfg.train.seed)? {
        failed += 1;
    }
    if wanted("prop1-oracle") && !prop1_oracle(cfg.train.seed)? {
        failed += 1;
    }
    if wanted("determinism") && !determinism(cfg)? {
        failed += 1;
    }
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(())
}
