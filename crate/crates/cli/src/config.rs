//! Run configuration.
//!
//! Every setting is a dotted key. Values come, lowest priority first, from
//! the built-in defaults, a TOML file (`--config`), environment variables
//! named `PTNAS_<SECTION>__<KEY>` (e.g. `PTNAS_TRAIN__LR_W=0.05`) and
//! `--<section>.<key> <value>` flags. Unknown keys are rejected at every
//! level.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `space.variant` | `s2p` | `full`, `s1p`, `s2p`, `s3p` or `s4p` |
//! | `space.num_inputs` | 2 | cell input nodes |
//! | `space.num_intermediate` | 2 | intermediate nodes |
//! | `space.feature_width` | 12 | feature width of every node |
//! | `space.s1_pools.<s>_<t>` | none | two op tags for edge `s -> t` (S1P only) |
//! | `dataset.kind` | `spirals` | `spirals`, `moons` or `blobs_hard` |
//! | `dataset.n` | 600 | samples |
//! | `dataset.classes` | 3 | classes |
//! | `dataset.noise` | 0.1 | input noise |
//! | `dataset.seed` | 7 | generator seed |
//! | `train.epochs` | 1000 | search epochs |
//! | `train.batch` | 32 | batch size |
//! | `train.lr_w` | 0.03 | weight learning rate |
//! | `train.lr_alpha` | 0.03 | α learning rate |
//! | `train.momentum` | 0.9 | weight momentum |
//! | `train.alpha_mode` | `bilevel` | `bilevel`, `fixed_zero` or `sdarts_rs` |
//! | `train.rs_sigma` | 0 | α noise scale, must be positive for `sdarts_rs` |
//! | `train.rs_schedule` | `per_batch` | `per_batch` or `per_epoch` |
//! | `train.seed` | 0 | supernet initialization and batch order |
//! | `select.method` | `pt` | `mag`, `pt` or `pt-mag` |
//! | `select.finetune_epochs` | 5 | fine-tuning after each decision |
//! | `select.seed` | 0 | edge and node visiting order |
//! | `bench.seeds_per_arch` | 3 | from-scratch runs per genotype |
//! | `bench.cap` | 10000 | enumeration limit |
//! | `bench.epochs` | 300 | from-scratch training epochs |
//! | `bench.lr_w` | 0.05 | from-scratch learning rate |
//! | `bench.seed` | 0 | base of the shared per-architecture seeds |
//! | `io.out_dir` | `runs` | root of every output |
//! | `io.checkpoint_every` | 100 | epochs between search checkpoints (0: final only) |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use ptnas::bench::BenchConfig;
use ptnas::searchspace::{build_space, CellSpec, OpKind, S1Pools, SpaceVariant};
use ptnas::selection::{SelectConfig, SelectMethod};
use ptnas::toy::ToySetup;
use ptnas::trainer::{AlphaMode, DatasetKind, RsSchedule, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub variant: SpaceVariant,
    pub num_inputs: usize,
    pub num_intermediate: usize,
    pub feature_width: usize,
    pub s1_pools: S1Pools,

    pub dataset_kind: DatasetKind,
    pub dataset_n: usize,
    pub classes: usize,
    pub noise: f64,
    pub dataset_seed: u64,

    pub train: TrainConfig,

    pub method: SelectMethod,
    pub finetune_epochs: usize,
    pub select_seed: u64,

    pub bench: BenchConfig,

    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
}

impl Default for Config {
    fn default() -> Self {
        let toy = ToySetup::default();
        let train = TrainConfig::default();
        Self {
            variant: toy.variant,
            num_inputs: toy.num_inputs,
            num_intermediate: toy.num_intermediate,
            feature_width: toy.width,
            s1_pools: S1Pools::new(),
            dataset_kind: toy.kind,
            dataset_n: toy.n,
            classes: toy.classes,
            noise: toy.noise,
            dataset_seed: toy.data_seed,
            finetune_epochs: train.finetune_epochs,
            train,
            method: SelectMethod::Pt,
            select_seed: 0,
            bench: BenchConfig::default(),
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 100,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad value {value:?} for {key}")))
}

fn named<T>(key: &str, value: &str, f: impl Fn(&str) -> Option<T>) -> CliResult<T> {
    f(value.trim()).ok_or_else(|| CliError::Usage(format!("bad value {value:?} for {key}")))
}

impl Config {
    /// Defaults, then `file`, then `env` (`PTNAS_*` pairs), then `flags`.
    pub fn resolve(
        file: Option<&str>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(String, String)],
    ) -> CliResult<Self> {
        let mut cfg = Config::default();
        if let Some(text) = file {
            for (k, v) in flatten_toml(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in env {
            if let Some(rest) = k.strip_prefix("PTNAS_") {
                let key = rest.to_ascii_lowercase().replace("__", ".");
                cfg.set(&key, &v)
                    .map_err(|e| CliError::Usage(format!("environment variable {k}: {e}")))?;
            }
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "space.variant" => self.variant = named(key, value, SpaceVariant::from_name)?,
            "space.num_inputs" => self.num_inputs = parse(key, value)?,
            "space.num_intermediate" => self.num_intermediate = parse(key, value)?,
            "space.feature_width" => self.feature_width = parse(key, value)?,
            "dataset.kind" => self.dataset_kind = named(key, value, DatasetKind::from_name)?,
            "dataset.n" => self.dataset_n = parse(key, value)?,
            "dataset.classes" => self.classes = parse(key, value)?,
            "dataset.noise" => self.noise = parse(key, value)?,
            "dataset.seed" => self.dataset_seed = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch" => self.train.batch_size = parse(key, value)?,
            "train.lr_w" => self.train.lr_w = parse(key, value)?,
            "train.lr_alpha" => self.train.lr_alpha = parse(key, value)?,
            "train.momentum" => self.train.momentum = parse(key, value)?,
            "train.alpha_mode" => self.train.alpha_mode = named(key, value, AlphaMode::from_name)?,
            "train.rs_sigma" => self.train.rs_sigma = parse(key, value)?,
            "train.rs_schedule" => self.train.rs_schedule = named(key, value, RsSchedule::from_name)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "select.method" => self.method = named(key, value, SelectMethod::from_name)?,
            "select.finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "select.seed" => self.select_seed = parse(key, value)?,
            "bench.seeds_per_arch" => self.bench.seeds_per_arch = parse(key, value)?,
            "bench.cap" => self.bench.cap = parse(key, value)?,
            "bench.epochs" => self.bench.train.epochs = parse(key, value)?,
            "bench.lr_w" => self.bench.train.lr_w = parse(key, value)?,
            "bench.seed" => self.bench.seed = parse(key, value)?,
            "io.out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "io.checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            _ => {
                let Some(edge) = key.strip_prefix("space.s1_pools.") else {
                    return Err(CliError::Usage(format!("unknown config key {key:?}")));
                };
                let (s, t) = edge
                    .split_once('_')
                    .ok_or_else(|| CliError::Usage(format!("S1P edge {edge:?} is not <source>_<target>")))?;
                let ops = value
                    .split(',')
                    .map(|tag| named(key, tag, OpKind::from_tag))
                    .collect::<CliResult<Vec<_>>>()?;
                self.s1_pools.insert((parse(key, s)?, parse(key, t)?), ops);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.train.alpha_mode == AlphaMode::SdartsRs && self.train.rs_sigma <= 0.0 {
            return usage("train.alpha_mode = sdarts_rs needs train.rs_sigma > 0".into());
        }
        if self.variant != SpaceVariant::S1p && !self.s1_pools.is_empty() {
            return usage("space.s1_pools is only valid with space.variant = s1p".into());
        }
        if self.dataset_n == 0 || self.classes < 2 {
            return usage("dataset needs n > 0 and at least 2 classes".into());
        }
        self.train.validate().map_err(|e| CliError::Usage(format!("train: {e}")))?;
        self.bench.train.validate().map_err(|e| CliError::Usage(format!("bench: {e}")))?;
        self.spec().map_err(|e| CliError::Usage(format!("space: {e}")))?;
        Ok(())
    }

    pub fn spec(&self) -> ptnas::Result<CellSpec> {
        let pools = (self.variant == SpaceVariant::S1p).then_some(&self.s1_pools);
        build_space(self.variant, self.num_inputs, self.num_intermediate, self.feature_width, pools)
    }

    pub fn select_config(&self) -> SelectConfig {
        let train = TrainConfig { finetune_epochs: self.finetune_epochs, ..self.train.clone() };
        SelectConfig::new(train, self.select_seed)
    }

    /// The resolved configuration as a TOML file that [`Config::resolve`]
    /// reads back to an equal value.
    pub fn snapshot(&self) -> String {
        let s = |v: &str| toml::Value::String(v.to_string()).to_string();
        let f = |v: f64| format!("{v:?}");
        let mut out = String::from("# resolved configuration\n");
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("space.variant", s(self.variant.name()));
        line("space.num_inputs", self.num_inputs.to_string());
        line("space.num_intermediate", self.num_intermediate.to_string());
        line("space.feature_width", self.feature_width.to_string());
        for ((src, dst), ops) in &self.s1_pools {
            let tags: Vec<&str> = ops.iter().map(|o| o.tag()).collect();
            line(&format!("space.s1_pools.{src}_{dst}"), s(&tags.join(",")));
        }
        line("dataset.kind", s(self.dataset_kind.name()));
        line("dataset.n", self.dataset_n.to_string());
        line("dataset.classes", self.classes.to_string());
        line("dataset.noise", f(self.noise));
        line("dataset.seed", self.dataset_seed.to_string());
        line("train.epochs", self.train.epochs.to_string());
        line("train.batch", self.train.batch_size.to_string());
        line("train.lr_w", f(self.train.lr_w));
        line("train.lr_alpha", f(self.train.lr_alpha));
        line("train.momentum", f(self.train.momentum));
        line("train.alpha_mode", s(self.train.alpha_mode.name()));
        line("train.rs_sigma", f(self.train.rs_sigma));
        line("train.rs_schedule", s(self.train.rs_schedule.name()));
        line("train.seed", self.train.seed.to_string());
        line("select.method", s(self.method.name()));
        line("select.finetune_epochs", self.finetune_epochs.to_string());
        line("select.seed", self.select_seed.to_string());
        line("bench.seeds_per_arch", self.bench.seeds_per_arch.to_string());
        line("bench.cap", self.bench.cap.to_string());
        line("bench.epochs", self.bench.train.epochs.to_string());
        line("bench.lr_w", f(self.bench.train.lr_w));
        line("bench.seed", self.bench.seed.to_string());
        line("io.out_dir", s(&self.out_dir.to_string_lossy()));
        line("io.checkpoint_every", self.checkpoint_every.to_string());
        out
    }
}

/// Dotted key and string value of every leaf in a TOML document.
fn flatten_toml(text: &str) -> CliResult<BTreeMap<String, String>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("config file: {e}")))?;
    let mut out = BTreeMap::new();
    flatten_into(&mut out, "", &table)?;
    Ok(out)
}

fn flatten_into(out: &mut BTreeMap<String, String>, prefix: &str, table: &toml::Table) -> CliResult<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let scalar = |v: &toml::Value| -> CliResult<String> {
            Ok(match v {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(x) => format!("{x:?}"),
                toml::Value::Boolean(b) => b.to_string(),
                _ => return Err(CliError::Usage(format!("unsupported value for {key}"))),
            })
        };
        match v {
            toml::Value::Table(t) => flatten_into(out, &key, t)?,
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<CliResult<Vec<_>>>()?;
                out.insert(key.clone(), parts.join(","));
            }
            other => {
                out.insert(key.clone(), scalar(other)?);
            }
        }
    }
    Ok(())
}

/// Splits `--section.key value` and `--section.key=value` overrides out of
/// `args`, returning the remaining arguments and the overrides in order.
pub fn extract_overrides(args: Vec<String>) -> CliResult<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--").filter(|n| n.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        if let Some((k, v)) = name.split_once('=') {
            overrides.push((k.to_string(), v.to_string()));
        } else {
            let v = it
                .next()
                .ok_or_else(|| CliError::Usage(format!("missing value for --{name}")))?;
            overrides.push((name.to_string(), v));
        }
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none() -> Vec<(String, String)> {
        Vec::new()
    }

    #[test]
    fn defaults_match_the_toy_setup() {
        let cfg = Config::resolve(None, none(), &[]).unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.variant, SpaceVariant::S2p);
        assert_eq!(cfg.train.epochs, 1000);
    }

    #[test]
    fn precedence_is_file_env_flags() {
        let file = "train.epochs = 10\ntrain.lr_w = 0.5\n[dataset]\nn = 90\n";
        let env = vec![
            ("PTNAS_TRAIN__LR_W".to_string(), "0.25".to_string()),
            ("PTNAS_TRAIN__BATCH".to_string(), "8".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ];
        let flags = vec![("train.batch".to_string(), "4".to_string())];
        let cfg = Config::resolve(Some(file), env, &flags).unwrap();
        assert_eq!(cfg.train.epochs, 10);
        assert_eq!(cfg.dataset_n, 90);
        assert_eq!(cfg.train.lr_w, 0.25);
        assert_eq!(cfg.train.batch_size, 4);
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        assert!(Config::resolve(Some("train.epoch = 3"), none(), &[]).is_err());
        let env = vec![("PTNAS_TRAIN__NOPE".to_string(), "1".to_string())];
        assert!(Config::resolve(None, env, &[]).is_err());
        let flags = vec![("io.outdir".to_string(), "x".to_string())];
        assert!(Config::resolve(None, none(), &flags).is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        let flags = |k: &str, v: &str| vec![(k.to_string(), v.to_string())];
        assert!(Config::resolve(None, none(), &flags("train.epochs", "-3")).is_err());
        assert!(Config::resolve(None, none(), &flags("space.variant", "s9p")).is_err());
        assert!(Config::resolve(None, none(), &flags("train.alpha_mode", "sdarts_rs")).is_err());
        assert!(Config::resolve(None, none(), &flags("train.lr_w", "-1")).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let flags = vec![
            ("space.variant".to_string(), "s1p".to_string()),
            ("space.s1_pools.0_2".to_string(), "skip,dense_relu".to_string()),
            ("space.s1_pools.1_2".to_string(), "noise,dense".to_string()),
            ("space.s1_pools.0_3".to_string(), "skip,dense_tanh".to_string()),
            ("space.s1_pools.1_3".to_string(), "skip,dense".to_string()),
            ("space.s1_pools.2_3".to_string(), "zero,dense_relu".to_string()),
            ("train.lr_w".to_string(), "0.1".to_string()),
            ("dataset.noise".to_string(), "0.123456789".to_string()),
            ("io.out_dir".to_string(), "out dir/a".to_string()),
        ];
        let cfg = Config::resolve(None, none(), &flags).unwrap();
        let back = Config::resolve(Some(&cfg.snapshot()), none(), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn toml_arrays_give_pools() {
        let file = "space.variant = \"s1p\"\n[space.s1_pools]\n0_2 = [\"skip\", \"dense\"]\n1_2 = [\"skip\", \"dense\"]\n0_3 = [\"skip\", \"dense\"]\n1_3 = [\"skip\", \"dense\"]\n2_3 = [\"skip\", \"dense\"]\n";
        let cfg = Config::resolve(Some(file), none(), &[]).unwrap();
        assert_eq!(cfg.s1_pools[&(0, 2)], vec![OpKind::Skip, OpKind::Dense]);
    }

    #[test]
    fn overrides_are_split_from_other_args() {
        let args: Vec<String> = ["ptnas", "search", "--train.epochs", "5", "--config", "c.toml", "--io.out_dir=x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (rest, ov) = extract_overrides(args).unwrap();
        assert_eq!(rest, vec!["ptnas", "search", "--config", "c.toml"]);
        assert_eq!(ov, vec![("train.epochs".into(), "5".into()), ("io.out_dir".into(), "x".into())]);
        assert!(extract_overrides(vec!["--train.epochs".into()]).is_err());
    }
}
