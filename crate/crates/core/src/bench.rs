//! Exhaustive from-scratch benchmark of every genotype in a small space.
//!
//! Database file layout (text, one item per line):
//!
//! ```text
//! ptnas-bench 1
//! space <cell descriptor>
//! config <hash>
//! count <number of genotypes>
//! record <genotype> <seed,...> <val bits,...> <test bits,...>
//! ...
//! complete
//! ```
//!
//! Records follow the enumeration order; accuracies are stored as 16-digit
//! hex bit patterns. Wall-clock times go to a sidecar `<db>.times` file so
//! the database itself is byte-reproducible.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::searchspace::{enumerate_genotypes, CellSpec, Genotype};
use crate::selection::{select, SelectConfig, SelectMethod};
use crate::supernet::Supernet;
use crate::trainer::{train_from_scratch, Dataset, TrainConfig};

const MAGIC: &str = "ptnas-bench 1";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub genotype: String,
    pub seeds: Vec<u64>,
    pub val_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub mean_val: f64,
    pub mean_test: f64,
    pub std_test: f64,
    pub config_hash: String,
    pub wall_time: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl BenchRecord {
    /// Record from `(seed, val accuracy, test accuracy)` runs.
    pub fn from_runs(genotype: String, config_hash: String, runs: &[(u64, f64, f64)], wall_time: f64) -> Self {
        let val: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let test: Vec<f64> = runs.iter().map(|r| r.2).collect();
        Self {
            genotype,
            seeds: runs.iter().map(|r| r.0).collect(),
            mean_val: mean(&val),
            mean_test: mean(&test),
            std_test: std_dev(&test),
            val_accuracy: val,
            test_accuracy: test,
            config_hash,
            wall_time,
        }
    }

    /// Joins single-seed records of one genotype.
    pub fn merge(parts: &[BenchRecord]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
        let mut runs = Vec::new();
        for p in parts {
            if p.genotype != first.genotype || p.config_hash != first.config_hash {
                return Err(Error::InvalidArgument("records of different runs".into()));
            }
            for i in 0..p.seeds.len() {
                runs.push((p.seeds[i], p.val_accuracy[i], p.test_accuracy[i]));
            }
        }
        let wall = parts.iter().map(|p| p.wall_time).sum();
        Ok(Self::from_runs(first.genotype.clone(), first.config_hash.clone(), &runs, wall))
    }

    pub fn to_line(&self) -> String {
        let hex = |v: &[f64]| v.iter().map(|x| format!("{:016x}", x.to_bits())).collect::<Vec<_>>().join(",");
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        format!(
            "record {} {} {} {}",
            self.genotype,
            seeds,
            hex(&self.val_accuracy),
            hex(&self.test_accuracy)
        )
    }

    pub fn from_line(line: &str, config_hash: &str) -> Result<Self> {
        let err = |m: &str| Error::format("bench", format!("{m} in {line:?}"));
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 5 || parts[0] != "record" {
            return Err(err("malformed record"));
        }
        let seeds = parts[2]
            .split(',')
            .map(|s| s.parse::<u64>().map_err(|_| err("bad seed")))
            .collect::<Result<Vec<_>>>()?;
        let floats = |s: &str| {
            s.split(',')
                .map(|w| u64::from_str_radix(w, 16).map(f64::from_bits).map_err(|_| err("bad float")))
                .collect::<Result<Vec<_>>>()
        };
        let val = floats(parts[3])?;
        let test = floats(parts[4])?;
        if val.len() != seeds.len() || test.len() != seeds.len() {
            return Err(err("seed and accuracy counts differ"));
        }
        let runs: Vec<(u64, f64, f64)> = (0..seeds.len()).map(|i| (seeds[i], val[i], test[i])).collect();
        Ok(Self::from_runs(parts[1].to_string(), config_hash.to_string(), &runs, 0.0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    /// From-scratch recipe; `train.epochs` is the training length.
    pub train: TrainConfig,
    pub seeds_per_arch: usize,
    pub cap: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig { epochs: 300, lr_w: 0.05, ..TrainConfig::default() },
            seeds_per_arch: 3,
            cap: 10_000,
            seed: 0,
        }
    }
}

impl BenchConfig {
    /// Seeds shared by every architecture.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.seeds_per_arch as u64).map(|i| derive_seed(self.seed, 0xBE00 + i)).collect()
    }

    pub fn hash(&self, spec: &CellSpec, data: &Dataset) -> String {
        let seeds: Vec<String> = self.seeds().iter().map(u64::to_string).collect();
        crate::hash_hex(&format!(
            "bench;space={};recipe={};seeds={}",
            spec.descriptor(),
            self.train.scratch_hash(data),
            seeds.join(",")
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchDB {
    pub space: String,
    pub config_hash: String,
    pub records: Vec<BenchRecord>,
    index: HashMap<String, usize>,
}

impl BenchDB {
    pub fn new(space: String, config_hash: String, records: Vec<BenchRecord>) -> Self {
        let index = records.iter().enumerate().map(|(i, r)| (r.genotype.clone(), i)).collect();
        Self {
            space,
            config_hash,
            records,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "space {}", self.space);
        let _ = writeln!(out, "config {}", self.config_hash);
        let _ = writeln!(out, "count {}", self.records.len());
        for r in &self.records {
            let _ = writeln!(out, "{}", r.to_line());
        }
        out.push_str("complete\n");
        out
    }

    /// Parses a complete database.
    pub fn from_text(text: &str) -> Result<Self> {
        let (db, complete) = parse_partial(text)?;
        if !complete {
            return Err(Error::format("bench", "database is incomplete"));
        }
        Ok(db)
    }

    /// Loads a complete database, refusing a different space or recipe.
    pub fn load(path: &Path, space: &str, config_hash: &str) -> Result<Self> {
        let db = Self::from_text(&fs::read_to_string(path)?)?;
        if db.space != space {
            return Err(Error::ConfigMismatch { expected: space.into(), found: db.space });
        }
        if db.config_hash != config_hash {
            return Err(Error::ConfigMismatch { expected: config_hash.into(), found: db.config_hash });
        }
        Ok(db)
    }

    pub fn query(&self, genotype: &Genotype) -> Result<&BenchRecord> {
        self.query_str(&genotype.to_string())
    }

    pub fn query_str(&self, genotype: &str) -> Result<&BenchRecord> {
        self.index
            .get(genotype)
            .map(|&i| &self.records[i])
            .ok_or_else(|| Error::UnknownGenotype(genotype.to_string()))
    }

    /// Fraction of records whose mean test accuracy is strictly lower.
    pub fn rank_of(&self, genotype: &Genotype) -> Result<f64> {
        let target = self.query(genotype)?.mean_test;
        let lower = self.records.iter().filter(|r| r.mean_test < target).count();
        Ok(lower as f64 / self.records.len() as f64)
    }

    pub fn best(&self) -> Option<&BenchRecord> {
        self.records.iter().max_by(|a, b| a.mean_test.total_cmp(&b.mean_test))
    }

    pub fn worst(&self) -> Option<&BenchRecord> {
        self.records.iter().min_by(|a, b| a.mean_test.total_cmp(&b.mean_test))
    }
}

/// Header and records of a possibly unfinished file, plus whether it is complete.
fn parse_partial(text: &str) -> Result<(BenchDB, bool)> {
    let err = |m: &str| Error::format("bench", m);
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(err("unsupported header or version"));
    }
    let mut header = |key: &str| -> Result<String> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key))
            .and_then(|r| r.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| err(&format!("missing {key}")))
    };
    let space = header("space")?;
    let config = header("config")?;
    let count: usize = header("count")?.parse().map_err(|_| err("bad count"))?;
    let rest: Vec<&str> = lines.collect();
    let torn_tail = !text.ends_with('\n');
    let mut records = Vec::new();
    let mut complete = false;
    for (i, line) in rest.iter().enumerate() {
        if *line == "complete" {
            complete = true;
            break;
        }
        match BenchRecord::from_line(line, &config) {
            Ok(r) => records.push(r),
            // a half-written last line from an interrupted build
            Err(_) if torn_tail && i + 1 == rest.len() => break,
            Err(e) => return Err(e),
        }
    }
    if complete && records.len() != count {
        return Err(err("record count does not match the header"));
    }
    Ok((BenchDB::new(space, config, records), complete))
}

fn times_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".times");
    PathBuf::from(p)
}

fn header_text(space: &str, config: &str, count: usize) -> String {
    format!("{MAGIC}\nspace {space}\nconfig {config}\ncount {count}\n")
}

/// Trains every genotype of `spec` from scratch under each bench seed.
///
/// With `path`, records are appended and flushed one by one, and an existing
/// partial file for the same space and recipe is resumed. The finished file
/// is byte-identical whether or not the build was interrupted.
pub fn build_bench(
    spec: &CellSpec,
    data: &Dataset,
    cfg: &BenchConfig,
    path: Option<&Path>,
) -> Result<BenchDB> {
    if cfg.seeds_per_arch == 0 {
        return Err(Error::InvalidArgument("seeds_per_arch must be at least 1".into()));
    }
    cfg.train.validate()?;
    let genotypes = enumerate_genotypes(spec, cfg.cap)?;
    let space = spec.descriptor();
    let hash = cfg.hash(spec, data);
    let seeds = cfg.seeds();

    let mut done: Vec<BenchRecord> = Vec::new();
    let mut writer: Option<(BufWriter<File>, BufWriter<File>)> = None;
    if let Some(path) = path {
        if path.exists() {
            let text = fs::read_to_string(path)?;
            let (db, complete) = parse_partial(&text)?;
            if db.space != space {
                return Err(Error::ConfigMismatch { expected: space, found: db.space });
            }
            if db.config_hash != hash {
                return Err(Error::ConfigMismatch { expected: hash, found: db.config_hash });
            }
            for (r, g) in db.records.iter().zip(&genotypes) {
                if r.genotype != g.to_string() {
                    return Err(Error::format("bench", "records are not in enumeration order"));
                }
            }
            if complete {
                return Ok(db);
            }
            done = db.records;
        }
        // rewrite header and finished records so a torn tail disappears
        let mut text = header_text(&space, &hash, genotypes.len());
        for r in &done {
            text.push_str(&r.to_line());
            text.push('\n');
        }
        fs::write(path, text)?;
        let times = OpenOptions::new().create(true).append(true).open(times_path(path))?;
        let db_file = OpenOptions::new().append(true).open(path)?;
        writer = Some((BufWriter::new(db_file), BufWriter::new(times)));
    }

    let chunk = (rayon::current_num_threads() * 2).max(1);
    let todo = &genotypes[done.len()..];
    for group in todo.chunks(chunk) {
        let fresh: Vec<BenchRecord> = group
            .par_iter()
            .map(|g| {
                let parts = seeds
                    .iter()
                    .map(|&s| train_from_scratch(spec, g, data, &cfg.train, s))
                    .collect::<Result<Vec<_>>>()?;
                let mut r = BenchRecord::merge(&parts)?;
                r.config_hash = hash.clone();
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        for r in fresh {
            if let Some((db_w, times_w)) = writer.as_mut() {
                writeln!(db_w, "{}", r.to_line())?;
                db_w.flush()?;
                writeln!(times_w, "{} {:.6}", r.genotype, r.wall_time)?;
                times_w.flush()?;
            }
            done.push(r);
        }
    }
    if let Some((mut db_w, _)) = writer {
        db_w.write_all(b"complete\n")?;
        db_w.flush()?;
    }
    Ok(BenchDB::new(space, hash, done))
}

/// One point of a selection trajectory over supernet snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub genotype: Option<String>,
    pub oracle_test: Option<f64>,
    pub warning: Option<String>,
}

/// Runs `method` on each snapshot and looks the result up in `db`. Missing
/// snapshots produce a point carrying only a warning.
pub fn trajectory_eval(
    snapshots: &[(usize, Option<Supernet>)],
    method: SelectMethod,
    db: &BenchDB,
    data: &Dataset,
    cfg: &SelectConfig,
) -> Result<Vec<TrajectoryPoint>> {
    let specs: Vec<String> = snapshots
        .iter()
        .filter_map(|(_, s)| s.as_ref().map(|n| n.spec().hash()))
        .collect();
    if specs.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidArgument("snapshots come from different cells".into()));
    }
    let mut out = Vec::with_capacity(snapshots.len());
    for (epoch, snap) in snapshots {
        let Some(net) = snap else {
            out.push(TrajectoryPoint {
                epoch: *epoch,
                genotype: None,
                oracle_test: None,
                warning: Some(format!("checkpoint for epoch {epoch} is missing")),
            });
            continue;
        };
        let mut net = net.clone();
        let (g, _) = select(&mut net, data, cfg, method)?;
        let rec = db.query(&g)?;
        out.push(TrajectoryPoint {
            epoch: *epoch,
            genotype: Some(g.to_string()),
            oracle_test: Some(rec.mean_test),
            warning: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(g: &str, test: f64) -> BenchRecord {
        BenchRecord::from_runs(g.into(), "h".into(), &[(1, test, test)], 0.0)
    }

    #[test]
    fn mean_and_std_follow_runs() {
        let r = BenchRecord::from_runs("g".into(), "h".into(), &[(1, 0.5, 0.6), (2, 0.7, 0.8), (3, 0.6, 0.7)], 0.0);
        assert!((r.mean_test - 0.7).abs() < 1e-12);
        assert!((r.std_test - 0.1).abs() < 1e-12);
        assert!((r.mean_val - 0.6).abs() < 1e-12);
    }

    #[test]
    fn record_line_round_trip() {
        let r = BenchRecord::from_runs("skip@0->2;skip@1->2".into(), "h".into(), &[(3, 0.1, 0.2), (4, 0.3, 1.0 / 3.0)], 0.0);
        let back = BenchRecord::from_line(&r.to_line(), "h").unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn all_equal_db_ranks_zero() {
        let db = BenchDB::new("s".into(), "h".into(), vec![rec("a", 0.5), rec("b", 0.5), rec("c", 0.5)]);
        for g in ["a", "b", "c"] {
            let t = db.query_str(g).unwrap().mean_test;
            assert_eq!(db.records.iter().filter(|r| r.mean_test < t).count(), 0);
        }
    }

    #[test]
    fn text_round_trip_and_incomplete_rejected() {
        let db = BenchDB::new("s".into(), "h".into(), vec![rec("a", 0.5), rec("b", 0.25)]);
        let text = db.to_text();
        assert_eq!(BenchDB::from_text(&text).unwrap(), db);
        let cut = text.replace("complete\n", "");
        assert!(BenchDB::from_text(&cut).is_err());
        let (partial, complete) = parse_partial(&cut).unwrap();
        assert!(!complete);
        assert_eq!(partial.len(), 2);
    }

    #[test]
    fn unknown_genotype() {
        let db = BenchDB::new("s".into(), "h".into(), vec![rec("a", 0.5)]);
        assert!(matches!(db.query_str("b"), Err(Error::UnknownGenotype(_))));
    }
}
