//! Seeded synthetic classification datasets with fixed train/val/test splits.

use std::fmt::{self, Write as _};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Number of spiral turns covered by each arm.
const SPIRAL_TURNS: f64 = 1.0;
/// Spiral arms start at this radius so they do not meet at the origin.
const SPIRAL_R0: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Spirals,
    Moons,
    BlobsHard,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Spirals => "spirals",
            DatasetKind::Moons => "moons",
            DatasetKind::BlobsHard => "blobs_hard",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spirals" => Some(DatasetKind::Spirals),
            "moons" => Some(DatasetKind::Moons),
            "blobs_hard" => Some(DatasetKind::BlobsHard),
            _ => None,
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Generates `n` points with balanced classes and a 40/30/30 split.
/// File-name-safe key of the dataset [`make_dataset`] would generate.
pub fn cache_key(kind: DatasetKind, n: usize, classes: usize, noise: f64, seed: u64) -> String {
    format!("{kind}-n{n}-c{classes}-noise{:016x}-seed{seed}", noise.to_bits())
}

pub fn make_dataset(kind: DatasetKind, n: usize, classes: usize, noise: f64, seed: u64) -> Result<Dataset> {
    make_dataset_with_ratios(kind, n, classes, noise, seed, (0.4, 0.3))
}

/// As [`make_dataset`] with explicit train and val fractions; the test split
/// takes the remainder.
pub fn make_dataset_with_ratios(
    kind: DatasetKind,
    n: usize,
    classes: usize,
    noise: f64,
    seed: u64,
    (train_frac, val_frac): (f64, f64),
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidArgument("at least two classes are needed".into()));
    }
    if n < 10 * classes {
        return Err(Error::InvalidArgument(format!(
            "n = {n} is below 10 samples per class"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level {noise} must be >= 0")));
    }
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
        return Err(Error::InvalidArgument("invalid split fractions".into()));
    }
    if kind == DatasetKind::Moons && classes != 2 {
        return Err(Error::InvalidArgument("moons has exactly two classes".into()));
    }

    let mut rng = SplitMix64::new(derive_seed(seed, 0xDA7A));
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let count = n / classes + usize::from(c < n % classes);
        for i in 0..count {
            let t = (i as f64 + 0.5) / count as f64;
            let (x, y) = match kind {
                DatasetKind::Spirals => {
                    let r = SPIRAL_R0 + (1.0 - SPIRAL_R0) * t;
                    let theta = 2.0 * std::f64::consts::PI
                        * (SPIRAL_TURNS * t + c as f64 / classes as f64);
                    (r * theta.cos(), r * theta.sin())
                }
                DatasetKind::Moons => {
                    let a = std::f64::consts::PI * t;
                    if c == 0 {
                        (a.cos(), a.sin())
                    } else {
                        (1.0 - a.cos(), 0.5 - a.sin())
                    }
                }
                DatasetKind::BlobsHard => {
                    let a = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                    (a.cos() + 0.6 * rng.normal(), a.sin() + 0.6 * rng.normal())
                }
            };
            xs.push(x + noise * rng.normal());
            xs.push(y + noise * rng.normal());
            labels.push(c);
        }
    }

    let order = rng.permutation(n);
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_val = ((n as f64) * val_frac).round() as usize;
    let n_val = n_val.min(n - n_train);
    let train = order[..n_train].to_vec();
    let val = order[n_train..n_train + n_val].to_vec();
    let test = order[n_train + n_val..].to_vec();

    Ok(Dataset {
        kind,
        classes,
        noise,
        seed,
        inputs: Tensor::matrix(n, 2, xs)?,
        labels,
        train,
        val,
        test,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Inputs and labels of the listed rows.
    pub fn batch(&self, rows: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.select_rows(rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Cache key `(kind, n, classes, noise, seed)`.
    pub fn cache_key(&self) -> String {
        cache_key(self.kind, self.len(), self.classes, self.noise, self.seed)
    }

    /// Exact text serialization (floats as bit patterns).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ptnas-dataset 1");
        let _ = writeln!(
            out,
            "kind {} n {} classes {} noise {:016x} seed {}",
            self.kind,
            self.len(),
            self.classes,
            self.noise.to_bits(),
            self.seed
        );
        for i in 0..self.len() {
            let row = self.inputs.row(i);
            let _ = writeln!(
                out,
                "{} {:016x} {:016x}",
                self.labels[i],
                row[0].to_bits(),
                row[1].to_bits()
            );
        }
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let ids: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{name} {}", ids.join(","));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |m: &str| Error::format("dataset", m);
        let mut lines = text.lines();
        if lines.next() != Some("ptnas-dataset 1") {
            return Err(err("bad header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| err("missing meta"))?.split(' ').collect();
        if meta.len() != 10 {
            return Err(err("bad meta line"));
        }
        let kind = DatasetKind::from_name(meta[1]).ok_or_else(|| err("kind"))?;
        let n: usize = meta[3].parse().map_err(|_| err("n"))?;
        let classes: usize = meta[5].parse().map_err(|_| err("classes"))?;
        let noise = f64::from_bits(u64::from_str_radix(meta[7], 16).map_err(|_| err("noise"))?);
        let seed: u64 = meta[9].parse().map_err(|_| err("seed"))?;
        let mut xs = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let parts: Vec<&str> = lines.next().ok_or_else(|| err("short file"))?.split(' ').collect();
            if parts.len() != 3 {
                return Err(err("bad row"));
            }
            labels.push(parts[0].parse().map_err(|_| err("label"))?);
            for p in &parts[1..] {
                xs.push(f64::from_bits(u64::from_str_radix(p, 16).map_err(|_| err("value"))?));
            }
        }
        let mut split = |name: &str| -> Result<Vec<usize>> {
            let line = lines.next().ok_or_else(|| err("missing split"))?;
            let rest = line
                .strip_prefix(name)
                .ok_or_else(|| err("split order"))?
                .trim_start();
            if rest.is_empty() {
                return Ok(vec![]);
            }
            rest.split(',').map(|v| v.parse().map_err(|_| err("index"))).collect()
        };
        let train = split("train")?;
        let val = split("val")?;
        let test = split("test")?;
        Ok(Self {
            kind,
            classes,
            noise,
            seed,
            inputs: Tensor::matrix(n, 2, xs)?,
            labels,
            train,
            val,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knn1_accuracy(d: &Dataset) -> f64 {
        let mut correct = 0;
        for &q in &d.test {
            let qr = d.inputs.row(q);
            let best = d
                .train
                .iter()
                .min_by(|&&a, &&b| {
                    let da: f64 = d.inputs.row(a).iter().zip(qr).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = d.inputs.row(b).iter().zip(qr).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            if d.labels[*best] == d.labels[q] {
                correct += 1;
            }
        }
        correct as f64 / d.test.len() as f64
    }

    #[test]
    fn spirals_are_deterministic() {
        let a = make_dataset(DatasetKind::Spirals, 600, 3, 0.05, 7).unwrap();
        let b = make_dataset(DatasetKind::Spirals, 600, 3, 0.05, 7).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = make_dataset(DatasetKind::Spirals, 600, 3, 0.05, 8).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn default_split_sizes() {
        let d = make_dataset(DatasetKind::Spirals, 600, 3, 0.05, 1).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (240, 180, 180));
        let mut all: Vec<usize> = d.train.iter().chain(&d.val).chain(&d.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..600).collect::<Vec<_>>());
    }

    #[test]
    fn classes_are_balanced() {
        let d = make_dataset(DatasetKind::BlobsHard, 301, 3, 0.0, 2).unwrap();
        let counts: Vec<usize> = (0..3).map(|c| d.labels.iter().filter(|&&l| l == c).count()).collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn noiseless_spirals_are_separable_by_1nn() {
        let d = make_dataset(DatasetKind::Spirals, 600, 3, 0.0, 7).unwrap();
        let acc = knn1_accuracy(&d);
        assert!(acc >= 0.99, "1-NN accuracy {acc}");
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(make_dataset(DatasetKind::Spirals, 20, 3, 0.0, 1).is_err());
        assert!(make_dataset(DatasetKind::Moons, 300, 3, 0.0, 1).is_err());
        assert!(make_dataset(DatasetKind::Spirals, 300, 3, -1.0, 1).is_err());
    }

    #[test]
    fn text_round_trip() {
        let d = make_dataset(DatasetKind::Moons, 100, 2, 0.1, 3).unwrap();
        let back = Dataset::from_text(&d.to_text()).unwrap();
        assert_eq!(back, d);
    }
}
