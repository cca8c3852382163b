//! Supernet checkpoints as line-oriented text.
//!
//! Field order (one item per line, space separated):
//!
//! ```text
//! ptnas-supernet 1
//! spec_hash <hex>
//! input_dim <n>
//! num_classes <n>
//! mask_mode renormalize|zero_out
//! noise_seed <u64 hex>
//! rng_state <u64 hex>
//! alpha_frozen 0|1
//! tensor <name> <dims joined by 'x'> <f64 bit patterns as 16-digit hex>...
//!   (stems, then parametric ops edge-major, then head; weight before bias)
//! alpha <edge> <hex>...            one line per edge
//! mask <edge> <0|1>...             one line per edge
//! discretized <edge> <op tag|->    one line per edge
//! pruned <edge,edge,...|->
//! end
//! ```
//!
//! Floats are stored as raw IEEE-754 bit patterns so a save/load cycle is exact.

use std::fmt::Write as _;

use super::{MaskMode, Network, Supernet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::searchspace::{CellSpec, OpKind};

const MAGIC: &str = "ptnas-supernet 1";

fn hex_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{:016x}", v.to_bits()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_hex_f64(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::format("checkpoint", format!("bad float word {s:?}")))
}

fn parse_hex_u64(s: &str) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|_| Error::format("checkpoint", format!("bad word {s:?}")))
}

fn next_field(lines: &mut std::str::Lines<'_>, key: &str) -> Result<String> {
    let err = |m: String| Error::format("checkpoint", m);
    let line = lines.next().ok_or_else(|| err(format!("missing {key}")))?;
    if line == key {
        return Ok(String::new());
    }
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| err(format!("expected {key}, found {line:?}")))
}

impl Supernet {
    fn weight_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.stems.len() {
            names.push(format!("stem.{i}.weight"));
            names.push(format!("stem.{i}.bias"));
        }
        for (e, row) in self.ops.iter().enumerate() {
            for (k, slot) in row.iter().enumerate() {
                if slot.is_some() {
                    let tag = self.spec.edges[e].pool[k].tag();
                    names.push(format!("edge.{e}.{tag}.weight"));
                    names.push(format!("edge.{e}.{tag}.bias"));
                }
            }
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "spec_hash {}", self.spec.hash());
        let _ = writeln!(out, "input_dim {}", self.input_dim);
        let _ = writeln!(out, "num_classes {}", self.num_classes);
        let _ = writeln!(out, "mask_mode {}", self.mask_mode.name());
        let _ = writeln!(out, "noise_seed {:016x}", self.noise_seed);
        let _ = writeln!(out, "rng_state {:016x}", self.rng.state());
        let _ = writeln!(out, "alpha_frozen {}", u8::from(self.alpha.frozen));
        for (name, t) in self.weight_names().iter().zip(self.weights()) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "tensor {name} {} {}", dims.join("x"), hex_floats(t.data()));
        }
        for (e, row) in self.alpha.alpha.iter().enumerate() {
            let _ = writeln!(out, "alpha {e} {}", hex_floats(row));
        }
        for (e, row) in self.alpha.mask.iter().enumerate() {
            let bits: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
            let _ = writeln!(out, "mask {e} {}", bits.join(" "));
        }
        for (e, d) in self.discretized.iter().enumerate() {
            let tag = d.map(|k| self.spec.edges[e].pool[k].tag()).unwrap_or("-");
            let _ = writeln!(out, "discretized {e} {tag}");
        }
        let pruned: Vec<String> = self.pruned.iter().map(|e| e.to_string()).collect();
        let pruned = if pruned.is_empty() { "-".to_string() } else { pruned.join(",") };
        let _ = writeln!(out, "pruned {pruned}");
        out.push_str("end\n");
        out
    }

    /// Restores a checkpoint written by [`Supernet::to_checkpoint`] for `spec`.
    pub fn from_checkpoint(text: &str, spec: &CellSpec) -> Result<Supernet> {
        let err = |m: String| Error::format("checkpoint", m);
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(err("unsupported header or version".into()));
        }
        let mut field = |key: &str| next_field(&mut lines, key);
        let hash = field("spec_hash")?;
        if hash != spec.hash() {
            return Err(Error::ConfigMismatch {
                expected: spec.hash(),
                found: hash,
            });
        }
        let input_dim: usize = field("input_dim")?.parse().map_err(|_| err("input_dim".into()))?;
        let num_classes: usize =
            field("num_classes")?.parse().map_err(|_| err("num_classes".into()))?;
        let mask_mode = MaskMode::from_name(&field("mask_mode")?)
            .ok_or_else(|| err("mask_mode".into()))?;
        let noise_seed = parse_hex_u64(&field("noise_seed")?)?;
        let rng_state = parse_hex_u64(&field("rng_state")?)?;
        let frozen = match field("alpha_frozen")?.as_str() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("alpha_frozen {other:?}"))),
        };

        let mut net = Supernet::new(spec.clone(), input_dim, num_classes, 0);
        net.mask_mode = mask_mode;
        net.noise_seed = noise_seed;
        net.rng = SplitMix64::new(rng_state);
        net.alpha.frozen = frozen;

        let names = net.weight_names();
        let mut loaded: Vec<Tensor> = Vec::with_capacity(names.len());
        for name in &names {
            let rest = field("tensor")?;
            let mut parts = rest.split(' ');
            if parts.next() != Some(name.as_str()) {
                return Err(err(format!("expected tensor {name}")));
            }
            let dims = parts
                .next()
                .ok_or_else(|| err(format!("{name}: missing shape")))?
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| err(format!("{name}: bad shape"))))
                .collect::<Result<Vec<_>>>()?;
            let data = parts.map(parse_hex_f64).collect::<Result<Vec<_>>>()?;
            loaded.push(Tensor::new(dims, data)?);
        }
        for (slot, t) in net.weights_mut().into_iter().zip(loaded) {
            if slot.shape() != t.shape() {
                return Err(err("tensor shape does not match the cell".into()));
            }
            *slot = t;
        }

        let n_edges = spec.edges.len();
        for e in 0..n_edges {
            let rest = field("alpha")?;
            let (idx, vals) = rest.split_once(' ').ok_or_else(|| err("alpha row".into()))?;
            if idx != e.to_string() {
                return Err(err(format!("alpha row {idx} out of order")));
            }
            let row = vals.split(' ').map(parse_hex_f64).collect::<Result<Vec<_>>>()?;
            if row.len() != spec.edges[e].pool.len() {
                return Err(err(format!("alpha row {e} has wrong length")));
            }
            net.alpha.alpha[e] = row;
        }
        for e in 0..n_edges {
            let rest = field("mask")?;
            let (idx, vals) = rest.split_once(' ').ok_or_else(|| err("mask row".into()))?;
            if idx != e.to_string() {
                return Err(err(format!("mask row {idx} out of order")));
            }
            let row = vals
                .split(' ')
                .map(|b| match b {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(err(format!("bad mask bit {b:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != spec.edges[e].pool.len() {
                return Err(err(format!("mask row {e} has wrong length")));
            }
            net.alpha.mask[e] = row;
        }
        for e in 0..n_edges {
            let rest = field("discretized")?;
            let (idx, tag) = rest.split_once(' ').ok_or_else(|| err("discretized row".into()))?;
            if idx != e.to_string() {
                return Err(err(format!("discretized row {idx} out of order")));
            }
            net.discretized[e] = match tag {
                "-" => None,
                t => {
                    let op = OpKind::from_tag(t).ok_or_else(|| err(format!("unknown op {t:?}")))?;
                    Some(spec.edges[e].op_index(op).ok_or_else(|| err(format!("op {t} not in pool"))))
                        .transpose()?
                }
            };
        }
        let pruned = field("pruned")?;
        if pruned != "-" {
            for p in pruned.split(',') {
                let e: usize = p.parse().map_err(|_| err(format!("bad pruned edge {p:?}")))?;
                if e >= n_edges {
                    return Err(err(format!("pruned edge {e} out of range")));
                }
                net.pruned.insert(e);
            }
        }
        field("end").map_err(|_| err("missing end marker".into()))?;
        Ok(net)
    }
}
