//! Cell DAGs, candidate-operation pools, discrete genotypes and their
//! exhaustive enumeration.
//!
//! Nodes are numbered with the cell inputs first (`0..num_inputs`) followed by
//! the intermediate nodes. Intermediate node `t` receives one edge from every
//! node with a smaller index, and edges are ordered by `(target, source)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Skip,
    /// The "none" operation: outputs zeros and is never selectable.
    Zero,
    /// Standard-normal noise that ignores its input.
    Noise,
    Dense,
    DenseRelu,
    DenseTanh,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::Skip,
        OpKind::Zero,
        OpKind::Noise,
        OpKind::Dense,
        OpKind::DenseRelu,
        OpKind::DenseTanh,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            OpKind::Skip => "skip",
            OpKind::Zero => "zero",
            OpKind::Noise => "noise",
            OpKind::Dense => "dense",
            OpKind::DenseRelu => "dense_relu",
            OpKind::DenseTanh => "dense_tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.tag() == tag)
    }

    pub fn is_parametric(self) -> bool {
        matches!(self, OpKind::Dense | OpKind::DenseRelu | OpKind::DenseTanh)
    }

    /// Trainable scalars owned by the op at the given feature width.
    pub fn param_count(self, width: usize) -> usize {
        if self.is_parametric() {
            width * width + width
        } else {
            0
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceVariant {
    Full,
    S1p,
    S2p,
    S3p,
    S4p,
}

impl SpaceVariant {
    pub fn name(self) -> &'static str {
        match self {
            SpaceVariant::Full => "full",
            SpaceVariant::S1p => "s1p",
            SpaceVariant::S2p => "s2p",
            SpaceVariant::S3p => "s3p",
            SpaceVariant::S4p => "s4p",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Full, Self::S1p, Self::S2p, Self::S3p, Self::S4p]
            .into_iter()
            .find(|v| v.name() == name.to_ascii_lowercase())
    }

    /// The shared pool of every edge, or `None` for the per-edge S1P pools.
    pub fn fixed_pool(self) -> Option<Vec<OpKind>> {
        match self {
            SpaceVariant::Full => Some(OpKind::ALL.to_vec()),
            SpaceVariant::S1p => None,
            SpaceVariant::S2p => Some(vec![OpKind::Skip, OpKind::DenseRelu]),
            SpaceVariant::S3p => Some(vec![OpKind::Zero, OpKind::Skip, OpKind::DenseRelu]),
            SpaceVariant::S4p => Some(vec![OpKind::Noise, OpKind::DenseRelu]),
        }
    }
}

impl fmt::Display for SpaceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-edge pools for the S1P variant, keyed by `(source, target)`.
pub type S1Pools = BTreeMap<(usize, usize), Vec<OpKind>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub pool: Vec<OpKind>,
}

impl Edge {
    pub fn op_index(&self, op: OpKind) -> Option<usize> {
        self.pool.iter().position(|&o| o == op)
    }

    /// Pool members that may be chosen as a final operation.
    pub fn selectable(&self) -> impl Iterator<Item = (usize, OpKind)> + '_ {
        self.pool
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, op)| *op != OpKind::Zero)
    }

    pub fn label(&self) -> String {
        format!("{}->{}", self.source, self.target)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellSpec {
    pub variant: SpaceVariant,
    pub num_inputs: usize,
    pub num_intermediate: usize,
    pub feature_width: usize,
    pub edges: Vec<Edge>,
}

impl CellSpec {
    pub fn num_nodes(&self) -> usize {
        self.num_inputs + self.num_intermediate
    }

    pub fn intermediate_nodes(&self) -> std::ops::Range<usize> {
        self.num_inputs..self.num_nodes()
    }

    pub fn edge_index(&self, source: usize, target: usize) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.source == source && e.target == target)
    }

    /// Indices of the edges entering `node`, by increasing source.
    pub fn input_edges(&self, node: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| self.edges[i].target == node)
            .collect()
    }

    /// Input edges each intermediate node keeps in a discrete architecture.
    pub fn retained_per_node(&self, node: usize) -> usize {
        self.input_edges(node).len().min(2)
    }

    /// Number of mixed paths (edge, op) in the supernet.
    pub fn num_paths(&self) -> usize {
        self.edges.iter().map(|e| e.pool.len()).sum()
    }

    /// Stable one-line description used in file headers and hashes.
    pub fn descriptor(&self) -> String {
        let pools: Vec<String> = self
            .edges
            .iter()
            .map(|e| {
                let ops: Vec<&str> = e.pool.iter().map(|o| o.tag()).collect();
                format!("{}:{}", e.label(), ops.join(","))
            })
            .collect();
        format!(
            "variant={} inputs={} intermediate={} width={} edges={}",
            self.variant,
            self.num_inputs,
            self.num_intermediate,
            self.feature_width,
            pools.join("|")
        )
    }

    /// Short content hash of [`CellSpec::descriptor`].
    pub fn hash(&self) -> String {
        crate::hash_hex(&self.descriptor())
    }

    fn validate(&self) -> Result<()> {
        for (i, e) in self.edges.iter().enumerate() {
            if e.source >= e.target {
                return Err(Error::InvalidSpace(format!("edge {i} is not forward")));
            }
            if e.pool.is_empty() {
                return Err(Error::InvalidSpace(format!("edge {} has an empty pool", e.label())));
            }
            let unique: BTreeSet<_> = e.pool.iter().collect();
            if unique.len() != e.pool.len() {
                return Err(Error::InvalidSpace(format!(
                    "edge {} has a duplicated op",
                    e.label()
                )));
            }
            if e.selectable().next().is_none() {
                return Err(Error::InvalidSpace(format!(
                    "edge {} has no selectable op",
                    e.label()
                )));
            }
        }
        Ok(())
    }
}

/// Builds the complete cell DAG for `variant`.
pub fn build_space(
    variant: SpaceVariant,
    num_inputs: usize,
    num_intermediate: usize,
    feature_width: usize,
    s1_pools: Option<&S1Pools>,
) -> Result<CellSpec> {
    if num_inputs == 0 || num_intermediate == 0 || feature_width == 0 {
        return Err(Error::InvalidSpace("all dimensions must be at least 1".into()));
    }
    if variant == SpaceVariant::S1p && s1_pools.is_none() {
        return Err(Error::InvalidSpace(
            "variant s1p needs space.s1_pools.<edge> entries".into(),
        ));
    }
    let mut edges = Vec::new();
    for target in num_inputs..num_inputs + num_intermediate {
        for source in 0..target {
            let pool = match variant.fixed_pool() {
                Some(p) => p,
                None => {
                    let pools = s1_pools.expect("checked above");
                    let p = pools.get(&(source, target)).ok_or_else(|| {
                        Error::InvalidSpace(format!("missing s1p pool for edge {source}->{target}"))
                    })?;
                    if p.len() != 2 {
                        return Err(Error::InvalidSpace(format!(
                            "s1p pool for edge {source}->{target} must list two ops"
                        )));
                    }
                    p.clone()
                }
            };
            edges.push(Edge {
                source,
                target,
                pool,
            });
        }
    }
    if let Some(pools) = s1_pools.filter(|_| variant == SpaceVariant::S1p) {
        for &(s, t) in pools.keys() {
            if !edges.iter().any(|e| e.source == s && e.target == t) {
                return Err(Error::InvalidSpace(format!("s1p pool given for unknown edge {s}->{t}")));
            }
        }
    }
    let spec = CellSpec {
        variant,
        num_inputs,
        num_intermediate,
        feature_width,
        edges,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GenotypeEdge {
    pub source: usize,
    pub target: usize,
    pub op: OpKind,
}

/// A discrete architecture: the retained input edges of every intermediate
/// node, each carrying one selectable operation. Edges are kept sorted by
/// `(target, source)`, which is also the canonical text order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Genotype {
    edges: Vec<GenotypeEdge>,
}

impl Genotype {
    /// Validates `edges` against `spec`.
    pub fn new(spec: &CellSpec, mut edges: Vec<GenotypeEdge>) -> Result<Self> {
        edges.sort_by_key(|e| (e.target, e.source));
        for w in edges.windows(2) {
            if (w[0].source, w[0].target) == (w[1].source, w[1].target) {
                return Err(Error::InvalidGenotype(format!(
                    "edge {}->{} listed twice",
                    w[0].source, w[0].target
                )));
            }
        }
        for e in &edges {
            let idx = spec.edge_index(e.source, e.target).ok_or_else(|| {
                Error::InvalidGenotype(format!("edge {}->{} is not in the cell", e.source, e.target))
            })?;
            if e.op == OpKind::Zero {
                return Err(Error::InvalidGenotype(format!(
                    "edge {}->{} chooses the zero op",
                    e.source, e.target
                )));
            }
            if spec.edges[idx].op_index(e.op).is_none() {
                return Err(Error::InvalidGenotype(format!(
                    "op {} is not in the pool of edge {}->{}",
                    e.op, e.source, e.target
                )));
            }
        }
        for node in spec.intermediate_nodes() {
            let count = edges.iter().filter(|e| e.target == node).count();
            let want = spec.retained_per_node(node);
            if count != want {
                return Err(Error::InvalidGenotype(format!(
                    "node {node} has {count} inputs, expected {want}"
                )));
            }
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> &[GenotypeEdge] {
        &self.edges
    }

    pub fn op_on(&self, source: usize, target: usize) -> Option<OpKind> {
        self.edges
            .iter()
            .find(|e| e.source == source && e.target == target)
            .map(|e| e.op)
    }

    pub fn retained(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|e| e.target == node)
            .map(|e| e.source)
            .collect()
    }

    /// Parses the canonical `op@src->dst;...` form and validates it.
    pub fn parse(text: &str, spec: &CellSpec) -> Result<Self> {
        let mut edges = Vec::new();
        let mut offset = 0usize;
        for item in text.split(';') {
            let start = offset;
            offset += item.len() + 1;
            let err = |pos: usize, message: String| Error::GenotypeParse {
                position: start + pos,
                message,
            };
            let trimmed = item.trim();
            if trimmed.is_empty() {
                return Err(err(0, "empty edge entry".into()));
            }
            let lead = item.len() - item.trim_start().len();
            let at = trimmed
                .find('@')
                .ok_or_else(|| err(lead, format!("missing '@' in {trimmed:?}")))?;
            let tag = &trimmed[..at];
            let op = OpKind::from_tag(tag)
                .ok_or_else(|| err(lead, format!("unknown op tag {tag:?}")))?;
            let rest = &trimmed[at + 1..];
            let arrow = rest
                .find("->")
                .ok_or_else(|| err(lead + at + 1, "missing '->'".into()))?;
            let parse_node = |s: &str, pos: usize| {
                s.parse::<usize>()
                    .map_err(|_| err(pos, format!("expected a node index, found {s:?}")))
            };
            let source = parse_node(&rest[..arrow], lead + at + 1)?;
            let target = parse_node(&rest[arrow + 2..], lead + at + 1 + arrow + 2)?;
            edges.push(GenotypeEdge {
                source,
                target,
                op,
            });
        }
        Self::new(spec, edges)
    }
}

impl fmt::Display for Genotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.edges.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{}@{}->{}", e.op, e.source, e.target)?;
        }
        Ok(())
    }
}

fn choose2(n: usize) -> u128 {
    (n as u128) * (n as u128).saturating_sub(1) / 2
}

/// Number of genotypes in `spec`, without enumerating them.
pub fn genotype_count(spec: &CellSpec) -> u128 {
    let mut total: u128 = 1;
    for node in spec.intermediate_nodes() {
        let inputs = spec.input_edges(node);
        let k = spec.retained_per_node(node);
        // Sum over retained subsets of the product of selectable pool sizes.
        let per: Vec<u128> = inputs
            .iter()
            .map(|&e| spec.edges[e].selectable().count() as u128)
            .collect();
        let node_total: u128 = if k == 1 {
            per.iter().sum()
        } else {
            let mut s = 0u128;
            for i in 0..per.len() {
                for j in i + 1..per.len() {
                    s = s.saturating_add(per[i] * per[j]);
                }
            }
            s
        };
        total = total.saturating_mul(node_total);
    }
    total
}

/// Closed form for cells whose edges share one selectable pool size:
/// `prod_t C(in_degree(t), 2) * pool^(retained edges)`.
pub fn uniform_pool_count(spec: &CellSpec, pool_eff: usize) -> u128 {
    let mut total: u128 = 1;
    let mut retained = 0u32;
    for node in spec.intermediate_nodes() {
        let indeg = spec.input_edges(node).len();
        let k = spec.retained_per_node(node);
        total *= if k == 2 { choose2(indeg) } else { indeg as u128 };
        retained += k as u32;
    }
    total * (pool_eff as u128).pow(retained)
}

/// Every genotype of `spec` in a fixed order: topology choices vary slowest
/// (per node, source pairs in lexicographic order), then ops per retained
/// edge in pool order with the last edge varying fastest.
pub fn enumerate_genotypes(spec: &CellSpec, cap: usize) -> Result<Vec<Genotype>> {
    let count = genotype_count(spec);
    if count > cap as u128 {
        return Err(Error::CapExceeded { count, cap });
    }

    let mut per_node: Vec<Vec<Vec<usize>>> = Vec::new();
    for node in spec.intermediate_nodes() {
        let inputs = spec.input_edges(node);
        let mut subsets = Vec::new();
        if spec.retained_per_node(node) == 1 {
            subsets.extend(inputs.iter().map(|&e| vec![e]));
        } else {
            for i in 0..inputs.len() {
                for j in i + 1..inputs.len() {
                    subsets.push(vec![inputs[i], inputs[j]]);
                }
            }
        }
        per_node.push(subsets);
    }

    let mut topologies: Vec<Vec<usize>> = vec![vec![]];
    for subsets in &per_node {
        let mut next = Vec::with_capacity(topologies.len() * subsets.len());
        for prefix in &topologies {
            for s in subsets {
                let mut t = prefix.clone();
                t.extend_from_slice(s);
                next.push(t);
            }
        }
        topologies = next;
    }

    let mut out = Vec::with_capacity(count as usize);
    for topo in &topologies {
        let pools: Vec<Vec<OpKind>> = topo
            .iter()
            .map(|&e| spec.edges[e].selectable().map(|(_, op)| op).collect())
            .collect();
        let mut choice = vec![0usize; topo.len()];
        'odometer: loop {
            let edges = topo
                .iter()
                .zip(&choice)
                .zip(&pools)
                .map(|((&e, &c), pool)| GenotypeEdge {
                    source: spec.edges[e].source,
                    target: spec.edges[e].target,
                    op: pool[c],
                })
                .collect();
            out.push(Genotype::new(spec, edges)?);
            let mut pos = topo.len();
            loop {
                if pos == 0 {
                    break 'odometer;
                }
                pos -= 1;
                choice[pos] += 1;
                if choice[pos] < pools[pos].len() {
                    break;
                }
                choice[pos] = 0;
            }
        }
    }
    Ok(out)
}
