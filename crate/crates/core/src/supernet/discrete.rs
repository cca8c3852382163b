use super::layers::{Linear, Network};
use super::{apply_op, noise_seed_for, sum_or_zeros, Supernet};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::searchspace::{CellSpec, Genotype};

/// Standalone network of one genotype: the same stems, node aggregation and
/// head as the supernet, with a single operation on each retained edge.
#[derive(Clone, Debug, PartialEq)]
pub struct GenotypeNet {
    spec: CellSpec,
    genotype: Genotype,
    input_dim: usize,
    num_classes: usize,
    stems: Vec<Linear>,
    // (spec edge index, op weights) per genotype edge, canonical order
    edges: Vec<(usize, Option<Linear>)>,
    head: Linear,
    noise_seed: u64,
}

impl GenotypeNet {
    /// Freshly initialized network for `genotype`.
    pub fn new(
        spec: &CellSpec,
        genotype: &Genotype,
        input_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        // revalidate against this spec
        let genotype = Genotype::parse(&genotype.to_string(), spec)?;
        let width = spec.feature_width;
        let mut init = SplitMix64::new(derive_seed(seed, 1));
        let stems = (0..spec.num_inputs)
            .map(|_| Linear::new(input_dim, width, &mut init))
            .collect();
        let edges = genotype
            .edges()
            .iter()
            .map(|g| {
                let idx = spec.edge_index(g.source, g.target).expect("validated edge");
                let w = g.op.is_parametric().then(|| Linear::new(width, width, &mut init));
                (idx, w)
            })
            .collect();
        let head = Linear::new(width, num_classes, &mut init);
        Ok(Self {
            spec: spec.clone(),
            genotype,
            input_dim,
            num_classes,
            stems,
            edges,
            head,
            noise_seed: derive_seed(seed, 3),
        })
    }

    /// Extracts the network of a fully discretized and pruned supernet,
    /// sharing its weights.
    pub fn from_supernet(net: &Supernet) -> Result<Self> {
        let genotype = net.decided_genotype()?;
        let spec = net.spec().clone();
        let edges = genotype
            .edges()
            .iter()
            .map(|g| {
                let idx = spec.edge_index(g.source, g.target).expect("validated edge");
                let k = net
                    .discretized_index(idx)
                    .ok_or_else(|| Error::Supernet(format!("edge {idx} is undecided")))?;
                Ok((idx, net.op_weights(idx, k).cloned()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            genotype,
            input_dim: net.input_dim(),
            num_classes: net.num_classes(),
            stems: net.stems().to_vec(),
            edges,
            head: net.head().clone(),
            noise_seed: net.noise_seed(),
            spec,
        })
    }

    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }
}

impl Network for GenotypeNet {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn weights(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for s in &self.stems {
            out.push(&s.weight);
            out.push(&s.bias);
        }
        for (_, l) in &self.edges {
            if let Some(l) = l {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    fn weights_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for s in &mut self.stems {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        for (_, l) in &mut self.edges {
            if let Some(l) = l {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    fn logits(&self, tape: &mut Tape, x: Var, weight_vars: &[Var]) -> Result<Var> {
        let rows = tape.value(x).rows();
        let shape = [rows, self.spec.feature_width];
        let mut nodes = Vec::with_capacity(self.spec.num_nodes());
        for i in 0..self.spec.num_inputs {
            nodes.push(Linear::apply(tape, x, weight_vars[2 * i], weight_vars[2 * i + 1])?);
        }
        let mut next_param = 2 * self.spec.num_inputs;
        let mut cursor = 0;
        for node in self.spec.intermediate_nodes() {
            let mut terms = Vec::new();
            while cursor < self.edges.len() && self.spec.edges[self.edges[cursor].0].target == node {
                let (idx, ref w) = self.edges[cursor];
                let params = w.as_ref().map(|_| {
                    let p = (weight_vars[next_param], weight_vars[next_param + 1]);
                    next_param += 2;
                    p
                });
                let g = &self.genotype.edges()[cursor];
                let src = nodes[g.source];
                let nseed = noise_seed_for(self.noise_seed, idx, rows);
                if let Some(out) = apply_op(tape, g.op, src, params, nseed)? {
                    terms.push(out);
                }
                cursor += 1;
            }
            nodes.push(sum_or_zeros(tape, &terms, &shape)?);
        }
        let inter: Vec<Var> = nodes[self.spec.num_inputs..].to_vec();
        let total = sum_or_zeros(tape, &inter, &shape)?;
        let cell = tape.scale(total, 1.0 / self.spec.num_intermediate as f64)?;
        let n = weight_vars.len();
        Linear::apply(tape, cell, weight_vars[n - 2], weight_vars[n - 1])
    }
}
