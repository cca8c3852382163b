use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    BiasAdd(Var, Var),
    Relu(Var),
    Tanh(Var),
    Mean(Var),
    Softmax(Var),
    MaskedSoftmax(Var),
    WeightedSum { weights: Var, terms: Vec<(usize, Var)> },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Noise,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Noise => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::MatMul(a, b) | Op::BiasAdd(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Tanh(a) | Op::Mean(a) | Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                vec![*a]
            }
            Op::WeightedSum { weights, terms } => {
                let mut v = vec![*weights];
                v.extend(terms.iter().map(|(_, t)| *t));
                v
            }
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of primitive operations. Nodes are appended in execution
/// order, so every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_var: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_var.get(&var)
    }

    /// Gradient values of `var`; panics if `var` was not a gradient leaf.
    pub fn wrt(&self, var: Var) -> &[f64] {
        self.by_var
            .get(&var)
            .unwrap_or_else(|| panic!("no gradient recorded for {var:?}"))
            .data()
    }

    pub fn len(&self) -> usize {
        self.by_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_var.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.by_var.iter().map(|(v, t)| (*v, t))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn node(&self, var: Var) -> Result<&Node> {
        self.nodes.get(var.0).ok_or(Error::UnknownVar(var.0))
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let index = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op_name,
                node: index,
            });
        }
        let needs_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(index))
    }

    /// Records a leaf. Its gradient is reported by [`Tape::backward`] when
    /// `tensor.requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Result<Var> {
        self.push("leaf", tensor, Op::Leaf)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Result<Var> {
        tensor.requires_grad = false;
        self.push("constant", tensor, Op::Leaf)
    }

    pub fn param(&mut self, mut tensor: Tensor) -> Result<Var> {
        tensor.requires_grad = true;
        self.push("param", tensor, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() != y.shape() {
            return Err(mismatch("add", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape() != y.shape() {
            return Err(mismatch("sub", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let x = &self.node(a)?.value;
        let data = x.data().iter().map(|p| p * factor).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("scale", out, Op::Scale(a, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.node(a)?.value, &self.node(b)?.value);
        if x.shape().len() != 2 || y.shape().len() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(mismatch("matmul", x, y));
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let (xd, yd) = (x.data(), y.data());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let xv = xd[i * k + p];
                let yrow = &yd[p * n..(p + 1) * n];
                for (o, w) in row.iter_mut().zip(yrow) {
                    *o += xv * w;
                }
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// Adds a length-`n` vector to every row of an `(m, n)` matrix.
    pub fn bias_add(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (&self.node(a)?.value, &self.node(bias)?.value);
        if x.shape().len() != 2 || b.shape() != [x.shape()[1]] {
            return Err(mismatch("bias_add", x, b));
        }
        let n = x.shape()[1];
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b.data()[i % n])
            .collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("bias_add", out, Op::BiasAdd(a, bias))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let data = x.data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("relu", out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let data = x.data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push("tanh", out, Op::Tanh(a))
    }

    /// Mean over all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = &self.node(a)?.value;
        let m = x.data().iter().sum::<f64>() / x.numel() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?.value.numel();
        self.softmax_impl(a, &vec![true; n], false)
    }

    /// Softmax over the entries where `active` is set; inactive entries are
    /// exactly zero and the active ones sum to one.
    pub fn masked_softmax(&mut self, a: Var, active: &[bool]) -> Result<Var> {
        self.softmax_impl(a, active, true)
    }

    fn softmax_impl(&mut self, a: Var, active: &[bool], masked: bool) -> Result<Var> {
        let x = &self.node(a)?.value;
        if x.shape().len() != 1 || active.len() != x.numel() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                left: x.shape().to_vec(),
                right: vec![active.len()],
            });
        }
        if !active.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("softmax over an empty support".into()));
        }
        let max = x
            .data()
            .iter()
            .zip(active)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x
            .data()
            .iter()
            .zip(active)
            .map(|(v, &m)| if m { (v - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = exps.iter().sum();
        let out = Tensor::vector(exps.into_iter().map(|e| e / total).collect());
        let op = if masked { Op::MaskedSoftmax(a) } else { Op::Softmax(a) };
        self.push("softmax", out, op)
    }

    /// `sum_j weights[index_j] * term_j` over the listed `(index, term)` pairs.
    /// Every term must share one shape and `weights` must be a vector.
    pub fn weighted_sum(&mut self, weights: Var, terms: &[(usize, Var)]) -> Result<Var> {
        let w = &self.node(weights)?.value;
        if w.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                left: w.shape().to_vec(),
                right: vec![w.numel()],
            });
        }
        let Some(&(_, first)) = terms.first() else {
            return Err(Error::InvalidArgument("weighted_sum needs at least one term".into()));
        };
        let shape = self.node(first)?.value.shape().to_vec();
        let mut data = vec![0.0; shape.iter().product()];
        for &(idx, t) in terms {
            let tv = &self.node(t)?.value;
            if tv.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "weighted_sum",
                    left: shape.clone(),
                    right: tv.shape().to_vec(),
                });
            }
            let Some(&coef) = w.data().get(idx) else {
                return Err(Error::InvalidArgument(format!(
                    "weighted_sum index {idx} outside weight vector of length {}",
                    w.numel()
                )));
            };
            for (o, v) in data.iter_mut().zip(tv.data()) {
                *o += coef * v;
            }
        }
        let out = Tensor::new(shape, data)?;
        self.push(
            "weighted_sum",
            out,
            Op::WeightedSum {
                weights,
                terms: terms.to_vec(),
            },
        )
    }

    /// Mean negative log-likelihood of integer `labels` under row-wise softmax
    /// of an `(m, classes)` logit matrix.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = &self.node(logits)?.value;
        if z.shape().len() != 2 || z.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: z.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        let c = z.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let loss = total / labels.len() as f64;
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Standard-normal constant drawn from `seed`. Carries no gradient and
    /// does not depend on any other tape value.
    pub fn gaussian_noise_const(&mut self, shape: &[usize], seed: u64) -> Result<Var> {
        self.push("gaussian_noise_const", Tensor::gaussian(shape, seed), Op::Noise)
    }

    /// Reverse pass from a scalar `loss`. Returns the gradient of every
    /// `requires_grad` leaf (zero when the leaf does not reach the loss) and
    /// stores it in the leaf's `grad` slot. A tape supports one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let loss_value = &self.node(loss)?.value;
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            for (input, contribution) in self.vjp(i, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let g = grads[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.grad = Some(g.clone());
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                out.by_var.insert(Var(i), t);
            }
        }
        Ok(out)
    }

    /// Vector-Jacobian products of node `i` given its upstream gradient.
    fn vjp(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Noise => vec![],
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Scale(a, f) => vec![(*a, g.iter().map(|x| x * f).collect())],
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                let (xd, yd) = (x.data(), y.data());
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let yrow = &yd[p * n..(p + 1) * n];
                        ga[r * k + p] = grow.iter().zip(yrow).map(|(u, v)| u * v).sum();
                        let xv = xd[r * k + p];
                        for (acc, u) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *acc += xv * u;
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::BiasAdd(a, b) => {
                let n = val(*b).numel();
                let mut gb = vec![0.0; n];
                for (j, v) in g.iter().enumerate() {
                    gb[j % n] += v;
                }
                vec![(*a, g.to_vec()), (*b, gb)]
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(u, v)| if *v > 0.0 { *u } else { 0.0 })
                    .collect();
                vec![(*a, ga)]
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let ga = g.iter().zip(y).map(|(u, t)| u * (1.0 - t * t)).collect();
                vec![(*a, ga)]
            }
            Op::Mean(a) => {
                let n = val(*a).numel();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            // masked entries have s = 0, so the same formula zeroes their gradient
            Op::Softmax(a) | Op::MaskedSoftmax(a) => {
                let s = self.nodes[i].value.data();
                let dot: f64 = s.iter().zip(g).map(|(p, q)| p * q).sum();
                let ga = s.iter().zip(g).map(|(p, q)| p * (q - dot)).collect();
                vec![(*a, ga)]
            }
            Op::WeightedSum { weights, terms } => {
                let w = val(*weights).data();
                let mut gw = vec![0.0; w.len()];
                let mut out = Vec::with_capacity(terms.len() + 1);
                for &(idx, t) in terms {
                    gw[idx] += g.iter().zip(val(t).data()).map(|(p, q)| p * q).sum::<f64>();
                    out.push((t, g.iter().map(|p| p * w[idx]).collect()));
                }
                out.push((*weights, gw));
                out
            }
            Op::CrossEntropy { logits, labels } => {
                let z = val(*logits);
                let c = z.shape()[1];
                let m = labels.len() as f64;
                let mut gz = vec![0.0; z.numel()];
                for (r, &y) in labels.iter().enumerate() {
                    let row = z.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    for j in 0..c {
                        let p = exps[j] / total;
                        let target = if j == y { 1.0 } else { 0.0 };
                        gz[r * c + j] = g[0] * (p - target) / m;
                    }
                }
                vec![(*logits, gz)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::vector(vec![0.0; 3])).unwrap();
        let s = t.softmax(v).unwrap();
        assert!(close(t.value(s).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn masked_softmax_renormalizes_over_support() {
        let mut t = Tape::new();
        let v = t.param(Tensor::vector(vec![0.0, 0.0, 0.0])).unwrap();
        let s = t.masked_softmax(v, &[true, false, true]).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, 0.0, 0.5]);
        assert!(t.masked_softmax(v, &[false; 3]).is_err());
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![-1.0, 2.0])).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);
        // mean scales the upstream by 1/2; scale back to a unit upstream
        let m = t.mean(y).unwrap();
        let s = t.scale(m, 2.0).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x), &[0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        let l = t.cross_entropy(z, &[0]).unwrap();
        assert!((t.value(l).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::matrix(1, 1, vec![3.0]).unwrap()).unwrap();
        let sq = t.matmul(w, w).unwrap();
        let loss = t.mean(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w), &[6.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let p = t.param(Tensor::vector(vec![5.0])).unwrap();
        let loss = t.mean(w).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(p), &[0.0]);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn noise_blocks_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        let n = t.gaussian_noise_const(&[2, 2], 5).unwrap();
        let loss = t.mean(n).unwrap();
        let _ = x;
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x), &[0.0; 4]);
    }

    #[test]
    fn weighted_sum_skips_unlisted_weights() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![0.25, 0.5, 0.25])).unwrap();
        let a = t.constant(Tensor::vector(vec![1.0, 1.0])).unwrap();
        let c = t.constant(Tensor::vector(vec![3.0, 5.0])).unwrap();
        let s = t.weighted_sum(w, &[(0, a), (2, c)]).unwrap();
        assert_eq!(t.value(s).data(), &[1.0, 1.5]);
        let loss = t.mean(s).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(close(g.wrt(w), &[1.0, 0.0, 4.0], 1e-15));
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = t.constant(Tensor::zeros(&[2, 2])).unwrap();
        match t.add(a, b) {
            Err(Error::ShapeMismatch { op, left, right }) => {
                assert_eq!(op, "add");
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(t.matmul(a, a), Err(Error::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn non_finite_reports_node_index() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1e308])).unwrap();
        match t.scale(a, 10.0) {
            Err(Error::NonFinite { op, node }) => {
                assert_eq!(op, "scale");
                assert_eq!(node, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0])).unwrap();
        let l = t.mean(w).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(w), Err(Error::NotScalar(_))));
    }
}
