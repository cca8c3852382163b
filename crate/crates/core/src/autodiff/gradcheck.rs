use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

fn forward_value<F>(params: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = build(&mut tape, &vars)?;
    let v = tape.value(out);
    if !v.is_scalar() {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Central-difference gradient of the scalar model output with respect to
/// every parameter entry.
pub fn central_difference<F>(params: &[Tensor], build: F, epsilon: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = vec![0.0; params[pi].numel()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + epsilon;
            let plus = forward_value(&work, &build)?;
            work[pi].data_mut()[j] = orig - epsilon;
            let minus = forward_value(&work, &build)?;
            work[pi].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * epsilon);
        }
        out.push(g);
    }
    Ok(out)
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients, `|auto - fd| / max(|fd|, 1e-8)`, over every parameter entry.
///
/// `build` receives one tape variable per entry of `params`, in order, and
/// must return a scalar. It is evaluated twice at the base point first; any
/// difference is reported as [`Error::NonDeterministic`].
pub fn grad_check<F>(params: &[Tensor], build: F, epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let first = forward_value(params, &build)?;
    let second = forward_value(params, &build)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic(first, second));
    }

    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.param(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let numeric = central_difference(params, &build, epsilon)?;
    let mut worst = 0.0f64;
    for (var, fd) in vars.iter().zip(&numeric) {
        for (a, n) in grads.wrt(*var).iter().zip(fd) {
            let rel = (a - n).abs() / n.abs().max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// A small random classifier exercising every differentiable primitive: a
/// dense layer with tanh or relu, an α-mixed pair of branches (identity and
/// a relu dense layer, one branch optionally masked), a scaled residual sum
/// and a cross-entropy head.
#[derive(Clone, Debug)]
pub struct RandomNet {
    pub params: Vec<Tensor>,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub tanh_first: bool,
    pub mask: [bool; 2],
}

impl RandomNet {
    /// Draws a network from `seed`, redrawing until no relu input sits
    /// within 1e-2 of its kink, where finite differences are meaningless.
    pub fn generate(seed: u64) -> Result<Self> {
        for attempt in 0.. {
            let net = Self::draw(derive_seed(seed, attempt));
            if net.min_kink_margin()? > 1e-2 {
                return Ok(net);
            }
        }
        unreachable!()
    }

    fn draw(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let d = 2 + rng.below(3);
        let h = 2 + rng.below(4);
        let c = 2 + rng.below(3);
        let n = 3 + rng.below(4);
        let params = vec![
            Tensor::uniform_init(&[d, h], d, &mut rng),
            Tensor::uniform_init(&[h], d, &mut rng),
            Tensor::vector(vec![rng.normal(), rng.normal()]),
            Tensor::uniform_init(&[h, h], h, &mut rng),
            Tensor::uniform_init(&[h], h, &mut rng),
            Tensor::uniform_init(&[h, c], h, &mut rng),
            Tensor::uniform_init(&[c], h, &mut rng),
        ];
        let inputs = Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect()).expect("shape");
        let labels = (0..n).map(|_| rng.below(c)).collect();
        let tanh_first = rng.below(2) == 0;
        let mask = match rng.below(4) {
            0 => [true, false],
            _ => [true, true],
        };
        Self { params, inputs, labels, tanh_first, mask }
    }

    /// Mean cross-entropy, plus the inputs of every relu on the tape.
    fn forward(&self, t: &mut Tape, p: &[Var]) -> Result<(Var, Vec<Var>)> {
        let mut kinks = Vec::new();
        let x = t.constant(self.inputs.clone())?;
        let z = t.matmul(x, p[0])?;
        let z = t.bias_add(z, p[1])?;
        let h = if self.tanh_first {
            t.tanh(z)?
        } else {
            kinks.push(z);
            t.relu(z)?
        };
        kinks.push(h);
        let a = t.relu(h)?;
        let branch = t.matmul(a, p[3])?;
        let branch = t.bias_add(branch, p[4])?;
        let w = if self.mask == [true, true] { t.softmax(p[2])? } else { t.masked_softmax(p[2], &self.mask)? };
        let mixed = t.weighted_sum(w, &[(0, h), (1, branch)])?;
        let sum = t.add(mixed, h)?;
        let cell = t.scale(sum, 0.5)?;
        let logits = t.matmul(cell, p[5])?;
        let logits = t.bias_add(logits, p[6])?;
        Ok((t.cross_entropy(logits, &self.labels)?, kinks))
    }

    fn min_kink_margin(&self) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let (_, kinks) = self.forward(&mut tape, &vars)?;
        Ok(kinks
            .iter()
            .flat_map(|k| tape.value(*k).data().to_vec())
            .fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Worst relative gradient error over every parameter entry.
    pub fn check(&self, epsilon: f64) -> Result<f64> {
        grad_check(&self.params, |t, p| self.forward(t, p).map(|r| r.0), epsilon)
    }
}
