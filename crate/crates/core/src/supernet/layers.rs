use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::SplitMix64;

/// Fully connected layer `x W + b` with `W` of shape `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut SplitMix64) -> Self {
        Self {
            weight: Tensor::uniform_init(&[inputs, outputs], inputs, rng),
            bias: Tensor::uniform_init(&[outputs], inputs, rng),
        }
    }

    pub fn apply(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = tape.matmul(x, weight)?;
        tape.bias_add(h, bias)
    }
}

/// A classifier whose trainable weights can be bound to tape variables.
///
/// `weights` and `weights_mut` list tensors in the same fixed order; `logits`
/// receives one variable per tensor in that order.
pub trait Network {
    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn weights(&self) -> Vec<&Tensor>;

    fn weights_mut(&mut self) -> Vec<&mut Tensor>;

    fn logits(&self, tape: &mut Tape, x: Var, weight_vars: &[Var]) -> Result<Var>;
}

/// Records every weight of `net` on `tape`, as trainable leaves when `train`.
pub fn bind_weights<N: Network + ?Sized>(net: &N, tape: &mut Tape, train: bool) -> Result<Vec<Var>> {
    net.weights()
        .into_iter()
        .map(|w| {
            if train {
                tape.param(w.clone())
            } else {
                tape.constant(w.clone())
            }
        })
        .collect()
}

/// Runs `net` on `inputs` without recording gradients.
pub fn predict<N: Network + ?Sized>(net: &N, inputs: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = bind_weights(net, &mut tape, false)?;
    let x = tape.constant(inputs.clone())?;
    let z = net.logits(&mut tape, x, &vars)?;
    Ok(tape.value(z).clone())
}
