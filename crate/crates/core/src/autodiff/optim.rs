use super::Tensor;
use crate::error::{Error, Result};

/// Optimizer settings for the weight and architecture updates.
///
/// Weights use SGD with heavy-ball momentum (`v <- mu v + g`, `w <- w - lr v`);
/// architecture logits use plain gradient descent with their own rate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub learning_rate_w: f64,
    pub learning_rate_alpha: f64,
    pub momentum: f64,
    step_count: u64,
    velocity: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(learning_rate_w: f64, learning_rate_alpha: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate_w > 0.0) || !(learning_rate_alpha > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {momentum} outside [0, 1)"
            )));
        }
        Ok(Self {
            learning_rate_w,
            learning_rate_alpha,
            momentum,
            step_count: 0,
            velocity: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Drops momentum buffers, e.g. after the parameter set changes.
    pub fn reset_velocity(&mut self) {
        self.velocity.clear();
    }
}

/// One SGD-with-momentum update of `params`; `grads[i]` belongs to `params[i]`.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[&[f64]],
    state: &mut OptState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_momentum_step",
                left: p.shape().to_vec(),
                right: vec![g.len()],
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "sgd_momentum_step",
                node: 0,
            });
        }
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    } else if state.velocity.len() != params.len()
        || state.velocity.iter().zip(params.iter()).any(|(v, p)| v.len() != p.numel())
    {
        return Err(Error::InvalidArgument(
            "parameter set changed between momentum steps".into(),
        ));
    }
    let (lr, mu) = (state.learning_rate_w, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((w, gi), vi) in p.data_mut().iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = mu * *vi + gi;
            *w -= lr * *vi;
        }
    }
    state.step_count += 1;
    Ok(())
}

/// Plain gradient descent on a slice of logits.
pub fn gradient_descent_step(values: &mut [f64], grad: &[f64], learning_rate: f64) -> Result<()> {
    if values.len() != grad.len() {
        return Err(Error::ShapeMismatch {
            op: "gradient_descent_step",
            left: vec![values.len()],
            right: vec![grad.len()],
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: "gradient_descent_step",
            node: 0,
        });
    }
    for (v, g) in values.iter_mut().zip(grad) {
        *v -= learning_rate * g;
    }
    Ok(())
}
