use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Stochastic gradient descent with Nesterov momentum in the reformulated
/// form used by common frameworks:
///
/// ```text
/// v ← μ·v − lr·g
/// w ← w + μ·v − lr·g
/// ```
#[derive(Debug, Clone)]
pub struct NesterovSgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> NesterovSgd<T> {
    pub fn new(network: &Network<T>, learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: network
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape()))
                .collect(),
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn step(&mut self, network: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        let params = network.params_mut();
        if params.len() != grads.tensors.len() || params.len() != self.velocity.len() {
            return Err(Error::Dimension(format!(
                "{} parameters, {} gradients, {} velocities",
                params.len(),
                grads.tensors.len(),
                self.velocity.len()
            )));
        }
        for ((w, g), v) in params
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.velocity)
        {
            nesterov_update(
                w.data_mut(),
                v.data_mut(),
                g.data(),
                T::lit(self.learning_rate),
                T::lit(self.momentum),
            )?;
        }
        Ok(())
    }
}

/// Applies one Nesterov update to flat buffers.
pub fn nesterov_update<T: Scalar>(
    weights: &mut [T],
    velocity: &mut [T],
    grads: &[T],
    lr: T,
    momentum: T,
) -> Result<()> {
    if weights.len() != velocity.len() || weights.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "update buffers differ in length: {} / {} / {}",
            weights.len(),
            velocity.len(),
            grads.len()
        )));
    }
    for ((w, v), &g) in weights.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v - lr * g;
        *w = *w + momentum * *v - lr * g;
    }
    Ok(())
}
