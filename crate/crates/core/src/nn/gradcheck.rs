//! Central finite-difference checks of backpropagated gradients.
//!
//! The numerical side only calls [`Network::forward`] and
//! [`Network::loss`], so it shares nothing with the backward pass it
//! verifies. Dropout masks are replayed by reseeding the RNG for every
//! evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{Mode, Network};
use super::{NetworkSpec, TrainConfig};
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for relative error, so that components which are
/// numerically zero on both sides compare by absolute difference.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub index: usize,
    pub elements: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub label: String,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic and central-difference gradients of the regularized
/// loss for a randomly initialized 64-bit network on a random batch.
pub fn check_network(
    spec: &NetworkSpec,
    batch: usize,
    l2_lambda: f64,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let mut net = Network::<f64>::build_with(spec, &config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // Non-zero biases and batch-norm affine terms so every path is exercised.
    for p in net.params_mut() {
        if p.shape().len() == 1 {
            p.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
    }
    let input: Vec<f64> = (0..batch * 784).map(|_| rng.gen_range(0.0..1.0)).collect();
    let input = Tensor::from_vec(&[batch, 28, 28], input)?;
    let labels: Vec<u8> = (0..batch).map(|_| rng.gen_range(0..10)).collect();
    let mask_seed = rng.gen::<u64>();

    let loss_at = |net: &Network<f64>| -> Result<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        let fwd = net.forward(&input, Mode::Train, &mut r)?;
        Ok(net.loss(&fwd, &labels, l2_lambda))
    };

    let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
    let fwd = net.forward(&input, Mode::Train, &mut r)?;
    let analytic = net.backward(&fwd, &labels, l2_lambda)?;

    let mut tensors = Vec::new();
    for (index, grad) in analytic.tensors.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..grad.len() {
            let original = net.params()[index].data()[j];
            net.params_mut()[index].data_mut()[j] = original + step;
            let plus = loss_at(&net)?;
            net.params_mut()[index].data_mut()[j] = original - step;
            let minus = loss_at(&net)?;
            net.params_mut()[index].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
        tensors.push(TensorCheck {
            index,
            elements: grad.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        label: spec.label(),
        tensors,
    })
}
