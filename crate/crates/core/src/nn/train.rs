//! Mini-batch training with early stopping on training accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::argmax;
use super::network::{Mode, Network};
use super::optim::NesterovSgd;
use super::{NetworkSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::idx::{ImageDataset, IMAGE_SIDE};
use crate::tensor::Tensor;

const DROPOUT_STREAM: u64 = 1;
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;
const EVAL_BATCH: usize = 1000;

/// Outcome of observing one epoch's training accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New maximum; keep these weights.
    Improved,
    Continue,
    Stop,
}

/// Stops once `patience` epochs have passed since the last strict maximum.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    best_epoch: usize,
    best: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            epoch: 0,
            best_epoch: 0,
            best: f64::NEG_INFINITY,
        }
    }

    /// Records the accuracy of the next epoch (epochs count from 1).
    pub fn observe(&mut self, accuracy: f64) -> StopDecision {
        self.epoch += 1;
        if accuracy > self.best {
            self.best = accuracy;
            self.best_epoch = self.epoch;
            return StopDecision::Improved;
        }
        if self.epoch - self.best_epoch >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Per-epoch progress.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// A trained network plus its training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    /// Weights from the epoch with the highest training accuracy.
    pub network: Network<f32>,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    /// Training accuracy at the best epoch (on the labels trained against).
    pub best_train_accuracy: f64,
    /// Training accuracy at the stopping epoch.
    pub final_train_accuracy: f64,
    pub history: Vec<EpochSummary>,
}

impl TrainedModel {
    pub fn spec(&self) -> &NetworkSpec {
        self.network.spec()
    }
}

/// Trains `spec` on `dataset` until training accuracy stops improving.
pub fn train(spec: &NetworkSpec, dataset: &ImageDataset, config: &TrainConfig) -> Result<TrainedModel> {
    train_with_progress(spec, dataset, config, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress<F: FnMut(&EpochSummary)>(
    spec: &NetworkSpec,
    dataset: &ImageDataset,
    config: &TrainConfig,
    mut progress: F,
) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.count() == 0 {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let mut network = Network::<f32>::build_with(spec, config)?;
    let mut optimizer = NesterovSgd::new(&network, config.learning_rate, config.momentum);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(DROPOUT_STREAM);

    let mut stopper = EarlyStopping::new(config.patience_epochs);
    let mut best = network.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..dataset.count()).collect();

    for epoch in 1..=config.max_epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM_BASE + epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = gather(dataset, chunk);
            let (loss, grads, fwd) =
                network.loss_and_gradients(&x, &y, config.l2_lambda, &mut dropout_rng)?;
            network.update_running_stats(&fwd);
            optimizer.step(&mut network, &grads)?;
            if cfg!(debug_assertions) && !network.params().iter().all(|p| p.all_finite()) {
                return Err(Error::NumericalDivergence(format!(
                    "non-finite weights after epoch {epoch} step {batches}"
                )));
            }
            loss_sum += loss as f64;
            batches += 1;
        }

        let accuracy = evaluate_accuracy(&network, dataset)?;
        let summary = EpochSummary {
            epoch,
            mean_loss: loss_sum / batches as f64,
            train_accuracy: accuracy,
        };
        progress(&summary);
        history.push(summary);
        match stopper.observe(accuracy) {
            StopDecision::Improved => best = network.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    Ok(TrainedModel {
        network: best,
        epochs_trained: stopper.epoch(),
        best_epoch: stopper.best_epoch(),
        best_train_accuracy: stopper.best(),
        final_train_accuracy: history.last().map_or(0.0, |h| h.train_accuracy),
        history,
    })
}

/// Copies the selected examples into a `(B, 28, 28)` batch.
pub fn gather(dataset: &ImageDataset, indices: &[usize]) -> (Tensor<f32>, Vec<u8>) {
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let mut data = Vec::with_capacity(indices.len() * px);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(dataset.image(i));
        labels.push(dataset.labels()[i]);
    }
    let x = Tensor::from_vec(&[indices.len(), IMAGE_SIDE, IMAGE_SIDE], data).expect("batch shape");
    (x, labels)
}

/// Contiguous eval-sized batches over a dataset.
pub fn eval_batches(dataset: &ImageDataset) -> impl Iterator<Item = (Tensor<f32>, &[u8])> {
    let px = IMAGE_SIDE * IMAGE_SIDE;
    let n = dataset.count();
    (0..n).step_by(EVAL_BATCH).map(move |start| {
        let end = (start + EVAL_BATCH).min(n);
        let data = dataset.images().data()[start * px..end * px].to_vec();
        let x = Tensor::from_vec(&[end - start, IMAGE_SIDE, IMAGE_SIDE], data).expect("batch shape");
        (x, &dataset.labels()[start..end])
    })
}

/// Fraction of argmax-correct eval-mode predictions.
pub fn evaluate_accuracy(network: &Network<f32>, dataset: &ImageDataset) -> Result<f64> {
    if dataset.count() == 0 {
        return Ok(0.0);
    }
    let classes = network.spec().num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut correct = 0usize;
    for (x, labels) in eval_batches(dataset) {
        let fwd = network.forward(&x, Mode::Eval, &mut rng)?;
        correct += fwd
            .probs
            .chunks_exact(classes)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l as usize)
            .count();
    }
    Ok(correct as f64 / dataset.count() as f64)
}
