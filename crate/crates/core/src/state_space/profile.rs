use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{aiq, entropy, layer_efficiency, network_efficiency, StateHistogram};
use crate::error::{Error, Result};
use crate::idx::ImageDataset;
use crate::nn::layers::argmax;
use crate::nn::train::eval_batches;
use crate::nn::{Mode, Network};

pub const DEFAULT_BETA: f64 = 2.0;
/// Widest convolutional layer whose per-location states are counted exactly.
pub const DEFAULT_CONV_STATE_CAP: usize = 24;

/// Which data a report was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Train,
    Test,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub beta: f64,
    pub conv_state_cap: usize,
    pub dataset_tag: DatasetTag,
}

impl ProfileConfig {
    pub fn new(dataset_tag: DatasetTag) -> Self {
        Self {
            beta: DEFAULT_BETA,
            conv_state_cap: DEFAULT_CONV_STATE_CAP,
            dataset_tag,
        }
    }
}

/// Per-layer entry of an [`EfficiencyReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEfficiency {
    pub layer_id: usize,
    #[serde(rename = "N_l")]
    pub neurons: usize,
    pub distinct_states: usize,
    pub total_observations: u64,
    pub entropy_bits: f64,
    pub eta: f64,
}

/// Efficiency metrics of one network on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub layers: Vec<LayerEfficiency>,
    #[serde(rename = "eta_N")]
    pub eta_n: f64,
    pub accuracy: f64,
    pub beta: f64,
    #[serde(rename = "aIQ")]
    pub aiq: f64,
    #[serde(rename = "aIQ_x100")]
    pub aiq_x100: f64,
    pub parameters: usize,
    pub dataset_tag: DatasetTag,
}

impl EfficiencyReport {
    pub fn layer_etas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.eta).collect()
    }
}

/// A report together with the histograms it was computed from.
#[derive(Debug, Clone)]
pub struct Profile {
    pub report: EfficiencyReport,
    pub histograms: Vec<StateHistogram>,
}

/// Passes `dataset` through `network` in eval mode, records every hidden
/// layer's states and derives entropy, efficiencies, accuracy and aIQ.
pub fn profile_network(
    network: &Network<f32>,
    dataset: &ImageDataset,
    config: &ProfileConfig,
) -> Result<Profile> {
    for (i, block) in network.blocks().iter().enumerate() {
        if block.is_conv() && block.width() > config.conv_state_cap {
            return Err(Error::UnsupportedWidth {
                layer: i,
                width: block.width(),
                cap: config.conv_state_cap,
            });
        }
    }
    if dataset.count() == 0 {
        return Err(Error::UndefinedEntropy);
    }
    let mut histograms: Vec<StateHistogram> = network
        .blocks()
        .iter()
        .enumerate()
        .map(|(i, b)| StateHistogram::new(i, b.width()))
        .collect();
    let classes = network.spec().num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut correct = 0usize;
    for (x, labels) in eval_batches(dataset) {
        let fwd = network.forward(&x, Mode::Eval, &mut rng)?;
        for (h, state) in histograms.iter_mut().zip(fwd.hidden_states()) {
            h.record_activations(state)?;
        }
        correct += fwd
            .probs
            .chunks_exact(classes)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l as usize)
            .count();
    }
    let accuracy = correct as f64 / dataset.count() as f64;

    let layers = histograms
        .iter()
        .map(|h| {
            Ok(LayerEfficiency {
                layer_id: h.layer_id,
                neurons: h.neurons(),
                distinct_states: h.distinct_states(),
                total_observations: h.total_observations(),
                entropy_bits: entropy(h)?,
                eta: layer_efficiency(h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let etas: Vec<f64> = layers.iter().map(|l| l.eta).collect();
    let eta_n = network_efficiency(&etas)?;
    let aiq = aiq(accuracy, eta_n, config.beta)?;
    Ok(Profile {
        report: EfficiencyReport {
            layers,
            eta_n,
            accuracy,
            beta: config.beta,
            aiq,
            aiq_x100: aiq * 100.0,
            parameters: network.count_parameters(),
            dataset_tag: config.dataset_tag,
        },
        histograms,
    })
}
