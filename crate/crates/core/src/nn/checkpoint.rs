//! Versioned JSON checkpoints: the architecture plus every tensor as a
//! shape header and row-major values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Network;
use super::train::TrainedModel;
use super::{NetworkSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "aiq-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: NetworkSpec,
    pub dropout_rate: f64,
    pub batchnorm_eps: f64,
    pub batchnorm_momentum: f64,
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub best_train_accuracy: f64,
    pub final_train_accuracy: f64,
    pub tensors: Vec<NamedTensor>,
}

fn tensor_names(network: &Network<f32>) -> (Vec<String>, Vec<String>) {
    let mut params = Vec::new();
    let mut stats = Vec::new();
    for (i, b) in network.blocks().iter().enumerate() {
        params.push(format!("hidden{i}.weight"));
        params.push(format!("hidden{i}.bias"));
        if b.batchnorm.is_some() {
            params.push(format!("hidden{i}.gamma"));
            params.push(format!("hidden{i}.beta"));
            stats.push(format!("hidden{i}.running_mean"));
            stats.push(format!("hidden{i}.running_var"));
        }
    }
    params.push("output.weight".into());
    params.push("output.bias".into());
    (params, stats)
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        let net = &model.network;
        let (pn, sn) = tensor_names(net);
        let (eps, momentum) = net
            .blocks()
            .iter()
            .find_map(|b| b.batchnorm.as_ref().map(|bn| (bn.eps, bn.momentum)))
            .unwrap_or((
                TrainConfig::default().batchnorm_eps,
                TrainConfig::default().batchnorm_momentum,
            ));
        let tensors = pn
            .into_iter()
            .zip(net.params())
            .chain(sn.into_iter().zip(net.running_stats()))
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: net.spec().clone(),
            dropout_rate: net.dropout_rate(),
            batchnorm_eps: eps,
            batchnorm_momentum: momentum,
            epochs_trained: model.epochs_trained,
            best_epoch: model.best_epoch,
            best_train_accuracy: model.best_train_accuracy,
            final_train_accuracy: model.final_train_accuracy,
            tensors,
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container {} v{}",
                self.format, self.version
            )));
        }
        let config = TrainConfig {
            dropout_rate: self.dropout_rate,
            batchnorm_eps: self.batchnorm_eps,
            batchnorm_momentum: self.batchnorm_momentum,
            ..TrainConfig::default()
        };
        let mut network = Network::<f32>::build_with(&self.spec, &config)?;
        let (pn, sn) = tensor_names(&network);
        if pn.len() + sn.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                pn.len() + sn.len(),
                self.tensors.len()
            )));
        }
        for (i, (name, stored)) in pn.iter().chain(&sn).zip(&self.tensors).enumerate() {
            if *name != stored.name {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} is '{}', expected '{name}'",
                    stored.name
                )));
            }
        }
        let (param_data, stat_data) = self.tensors.split_at(pn.len());
        let slots = network.params_mut();
        restore(slots, param_data)?;
        let slots = network.running_stats_mut();
        restore(slots, stat_data)?;
        Ok(TrainedModel {
            network,
            epochs_trained: self.epochs_trained,
            best_epoch: self.best_epoch,
            best_train_accuracy: self.best_train_accuracy,
            final_train_accuracy: self.final_train_accuracy,
            history: Vec::new(),
        })
    }
}

fn restore(slots: Vec<&mut Tensor<f32>>, stored: &[NamedTensor]) -> Result<()> {
    for (slot, t) in slots.into_iter().zip(stored) {
        if slot.shape() != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "'{}' has shape {:?}, expected {:?}",
                t.name,
                t.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::from_vec(&t.shape, t.values.clone())?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_model(model))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    ck.into_model()
}
