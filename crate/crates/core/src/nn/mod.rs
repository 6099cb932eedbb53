//! From-scratch LeNet engine: the fully connected LeNet-300-100 family and
//! the convolutional LeNet-5 family, with optional batch-norm or dropout
//! after every hidden layer.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod network;
pub mod optim;
pub mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{Forward, Gradients, Mode, Network};
pub use optim::NesterovSgd;
pub use train::{evaluate_accuracy, train, EarlyStopping, TrainedModel};

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// Two dense hidden layers and a classification layer.
    #[serde(rename = "lenet-300-100")]
    LeNet300100,
    /// Two 5×5 convolutions with 2×2 max pooling, one dense hidden layer and
    /// a classification layer.
    #[serde(rename = "lenet-5")]
    LeNet5,
}

impl Family {
    pub fn hidden_layers(self) -> usize {
        match self {
            Family::LeNet300100 => 2,
            Family::LeNet5 => 3,
        }
    }

    /// Whether hidden layer `i` is convolutional.
    pub fn is_conv_layer(self, i: usize) -> bool {
        matches!(self, Family::LeNet5) && i < 2
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::LeNet300100 => "lenet-300-100",
            Family::LeNet5 => "lenet-5",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lenet-300-100" | "lenet300100" | "dense" | "mlp" => Ok(Family::LeNet300100),
            "lenet-5" | "lenet5" | "conv" | "cnn" => Ok(Family::LeNet5),
            other => Err(Error::Config(format!("unknown network family '{other}'"))),
        }
    }
}

/// Layer inserted after every hidden layer's activation.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Modifier {
    #[default]
    None,
    BatchNorm,
    Dropout,
}

impl fmt::Display for Modifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modifier::None => "none",
            Modifier::BatchNorm => "batchnorm",
            Modifier::Dropout => "dropout",
        })
    }
}

impl FromStr for Modifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Modifier::None),
            "batchnorm" | "bn" => Ok(Modifier::BatchNorm),
            "dropout" => Ok(Modifier::Dropout),
            other => Err(Error::Config(format!("unknown modifier '{other}'"))),
        }
    }
}

fn default_classes() -> usize {
    10
}

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    /// Neuron (or filter) count per hidden layer.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub modifier: Modifier,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Apply ELU to the classification layer before softmax.
    #[serde(default)]
    pub output_elu: bool,
}

impl NetworkSpec {
    pub fn new(family: Family, layer_sizes: &[usize], modifier: Modifier) -> Result<Self> {
        let spec = Self {
            family,
            layer_sizes: layer_sizes.to_vec(),
            modifier,
            num_classes: 10,
            output_elu: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() != self.family.hidden_layers() {
            return Err(Error::Config(format!(
                "{} needs {} layer sizes, got {:?}",
                self.family,
                self.family.hidden_layers(),
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "every layer needs at least one neuron: {:?}",
                self.layer_sizes
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }

    /// Compact label such as `lenet-5 3-9-4 batchnorm`.
    pub fn label(&self) -> String {
        format!("{} {} {}", self.family, self.sizes_label(), self.modifier)
    }

    pub fn sizes_label(&self) -> String {
        self.layer_sizes
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Optimization and stopping hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Nesterov momentum.
    pub momentum: f64,
    /// Coefficient of `Σ w²` added to the loss.
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub batchnorm_eps: f64,
    pub batchnorm_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            l2_lambda: 0.0005,
            dropout_rate: 0.5,
            patience_epochs: 5,
            max_epochs: 200,
            batch_size: 32,
            seed: 0,
            batchnorm_eps: 1e-5,
            batchnorm_momentum: 0.99,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.patience_epochs < 1 || self.max_epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config(
                "patience, max_epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) || self.l2_lambda < 0.0 {
            return Err(Error::Config(
                "dropout rate must lie in [0,1) and l2 lambda be non-negative".into(),
            ));
        }
        Ok(())
    }
}
