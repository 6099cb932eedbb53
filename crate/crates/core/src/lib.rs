//! Train small LeNet networks on MNIST-style digits, record each hidden
//! layer's quantized firing states, and score networks by neural
//! efficiency and aIQ.
//!
//! - [`idx`]: IDX parsing, normalization, label randomization
//! - [`nn`]: the two LeNet families, training and checkpoints
//! - [`state_space`]: state histograms, entropy, efficiency, aIQ, profiling

pub mod error;
pub mod idx;
pub mod nn;
pub mod state_space;
pub mod tensor;

pub use error::{Error, Result};
pub use idx::{ImageDataset, LabelRandomizationSpec};
pub use nn::{Family, Modifier, NetworkSpec, TrainConfig, TrainedModel};
pub use state_space::{DatasetTag, EfficiencyReport, ProfileConfig};
pub use tensor::{Scalar, Tensor};
