//! IDX container parsing (MNIST / EMNIST), normalization and label
//! randomization for memorization experiments.
//!
//! ```text
//! bytes 0-3   magic: 0x00 0x00 <dtype=0x08> <ndim>     (big-endian)
//! bytes 4..   one big-endian u32 per dimension
//! then        product(dims) unsigned bytes, row-major
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
const UNSIGNED_BYTE: u8 = 0x08;

pub const NUM_CLASSES: usize = 10;
pub const IMAGE_SIDE: usize = 28;

/// Decodes an unsigned-byte IDX buffer into a tensor of raw byte values.
pub fn parse_idx(bytes: &[u8]) -> Result<Tensor<u8>> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "buffer of {} bytes is too short for a magic number",
            bytes.len()
        )));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UNSIGNED_BYTE || bytes[3] == 0 {
        return Err(Error::Format(format!(
            "unsupported magic 0x{magic:08x}; expected unsigned-byte data (0x00000801 or 0x00000803)"
        )));
    }
    let ndim = bytes[3] as usize;
    let header_len = 4 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Format(format!(
            "header declares {ndim} dimensions but the buffer ends after {} bytes",
            bytes.len()
        )));
    }
    let shape: Vec<usize> = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dimension product overflows: {shape:?}")))?;
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    Tensor::from_vec(&shape, payload.to_vec())
}

/// Encodes a byte tensor as an IDX buffer (inverse of [`parse_idx`]).
pub fn encode_idx(tensor: &Tensor<u8>) -> Result<Vec<u8>> {
    let ndim = tensor.shape().len();
    if ndim == 0 || ndim > u8::MAX as usize {
        return Err(Error::Format(format!("cannot encode a {ndim}-dimensional tensor")));
    }
    let mut out = Vec::with_capacity(4 + 4 * ndim + tensor.len());
    out.extend_from_slice(&[0, 0, UNSIGNED_BYTE, ndim as u8]);
    for &d in tensor.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(tensor.data());
    Ok(out)
}

/// Scales byte intensities into `[0, 1]`.
pub fn normalize(raw: &Tensor<u8>) -> Tensor<f32> {
    let data = raw.data().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec(raw.shape(), data).expect("same shape")
}

/// Images of shape `(count, 28, 28)` with intensities in `[0,1]` and their
/// class labels.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub name: String,
    images: Tensor<f32>,
    labels: Vec<u8>,
}

impl ImageDataset {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 3 || shape[1] != IMAGE_SIDE || shape[2] != IMAGE_SIDE {
            return Err(Error::Dimension(format!(
                "images must have shape (count, 28, 28), got {shape:?}"
            )));
        }
        if shape[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images but {} labels",
                shape[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Format(format!("label {bad} is not a digit class")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("image intensity outside [0,1]".into()));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    /// Builds a dataset from parsed IDX image/label tensors.
    ///
    /// `transpose` swaps rows and columns of every image (EMNIST stores
    /// digits transposed relative to MNIST).
    pub fn from_idx(
        name: impl Into<String>,
        images: &Tensor<u8>,
        labels: &Tensor<u8>,
        transpose: bool,
    ) -> Result<Self> {
        if images.shape().len() != 3 {
            return Err(Error::Format(format!(
                "image file must be 3-dimensional, got shape {:?}",
                images.shape()
            )));
        }
        if labels.shape().len() != 1 {
            return Err(Error::Format(format!(
                "label file must be 1-dimensional, got shape {:?}",
                labels.shape()
            )));
        }
        let mut pixels = normalize(images);
        if transpose {
            let (rows, cols) = (images.shape()[1], images.shape()[2]);
            let src = pixels.data().to_vec();
            let dst = pixels.data_mut();
            for (img_src, img_dst) in src
                .chunks_exact(rows * cols)
                .zip(dst.chunks_exact_mut(rows * cols))
            {
                for r in 0..rows {
                    for c in 0..cols {
                        img_dst[c * rows + r] = img_src[r * cols + c];
                    }
                }
            }
        }
        Self::new(name, pixels, labels.data().to_vec())
    }

    pub fn from_files(
        name: impl Into<String>,
        images_path: &Path,
        labels_path: &Path,
        transpose: bool,
    ) -> Result<Self> {
        let images = parse_idx(&fs::read(images_path)?)?;
        let labels = parse_idx(&fs::read(labels_path)?)?;
        Self::from_idx(name, &images, &labels, transpose)
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixels of image `i`, 784 values.
    pub fn image(&self, i: usize) -> &[f32] {
        let n = IMAGE_SIDE * IMAGE_SIDE;
        &self.images.data()[i * n..(i + 1) * n]
    }

    /// The first `n` examples (or all of them when `n >= count`).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.count());
        let px = IMAGE_SIDE * IMAGE_SIDE;
        Self {
            name: self.name.clone(),
            images: Tensor::from_vec(
                &[n, IMAGE_SIDE, IMAGE_SIDE],
                self.images.data()[..n * px].to_vec(),
            )
            .expect("prefix shape"),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Concatenates datasets of identical image geometry.
    pub fn concat(name: impl Into<String>, parts: &[ImageDataset]) -> Result<Self> {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            pixels.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        let images = Tensor::from_vec(&[labels.len(), IMAGE_SIDE, IMAGE_SIDE], pixels)?;
        Self::new(name, images, labels)
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(self.name.clone(), self.images.clone(), labels)
    }
}

/// Which fraction of training labels to resample, and the seed that picks them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRandomizationSpec {
    pub fraction: f64,
    pub seed: u64,
}

impl LabelRandomizationSpec {
    pub fn new(fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Argument(format!(
                "randomization fraction {fraction} is outside [0,1]"
            )));
        }
        Ok(Self { fraction, seed })
    }

    /// Number of labels that will be resampled for a dataset of `count` examples.
    pub fn selected_count(&self, count: usize) -> usize {
        ((self.fraction * count as f64).round() as usize).min(count)
    }
}

/// Resamples exactly `round(fraction * count)` labels, chosen without
/// replacement, uniformly over all ten classes. Images are untouched.
pub fn randomize_labels(dataset: &ImageDataset, spec: &LabelRandomizationSpec) -> ImageDataset {
    let count = dataset.count();
    let k = spec.selected_count(count);
    let mut labels = dataset.labels.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for idx in rand::seq::index::sample(&mut rng, count, k).into_iter() {
        labels[idx] = rng.gen_range(0..NUM_CLASSES as u8);
    }
    ImageDataset {
        name: dataset.name.clone(),
        images: dataset.images.clone(),
        labels,
    }
}

/// Standard MNIST file names inside a data directory.
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// EMNIST "digits" split file names.
pub const EMNIST_SPLITS: [(&str, &str); 2] = [
    (
        "emnist-digits-train-images-idx3-ubyte",
        "emnist-digits-train-labels-idx1-ubyte",
    ),
    (
        "emnist-digits-test-images-idx3-ubyte",
        "emnist-digits-test-labels-idx1-ubyte",
    ),
];

/// Loads the MNIST train and test sets from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(ImageDataset, ImageDataset)> {
    let train = ImageDataset::from_files(
        "mnist-train",
        &dir.join(MNIST_TRAIN_IMAGES),
        &dir.join(MNIST_TRAIN_LABELS),
        false,
    )?;
    let test = ImageDataset::from_files(
        "mnist-test",
        &dir.join(MNIST_TEST_IMAGES),
        &dir.join(MNIST_TEST_LABELS),
        false,
    )?;
    Ok((train, test))
}

/// Loads every EMNIST digits split present in `dir`, transposed into MNIST
/// orientation and concatenated. Returns `None` when no split is present.
pub fn load_emnist_digits(dir: &Path) -> Result<Option<ImageDataset>> {
    let mut parts = Vec::new();
    for (images, labels) in EMNIST_SPLITS {
        let (ip, lp) = (dir.join(images), dir.join(labels));
        if ip.exists() && lp.exists() {
            parts.push(ImageDataset::from_files("emnist-digits", &ip, &lp, true)?);
        }
    }
    if parts.is_empty() {
        return Ok(None);
    }
    ImageDataset::concat("emnist-digits", &parts).map(Some)
}
