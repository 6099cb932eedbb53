//! Small synthetic digit sets for exercising the harness without MNIST.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use aiq_core::idx::{
    encode_idx, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
use aiq_core::{ImageDataset, Tensor};
use aiq_harness::DataContext;

/// Raw bytes of `count` images where class `k` lights up one 7×7 block,
/// plus a deterministic speckle.
pub fn synthetic_bytes(count: usize, offset: usize) -> (Tensor<u8>, Tensor<u8>) {
    let mut px = vec![0u8; count * 784];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = ((i + offset) * 7 % 10) as u8;
        labels.push(label);
        let (by, bx) = ((label as usize / 4) * 7 + 3, (label as usize % 4) * 7);
        let img = &mut px[i * 784..(i + 1) * 784];
        for y in by..by + 7 {
            for x in bx..bx + 7 {
                img[y * 28 + x] = 200;
            }
        }
        for j in 0..12 {
            img[((i + offset) * 131 + j * 61) % 784] = 90;
        }
    }
    (
        Tensor::from_vec(&[count, 28, 28], px).unwrap(),
        Tensor::from_vec(&[count], labels).unwrap(),
    )
}

pub fn synthetic_dataset(name: &str, count: usize, offset: usize) -> ImageDataset {
    let (images, labels) = synthetic_bytes(count, offset);
    ImageDataset::from_idx(name, &images, &labels, false).unwrap()
}

pub fn synthetic_context(train: usize, test: usize) -> DataContext {
    DataContext::new(
        synthetic_dataset("train", train, 0),
        synthetic_dataset("test", test, 10_000),
        None,
    )
}

/// Writes a synthetic MNIST-layout directory.
pub fn write_synthetic_mnist(dir: &Path, train: usize, test: usize) {
    fs::create_dir_all(dir).unwrap();
    for (count, offset, images, labels) in [
        (train, 0, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS),
        (test, 10_000, MNIST_TEST_IMAGES, MNIST_TEST_LABELS),
    ] {
        let (x, y) = synthetic_bytes(count, offset);
        fs::write(dir.join(images), encode_idx(&x).unwrap()).unwrap();
        fs::write(dir.join(labels), encode_idx(&y).unwrap()).unwrap();
    }
}
