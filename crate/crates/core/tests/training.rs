use aiq_core::nn::{evaluate_accuracy, train, Mode, NesterovSgd, Network};
use aiq_core::{Family, ImageDataset, Modifier, NetworkSpec, Tensor, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Class `k` lights one 7×7 block of an otherwise dark image.
fn blocks(count: usize) -> ImageDataset {
    let mut px = vec![0f32; count * 784];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % 10;
        labels.push(k as u8);
        let (by, bx) = ((k / 4) * 7 + 3, (k % 4) * 7);
        for y in by..by + 7 {
            for x in bx..bx + 7 {
                px[i * 784 + y * 28 + x] = 0.8 + 0.02 * ((i / 10) % 10) as f32;
            }
        }
    }
    ImageDataset::new("blocks", Tensor::from_vec(&[count, 28, 28], px).unwrap(), labels).unwrap()
}

#[test]
fn one_small_step_decreases_the_loss() {
    for (family, sizes) in [(Family::LeNet300100, vec![16, 8]), (Family::LeNet5, vec![3, 4, 5])] {
        let spec = NetworkSpec::new(family, &sizes, Modifier::None).unwrap();
        let mut net = Network::<f64>::build(&spec, 11).unwrap();
        let data = blocks(20);
        let x = Tensor::from_vec(
            &[20, 28, 28],
            data.images().data().iter().map(|&v| v as f64).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (before, grads, _) = net.loss_and_gradients(&x, data.labels(), 0.0, &mut rng).unwrap();
        let mut sgd = NesterovSgd::new(&net, 1e-3, 0.0);
        sgd.step(&mut net, &grads).unwrap();
        let fwd = net.forward(&x, Mode::Train, &mut rng).unwrap();
        let after = net.loss(&fwd, data.labels(), 0.0);
        assert!(after < before, "{}: {before} -> {after}", spec.label());
    }
}

#[test]
fn training_is_reproducible_for_a_fixed_seed() {
    let spec = NetworkSpec::new(Family::LeNet5, &[2, 3, 4], Modifier::BatchNorm).unwrap();
    let config = TrainConfig {
        max_epochs: 2,
        seed: 99,
        ..TrainConfig::default()
    };
    let data = blocks(60);
    let a = train(&spec, &data, &config).unwrap();
    let b = train(&spec, &data, &config).unwrap();
    assert_eq!(
        serde_json::to_string(&a.network).unwrap(),
        serde_json::to_string(&b.network).unwrap()
    );
    assert_eq!(a.best_train_accuracy, b.best_train_accuracy);

    let other = train(&spec, &data, &TrainConfig { seed: 100, ..config }).unwrap();
    assert_ne!(
        serde_json::to_string(&a.network).unwrap(),
        serde_json::to_string(&other.network).unwrap()
    );
}

#[test]
fn separable_toy_set_is_learned_perfectly() {
    let spec = NetworkSpec::new(Family::LeNet300100, &[16, 16], Modifier::None).unwrap();
    let config = TrainConfig {
        learning_rate: 0.05,
        max_epochs: 60,
        ..TrainConfig::default()
    };
    let data = blocks(100);
    let model = train(&spec, &data, &config).unwrap();
    assert_eq!(model.best_train_accuracy, 1.0);
    assert_eq!(evaluate_accuracy(&model.network, &data).unwrap(), 1.0);
    assert!(model.epochs_trained <= model.best_epoch + config.patience_epochs);
}
