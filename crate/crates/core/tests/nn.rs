use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smearnet::dataset::{LabeledTile, NormalizationStats};
use smearnet::imagecore::{FloatPlane, Label, Tile};
use smearnet::nn::*;

fn random_planes(n: usize, seed: u64) -> Vec<FloatPlane> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| FloatPlane::from_fn(71, 71, |_, _| rng.gen::<f64>() - 0.5))
        .collect()
}

fn net(name: &str, seed: u64) -> Network {
    Network::build(ArchitectureSpec::preset(name, 0.5).unwrap(), seed).unwrap()
}

/// Dark-blob tiles (infected) versus flat tiles (healthy).
fn separable(n: usize, seed: u64) -> Vec<LabeledTile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let infected = i % 2 == 0;
            let (bx, by) = (rng.gen_range(20.0..50.0), rng.gen_range(20.0..50.0));
            let plane = FloatPlane::from_fn(71, 71, |x, y| {
                let noise = rng.gen::<f64>() * 0.05;
                let blob = (x as f64 - bx).hypot(y as f64 - by) < 5.0;
                if infected && blob { -0.5 + noise } else { 0.2 + noise }
            });
            let label = if infected { Label::Infected } else { Label::Healthy };
            LabeledTile::original(i, Tile::new((0, 0), plane, None).unwrap(), label)
        })
        .collect()
}

fn refs(v: &[LabeledTile]) -> Vec<&LabeledTile> {
    v.iter().collect()
}

#[test]
fn presets_build_with_expected_logits() {
    for (name, convs) in [("vgg-s", 13), ("alexnet-s", 5)] {
        let n = net(name, 1);
        assert_eq!(n.spec().conv_count(), convs);
        let planes = random_planes(3, 2);
        let x = n.batch_tensor(&planes.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(n.forward(&x).unwrap().logits().shape(), [3, 2]);
    }
}

#[test]
fn same_seed_same_parameters() {
    assert_eq!(net("vgg-s", 9).params(), net("vgg-s", 9).params());
    assert_ne!(net("vgg-s", 9).params(), net("vgg-s", 10).params());
}

#[test]
fn he_normal_scale() {
    let n = net("vgg-s", 4);
    let blocks = n.param_blocks();
    let params = n.params();
    // last conv: 64 * 64 * 9 weights with fan-in 576
    let (i, _) = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == ParamKind::Weight && b.len == 64 * 64 * 9)
        .last()
        .unwrap();
    let w = params[i];
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var / (2.0 / 576.0) - 1.0).abs() < 0.05, "{var}");
    assert!(params[i + 1].iter().all(|&b| b == 0.0));
}

#[test]
fn predict_is_batch_invariant() {
    let n = net("vgg-s", 5);
    let planes = random_planes(64, 6);
    let all: Vec<&FloatPlane> = planes.iter().collect();
    let batched = n.predict(&all).unwrap();
    for (p, row) in planes.iter().zip(&batched) {
        let single = n.predict(&[p]).unwrap();
        for (a, b) in single[0].iter().zip(row) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let copies = vec![&planes[0]; 5];
    let out = n.predict(&copies).unwrap();
    assert!(out.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn predict_rejects_wrong_tile_size() {
    let n = net("alexnet-s", 5);
    let small = FloatPlane::filled(64, 64, 0.0);
    assert!(n.predict(&[&small]).is_err());
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = separable(16, 1);
    let mut n = net("alexnet-s", 2);
    let before = n.clone();
    let cfg = TrainConfig { epochs: 2, learning_rate: 0.0, batch_size: 4, ..Default::default() };
    train(&mut n, &refs(&data[..12]), &refs(&data[12..]), &cfg).unwrap();
    assert_eq!(n.params(), before.params());
}

#[test]
fn training_is_deterministic() {
    let data = separable(24, 3);
    let cfg = TrainConfig { epochs: 2, learning_rate: 1e-3, batch_size: 5, seed: 4, ..Default::default() };
    let run = || {
        let mut n = net("alexnet-s", 2);
        let out = train(&mut n, &refs(&data[..18]), &refs(&data[18..]), &cfg).unwrap();
        (n, out)
    };
    let (n1, o1) = run();
    let (n2, o2) = run();
    assert_eq!(n1.params(), n2.params());
    let strip = |o: &TrainOutcome| {
        o.stats
            .iter()
            .map(|s| (s.epoch, s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&o1), strip(&o2));
}

#[test]
fn separable_tiles_are_learned() {
    let data = separable(200, 5);
    let mut n = net("vgg-s", 6);
    let cfg = TrainConfig {
        epochs: 20,
        learning_rate: 1e-3,
        batch_size: 16,
        seed: 1,
        ..Default::default()
    };
    let out = train(&mut n, &refs(&data), &refs(&data[..40]), &cfg).unwrap();
    let last = out.stats.last().unwrap();
    assert!(last.train_accuracy >= 0.99, "{last:?}");
    assert!(last.train_loss < out.stats[0].train_loss);
    for s in &out.stats {
        assert!((0.0..=1.0).contains(&s.train_accuracy) && s.train_loss >= 0.0);
    }
}

#[test]
fn loss_decreases_on_two_points() {
    let data = separable(2, 8);
    let mut n = net("alexnet-s", 3);
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.01,
        dropout_rate: 0.0,
        batch_size: 2,
        seed: 0,
        ..Default::default()
    };
    let mut prev = f64::INFINITY;
    let mut momentum_cfg = cfg.clone();
    momentum_cfg.momentum = 0.0;
    // one epoch is one step here; training resets momentum, so use plain SGD
    for step in 0..50 {
        let out = train(&mut n, &refs(&data), &refs(&data), &momentum_cfg).unwrap();
        let loss = out.stats[0].train_loss;
        assert!(loss < prev, "step {step}: {loss} >= {prev}");
        prev = loss;
    }
}

#[test]
fn early_stop_restores_best() {
    let data = separable(40, 9);
    let mut n = net("alexnet-s", 1);
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 1e-3,
        batch_size: 8,
        early_stop: true,
        patience: 2,
        ..Default::default()
    };
    let out = train(&mut n, &refs(&data[..30]), &refs(&data[30..]), &cfg).unwrap();
    let best = out
        .stats
        .iter()
        .map(|s| s.val_accuracy)
        .fold(0.0, f64::max);
    assert_eq!(out.stats[out.best_epoch - 1].val_accuracy, best);
    let (_, acc) = evaluate(&n, &refs(&data[30..])).unwrap();
    assert_eq!(acc, best);
    if out.stopped_early {
        assert_eq!(out.stats.len(), out.best_epoch + 2);
    }
}

#[test]
fn train_config_validation() {
    let data = separable(4, 1);
    let mut n = net("alexnet-s", 1);
    for cfg in [
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { dropout_rate: 1.0, ..Default::default() },
        TrainConfig { learning_rate: -1.0, ..Default::default() },
    ] {
        assert!(train(&mut n, &refs(&data), &refs(&data), &cfg).is_err());
    }
    assert!(train(&mut n, &[], &refs(&data), &TrainConfig::default()).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.smnn");
    let data = separable(8, 2);
    let mut n = net("alexnet-s", 4);
    let cfg = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
    train(&mut n, &refs(&data[..6]), &refs(&data[6..]), &cfg).unwrap();
    let stats = NormalizationStats { mean: 0.4375 };
    save_checkpoint(&n, &stats, &path).unwrap();
    let (back, s) = load_checkpoint(&path).unwrap();
    assert_eq!(s, stats);
    assert_eq!(back.spec(), n.spec());
    assert_eq!(back.params(), n.params());
    assert_eq!(back.trained_with(), n.trained_with());
    let planes = random_planes(4, 1);
    let all: Vec<&FloatPlane> = planes.iter().collect();
    assert_eq!(back.predict(&all).unwrap(), n.predict(&all).unwrap());
}

#[test]
fn checkpoint_rejects_damage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.smnn");
    save_checkpoint(&net("vgg-s", 1), &NormalizationStats { mean: 0.5 }, &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let write = |bytes: &[u8]| {
        std::fs::write(&path, bytes).unwrap();
        load_checkpoint(&path).unwrap_err().to_string()
    };
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(write(&bad_magic).contains("magic"));
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    assert!(write(&bad_version).contains("version"));
    assert!(write(&good[..good.len() - 100]).contains("digest"));
    let mut flipped = good.clone();
    flipped[500] ^= 1;
    assert!(write(&flipped).contains("digest"));
    assert!(write(&good[..5]).contains("truncated"));
}

#[test]
fn checkpoint_is_self_describing() {
    // a hand-written spec that no preset matches
    let text = "name tiny\ninput 1 71 71\nclasses 2\nconv out=3 kernel=5 stride=3 padding=0\nrelu\nmaxpool window=3 stride=3\ndense out=2\nsoftmax\n";
    let spec = ArchitectureSpec::from_text(text).unwrap();
    let n = Network::build(spec.clone(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.smnn");
    save_checkpoint(&n, &NormalizationStats { mean: 0.0 }, &path).unwrap();
    let (back, _) = load_checkpoint(&path).unwrap();
    assert_eq!(back.spec(), &spec);
    assert_eq!(back, n);
}

#[test]
fn dropout_expectation_over_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::new(vec![1, 50], (0..50).map(|i| 1.0 + i as f64 / 10.0).collect()).unwrap();
    let want = x.data().iter().sum::<f64>() / 50.0;
    let mut acc = 0.0;
    let rounds = 10_000;
    for _ in 0..rounds {
        let (y, _) = layers::dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        acc += y.data().iter().sum::<f64>() / 50.0;
    }
    let mean = acc / rounds as f64;
    assert!((mean / want - 1.0).abs() < 0.02, "{mean} vs {want}");
}
