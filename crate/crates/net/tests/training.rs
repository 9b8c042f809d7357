use endoseg_core::imgcore::ProbMap;
use endoseg_net::checkpoint::{self, CheckpointMeta};
use endoseg_net::train::*;
use endoseg_net::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> NetConfig {
    NetConfig { resolution_stages: 2, blocks_per_stage: vec![1, 2], growth_rate: 2, ..NetConfig::default() }
}

fn stripes(id: usize) -> TrainSample {
    let (w, h) = (8, 8);
    let values: Vec<f64> = (0..w * h).map(|i| if (i % w + id) % 4 == 0 { 0.1 } else { 0.8 }).collect();
    let target: Vec<f64> = values.iter().map(|&v| if v < 0.5 { 1.0 } else { 0.0 }).collect();
    TrainSample {
        id: id.to_string(),
        image: ProbMap::from_values(w, h, values).unwrap(),
        target: ProbMap::from_values(w, h, target).unwrap(),
        has_guttae: id % 2 == 0,
        total_grade: 2 + (id % 5) as u8,
    }
}

fn small_train_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 6, guttae_per_level: 1, seed: 5, ..TrainConfig::for_role(Role::Edge) }
}

#[test]
fn zero_learning_rate_leaves_weights_alone() {
    let mut net = build_denseunet(tiny_config(), 0).unwrap();
    let before = net.params.clone();
    let data: Vec<TrainSample> = (0..8).map(stripes).collect();
    let batch = make_batch(&data, &small_train_config(1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut opt = Nadam::default();
    let loss = train::train_step(&mut net, &mut opt, &batch, 0.0, 1).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    for (a, b) in before.entries().iter().zip(net.params.entries()) {
        if a.trainable {
            assert_eq!(a.values, b.values, "{}", a.path);
        }
    }
}

#[test]
fn augmentation_moves_image_and_target_together() {
    // image == target, so any shared warp keeps them equal
    let data: Vec<TrainSample> = (0..8)
        .map(|i| {
            let mut s = stripes(i);
            s.target = s.image.clone();
            s
        })
        .collect();
    let cfg = TrainConfig { elastic_probability: 1.0, ..small_train_config(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let b = make_batch(&data, &cfg, &mut rng).unwrap();
        for (i, v) in b.images.data.iter().enumerate() {
            assert!((b.targets.data[2 * i + 1] - v).abs() < 1e-12);
            assert!((b.targets.data[2 * i] + b.targets.data[2 * i + 1] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn training_is_reproducible_and_logs_every_epoch() {
    let data: Vec<TrainSample> = (0..8).map(stripes).collect();
    let run = || {
        let mut net = build_denseunet(tiny_config(), 3).unwrap();
        let out = train(&mut net, &data, &small_train_config(5), |_, _| Ok(Control::Continue)).unwrap();
        (net, out)
    };
    let (net_a, a) = run();
    let (net_b, b) = run();
    assert_eq!(a.records.len(), 5);
    let losses = |o: &TrainOutcome| o.records.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(net_a.params.entries(), net_b.params.entries());
    for w in a.records.windows(2) {
        assert!(w[1].learning_rate < w[0].learning_rate);
    }
    assert!((a.records[4].learning_rate - 1e-3 * 0.99f64.powi(4)).abs() < 1e-15);
    assert!(a.records.iter().all(|r| r.lr_decay == 0.99));
}

#[test]
fn training_reduces_the_loss() {
    let data: Vec<TrainSample> = (0..8).map(stripes).collect();
    let mut net = build_denseunet(tiny_config(), 3).unwrap();
    let cfg = TrainConfig { initial_lr: 1e-2, elastic_probability: 0.0, ..small_train_config(30) };
    let out = train(&mut net, &data, &cfg, |_, _| Ok(Control::Continue)).unwrap();
    assert!(out.records.last().unwrap().loss < 0.5 * out.records[0].loss);
}

#[test]
fn non_finite_weights_are_reported_with_their_layer() {
    let mut net = build_denseunet(tiny_config(), 0).unwrap();
    net.params.get_mut("enc1/dense/layer0/grow/conv/kernel").unwrap().values[0] = f64::NAN;
    let x = Tensor4::filled([1, 8, 8, 1], 0.5);
    match net.predict(&x) {
        Err(NetError::NonFinite(at)) => assert!(at.starts_with("enc1/dense/layer0/grow/conv"), "{at}"),
        other => panic!("expected a fault, got {other:?}"),
    }
}

fn meta() -> CheckpointMeta {
    CheckpointMeta { role: "edge".into(), seed: 3, epoch: 2, initial_lr: 1e-3, lr_decay: 0.99, next_learning_rate: 1e-3 * 0.99 * 0.99 }
}

#[test]
fn checkpoints_round_trip() {
    let net = build_denseunet(NetConfig::toy(AttentionKind::FnlaConcat), 4).unwrap();
    let bytes = checkpoint::to_bytes(&net, &meta()).unwrap();
    assert!(bytes.starts_with(b"ENDOSEG-CKPT 1\n"));
    let (mut back, m) = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(m, meta());
    assert_eq!(back.config, net.config);
    assert_eq!(checkpoint::to_bytes(&back, &m).unwrap(), bytes);
    for e in net.params.entries() {
        let b = back.params.get(&e.path).unwrap();
        assert!(e.values.iter().zip(&b.values).all(|(x, y)| (*x as f32) as f64 == *y));
    }
    let x = Tensor4::filled([1, 8, 8, 1], 0.3);
    assert_eq!(back.predict(&x).unwrap(), back.clone().predict(&x).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    checkpoint::save(&path, &net, &meta()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let net = build_denseunet(tiny_config(), 4).unwrap();
    let bytes = checkpoint::to_bytes(&net, &meta()).unwrap();
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(checkpoint::from_bytes(&wrong).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(checkpoint::from_bytes(&extra).is_err());
    // a header describing a different network
    let magic_end = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    let len_end = magic_end + bytes[magic_end..].iter().position(|&b| b == b'\n').unwrap() + 1;
    let len: usize = std::str::from_utf8(&bytes[magic_end..len_end - 1]).unwrap().parse().unwrap();
    let header = std::str::from_utf8(&bytes[len_end..len_end + len]).unwrap().replacen("\"growth_rate\":2", "\"growth_rate\":3", 1);
    let mut other = format!("ENDOSEG-CKPT 1\n{}\n{header}", header.len()).into_bytes();
    other.extend_from_slice(&bytes[len_end + len..]);
    assert!(matches!(checkpoint::from_bytes(&other), Err(NetError::Checkpoint(m)) if m.contains("config")));
}
