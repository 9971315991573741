use ndarray::{Array2, Array3, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speckle_net::blocks::{BnSettings, ResBlock, Transformation};
use speckle_net::data::Dataset;
use speckle_net::layers::{BatchNorm2d, Conv2d, Dense, Dropout, Layer, Relu};
use speckle_net::train::{evaluate, train, TrainConfig};
use speckle_net::{Batch, NetError, Network, NetworkConfig};

fn random(shape: (usize, usize, usize, usize), seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn snapshot(net: &mut Network) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit(&mut |p| out.extend_from_slice(p.values()));
    out
}

fn random_set(n: usize, input: usize, output: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array3::from_shape_fn((n, input, input), |_| rng.random_range(-1.0..1.0));
    let t = Array3::from_shape_fn((n, output, output), |_| rng.random_range(0..2) as f64);
    Dataset::new(x, t).unwrap()
}

#[test]
fn desk_forward_shape() {
    let mut net = Network::new(NetworkConfig::default()).unwrap();
    let y = net.forward(&random((1, 1, 32, 32), 1), false).unwrap();
    assert_eq!(y.shape(), &[1, 1, 8, 8]);
    assert!(y.iter().all(|v| v.is_finite()));
    let y = net.forward(&random((1, 3, 32, 32), 2), true).unwrap();
    assert_eq!(y.shape(), &[1, 3, 8, 8]);
}

#[test]
fn divisibility_rule() {
    let cfg = |side, flows| NetworkConfig { input_side: side, num_flows: flows, ..Default::default() };
    assert!(Network::new(cfg(16, 3)).is_ok());
    assert!(matches!(Network::new(cfg(18, 3)), Err(NetError::Config(_))));
    assert!(Network::new(cfg(16, 0)).is_err());
    assert!(Network::new(cfg(16, 5)).is_err());
}

#[test]
fn bare_network_parameter_count() {
    for (side, out, k) in [(8, 4, 3), (6, 6, 1), (10, 3, 5)] {
        let cfg = NetworkConfig {
            input_side: side,
            output_side: out,
            num_flows: 1,
            residue_blocks_per_flow: 0,
            kernel_size: k,
            ..Default::default()
        };
        let mut net = Network::new(cfg).unwrap();
        let conv = k * k + 1;
        assert_eq!(net.parameter_count(), conv + side * side * out * out + out * out);
    }
}

#[test]
fn inference_is_deterministic() {
    let mut net = Network::new(NetworkConfig::default()).unwrap();
    let x = Array2::from_shape_fn((32, 32), |(i, j)| ((i * 7 + j * 3) % 11) as f64 - 5.0);
    let a = net.predict(&x).unwrap();
    let b = net.predict(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropout_off_train_matches_inference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Transformation {
        dropout: Dropout::new(0.0, 4).unwrap(),
        fc: Dense::new(36, [1, 3, 3], &mut rng).unwrap(),
    };
    let x = random((1, 5, 6, 6), 5);
    let train = t.forward(&x, true).unwrap();
    let infer = t.forward(&x, false).unwrap();
    let d = &train - &infer;
    assert!(d.iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn identity_kernel_is_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut conv = Conv2d::new(1, 1, 1, &mut rng).unwrap();
    conv.weight.values_mut()[0] = 1.0;
    let mut relu = Relu::new();
    let x = random((1, 2, 5, 5), 6);
    let y = relu.forward(&conv.forward(&x, false).unwrap(), false).unwrap();
    assert_eq!(y, x.mapv(|v| v.max(0.0)));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let cfg = NetworkConfig { input_side: 8, output_side: 4, base_channels: 3, ..Default::default() };
    let mut net = Network::new(cfg).unwrap();
    net.zero_grad();
    let y = net.forward(&random((1, 4, 8, 8), 7), true).unwrap();
    net.backward(&Batch::zeros(y.raw_dim())).unwrap();
    let mut seen = 0;
    net.visit(&mut |p| {
        if p.trainable {
            seen += p.len();
            assert!(p.grads().iter().all(|&g| g == 0.0), "{} has a nonzero gradient", p.name);
        }
    });
    assert_eq!(seen, net.parameter_count());
}

#[test]
fn backward_needs_a_training_pass() {
    let mut net = Network::new(NetworkConfig::default()).unwrap();
    let y = net.forward(&random((1, 1, 32, 32), 8), false).unwrap();
    assert!(matches!(net.backward(&y), Err(NetError::NoCache)));
}

#[test]
fn zeroed_residual_block_is_a_shortcut() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut block = ResBlock::new(3, 3, BnSettings { eps: 1e-5, momentum: 0.1 }, &mut rng).unwrap();
    block.first.conv.weight.values_mut().fill(0.0);
    block.conv.weight.values_mut().fill(0.0);
    // the shortcut is added before the final ReLU, so take a positive input
    let x = random((3, 2, 5, 5), 10).mapv(|v| v.abs() + 0.1);
    let y = block.forward(&x, true).unwrap();
    assert!((&y - &x).iter().all(|v| v.abs() <= 1e-12));
    let dy = random((3, 2, 5, 5), 11);
    let dx = block.backward(&dy).unwrap();
    assert!((&dx - &dy).iter().all(|v| v.abs() <= 1e-12));
}

#[test]
fn batch_norm_standardizes_channels() {
    let mut bn = BatchNorm2d::new(4, 1e-5, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Batch::from_shape_fn((4, 8, 6, 6), |(c, ..)| 3.0 * c as f64 + (c + 1) as f64 * rng.random_range(-2.0..2.0));
    bn.forward(&x, true).unwrap();
    let xhat = bn.normalized().unwrap();
    let n = 8 * 36;
    for c in 0..4 {
        let seg = &xhat[c * n..(c + 1) * n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 1e-6, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() <= 1e-4, "channel {c} variance {var}");
    }
}

#[test]
fn dropout_is_unbiased_over_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut t = Transformation {
        dropout: Dropout::new(0.5, 14).unwrap(),
        fc: Dense::new(64, [1, 4, 4], &mut rng).unwrap(),
    };
    let x = random((1, 1, 8, 8), 15);
    let expected = t.forward(&x, false).unwrap();
    let (masks, chunk) = (10_000, 1000);
    let tiled = x.broadcast((1, chunk, 8, 8)).unwrap().to_owned();
    let mut sum = [0.0; 16];
    let mut sum_sq = [0.0; 16];
    for _ in 0..masks / chunk {
        let y = t.forward(&tiled, true).unwrap();
        for s in y.axis_iter(Axis(1)) {
            for (i, v) in s.iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
    }
    for (i, e) in expected.iter().enumerate() {
        let mean = sum[i] / masks as f64;
        let var = (sum_sq[i] / masks as f64 - mean * mean) * masks as f64 / (masks - 1) as f64;
        let se = (var / masks as f64).sqrt();
        assert!((mean - e).abs() <= 3.0 * se, "unit {i}: mean {mean}, inference {e}, se {se}");
    }
}

#[test]
fn identity_transformation_exposes_fused_features() {
    let cfg = NetworkConfig { input_side: 8, output_side: 8, base_channels: 4, ..Default::default() };
    let mut net = Network::new(cfg).unwrap();
    let fc = &mut net.transformation_mut().fc;
    fc.weight.values_mut().fill(0.0);
    for i in 0..64 {
        fc.weight.values_mut()[i * 64 + i] = 1.0;
    }
    let x = random((1, 3, 8, 8), 16);
    let out = net.forward(&x, false).unwrap();
    let features = net.features(&x, false).unwrap();
    let conv = net.transform_conv_mut().forward(&features, false).unwrap();
    assert_eq!(out.shape(), conv.shape());
    assert!((&out - &conv).iter().all(|v| v.abs() <= 1e-12));
}

fn legal_config() -> impl Strategy<Value = NetworkConfig> {
    (1usize..=4, 1usize..=3, 1usize..=5, 0usize..=2, 1usize..=3, prop_oneof![Just(1usize), Just(3)], any::<u64>())
        .prop_map(|(flows, mult, out, res, ch, k, seed)| NetworkConfig {
            input_side: mult << (flows - 1),
            output_side: out,
            num_flows: flows,
            residue_blocks_per_flow: res,
            base_channels: ch,
            kernel_size: k,
            seed,
            ..Default::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn shapes_follow_the_scale_schedule(cfg in legal_config()) {
        let mut net = Network::new(cfg).unwrap();
        let side = cfg.input_side;
        for (s, blocks) in net.flow_blocks().iter().enumerate() {
            let mut shape = [1, side, side];
            let mut smallest = side;
            for b in blocks {
                shape = b.output_shape(shape).unwrap();
                smallest = smallest.min(shape[1]);
            }
            if !blocks.is_empty() {
                prop_assert_eq!(smallest, side >> s);
                prop_assert_eq!(shape, [cfg.base_channels, side, side]);
            }
        }
        let y = net.forward(&random((1, 2, side, side), cfg.seed), true).unwrap();
        prop_assert_eq!(y.shape(), &[1, 2, cfg.output_side, cfg.output_side]);
        prop_assert!(y.iter().all(|v| v.is_finite()));
        prop_assert_eq!(net.output_shape([1, side, side]).unwrap(), [1, cfg.output_side, cfg.output_side]);
    }
}

#[test]
fn zero_epochs_change_nothing() {
    let cfg = NetworkConfig { input_side: 8, output_side: 4, base_channels: 3, ..Default::default() };
    let mut net = Network::new(cfg).unwrap();
    let before = snapshot(&mut net);
    let set = random_set(6, 8, 4, 17);
    let state = train(&mut net, &set, &set, &TrainConfig { epochs: 0, ..Default::default() }, |_| {}).unwrap();
    assert!(state.curves.is_empty());
    assert_eq!(snapshot(&mut net), before);
}

#[test]
fn training_rejects_empty_sets() {
    let cfg = NetworkConfig { input_side: 8, output_side: 4, base_channels: 3, ..Default::default() };
    let mut net = Network::new(cfg).unwrap();
    let set = random_set(4, 8, 4, 18);
    let empty = set.head(0);
    let tc = TrainConfig { epochs: 1, ..Default::default() };
    assert!(matches!(train(&mut net, &empty, &set, &tc, |_| {}), Err(NetError::EmptyDataset(_))));
    assert!(matches!(train(&mut net, &set, &empty, &tc, |_| {}), Err(NetError::EmptyDataset(_))));
}

#[test]
fn training_is_reproducible() {
    let cfg = NetworkConfig { input_side: 8, output_side: 4, base_channels: 3, seed: 5, ..Default::default() };
    let set = random_set(20, 8, 4, 19);
    let tc = TrainConfig { epochs: 3, batch_size: 8, seed: 6, ..Default::default() };
    let run = || {
        let mut net = Network::new(cfg).unwrap();
        let state = train(&mut net, &set, &set.head(5), &tc, |_| {}).unwrap();
        (state.curves, snapshot(&mut net))
    };
    let (c1, p1) = run();
    let (c2, p2) = run();
    assert_eq!(c1, c2);
    assert_eq!(p1, p2);
    for (e, r) in c1.iter().enumerate() {
        assert_eq!(r.epoch, e);
        assert!((r.lr - 1e-3 * 0.85f64.powi(e as i32)).abs() <= 1e-15);
    }
}

// Desk architecture with dropout off: dropout is a regularizer and works
// against inference-mode memorization. Small batches give the decaying
// learning rate enough steps.
#[test]
fn desk_network_memorizes_fifty_pairs() {
    let set = random_set(50, 32, 8, 20);
    let mut net = Network::new(NetworkConfig { dropout_rate: 0.0, ..Default::default() }).unwrap();
    let tc = TrainConfig { epochs: 200, batch_size: 4, seed: 21, ..Default::default() };
    let state = train(&mut net, &set, &set.head(10), &tc, |_| {}).unwrap();
    let mse = evaluate(&mut net, &set, 32).unwrap();
    println!("final training-set MSE {mse:.3e} after {} epochs", state.curves.len());
    assert!(mse <= 1e-2, "training-set MSE {mse}");
}
