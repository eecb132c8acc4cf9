mod common;

use rand::Rng;

use common::test_rng;
use dlhb::beamforming::BeamDims;
use dlhb::dataset::{Dataset, FeatureTensor, LabelVector, Sample};
use dlhb::network::{self, CnnConfig, CnnModel, Mode, Predictor, TrainConfig, BN_EPS, BN_MOMENTUM};

fn gradcheck_config() -> CnnConfig {
    CnnConfig { conv_filters: 2, fc_units: 8, dropout_p: 0.0, input_shape: (4, 4, 3), output_len: 5 }
}

fn random_input(rows: usize, cols: usize, seed: u64) -> FeatureTensor {
    let mut r = test_rng(seed);
    FeatureTensor { rows, cols, data: (0..rows * cols * 3).map(|_| r.random::<f32>() * 2.0 - 1.0).collect() }
}

fn random_target(n: usize, seed: u64) -> Vec<f64> {
    let mut r = test_rng(seed + 1000);
    (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()
}

fn batch_loss(m: &CnnModel, xs: &[&FeatureTensor], ts: &[&[f64]]) -> f64 {
    let cache = m.forward_batch(xs, Mode::Train, None).unwrap();
    cache.output.iter().zip(ts).map(|(y, t)| network::loss(y, t).unwrap()).sum::<f64>() / xs.len() as f64
}

#[test]
fn backward_matches_central_differences() {
    let cfg = gradcheck_config();
    let m = CnnModel::new(cfg.clone(), 11).unwrap();
    let xs: Vec<FeatureTensor> = (0..3).map(|k| random_input(4, 4, 50 + k)).collect();
    let ts: Vec<Vec<f64>> = (0..3).map(|k| random_target(cfg.output_len, k)).collect();
    let xr: Vec<&FeatureTensor> = xs.iter().collect();
    let tr: Vec<&[f64]> = ts.iter().map(|t| &t[..]).collect();
    let cache = m.forward_batch(&xr, Mode::Train, None).unwrap();
    let (l, g) = m.backward(&cache, &tr).unwrap();
    assert!((l - batch_loss(&m, &xr, &tr)).abs() < 1e-15);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in 0..g.tensors.len() {
        for i in 0..g.tensors[t].len() {
            let mut p = m.clone();
            p.params_mut()[t][i] += h;
            let up = batch_loss(&p, &xr, &tr);
            p.params_mut()[t][i] -= 2.0 * h;
            let down = batch_loss(&p, &xr, &tr);
            let fd = (up - down) / (2.0 * h);
            let an = g.tensors[t][i];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "tensor {t} entry {i}: analytic {an}, numeric {fd}");
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn hand_traced_forward_pass() {
    let cfg = CnnConfig { conv_filters: 1, fc_units: 1, dropout_p: 0.5, input_shape: (2, 2, 3), output_len: 2 };
    let mut m = CnnModel::new(cfg, 0).unwrap();
    m.conv1.weight.iter_mut().for_each(|w| *w = 0.0);
    m.conv1.weight[(4 * 3) + 0] = 2.0;
    m.conv1.bias = vec![0.5];
    m.norm1.running_mean = vec![0.5];
    m.norm1.running_var = vec![4.0 - BN_EPS];
    m.norm1.gamma = vec![2.0];
    m.norm1.beta = vec![0.0];
    m.conv2.weight.iter_mut().for_each(|w| *w = 0.0);
    m.conv2.weight[4] = 1.0;
    m.conv2.bias = vec![0.0];
    m.norm2.running_mean = vec![0.0];
    m.norm2.running_var = vec![1.0 - BN_EPS];
    m.norm2.gamma = vec![1.0];
    m.norm2.beta = vec![0.0];
    m.dense1.weight = vec![1.0; 4];
    m.dense1.bias = vec![0.0];
    m.dense2.weight = vec![3.0];
    m.dense2.bias = vec![-1.0];
    m.output.weight = vec![1.0, -2.0];
    m.output.bias = vec![0.0, 0.25];
    let mut x = FeatureTensor { rows: 2, cols: 2, data: vec![9.0; 12] };
    for (px, v) in [0.5f32, -0.25, 1.0, 0.125].into_iter().enumerate() {
        x.data[px * 3] = v;
    }
    // conv1 -> 2 x + 0.5; norm1 -> 2 (2x) / 2 = 2x; relu; conv2 and norm2 pass
    // through; dense1 sums [1, 0, 2, 0.25] = 3.25; dense2 -> 8.75.
    let y = m.predict(&x).unwrap();
    assert!((y[0] - 8.75).abs() < 1e-9 && (y[1] - (-17.25)).abs() < 1e-9, "{y:?}");
    assert_eq!(Predictor::new(&m).predict(&x).unwrap(), y);
}

#[test]
fn loss_matches_direct_sum() {
    let mut r = test_rng(60);
    let p: Vec<f64> = (0..17).map(|_| r.random::<f64>()).collect();
    let t: Vec<f64> = (0..17).map(|_| r.random::<f64>()).collect();
    let mut s = 0.0;
    for k in 0..17 {
        s += (p[k] - t[k]).powi(2);
    }
    assert!((network::loss(&p, &t).unwrap() - s / 17.0).abs() < 1e-15);
    assert_eq!(network::loss(&[2.0; 4], &[1.0; 4]).unwrap(), 1.0);
}

#[test]
fn zero_loss_gives_zero_output_gradient() {
    let cfg = gradcheck_config();
    let m = CnnModel::new(cfg, 3).unwrap();
    let xs = [random_input(4, 4, 1), random_input(4, 4, 2)];
    let xr: Vec<&FeatureTensor> = xs.iter().collect();
    let cache = m.forward_batch(&xr, Mode::Train, None).unwrap();
    let targets = cache.output.clone();
    let tr: Vec<&[f64]> = targets.iter().map(|t| &t[..]).collect();
    let (l, g) = m.backward(&cache, &tr).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.tensors[12].iter().chain(&g.tensors[13]).all(|&v| v == 0.0));
}

#[test]
fn running_statistics_follow_batch_moments() {
    let cfg = CnnConfig { conv_filters: 1, fc_units: 2, dropout_p: 0.0, input_shape: (2, 2, 3), output_len: 1 };
    let mut m = CnnModel::new(cfg, 0).unwrap();
    m.conv1.weight.iter_mut().for_each(|w| *w = 0.0);
    m.conv1.weight[4 * 3] = 1.0;
    m.conv1.bias = vec![0.0];
    let xs = [random_input(2, 2, 5), random_input(2, 2, 6)];
    let vals: Vec<f64> = xs.iter().flat_map(|x| x.data.iter().step_by(3).map(|&v| v as f64)).collect();
    let mean = vals.iter().sum::<f64>() / 8.0;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
    let xr: Vec<&FeatureTensor> = xs.iter().collect();
    let cache = m.forward_batch(&xr, Mode::Train, None).unwrap();
    m.update_running_stats(&cache);
    assert!((m.norm1.running_mean[0] - (1.0 - BN_MOMENTUM) * mean).abs() < 1e-15);
    assert!((m.norm1.running_var[0] - (BN_MOMENTUM + (1.0 - BN_MOMENTUM) * var)).abs() < 1e-15);
    let before = m.norm1.clone();
    let cache = m.forward_batch(&xr, Mode::Infer, None).unwrap();
    m.update_running_stats(&cache);
    assert_eq!(m.norm1, before);
}

fn toy_dataset(n: usize, seed: u64) -> (Dataset, CnnConfig) {
    let dims = BeamDims { n_tx: 3, n_rx: 1, n_rf: 1, n_streams: 1, n_subcarriers: 2 };
    let (h, w, _) = dims.feature_shape();
    let samples = (0..n as u64)
        .map(|k| Sample {
            features: random_input(h, w, seed + k),
            label: LabelVector { data: random_target(dims.label_len(), seed + k).iter().map(|&v| v as f32 as f64).collect() },
        })
        .collect();
    (Dataset { dims, samples }, CnnConfig::for_dims(&dims, 2, 8, 0.0))
}

#[test]
fn single_sample_is_memorized() {
    let (ds, net) = toy_dataset(1, 70);
    let cfg = TrainConfig { epochs: 200, lr: 0.01, ..Default::default() };
    let (_, rep) = network::train(&ds, &cfg, &net).unwrap();
    assert!(*rep.train_loss.last().unwrap() < 1e-3, "{:?}", rep.train_loss.last());
    assert!(rep.val_loss.iter().all(Option::is_none));
    assert_eq!(rep.best_epoch, 199);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let (ds, net) = toy_dataset(6, 80);
    let cfg = TrainConfig { lr: 0.0, epochs: 3, batch: 2, seed: 4, ..Default::default() };
    let (m, _) = network::train(&ds, &cfg, &net).unwrap();
    let init = CnnModel::new(net, 4).unwrap();
    for ((_, a), (_, b)) in m.params().iter().zip(init.params()) {
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn one_full_batch_epoch_is_one_gradient_step() {
    let (ds, net) = toy_dataset(5, 90);
    let cfg = TrainConfig { lr: 0.02, momentum: 0.0, epochs: 1, batch: 64, val_fraction: 0.0, seed: 2 };
    let (trained, _) = network::train(&ds, &cfg, &net).unwrap();
    let m = CnnModel::new(net, 2).unwrap();
    let (order, _) = network::split_indices(ds.len(), &cfg);
    let xr: Vec<&FeatureTensor> = order.iter().map(|&i| &ds.samples[i].features).collect();
    let tr: Vec<&[f64]> = order.iter().map(|&i| &ds.samples[i].label.data[..]).collect();
    let cache = m.forward_batch(&xr, Mode::Train, None).unwrap();
    let (_, g) = m.backward(&cache, &tr).unwrap();
    for (((_, w0), (_, w1)), gt) in m.params().iter().zip(trained.params()).zip(&g.tensors) {
        for ((a, b), d) in w0.iter().zip(w1).zip(gt) {
            let expect = a - cfg.lr * d;
            assert!((b - expect).abs() <= 1e-6 * expect.abs().max(1e-6), "{b} vs {expect}");
        }
    }
}

#[test]
fn training_is_reproducible_and_persists() {
    let (ds, net) = toy_dataset(10, 100);
    let net = CnnConfig { dropout_p: 0.5, ..net };
    let cfg = TrainConfig { epochs: 4, batch: 3, seed: 9, ..Default::default() };
    let (a, ra) = network::train(&ds, &cfg, &net).unwrap();
    let (b, rb) = network::train(&ds, &cfg, &net).unwrap();
    assert_eq!(a, b);
    assert_eq!((&ra.train_loss, &ra.val_loss, ra.best_epoch, &ra.checksum), (&rb.train_loss, &rb.val_loss, rb.best_epoch, &rb.checksum));
    assert_eq!(ra.train_loss.len(), 4);

    let bytes = network::to_bytes(&a).unwrap();
    let back = network::from_bytes(&bytes).unwrap();
    assert_eq!(back, a);
    assert_eq!(network::to_bytes(&back).unwrap(), bytes);
    assert_eq!(network::checksum(&back).unwrap(), ra.checksum);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    network::save_model(&a, &path).unwrap();
    assert_eq!(network::load_model(&path).unwrap(), a);
}

#[test]
fn predictor_is_bit_identical_to_model() {
    let (ds, net) = toy_dataset(8, 110);
    let cfg = TrainConfig { epochs: 3, batch: 4, ..Default::default() };
    let (m, _) = network::train(&ds, &cfg, &net).unwrap();
    let p = Predictor::new(&m);
    for s in &ds.samples {
        let a = m.predict(&s.features).unwrap();
        let b = p.predict(&s.features).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let dims = BeamDims { n_tx: 16, n_rx: 4, n_rf: 4, n_streams: 2, n_subcarriers: 8 };
    let mut big = CnnModel::new(CnnConfig::desk(&dims), 3).unwrap();
    big.quantize_f32();
    let x = random_input(32, 16, 7);
    assert_eq!(big.predict(&x).unwrap(), Predictor::new(&big).predict(&x).unwrap());
}

#[test]
fn inference_ignores_dropout_and_is_repeatable() {
    let m = CnnModel::new(CnnConfig { dropout_p: 0.5, ..gradcheck_config() }, 1).unwrap();
    let x = random_input(4, 4, 3);
    let a = m.forward(&x, Mode::Infer, Some(&mut test_rng(1))).unwrap();
    let b = m.forward(&x, Mode::Infer, Some(&mut test_rng(2))).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, m.predict(&x).unwrap());
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (ds, mut net) = toy_dataset(2, 120);
    net.output_len += 1;
    assert!(network::train(&ds, &TrainConfig::default(), &net).is_err());
}
