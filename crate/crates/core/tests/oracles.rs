//! Independent re-implementations and closed forms checked against the library.

mod common;

use std::sync::OnceLock;

use cimtest::atpg::repeatability_score;
use cimtest::engine::{
    crossbar_mac, forward, sample_masks, BatchNorm, BinaryNetwork, DropoutBank, DropoutConfig, DropoutMethod, Gate,
    GeneratorFault, Layer, MacFault, MaskSet, Sharing,
};
use cimtest::faults::{inject, FaultContext, FaultKind, FaultLocation, FaultSpec};
use cimtest::inference::predict;
use cimtest::io::{load_model, save_model};
use cimtest::tensor::{BitMat, BitVec, RngStream};
use cimtest::trainer::{
    eval_stream, evaluate_accuracy, load_idx_samples, synth_dataset, synth_real_clusters, train, Dataset, Sample,
    SynthConfig, TrainConfig, Trained,
};
use common::{random_bits, random_mat, random_net};

const REFERENCE_DIMS: [usize; 4] = [32, 64, 64, 4];

fn reference_model() -> &'static (Dataset, Trained) {
    static MODEL: OnceLock<(Dataset, Trained)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = synth_dataset(&SynthConfig::default()).unwrap();
        let trained = train(&REFERENCE_DIMS, &DropoutConfig::default(), &data, &TrainConfig::default()).unwrap();
        (data, trained)
    })
}

/// Textbook layer-by-layer forward pass written without the engine helpers.
fn reference_forward(net: &BinaryNetwork, x: &BitVec, masks: &MaskSet) -> Vec<f64> {
    let cfg = net.dropout();
    let mut a: Vec<f64> = x.as_slice().iter().map(|v| *v as f64).collect();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let w = &layer.weights;
        let mut z = Vec::with_capacity(w.cols());
        for j in 0..w.cols() {
            let mut y = 0.0;
            for (i, ai) in a.iter().enumerate() {
                y += ai * w.get(i, j) as f64;
            }
            if l < last && masks.layers[l][j] {
                y = match cfg.method {
                    DropoutMethod::ScaleDrop => y * cfg.scale_gamma,
                    _ => 0.0,
                };
            }
            let bn = &layer.bn;
            z.push(bn.gamma[j] * (y - bn.mean[j]) / (bn.var[j] + 1e-5).sqrt() + bn.beta[j]);
        }
        a = if l == last { z } else { z.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect() };
    }
    a
}

#[test]
fn crossbar_matches_naive_matmul() {
    let mut s = RngStream::new(2024);
    for _ in 0..1000 {
        let rows = 1 + s.below(64);
        let cols = 1 + s.below(64);
        let w = random_mat(rows, cols, &mut s);
        let x = random_bits(rows, &mut s);
        let y = crossbar_mac(&w, &x, Gate::Open, MacFault::none(), &mut s).unwrap();
        let naive: Vec<f64> =
            (0..cols).map(|j| (0..rows).map(|i| (x.get(i) as i32 * w.get(i, j) as i32) as f64).sum()).collect();
        assert_eq!(y, naive);
    }
}

#[test]
fn clean_forward_matches_reference_implementation() {
    for method in [DropoutMethod::SpinDrop, DropoutMethod::SpatialSpinDrop, DropoutMethod::ScaleDrop] {
        let cfg = DropoutConfig { method, ..DropoutConfig::default() };
        let net = random_net(&REFERENCE_DIMS, cfg, 31);
        let bank = DropoutBank::new(&net);
        let mut s = RngStream::new(77);
        for i in 0..100 {
            let x = random_bits(32, &mut s);
            let masks = sample_masks(&bank, &net, &mut s.derive(i)).unwrap();
            let got = forward(&net, &x, &masks, &FaultContext::clean(), &s.derive(i)).unwrap();
            assert_eq!(got, reference_forward(&net, &x, &masks), "{method:?} input {i}");
        }
    }
}

/// One hidden unit behind a single shared dropout bit: kept, it emits -1 and
/// the logits are (-1, 1); dropped, it emits +1 and the logits are (1, -1).
fn one_bit_net() -> BinaryNetwork {
    let hidden = Layer::new(BitMat::filled(1, 1, -1), BatchNorm::identity(1)).unwrap();
    let out = Layer::new(BitMat::from_rows(&[vec![1, -1]]).unwrap(), BatchNorm::identity(2)).unwrap();
    let cfg = DropoutConfig { sharing: Sharing::LayerShared, p: 0.5, ..DropoutConfig::default() };
    BinaryNetwork::new(vec![hidden, out], cfg).unwrap()
}

#[test]
fn repeatability_score_matches_binomial_enumeration() {
    let net = one_bit_net();
    let bank = DropoutBank::new(&net);
    assert_eq!(bank.len(), 1);
    let t = 20usize;
    let a = 1.0 / (1.0 + (-2.0f64).exp());
    let d = (2.0 * a - 1.0).powi(2);
    // P(K = k) for K ~ Bin(T, 1/2) dropped passes; u = d·f·(1-f) with f = K/T.
    let mut pmf = vec![0.0; t + 1];
    let mut c = 1.0;
    for (k, p) in pmf.iter_mut().enumerate() {
        if k > 0 {
            c = c * (t - k + 1) as f64 / k as f64;
        }
        *p = c / 2f64.powi(t as i32);
    }
    let u = |k: usize| {
        let f = k as f64 / t as f64;
        d * f * (1.0 - f)
    };
    let mean: f64 = pmf.iter().enumerate().map(|(k, p)| p * u(k)).sum();
    let exact: f64 = pmf.iter().enumerate().map(|(k, p)| p * (u(k) - mean).powi(2)).sum();
    let score = repeatability_score(&net, &bank, &BitVec::filled(1, 1), 10_000, t, &RngStream::new(5)).unwrap();
    assert!((score / exact - 1.0).abs() < 0.10, "score {score} vs exact {exact}");
}

#[test]
fn synthetic_clusters_are_separable_by_logistic_regression() {
    let clusters = synth_real_clusters(&SynthConfig::default()).unwrap();
    let dim = clusters.centers[0].len();
    let k = clusters.centers.len();
    let mut w = vec![vec![0.0; dim + 1]; k];
    for _ in 0..200 {
        let mut grad = vec![vec![0.0; dim + 1]; k];
        for (x, y) in &clusters.train {
            let logits: Vec<f64> =
                w.iter().map(|wc| wc[dim] + x.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>()).collect();
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / s - if c == *y { 1.0 } else { 0.0 };
                for i in 0..dim {
                    grad[c][i] += g * x[i];
                }
                grad[c][dim] += g;
            }
        }
        let n = clusters.train.len() as f64;
        for c in 0..k {
            for i in 0..=dim {
                w[c][i] -= 0.5 * grad[c][i] / n;
            }
        }
    }
    let correct = clusters
        .eval
        .iter()
        .filter(|(x, y)| {
            let scores: Vec<f64> =
                w.iter().map(|wc| wc[dim] + x.iter().zip(wc).map(|(a, b)| a * b).sum::<f64>()).collect();
            scores.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == *y
        })
        .count();
    let acc = correct as f64 / clusters.eval.len() as f64;
    assert!(acc >= 0.95, "logistic regression eval accuracy {acc}");
}

/// Two classes split by a fixed hyperplane over 8 binary features.
fn separable_toy() -> (Dataset, Vec<f64>) {
    let plane = vec![1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
    let mut s = RngStream::new(8);
    let mut samples = Vec::new();
    while samples.len() < 400 {
        let x = random_bits(8, &mut s);
        let margin: f64 = x.as_slice().iter().zip(&plane).map(|(a, b)| *a as f64 * b).sum();
        if margin.abs() >= 2.0 {
            samples.push(Sample { x, label: usize::from(margin > 0.0) });
        }
    }
    let eval = samples.split_off(320);
    (Dataset { dim: 8, n_classes: 2, train: samples, eval }, plane)
}

#[test]
fn trainer_fits_perceptron_separable_toy() {
    let (data, _) = separable_toy();
    // The perceptron converges only on separable data, so this certifies the set.
    let mut w = [0.0f64; 9];
    let mut converged = false;
    for _ in 0..1000 {
        let mut errors = 0;
        for s in &data.train {
            let x: Vec<f64> = s.x.as_slice().iter().map(|v| *v as f64).chain([1.0]).collect();
            let y = if s.label == 1 { 1.0 } else { -1.0 };
            if y * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() <= 0.0 {
                w.iter_mut().zip(&x).for_each(|(wi, xi)| *wi += y * xi);
                errors += 1;
            }
        }
        if errors == 0 {
            converged = true;
            break;
        }
    }
    assert!(converged, "toy set must be linearly separable");
    let cfg = TrainConfig { epochs: 30, calibration_inputs: 100, ..TrainConfig::default() };
    let trained = train(&[8, 16, 2], &DropoutConfig::default(), &data, &cfg).unwrap();
    assert!(trained.eval_accuracy >= 0.95, "toy eval accuracy {}", trained.eval_accuracy);
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let (data, _) = separable_toy();
    let base = TrainConfig { learning_rate: 0.0, calibration_inputs: 100, ..TrainConfig::default() };
    let one = train(&[8, 16, 2], &DropoutConfig::default(), &data, &TrainConfig { epochs: 1, ..base.clone() }).unwrap();
    let many = train(&[8, 16, 2], &DropoutConfig::default(), &data, &TrainConfig { epochs: 5, ..base }).unwrap();
    for (a, b) in one.network.layers().iter().zip(many.network.layers()) {
        assert_eq!(a.weights, b.weights);
    }
}

#[test]
fn reference_model_accuracy_floor_and_reload() {
    let (data, trained) = reference_model();
    assert!(trained.eval_accuracy >= 0.85, "Bayesian eval accuracy {}", trained.eval_accuracy);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &trained.network).unwrap();
    let net = load_model(&path).unwrap();
    assert_eq!(net, trained.network);
    let cfg = TrainConfig::default();
    let acc = evaluate_accuracy(
        &net,
        &data.eval,
        cfg.eval_passes,
        &DropoutBank::new(&net),
        &FaultContext::clean(),
        &eval_stream(&cfg),
    )
    .unwrap();
    assert_eq!(acc, trained.eval_accuracy);
}

#[test]
fn training_is_deterministic() {
    let (data, trained) = reference_model();
    let again = train(&REFERENCE_DIMS, &DropoutConfig::default(), data, &TrainConfig::default()).unwrap();
    assert_eq!(again.network, trained.network);
    assert_eq!(again.loss_history, trained.loss_history);
}

#[test]
fn all_dropped_bank_predicts_majority() {
    let (data, trained) = reference_model();
    let net = &trained.network;
    let mut bank = DropoutBank::new(net);
    let spec = FaultSpec::with_rate(FaultLocation::DropoutModule, FaultKind::StuckAt1, 1.0);
    let ctx = inject(net, &mut bank, &spec, &mut RngStream::new(1)).unwrap();
    assert!(bank.generators().iter().all(|g| g.fault == GeneratorFault::StuckDrop));
    let acc = evaluate_accuracy(net, &data.eval, 5, &bank, &ctx, &RngStream::new(2)).unwrap();
    // Every input gives the same constant output, so one class is predicted.
    let rates: Vec<f64> = (0..data.n_classes)
        .map(|c| data.eval.iter().filter(|s| s.label == c).count() as f64 / data.eval.len() as f64)
        .collect();
    assert!(rates.iter().any(|r| (r - acc).abs() < 1e-12), "accuracy {acc} is not a class rate {rates:?}");
    assert!(acc <= Dataset::majority_rate(&data.eval, data.n_classes));
}

#[test]
fn single_open_pass_equals_deterministic_accuracy() {
    let (data, trained) = reference_model();
    let net = &trained.network;
    let mut bank = DropoutBank::new(net);
    let spec = FaultSpec::with_rate(FaultLocation::DropoutModule, FaultKind::StuckAt0, 1.0);
    let ctx = inject(net, &mut bank, &spec, &mut RngStream::new(1)).unwrap();
    let acc = evaluate_accuracy(net, &data.eval, 1, &bank, &ctx, &RngStream::new(3)).unwrap();
    let open = MaskSet::open(net);
    let correct = data
        .eval
        .iter()
        .filter(|s| {
            let z = reference_forward(net, &s.x, &open);
            z.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0))).unwrap().0 == s.label
        })
        .count();
    assert_eq!(acc, correct as f64 / data.eval.len() as f64);
}

#[test]
fn label_complement_on_balanced_binary_set() {
    let (data, _) = separable_toy();
    let cfg = TrainConfig { epochs: 3, calibration_inputs: 100, ..TrainConfig::default() };
    let net = train(&[8, 16, 2], &DropoutConfig::default(), &data, &cfg).unwrap().network;
    let bank = DropoutBank::new(&net);
    let flipped: Vec<Sample> = data.eval.iter().map(|s| Sample { x: s.x.clone(), label: 1 - s.label }).collect();
    let s = RngStream::new(4);
    let a = evaluate_accuracy(&net, &data.eval, 10, &bank, &FaultContext::clean(), &s).unwrap();
    let b = evaluate_accuracy(&net, &flipped, 10, &bank, &FaultContext::clean(), &s).unwrap();
    assert!((a + b - 1.0).abs() < 1e-12);
}

fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn train_and_eval_uncertainties_overlap() {
    let (data, trained) = reference_model();
    let net = &trained.network;
    let bank = DropoutBank::new(net);
    let s = RngStream::new(6);
    let us = |split: &[Sample], tag: u64| -> Vec<f64> {
        split
            .iter()
            .enumerate()
            .map(|(i, x)| {
                predict(net, &x.x, 20, &bank, &FaultContext::clean(), &s.derive(tag).derive(i as u64))
                    .unwrap()
                    .uncertainty
            })
            .collect()
    };
    let d = ks_statistic(&mut us(&data.train, 0), &mut us(&data.eval, 1));
    assert!(d < 0.15, "KS statistic {d}");
}

fn idx_files(dir: &std::path::Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
    let img = dir.join("images.idx");
    let lab = dir.join("labels.idx");
    let mut ib = vec![0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
    ib.extend_from_slice(images);
    let mut lb = vec![0, 0, 8, 1, 0, 0, 0, 4];
    lb.extend_from_slice(labels);
    std::fs::write(&img, ib).unwrap();
    std::fs::write(&lab, lb).unwrap();
    (img, lab)
}

#[test]
fn idx_fixture_decodes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let pixels = [0, 255, 127, 128, /**/ 255, 255, 0, 0, /**/ 64, 200, 10, 250, /**/ 128, 128, 128, 128];
    let (img, lab) = idx_files(dir.path(), &pixels, &[3, 0, 1, 2]);
    let samples = load_idx_samples(&img, &lab, 0.5).unwrap();
    let expect: [[i8; 4]; 4] = [[-1, 1, -1, 1], [1, 1, -1, -1], [-1, 1, -1, 1], [1, 1, 1, 1]];
    for (s, (bits, label)) in samples.iter().zip(expect.iter().zip([3, 0, 1, 2])) {
        assert_eq!(s.x.as_slice(), bits);
        assert_eq!(s.label, label);
    }
    let dark = load_idx_samples(&img, &lab, 1.0).unwrap();
    let ones: Vec<usize> = dark.iter().map(|s| s.x.as_slice().iter().filter(|v| **v == 1).count()).collect();
    assert_eq!(ones, vec![1, 2, 0, 0], "only pixels equal to 255 reach the threshold");
    assert!(load_idx_samples(&lab, &img, 0.5).is_err(), "swapped files must be rejected");
}
