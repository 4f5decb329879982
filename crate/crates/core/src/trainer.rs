//! Desk-scale datasets and a straight-through-estimator trainer for the
//! binarized MLP, with dropout live during training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{
    argmax, crossbar_mac, sample_masks, softmax, BatchNorm, BinaryNetwork, DropoutBank, DropoutConfig, Gate, Layer,
    MacFault, MaskSet, BN_EPS,
};
use crate::error::{Error, Result};
use crate::faults::{calibrate_layer_std, FaultContext};
use crate::inference::{mean_rows, sample_probs, DEFAULT_PASSES};
use crate::tensor::{mean, population_variance, sign, BitMat, BitVec, RealVec, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: BitVec,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub n_classes: usize,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Dataset {
    pub fn train_inputs(&self) -> Vec<BitVec> {
        self.train.iter().map(|s| s.x.clone()).collect()
    }

    /// Dimension and label checks for datasets read from disk.
    pub fn validate(&self) -> Result<()> {
        for s in self.train.iter().chain(&self.eval) {
            if s.x.len() != self.dim || s.label >= self.n_classes {
                return Err(Error::Ingestion(format!(
                    "sample of width {} with label {} in a dataset of dim {} and {} classes",
                    s.x.len(),
                    s.label,
                    self.dim,
                    self.n_classes
                )));
            }
        }
        if self.train.is_empty() || self.eval.is_empty() {
            return Err(Error::Ingestion("dataset needs non-empty train and eval splits".into()));
        }
        Ok(())
    }

    /// Fraction of the most frequent label in `samples`.
    pub fn majority_rate(samples: &[Sample], n_classes: usize) -> f64 {
        let mut counts = vec![0usize; n_classes];
        samples.iter().for_each(|s| counts[s.label] += 1);
        *counts.iter().max().unwrap_or(&0) as f64 / samples.len().max(1) as f64
    }
}

/// Gaussian class clusters before binarization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub seed: u64,
    /// Norm of every class center.
    pub center_radius: f64,
    /// Minimum pairwise distance between centers.
    pub min_center_distance: f64,
    pub within_std: f64,
    /// Fraction of every class held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 500,
            n_classes: 4,
            dim: 32,
            seed: 1,
            center_radius: 2.5,
            min_center_distance: 2.0,
            within_std: 0.6,
            eval_fraction: 0.2,
        }
    }
}

/// Real-valued clusters, split like the binarized dataset.
#[derive(Clone, Debug)]
pub struct RealClusters {
    pub centers: Vec<RealVec>,
    pub train: Vec<(RealVec, usize)>,
    pub eval: Vec<(RealVec, usize)>,
}

fn shuffle<T>(items: &mut [T], stream: &mut RngStream) {
    for i in (1..items.len()).rev() {
        let j = stream.below(i + 1);
        items.swap(i, j);
    }
}

pub fn synth_real_clusters(cfg: &SynthConfig) -> Result<RealClusters> {
    if cfg.n_per_class == 0 || cfg.n_classes < 2 {
        return Err(Error::contract("synthetic dataset needs n_per_class >= 1 and at least two classes"));
    }
    if cfg.dim < cfg.n_classes {
        return Err(Error::contract(format!("dim {} smaller than class count {}", cfg.dim, cfg.n_classes)));
    }
    if !(cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0) {
        return Err(Error::contract("eval_fraction must lie in (0, 1)"));
    }
    let n_eval = ((cfg.n_per_class as f64) * cfg.eval_fraction).round() as usize;
    if n_eval == 0 || n_eval == cfg.n_per_class {
        return Err(Error::contract("every class needs samples in both splits"));
    }
    let root = RngStream::new(cfg.seed);
    let mut cs = root.derive(0);
    let mut centers = Vec::new();
    for _attempt in 0..10_000 {
        centers = (0..cfg.n_classes)
            .map(|_| {
                let v: RealVec = (0..cfg.dim).map(|_| cs.standard_normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x * cfg.center_radius / norm).collect()
            })
            .collect::<Vec<RealVec>>();
        let ok = (0..cfg.n_classes).all(|a| {
            (a + 1..cfg.n_classes).all(|b| {
                let d2: f64 = centers[a].iter().zip(&centers[b]).map(|(x, y)| (x - y).powi(2)).sum();
                d2.sqrt() >= cfg.min_center_distance
            })
        });
        if ok {
            break;
        }
        centers.clear();
    }
    if centers.is_empty() {
        return Err(Error::contract("could not place class centers at the requested distance"));
    }
    let mut ps = root.derive(1);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (label, c) in centers.iter().enumerate() {
        for i in 0..cfg.n_per_class {
            let x: RealVec = c.iter().map(|m| m + cfg.within_std * ps.standard_normal()).collect();
            if i < cfg.n_per_class - n_eval {
                train.push((x, label));
            } else {
                eval.push((x, label));
            }
        }
    }
    let mut ss = root.derive(2);
    shuffle(&mut train, &mut ss);
    shuffle(&mut eval, &mut ss);
    Ok(RealClusters { centers, train, eval })
}

/// Clusters binarized elementwise with `sign(0) = +1`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    let real = synth_real_clusters(cfg)?;
    let bin = |v: Vec<(RealVec, usize)>| -> Vec<Sample> {
        v.into_iter().map(|(x, label)| Sample { x: BitVec::from_signs(&x), label }).collect()
    };
    Ok(Dataset { dim: cfg.dim, n_classes: cfg.n_classes, train: bin(real.train), eval: bin(real.eval) })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Ingestion(format!("{what}: truncated header")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Decode an IDX image/label pair, binarizing pixels as `sign(pixel/255 - threshold)`.
pub fn load_idx_samples(images: &Path, labels: &Path, binarize_threshold: f64) -> Result<Vec<Sample>> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;
    let img_name = images.display().to_string();
    let lab_name = labels.display().to_string();
    let magic = read_u32(&img, 0, &img_name)?;
    if magic != IDX_IMAGES {
        return Err(Error::Ingestion(format!(
            "{img_name}: expected image magic 0x{IDX_IMAGES:08x}, found 0x{magic:08x}"
        )));
    }
    let magic = read_u32(&lab, 0, &lab_name)?;
    if magic != IDX_LABELS {
        return Err(Error::Ingestion(format!(
            "{lab_name}: expected label magic 0x{IDX_LABELS:08x}, found 0x{magic:08x}"
        )));
    }
    let n = read_u32(&img, 4, &img_name)? as usize;
    let rows = read_u32(&img, 8, &img_name)? as usize;
    let cols = read_u32(&img, 12, &img_name)? as usize;
    let n_labels = read_u32(&lab, 4, &lab_name)? as usize;
    if n != n_labels {
        return Err(Error::Ingestion(format!("{n} images but {n_labels} labels")));
    }
    let dim = rows * cols;
    if dim == 0 || img.len() != 16 + n * dim {
        return Err(Error::Ingestion(format!("{img_name}: payload size does not match {n}x{rows}x{cols}")));
    }
    if lab.len() != 8 + n {
        return Err(Error::Ingestion(format!("{lab_name}: payload size does not match {n} labels")));
    }
    Ok((0..n)
        .map(|i| {
            let px = &img[16 + i * dim..16 + (i + 1) * dim];
            let x: Vec<i8> = px.iter().map(|p| sign(*p as f64 / 255.0 - binarize_threshold)).collect();
            Sample { x: BitVec::new(x).expect("sign yields ±1"), label: lab[8 + i] as usize }
        })
        .collect())
}

/// IDX pair as a dataset; the last `eval_fraction` of every class (in file
/// order) becomes the eval split.
pub fn load_idx(images: &Path, labels: &Path, binarize_threshold: f64, eval_fraction: f64) -> Result<Dataset> {
    let samples = load_idx_samples(images, labels, binarize_threshold)?;
    let n_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let dim = samples.first().map_or(0, |s| s.x.len());
    let mut per_class: Vec<Vec<Sample>> = vec![Vec::new(); n_classes];
    samples.into_iter().for_each(|s| per_class[s.label].push(s));
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (c, group) in per_class.into_iter().enumerate() {
        if group.len() < 2 {
            return Err(Error::Ingestion(format!("class {c} needs at least two samples to appear in both splits")));
        }
        let n_eval = ((group.len() as f64 * eval_fraction).round() as usize).clamp(1, group.len() - 1);
        let cut = group.len() - n_eval;
        for (i, s) in group.into_iter().enumerate() {
            if i < cut {
                train.push(s);
            } else {
                eval.push(s);
            }
        }
    }
    Ok(Dataset { dim, n_classes, train, eval })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Latent weights start uniform in [-init_scale, init_scale].
    pub init_scale: f64,
    pub seed: u64,
    /// Passes used for the reported Bayesian eval accuracy.
    pub eval_passes: usize,
    /// Inputs used to calibrate per-layer MAC spread.
    pub calibration_inputs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            init_scale: 0.1,
            seed: 1,
            eval_passes: DEFAULT_PASSES,
            calibration_inputs: 500,
        }
    }
}

/// Stream behind the reported eval accuracy, so a reloaded model can
/// reproduce it exactly.
pub fn eval_stream(cfg: &TrainConfig) -> RngStream {
    RngStream::new(cfg.seed).derive(4)
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::contract("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub network: BinaryNetwork,
    /// Mean cross-entropy per epoch.
    pub loss_history: Vec<f64>,
    /// Fault-free Bayesian accuracy on the eval split.
    pub eval_accuracy: f64,
}

/// Latent real weights and batch-norm affine parameters of one layer.
struct LatentLayer {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    vw: Vec<f64>,
    vgamma: Vec<f64>,
    vbeta: Vec<f64>,
}

impl LatentLayer {
    fn binary(&self) -> BitMat {
        BitMat::new(self.rows, self.cols, self.w.iter().map(|v| sign(*v)).collect()).expect("shape")
    }
}

/// Forward cache of one layer for a batch.
struct LayerCache {
    inputs: Vec<BitVec>,
    masks: Vec<Vec<bool>>,
    xhat: Vec<RealVec>,
    inv_std: RealVec,
    z: Vec<RealVec>,
}

#[allow(clippy::needless_range_loop)]
pub fn train(layer_dims: &[usize], dropout: &DropoutConfig, data: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    dropout.validate()?;
    if layer_dims.len() < 2 {
        return Err(Error::contract("layer_dims needs an input and an output width"));
    }
    if layer_dims[0] != data.dim || *layer_dims.last().unwrap() != data.n_classes {
        return Err(Error::contract(format!(
            "topology {layer_dims:?} incompatible with data of dim {} and {} classes",
            data.dim, data.n_classes
        )));
    }
    if data.train.is_empty() || data.eval.is_empty() {
        return Err(Error::contract("training needs non-empty train and eval splits"));
    }
    let root = RngStream::new(cfg.seed);
    let mut init = root.derive(0);
    let mut latent: Vec<LatentLayer> = layer_dims
        .windows(2)
        .map(|d| LatentLayer {
            rows: d[0],
            cols: d[1],
            w: (0..d[0] * d[1]).map(|_| cfg.init_scale * (2.0 * init.uniform() - 1.0)).collect(),
            gamma: vec![1.0; d[1]],
            beta: vec![0.0; d[1]],
            vw: vec![0.0; d[0] * d[1]],
            vgamma: vec![0.0; d[1]],
            vbeta: vec![0.0; d[1]],
        })
        .collect();

    // The shell network only carries topology and dropout wiring for mask sampling.
    let shell = assemble(&latent, None, dropout)?;
    let bank = DropoutBank::new(&shell);
    let n_layers = latent.len();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut loss_history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let es = root.derive(1).derive(epoch as u64);
        shuffle(&mut order, &mut es.derive(0));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let bs = es.derive(1).derive(b as u64);
            let weights: Vec<BitMat> = latent.iter().map(LatentLayer::binary).collect();
            let masks: Vec<MaskSet> = (0..batch.len())
                .map(|i| sample_masks(&bank, &shell, &mut bs.derive(i as u64)))
                .collect::<Result<_>>()?;

            // forward with batch statistics
            let mut caches: Vec<LayerCache> = Vec::with_capacity(n_layers);
            let mut acts: Vec<BitVec> = batch.iter().map(|&i| data.train[i].x.clone()).collect();
            let mut scratch = RngStream::new(0);
            let mut logits = Vec::new();
            for l in 0..n_layers {
                let hidden = l + 1 < n_layers;
                let layer_masks: Vec<Vec<bool>> = if hidden {
                    masks.iter().map(|m| m.layers[l].clone()).collect()
                } else {
                    vec![vec![false; latent[l].cols]; batch.len()]
                };
                let ys: Vec<RealVec> = acts
                    .iter()
                    .zip(&layer_masks)
                    .map(|(a, m)| {
                        let gate = if hidden { Gate::for_layer(dropout, m) } else { Gate::Open };
                        crossbar_mac(&weights[l], a, gate, MacFault::none(), &mut scratch)
                    })
                    .collect::<Result<_>>()?;
                let cols = latent[l].cols;
                let n = ys.len() as f64;
                let mut inv_std = vec![0.0; cols];
                let mut xhat = vec![vec![0.0; cols]; ys.len()];
                let mut z = vec![vec![0.0; cols]; ys.len()];
                for j in 0..cols {
                    let mu = ys.iter().map(|y| y[j]).sum::<f64>() / n;
                    let var = ys.iter().map(|y| (y[j] - mu).powi(2)).sum::<f64>() / n;
                    inv_std[j] = 1.0 / (var + BN_EPS).sqrt();
                    for (k, y) in ys.iter().enumerate() {
                        xhat[k][j] = (y[j] - mu) * inv_std[j];
                        z[k][j] = latent[l].gamma[j] * xhat[k][j] + latent[l].beta[j];
                    }
                }
                let next: Vec<BitVec> =
                    if hidden { z.iter().map(|r| BitVec::from_signs(r)).collect() } else { Vec::new() };
                if !hidden {
                    logits = z.clone();
                }
                caches.push(LayerCache {
                    inputs: std::mem::replace(&mut acts, next),
                    masks: layer_masks,
                    xhat,
                    inv_std,
                    z,
                });
            }

            // softmax cross-entropy
            let n = batch.len() as f64;
            let mut dz: Vec<RealVec> = Vec::with_capacity(batch.len());
            for (k, &i) in batch.iter().enumerate() {
                let p = softmax(&logits[k]);
                let label = data.train[i].label;
                epoch_loss -= p[label].max(1e-300).ln();
                let mut g: RealVec = p.iter().map(|v| v / n).collect();
                g[label] -= 1.0 / n;
                dz.push(g);
            }

            // backward
            for l in (0..n_layers).rev() {
                let hidden = l + 1 < n_layers;
                let cache = &caches[l];
                let lat = &latent[l];
                let cols = lat.cols;
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dy = vec![vec![0.0; cols]; dz.len()];
                for j in 0..cols {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for k in 0..dz.len() {
                        dgamma[j] += dz[k][j] * cache.xhat[k][j];
                        dbeta[j] += dz[k][j];
                        let dxh = dz[k][j] * lat.gamma[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * cache.xhat[k][j];
                    }
                    for k in 0..dz.len() {
                        let dxh = dz[k][j] * lat.gamma[j];
                        let mut g = cache.inv_std[j] / n * (n * dxh - sum_dxhat - cache.xhat[k][j] * sum_dxhat_xhat);
                        if hidden && cache.masks[k][j] {
                            g *= match dropout.method {
                                crate::engine::DropoutMethod::ScaleDrop => dropout.scale_gamma,
                                _ => 0.0,
                            };
                        }
                        dy[k][j] = g;
                    }
                }
                // dW = Σ_k a_k ⊗ dy_k ; straight-through on |w| <= 1 (always, since latents are clipped)
                let mut dw = vec![0.0; lat.rows * cols];
                for (a, g) in cache.inputs.iter().zip(&dy) {
                    for (i, &ai) in a.as_slice().iter().enumerate() {
                        let row = &mut dw[i * cols..(i + 1) * cols];
                        let s = ai as f64;
                        row.iter_mut().zip(g).for_each(|(d, gj)| *d += s * gj);
                    }
                }
                if l > 0 {
                    let prev_z = &caches[l - 1].z;
                    let wb = &weights[l];
                    dz = dy
                        .iter()
                        .enumerate()
                        .map(|(k, g)| {
                            (0..lat.rows)
                                .map(|i| {
                                    if prev_z[k][i].abs() > 1.0 {
                                        return 0.0;
                                    }
                                    wb.row(i).iter().zip(g).map(|(w, gj)| *w as f64 * gj).sum()
                                })
                                .collect()
                        })
                        .collect();
                }
                let lat = &mut latent[l];
                for (idx, g) in dw.iter().enumerate() {
                    if lat.w[idx].abs() <= 1.0 {
                        lat.vw[idx] = cfg.momentum * lat.vw[idx] - cfg.learning_rate * g;
                    }
                    lat.w[idx] = (lat.w[idx] + lat.vw[idx]).clamp(-1.0, 1.0);
                }
                for j in 0..cols {
                    lat.vgamma[j] = cfg.momentum * lat.vgamma[j] - cfg.learning_rate * dgamma[j];
                    lat.gamma[j] += lat.vgamma[j];
                    lat.vbeta[j] = cfg.momentum * lat.vbeta[j] - cfg.learning_rate * dbeta[j];
                    lat.beta[j] += lat.vbeta[j];
                }
            }
        }
        let epoch_loss = epoch_loss / data.train.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
        }
        loss_history.push(epoch_loss);
    }

    let stats = population_bn_stats(&latent, dropout, &bank, &data.train, &root.derive(2))?;
    let mut network = assemble(&latent, Some(&stats), dropout)?;
    let calibration_inputs = cfg.calibration_inputs.clamp(30, data.train.len().max(30));
    if data.train.len() >= 30 {
        let std = calibrate_layer_std(&network, &bank, &data.train_inputs(), calibration_inputs, &root.derive(3))?;
        network.set_mac_std(std)?;
    }
    let eval_accuracy =
        evaluate_accuracy(&network, &data.eval, cfg.eval_passes, &bank, &FaultContext::clean(), &eval_stream(cfg))?;
    Ok(Trained { network, loss_history, eval_accuracy })
}

fn assemble(
    latent: &[LatentLayer],
    stats: Option<&[(RealVec, RealVec)]>,
    dropout: &DropoutConfig,
) -> Result<BinaryNetwork> {
    let layers = latent
        .iter()
        .enumerate()
        .map(|(l, lat)| {
            let (mean, var) = match stats {
                Some(s) => s[l].clone(),
                None => (vec![0.0; lat.cols], vec![1.0; lat.cols]),
            };
            Layer::new(lat.binary(), BatchNorm { gamma: lat.gamma.clone(), beta: lat.beta.clone(), mean, var })
        })
        .collect::<Result<Vec<_>>>()?;
    BinaryNetwork::new(layers, dropout.clone())
}

/// Population mean/variance of every layer's MAC output over the training
/// set with dropout live, frozen layer by layer.
fn population_bn_stats(
    latent: &[LatentLayer],
    dropout: &DropoutConfig,
    bank: &DropoutBank,
    train: &[Sample],
    stream: &RngStream,
) -> Result<Vec<(RealVec, RealVec)>> {
    let mut stats: Vec<(RealVec, RealVec)> = Vec::new();
    let shell = assemble(latent, None, dropout)?;
    let masks: Vec<MaskSet> =
        (0..train.len()).map(|i| sample_masks(bank, &shell, &mut stream.derive(i as u64))).collect::<Result<_>>()?;
    let mut acts: Vec<BitVec> = train.iter().map(|s| s.x.clone()).collect();
    let mut scratch = RngStream::new(0);
    for (l, lat) in latent.iter().enumerate() {
        let hidden = l + 1 < latent.len();
        let w = lat.binary();
        let ys: Vec<RealVec> = acts
            .iter()
            .zip(&masks)
            .map(|(a, m)| {
                let gate = if hidden { Gate::for_layer(dropout, &m.layers[l]) } else { Gate::Open };
                crossbar_mac(&w, a, gate, MacFault::none(), &mut scratch)
            })
            .collect::<Result<_>>()?;
        let mut mu = vec![0.0; lat.cols];
        let mut var = vec![0.0; lat.cols];
        let mut column = Vec::with_capacity(ys.len());
        for j in 0..lat.cols {
            column.clear();
            column.extend(ys.iter().map(|y| y[j]));
            mu[j] = mean(&column);
            var[j] = population_variance(&column).max(BN_EPS);
        }
        if hidden {
            let bn = BatchNorm { gamma: lat.gamma.clone(), beta: lat.beta.clone(), mean: mu.clone(), var: var.clone() };
            acts = ys
                .iter()
                .map(|y| BitVec::from_signs(&y.iter().enumerate().map(|(j, v)| bn.apply(j, *v)).collect::<RealVec>()))
                .collect();
        }
        stats.push((mu, var));
    }
    Ok(stats)
}

/// Fraction of samples whose argmax of the `passes`-pass mean softmax
/// equals the label. Sample `i` uses `stream.derive(i)`.
pub fn evaluate_accuracy(
    net: &BinaryNetwork,
    samples: &[Sample],
    passes: usize,
    bank: &DropoutBank,
    ctx: &FaultContext,
    stream: &RngStream,
) -> Result<f64> {
    if passes == 0 {
        return Err(Error::contract("accuracy needs at least one pass"));
    }
    if samples.is_empty() {
        return Err(Error::contract("accuracy over an empty sample set"));
    }
    let mut correct = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let probs = sample_probs(net, &s.x, passes, bank, ctx, &stream.derive(i as u64))?;
        if argmax(&mean_rows(&probs)) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
