//! Binarized MLP forward pass over a crossbar abstraction.
//!
//! Each layer is one crossbar tile: the binary weight matrix holds one
//! word-line per input and one bit-line per output. Bit-line sums are
//! digitized, optionally gated by the dropout module, batch-normalized and
//! (except in the output layer) binarized before landing in the activation
//! buffer that feeds the next tile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{apply_buffer_faults, perturb_mac, BufferPlan, CellOverride, FaultContext, MacVariation};
use crate::tensor::{BitMat, BitVec, RealVec, RngStream};

/// Variance floor used by batch normalization.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropoutMethod {
    /// Each bit-line is disabled independently.
    SpinDrop,
    /// Contiguous groups of `group_size` bit-lines are disabled together.
    SpatialSpinDrop,
    /// Selected bit-line sums are multiplied by `scale_gamma` instead of zeroed.
    ScaleDrop,
}

/// How many bit-lines one dropout module drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sharing {
    PerColumn,
    LayerShared,
    GlobalShared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutConfig {
    pub method: DropoutMethod,
    pub p: f64,
    pub group_size: usize,
    pub scale_gamma: f64,
    pub sharing: Sharing,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            method: DropoutMethod::SpinDrop,
            p: 0.5,
            group_size: 4,
            scale_gamma: 0.5,
            sharing: Sharing::PerColumn,
        }
    }
}

impl DropoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::contract(format!("dropout probability {} must lie in (0, 1)", self.p)));
        }
        if self.group_size == 0 {
            return Err(Error::contract("group_size must be positive"));
        }
        if !(self.scale_gamma > 0.0 && self.scale_gamma <= 1.0) {
            return Err(Error::contract(format!("scale_gamma {} must lie in (0, 1]", self.scale_gamma)));
        }
        Ok(())
    }

    /// Bit-lines driven by one generator when generators are per column.
    fn unit_width(&self) -> usize {
        match self.method {
            DropoutMethod::SpatialSpinDrop => self.group_size,
            _ => 1,
        }
    }
}

/// Frozen batch-normalization parameters, one entry per bit-line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: RealVec,
    pub beta: RealVec,
    pub mean: RealVec,
    pub var: RealVec,
}

impl BatchNorm {
    /// gamma = 1, beta = 0, mean = 0, var = 1 - eps, so that z = y.
    pub fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            mean: vec![0.0; width],
            var: vec![1.0 - BN_EPS; width],
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    #[inline]
    pub fn apply(&self, j: usize, y: f64) -> f64 {
        self.gamma[j] * (y - self.mean[j]) / (self.var[j] + BN_EPS).sqrt() + self.beta[j]
    }

    fn validate(&self, width: usize) -> Result<()> {
        let lens = [self.gamma.len(), self.beta.len(), self.mean.len(), self.var.len()];
        if lens.iter().any(|l| *l != width) {
            return Err(Error::contract(format!("batch-norm vectors must all have length {width}")));
        }
        let all = self.gamma.iter().chain(&self.beta).chain(&self.mean).chain(&self.var);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::contract("batch-norm parameters must be finite"));
        }
        if self.var.iter().any(|v| *v < BN_EPS) {
            return Err(Error::contract("batch-norm variance below floor"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: BitMat,
    pub bn: BatchNorm,
}

impl Layer {
    pub fn new(weights: BitMat, bn: BatchNorm) -> Result<Self> {
        bn.validate(weights.cols())?;
        Ok(Layer { weights, bn })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// A stack of crossbar layers plus the dropout wiring of its hidden layers.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryNetwork {
    layers: Vec<Layer>,
    dropout: DropoutConfig,
    /// Per-layer std of clean MAC outputs, used to scale additive variation.
    mac_std: Option<Vec<f64>>,
}

impl BinaryNetwork {
    pub fn new(layers: Vec<Layer>, dropout: DropoutConfig) -> Result<Self> {
        dropout.validate()?;
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::contract(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for layer in &layers {
            layer.bn.validate(layer.out_dim())?;
        }
        if dropout.method == DropoutMethod::SpatialSpinDrop {
            for layer in &layers[..layers.len() - 1] {
                if layer.out_dim() % dropout.group_size != 0 {
                    return Err(Error::contract(format!(
                        "group_size {} does not divide layer width {}",
                        dropout.group_size,
                        layer.out_dim()
                    )));
                }
            }
        }
        Ok(BinaryNetwork { layers, dropout, mac_std: None })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dropout(&self) -> &DropoutConfig {
        &self.dropout
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(Layer::out_dim)).collect()
    }

    /// Number of dropout-bearing (hidden) layers.
    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn mac_std(&self) -> Option<&[f64]> {
        self.mac_std.as_deref()
    }

    pub fn set_mac_std(&mut self, std: Vec<f64>) -> Result<()> {
        if std.len() != self.layers.len() || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::contract("mac_std needs one positive finite value per layer"));
        }
        self.mac_std = Some(std);
        Ok(())
    }

    /// Same weights, different dropout-module sharing scope.
    pub fn with_sharing(&self, sharing: Sharing) -> Self {
        let mut net = self.clone();
        net.dropout.sharing = sharing;
        net
    }

    pub fn with_dropout(&self, dropout: DropoutConfig) -> Result<Self> {
        let mut net = BinaryNetwork::new(self.layers.clone(), dropout)?;
        net.mac_std = self.mac_std.clone();
        Ok(net)
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Fault state of one dropout-bit generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GeneratorFault {
    Healthy,
    /// Always emits 1 (bit-line always inactive).
    StuckDrop,
    /// Always emits 0 (bit-line always active).
    StuckPass,
    /// Emits the sampled bit inverted with the given probability.
    BitFlip(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub p_effective: f64,
    pub fault: GeneratorFault,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct BankSlot {
    offset: usize,
    /// bit-lines per generator in this layer
    unit: usize,
}

/// The stochastic bit generators driving the dropout of every hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutBank {
    sharing: Sharing,
    generators: Vec<Generator>,
    slots: Vec<BankSlot>,
    widths: Vec<usize>,
}

impl DropoutBank {
    /// A healthy bank wired according to the network's dropout config.
    pub fn new(net: &BinaryNetwork) -> Self {
        let cfg = net.dropout();
        let widths: Vec<usize> = net.layers()[..net.hidden_count()].iter().map(Layer::out_dim).collect();
        let mut slots = Vec::with_capacity(widths.len());
        let mut count = 0;
        for &w in &widths {
            match cfg.sharing {
                Sharing::PerColumn => {
                    let unit = cfg.unit_width();
                    slots.push(BankSlot { offset: count, unit });
                    count += w / unit;
                }
                Sharing::LayerShared => {
                    slots.push(BankSlot { offset: count, unit: w });
                    count += 1;
                }
                Sharing::GlobalShared => {
                    slots.push(BankSlot { offset: 0, unit: w });
                    count = 1;
                }
            }
        }
        let healthy = Generator { p_effective: cfg.p, fault: GeneratorFault::Healthy };
        DropoutBank { sharing: cfg.sharing, generators: vec![healthy; count], slots, widths }
    }

    pub fn sharing(&self) -> Sharing {
        self.sharing
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub(crate) fn generators_mut(&mut self) -> &mut [Generator] {
        &mut self.generators
    }

    /// Index of the generator that drives bit-line `col` of hidden layer `layer`.
    pub fn generator_for(&self, layer: usize, col: usize) -> usize {
        let slot = self.slots[layer];
        slot.offset + col / slot.unit
    }

    /// True when no generator can produce a random bit.
    pub fn is_degenerate(&self) -> bool {
        self.generators.iter().all(|g| matches!(g.fault, GeneratorFault::StuckDrop | GeneratorFault::StuckPass))
    }

    fn check_matches(&self, net: &BinaryNetwork) -> Result<()> {
        let widths: Vec<usize> = net.layers()[..net.hidden_count()].iter().map(Layer::out_dim).collect();
        if widths != self.widths || net.dropout().sharing != self.sharing {
            return Err(Error::contract("dropout bank was built for a different network"));
        }
        Ok(())
    }
}

/// Sampled dropout decisions for one forward pass: for every hidden layer,
/// one flag per bit-line (true = dropped, or scaled under ScaleDrop).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub layers: Vec<Vec<bool>>,
}

impl MaskSet {
    /// No bit-line dropped anywhere.
    pub fn open(net: &BinaryNetwork) -> Self {
        MaskSet { layers: net.layers()[..net.hidden_count()].iter().map(|l| vec![false; l.out_dim()]).collect() }
    }

    pub fn dropped_count(&self) -> usize {
        self.layers.iter().flatten().filter(|b| **b).count()
    }
}

/// Draw one bit from every generator and fan it out to the bit-lines it drives.
pub fn sample_masks(bank: &DropoutBank, net: &BinaryNetwork, stream: &mut RngStream) -> Result<MaskSet> {
    bank.check_matches(net)?;
    let mut bits = Vec::with_capacity(bank.generators.len());
    for g in &bank.generators {
        let bit = match g.fault {
            GeneratorFault::StuckDrop => true,
            GeneratorFault::StuckPass => false,
            GeneratorFault::Healthy => stream.bernoulli(g.p_effective)?,
            GeneratorFault::BitFlip(rate) => stream.bernoulli(g.p_effective)? ^ stream.bernoulli(rate)?,
        };
        bits.push(bit);
    }
    let layers = bank
        .widths
        .iter()
        .enumerate()
        .map(|(l, &w)| (0..w).map(|j| bits[bank.generator_for(l, j)]).collect())
        .collect();
    Ok(MaskSet { layers })
}

/// How the dropout module acts on the digitized bit-line sums of one tile.
#[derive(Clone, Copy, Debug)]
pub enum Gate<'a> {
    Open,
    Drop(&'a [bool]),
    Scale { selected: &'a [bool], factor: f64 },
}

impl<'a> Gate<'a> {
    pub fn for_layer(cfg: &DropoutConfig, mask: &'a [bool]) -> Self {
        match cfg.method {
            DropoutMethod::ScaleDrop => Gate::Scale { selected: mask, factor: cfg.scale_gamma },
            _ => Gate::Drop(mask),
        }
    }
}

/// Crossbar-level corruption for one tile.
#[derive(Clone, Copy, Debug, Default)]
pub struct MacFault<'a> {
    pub overrides: &'a [CellOverride],
    pub variation: Option<MacVariation>,
    pub calibration_std: f64,
}

impl MacFault<'_> {
    pub fn none() -> Self {
        MacFault::default()
    }
}

/// Bit-line sums of a crossbar: column j receives Σᵢ input[i]·weights[i][j],
/// with weight-cell overrides taking the place of the stored value.
pub fn crossbar_mac(
    weights: &BitMat,
    input: &BitVec,
    gate: Gate<'_>,
    fault: MacFault<'_>,
    stream: &mut RngStream,
) -> Result<RealVec> {
    if input.len() != weights.rows() {
        return Err(Error::contract(format!(
            "input of length {} on a crossbar with {} word-lines",
            input.len(),
            weights.rows()
        )));
    }
    let cols = weights.cols();
    let mut acc = vec![0i32; cols];
    for (i, &x) in input.as_slice().iter().enumerate() {
        let row = weights.row(i);
        if x > 0 {
            acc.iter_mut().zip(row).for_each(|(a, w)| *a += *w as i32);
        } else {
            acc.iter_mut().zip(row).for_each(|(a, w)| *a -= *w as i32);
        }
    }
    for o in fault.overrides {
        let stored = weights.get(o.row, o.col) as i32;
        acc[o.col] += input.get(o.row) as i32 * (o.value as i32 - stored);
    }
    let mut out: RealVec = acc.into_iter().map(f64::from).collect();
    match gate {
        Gate::Open => {}
        Gate::Drop(mask) => {
            check_mask(mask, cols)?;
            out.iter_mut().zip(mask).filter(|(_, m)| **m).for_each(|(y, _)| *y = 0.0);
        }
        Gate::Scale { selected, factor } => {
            check_mask(selected, cols)?;
            out.iter_mut().zip(selected).filter(|(_, m)| **m).for_each(|(y, _)| *y *= factor);
        }
    }
    if let Some(variation) = fault.variation {
        out = perturb_mac(&out, &variation, fault.calibration_std, stream)?;
    }
    Ok(out)
}

fn check_mask(mask: &[bool], cols: usize) -> Result<()> {
    if mask.len() != cols {
        return Err(Error::contract(format!("mask of length {} on {cols} bit-lines", mask.len())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOutput {
    Hidden(BitVec),
    Logits(RealVec),
}

impl LayerOutput {
    pub fn into_hidden(self) -> Option<BitVec> {
        match self {
            LayerOutput::Hidden(a) => Some(a),
            LayerOutput::Logits(_) => None,
        }
    }

    pub fn into_logits(self) -> Option<RealVec> {
        match self {
            LayerOutput::Logits(z) => Some(z),
            LayerOutput::Hidden(_) => None,
        }
    }
}

/// MAC, batch normalization and (for hidden tiles) binarization plus
/// activation-buffer corruption.
pub fn layer_forward(
    layer: &Layer,
    input: &BitVec,
    gate: Gate<'_>,
    mac_fault: MacFault<'_>,
    buffer: Option<&BufferPlan>,
    is_output: bool,
    stream: &mut RngStream,
) -> Result<LayerOutput> {
    let y = crossbar_mac(&layer.weights, input, gate, mac_fault, stream)?;
    let z: RealVec = y.iter().enumerate().map(|(j, v)| layer.bn.apply(j, *v)).collect();
    if is_output {
        return Ok(LayerOutput::Logits(z));
    }
    let a = BitVec::from_signs(&z);
    match buffer {
        Some(plan) => Ok(LayerOutput::Hidden(apply_buffer_faults(&a, plan, stream)?)),
        None => Ok(LayerOutput::Hidden(a)),
    }
}

/// One stochastic forward pass under fixed masks and a fault context.
/// Layer `l` draws its fault randomness from
/// `stream.derive(ctx.noise_salt).derive(l)`.
pub fn forward(
    net: &BinaryNetwork,
    x: &BitVec,
    masks: &MaskSet,
    ctx: &FaultContext,
    stream: &RngStream,
) -> Result<RealVec> {
    if x.len() != net.input_dim() {
        return Err(Error::contract(format!(
            "input of length {} for a network expecting {}",
            x.len(),
            net.input_dim()
        )));
    }
    if masks.layers.len() != net.hidden_count() {
        return Err(Error::contract("mask set does not match network depth"));
    }
    let last = net.layers().len() - 1;
    let mut a = x.clone();
    let noise = stream.derive(ctx.noise_salt);
    for (l, layer) in net.layers().iter().enumerate() {
        let mut ls = noise.derive(l as u64);
        let gate = if l < last { Gate::for_layer(net.dropout(), &masks.layers[l]) } else { Gate::Open };
        let mac_fault = ctx.mac_fault(net, l);
        let out = layer_forward(layer, &a, gate, mac_fault, ctx.buffer_plan(l), l == last, &mut ls)?;
        match out {
            LayerOutput::Hidden(next) => a = next,
            LayerOutput::Logits(z) => return Ok(z),
        }
    }
    unreachable!("the last layer always returns logits")
}

/// Clean MAC outputs of every layer (after gating) for one pass.
pub fn forward_macs(net: &BinaryNetwork, x: &BitVec, masks: &MaskSet) -> Result<Vec<RealVec>> {
    let last = net.layers().len() - 1;
    let mut scratch = RngStream::new(0);
    let mut a = x.clone();
    let mut macs = Vec::with_capacity(net.layers().len());
    for (l, layer) in net.layers().iter().enumerate() {
        let gate = if l < last { Gate::for_layer(net.dropout(), &masks.layers[l]) } else { Gate::Open };
        let y = crossbar_mac(&layer.weights, &a, gate, MacFault::none(), &mut scratch)?;
        if l < last {
            let z: RealVec = y.iter().enumerate().map(|(j, v)| layer.bn.apply(j, *v)).collect();
            a = BitVec::from_signs(&z);
        }
        macs.push(y);
    }
    Ok(macs)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> RealVec {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: RealVec = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}
