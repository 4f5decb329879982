//! Fault specifications and their materialization.
//!
//! Logic values map onto the binary alphabet as 0 ↦ -1 and 1 ↦ +1. Weight
//! faults are persistent for the lifetime of an injection; activation-buffer
//! bit-flips, dropout-bit flips and MAC variation are redrawn on every pass.

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::engine::{forward_macs, sample_masks, BinaryNetwork, DropoutBank, GeneratorFault, MacFault};
use crate::error::{Error, Result};
use crate::tensor::{population_std, BitVec, RealVec, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultLocation {
    WeightCells,
    BufferMemory,
    DropoutModule,
    MacConductance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    StuckAt0,
    StuckAt1,
    BitFlip,
    AdditiveGaussian,
    MultiplicativeGaussian,
    DropProbVariation,
}

impl FaultKind {
    /// Gaussian kinds are parameterized by `sigma`, the others by `rate`.
    pub fn uses_sigma(self) -> bool {
        matches!(self, FaultKind::AdditiveGaussian | FaultKind::MultiplicativeGaussian | FaultKind::DropProbVariation)
    }
}

/// Logic value of a stuck cell on the binary alphabet.
pub fn stuck_value(kind: FaultKind) -> Option<i8> {
    match kind {
        FaultKind::StuckAt0 => Some(-1),
        FaultKind::StuckAt1 => Some(1),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub location: FaultLocation,
    pub kind: FaultKind,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub sigma: f64,
    /// Stream seed for stand-alone injections; campaigns derive their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FaultSpec {
    pub fn with_rate(location: FaultLocation, kind: FaultKind, rate: f64) -> Self {
        FaultSpec { location, kind, rate, sigma: 0.0, seed: None }
    }

    pub fn with_sigma(location: FaultLocation, kind: FaultKind, sigma: f64) -> Self {
        FaultSpec { location, kind, rate: 0.0, sigma, seed: None }
    }

    /// The same fault family at another sweep value.
    pub fn at(&self, value: f64) -> Self {
        let mut s = self.clone();
        if self.kind.uses_sigma() {
            s.sigma = value;
        } else {
            s.rate = value;
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        use FaultKind::*;
        use FaultLocation::*;
        let legal = match self.location {
            WeightCells | BufferMemory => matches!(self.kind, StuckAt0 | StuckAt1 | BitFlip),
            DropoutModule => matches!(self.kind, StuckAt0 | StuckAt1 | BitFlip | DropProbVariation),
            MacConductance => matches!(self.kind, AdditiveGaussian | MultiplicativeGaussian),
        };
        if !legal {
            return Err(Error::spec(format!("{:?} faults cannot be placed in {:?}", self.kind, self.location)));
        }
        if self.kind.uses_sigma() {
            if !(self.sigma.is_finite() && self.sigma >= 0.0) {
                return Err(Error::spec(format!("sigma {} must be finite and >= 0", self.sigma)));
            }
        } else if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::spec(format!("fault rate {} outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

/// A weight cell whose conductance no longer matches the programmed value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellOverride {
    pub row: usize,
    pub col: usize,
    pub value: i8,
}

/// Corruption of one hidden layer's activation buffer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BufferPlan {
    /// (position, forced value), sorted by position
    pub stuck: Vec<(usize, i8)>,
    pub flip_rate: f64,
}

impl BufferPlan {
    pub fn is_empty(&self) -> bool {
        self.stuck.is_empty() && self.flip_rate == 0.0
    }
}

/// Gaussian variation of the MAC result; additive sigma is in units of the
/// layer's calibrated MAC standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MacVariation {
    pub additive_sigma: f64,
    pub multiplicative_sigma: f64,
}

/// Materialized corruption plan for one injection. Dropout-module faults are
/// written into the `DropoutBank` instead.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaultContext {
    pub weight_overrides: Vec<Vec<CellOverride>>,
    pub buffers: Vec<BufferPlan>,
    pub mac_variation: Option<MacVariation>,
    /// Keys per-pass fault noise, so injections sharing one pass stream
    /// still see independent noise. Set by `inject`.
    pub noise_salt: u64,
}

impl FaultContext {
    pub fn clean() -> Self {
        FaultContext::default()
    }

    pub fn is_clean(&self) -> bool {
        self.weight_overrides.iter().all(Vec::is_empty)
            && self.buffers.iter().all(BufferPlan::is_empty)
            && self.mac_variation.is_none()
    }

    pub fn override_count(&self) -> usize {
        self.weight_overrides.iter().map(Vec::len).sum()
    }

    pub fn buffer_plan(&self, layer: usize) -> Option<&BufferPlan> {
        self.buffers.get(layer).filter(|p| !p.is_empty())
    }

    pub fn mac_fault<'a>(&'a self, net: &BinaryNetwork, layer: usize) -> MacFault<'a> {
        MacFault {
            overrides: self.weight_overrides.get(layer).map_or(&[], Vec::as_slice),
            variation: self.mac_variation,
            calibration_std: net.mac_std().and_then(|s| s.get(layer).copied()).unwrap_or(0.0),
        }
    }

    /// The network with persistent weight overrides written into the cells.
    pub fn apply_weights(&self, net: &BinaryNetwork) -> BinaryNetwork {
        let mut out = net.clone();
        for (layer, overrides) in out.layers_mut().iter_mut().zip(&self.weight_overrides) {
            for o in overrides {
                layer.weights.set(o.row, o.col, o.value);
            }
        }
        out
    }
}

/// ⌈rate·n⌉, tolerant of floating-point noise in the product.
pub fn affected_count(rate: f64, n: usize) -> usize {
    let k = (rate * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

/// Materialize `spec` for `net`; dropout-module faults mutate `bank`.
pub fn inject(
    net: &BinaryNetwork,
    bank: &mut DropoutBank,
    spec: &FaultSpec,
    stream: &mut RngStream,
) -> Result<FaultContext> {
    spec.validate()?;
    let mut ctx = FaultContext::clean();
    match spec.location {
        FaultLocation::WeightCells => {
            let sizes: Vec<usize> = net.layers().iter().map(|l| l.weights.len()).collect();
            let total: usize = sizes.iter().sum();
            let mut picked = index::sample(stream, total, affected_count(spec.rate, total)).into_vec();
            picked.sort_unstable();
            ctx.weight_overrides = vec![Vec::new(); sizes.len()];
            let mut layer = 0;
            let mut base = 0;
            for cell in picked {
                while cell >= base + sizes[layer] {
                    base += sizes[layer];
                    layer += 1;
                }
                let w = &net.layers()[layer].weights;
                let (row, col) = ((cell - base) / w.cols(), (cell - base) % w.cols());
                let value = stuck_value(spec.kind).unwrap_or(-w.get(row, col));
                ctx.weight_overrides[layer].push(CellOverride { row, col, value });
            }
        }
        FaultLocation::BufferMemory => {
            let widths: Vec<usize> = net.layers()[..net.hidden_count()].iter().map(|l| l.out_dim()).collect();
            ctx.buffers = vec![BufferPlan::default(); widths.len()];
            match stuck_value(spec.kind) {
                Some(value) => {
                    let total: usize = widths.iter().sum();
                    let mut picked = index::sample(stream, total, affected_count(spec.rate, total)).into_vec();
                    picked.sort_unstable();
                    let mut layer = 0;
                    let mut base = 0;
                    for pos in picked {
                        while pos >= base + widths[layer] {
                            base += widths[layer];
                            layer += 1;
                        }
                        ctx.buffers[layer].stuck.push((pos - base, value));
                    }
                }
                None => ctx.buffers.iter_mut().for_each(|b| b.flip_rate = spec.rate),
            }
        }
        FaultLocation::DropoutModule => {
            let p = net.dropout().p;
            if spec.kind == FaultKind::DropProbVariation {
                for g in bank.generators_mut() {
                    g.p_effective = stream.gaussian(p, spec.sigma)?.clamp(0.0, 1.0);
                }
            } else {
                let fault = match spec.kind {
                    FaultKind::StuckAt0 => GeneratorFault::StuckPass,
                    FaultKind::StuckAt1 => GeneratorFault::StuckDrop,
                    _ => GeneratorFault::BitFlip(spec.rate),
                };
                let n = bank.len();
                for i in index::sample(stream, n, affected_count(spec.rate, n)) {
                    bank.generators_mut()[i].fault = fault;
                }
            }
        }
        FaultLocation::MacConductance => {
            if spec.sigma > 0.0 {
                let variation = match spec.kind {
                    FaultKind::AdditiveGaussian => {
                        if net.mac_std().is_none() {
                            return Err(Error::spec("additive MAC variation needs a calibrated network (mac_std)"));
                        }
                        MacVariation { additive_sigma: spec.sigma, multiplicative_sigma: 0.0 }
                    }
                    _ => MacVariation { additive_sigma: 0.0, multiplicative_sigma: spec.sigma },
                };
                ctx.mac_variation = Some(variation);
            }
        }
    }
    ctx.noise_salt = stream.next_u64();
    Ok(ctx)
}

/// y'_j = y_j·(1 + ε_m) + ε_a·calibration_std with fresh ε per column.
pub fn perturb_mac(
    y: &[f64],
    variation: &MacVariation,
    calibration_std: f64,
    stream: &mut RngStream,
) -> Result<RealVec> {
    if variation.additive_sigma > 0.0 && (calibration_std.is_nan() || calibration_std <= 0.0) {
        return Err(Error::contract("additive MAC variation needs a positive calibration std"));
    }
    y.iter()
        .map(|v| {
            let em = stream.gaussian(0.0, variation.multiplicative_sigma)?;
            let ea = stream.gaussian(0.0, variation.additive_sigma)?;
            Ok(v * (1.0 + em) + ea * calibration_std)
        })
        .collect()
}

/// Force stuck positions, then flip every other position with `flip_rate`.
pub fn apply_buffer_faults(a: &BitVec, plan: &BufferPlan, stream: &mut RngStream) -> Result<BitVec> {
    let mut out = a.clone();
    let mut stuck = vec![false; a.len()];
    for &(pos, value) in &plan.stuck {
        if pos >= a.len() {
            return Err(Error::contract(format!("buffer position {pos} out of range for width {}", a.len())));
        }
        out.set(pos, value);
        stuck[pos] = true;
    }
    if plan.flip_rate > 0.0 {
        for (i, is_stuck) in stuck.iter().enumerate() {
            if !is_stuck && stream.bernoulli(plan.flip_rate)? {
                out.negate(i);
            }
        }
    }
    Ok(out)
}

/// Population std of a pool of MAC outputs; zero spread is an error.
pub fn mac_output_std(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Calibration("no MAC outputs to calibrate on".into()));
    }
    let sd = population_std(samples);
    if sd.is_nan() || sd <= 0.0 {
        return Err(Error::Calibration("MAC outputs have zero spread".into()));
    }
    Ok(sd)
}

/// Per-layer std of clean, dropout-live MAC outputs over the first
/// `n_inputs` inputs; input `i` uses masks from `stream.derive(i)`.
pub fn calibrate_layer_std(
    net: &BinaryNetwork,
    bank: &DropoutBank,
    inputs: &[BitVec],
    n_inputs: usize,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    if n_inputs < 30 {
        return Err(Error::contract(format!("calibration needs at least 30 inputs, got {n_inputs}")));
    }
    if inputs.len() < n_inputs {
        return Err(Error::contract(format!("asked for {n_inputs} calibration inputs, only {} given", inputs.len())));
    }
    let mut pools: Vec<Vec<f64>> = vec![Vec::new(); net.layers().len()];
    for (i, x) in inputs[..n_inputs].iter().enumerate() {
        let masks = sample_masks(bank, net, &mut stream.derive(i as u64))?;
        for (pool, mac) in pools.iter_mut().zip(forward_macs(net, x, &masks)?) {
            pool.extend(mac);
        }
    }
    pools
        .iter()
        .enumerate()
        .map(|(l, pool)| mac_output_std(pool).map_err(|e| Error::Calibration(format!("layer {l}: {e}"))))
        .collect()
}
