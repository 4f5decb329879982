//! Monte Carlo dropout prediction: T stochastic passes, mean prediction and
//! variance-based uncertainty.

use crate::engine::{argmax, forward, sample_masks, softmax, BinaryNetwork, DropoutBank};
use crate::error::{Error, Result};
use crate::faults::FaultContext;
use crate::tensor::{population_variance, BitVec, RealVec, RngStream};

/// Monte Carlo samples per prediction.
pub const DEFAULT_PASSES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveResult {
    pub mean_probs: RealVec,
    pub predicted_class: usize,
    pub uncertainty: f64,
    /// One softmax row per pass, in pass order.
    pub prob_samples: Vec<RealVec>,
}

/// Softmax outputs of `passes` stochastic passes. Pass `t` (1-based) draws
/// its masks from `stream.derive(t).derive(0)` and its fault noise from
/// `stream.derive(t).derive(1)`.
pub fn sample_probs(
    net: &BinaryNetwork,
    x: &BitVec,
    passes: usize,
    bank: &DropoutBank,
    ctx: &FaultContext,
    stream: &RngStream,
) -> Result<Vec<RealVec>> {
    (1..=passes as u64)
        .map(|t| {
            let pass = stream.derive(t);
            let masks = sample_masks(bank, net, &mut pass.derive(0))?;
            Ok(softmax(&forward(net, x, &masks, ctx, &pass.derive(1))?))
        })
        .collect()
}

pub fn mean_rows(rows: &[RealVec]) -> RealVec {
    let width = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    (0..width).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect()
}

pub fn predict(
    net: &BinaryNetwork,
    x: &BitVec,
    passes: usize,
    bank: &DropoutBank,
    ctx: &FaultContext,
    stream: &RngStream,
) -> Result<PredictiveResult> {
    if passes < 2 {
        return Err(Error::contract(format!("Bayesian prediction needs T >= 2 passes, got {passes}")));
    }
    let prob_samples = sample_probs(net, x, passes, bank, ctx, stream)?;
    let mean_probs = mean_rows(&prob_samples);
    Ok(PredictiveResult {
        predicted_class: argmax(&mean_probs),
        uncertainty: uncertainty_of(&prob_samples),
        mean_probs,
        prob_samples,
    })
}

/// Class-averaged population variance of the per-class probabilities across passes.
pub fn uncertainty_of(prob_samples: &[RealVec]) -> f64 {
    let classes = prob_samples.first().map_or(0, Vec::len);
    if classes == 0 {
        return 0.0;
    }
    let mut column = Vec::with_capacity(prob_samples.len());
    let total: f64 = (0..classes)
        .map(|c| {
            column.clear();
            column.extend(prob_samples.iter().map(|r| r[c]));
            population_variance(&column)
        })
        .sum();
    total / classes as f64
}
