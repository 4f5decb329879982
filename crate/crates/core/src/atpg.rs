//! Repeatability-ranking test-vector generation.
//!
//! Every candidate training input is run through R independent Bayesian
//! inferences of T passes each. The population variance of the R resulting
//! uncertainties is its repeatability score; the N lowest-scoring inputs
//! become the stored test vectors.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{BinaryNetwork, DropoutBank};
use crate::error::{Error, Result};
use crate::faults::FaultContext;
use crate::inference::predict;
use crate::tensor::{population_variance, BitVec, RngStream};

pub const DEFAULT_REPETITIONS: usize = 200;
pub const DEFAULT_VECTORS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtpgParams {
    pub repetitions: usize,
    pub passes: usize,
    pub vectors: usize,
    pub seed: u64,
    /// Score only a uniform subsample of this many training inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_pool: Option<usize>,
}

impl Default for AtpgParams {
    fn default() -> Self {
        AtpgParams {
            repetitions: DEFAULT_REPETITIONS,
            passes: crate::inference::DEFAULT_PASSES,
            vectors: DEFAULT_VECTORS,
            seed: 1,
            candidate_pool: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVector {
    pub train_index: usize,
    pub score: f64,
    pub input: BitVec,
}

/// Ranked test vectors, most repeatable first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVectorSet {
    pub params: AtpgParams,
    pub vectors: Vec<TestVector>,
}

impl TestVectorSet {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &BitVec> {
        self.vectors.iter().map(|v| &v.input)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.iter().any(|v| !v.score.is_finite() || v.score < 0.0) {
            return Err(Error::spec("test-vector scores must be finite and non-negative"));
        }
        if self.vectors.windows(2).any(|w| w[0].score > w[1].score) {
            return Err(Error::spec("test vectors are not sorted by repeatability score"));
        }
        Ok(())
    }
}

/// Population variance of the uncertainty over `repetitions` inferences;
/// inference `r` (1-based) uses `stream.derive(r)`.
pub fn repeatability_score(
    net: &BinaryNetwork,
    bank: &DropoutBank,
    x: &BitVec,
    repetitions: usize,
    passes: usize,
    stream: &RngStream,
) -> Result<f64> {
    if repetitions < 2 {
        return Err(Error::contract(format!("repeatability needs R >= 2 inferences, got {repetitions}")));
    }
    let ctx = FaultContext::clean();
    let us = (1..=repetitions as u64)
        .map(|r| predict(net, x, passes, bank, &ctx, &stream.derive(r)).map(|p| p.uncertainty))
        .collect::<Result<Vec<f64>>>()?;
    Ok(population_variance(&us))
}

/// Score candidates (input `i` uses `stream.derive(i)`), stable-sort
/// ascending with ties broken by training index, keep the first N.
pub fn generate_test_vectors(
    net: &BinaryNetwork,
    bank: &DropoutBank,
    train: &[BitVec],
    params: &AtpgParams,
    stream: &RngStream,
) -> Result<TestVectorSet> {
    let candidates: Vec<usize> = match params.candidate_pool {
        Some(pool) if pool < train.len() => {
            let mut idx = index::sample(&mut stream.derive(u64::MAX), train.len(), pool).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..train.len()).collect(),
    };
    if params.vectors == 0 || params.vectors > candidates.len() {
        return Err(Error::spec(format!(
            "asked for {} test vectors from {} candidate inputs",
            params.vectors,
            candidates.len()
        )));
    }
    let mut scored = candidates
        .par_iter()
        .map(|&i| {
            repeatability_score(net, bank, &train[i], params.repetitions, params.passes, &stream.derive(i as u64))
                .map(|score| (i, score))
        })
        .collect::<Result<Vec<(usize, f64)>>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let vectors = scored
        .into_iter()
        .take(params.vectors)
        .map(|(i, score)| TestVector { train_index: i, score, input: train[i].clone() })
        .collect();
    Ok(TestVectorSet { params: params.clone(), vectors })
}
