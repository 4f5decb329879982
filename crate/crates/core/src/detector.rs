//! Fault-free uncertainty profiling and online test sessions.
//!
//! The profile is a Gaussian fit of fault-free test-vector uncertainties;
//! a query is positive when its uncertainty leaves [μ - 3σ, μ + 3σ]
//! (lower bound clipped at zero). A session declares the device faulty once
//! L queries have been positive.

use serde::{Deserialize, Serialize};

use crate::atpg::TestVectorSet;
use crate::engine::{BinaryNetwork, DropoutBank, Sharing};
use crate::error::{Error, Result};
use crate::faults::FaultContext;
use crate::inference::predict;
use crate::tensor::{mean, population_std, RngStream};

pub const SIGMA_FLOOR: f64 = 1e-12;
pub const DEFAULT_QUERY_LENGTH: usize = 4;
pub const DEFAULT_FIT_REPETITIONS: usize = 20;
/// Inferences averaged per query by the estimation-based reference detector.
pub const ESTIMATION_INFERENCES: usize = 10;

/// A device as seen by the tester: weights, dropout modules and whatever
/// faults they currently carry.
#[derive(Clone, Copy, Debug)]
pub struct Device<'a> {
    pub net: &'a BinaryNetwork,
    pub bank: &'a DropoutBank,
    pub ctx: &'a FaultContext,
}

impl<'a> Device<'a> {
    pub fn new(net: &'a BinaryNetwork, bank: &'a DropoutBank, ctx: &'a FaultContext) -> Self {
        Device { net, bank, ctx }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyProfile {
    pub mu: f64,
    pub sigma: f64,
    pub b_upper: f64,
    pub b_lower: f64,
    pub samples: usize,
}

impl UncertaintyProfile {
    pub fn from_samples(us: &[f64]) -> Result<Self> {
        if us.is_empty() {
            return Err(Error::spec("cannot fit an uncertainty profile to zero samples"));
        }
        if us.iter().any(|u| !u.is_finite()) {
            return Err(Error::spec("non-finite uncertainty in profile samples"));
        }
        let mu = mean(us);
        let sigma = population_std(us).max(SIGMA_FLOOR);
        Ok(UncertaintyProfile {
            mu,
            sigma,
            b_upper: mu + 3.0 * sigma,
            b_lower: (mu - 3.0 * sigma).max(0.0),
            samples: us.len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.sigma, self.b_upper, self.b_lower].iter().all(|v| v.is_finite());
        if !finite || self.sigma < SIGMA_FLOOR || self.b_lower > self.mu || self.mu > self.b_upper {
            return Err(Error::spec("inconsistent uncertainty profile"));
        }
        Ok(())
    }
}

/// Uncertainty outside the closed interval [b_lower, b_upper].
pub fn is_positive(u: f64, profile: &UncertaintyProfile) -> bool {
    u > profile.b_upper || u < profile.b_lower
}

fn query_uncertainty(
    device: &Device<'_>,
    tvs: &TestVectorSet,
    k: usize,
    passes: usize,
    inferences: usize,
    stream: &RngStream,
) -> Result<f64> {
    let x = &tvs.vectors[k].input;
    if inferences == 1 {
        return Ok(predict(device.net, x, passes, device.bank, device.ctx, stream)?.uncertainty);
    }
    let mut total = 0.0;
    for r in 0..inferences {
        total += predict(device.net, x, passes, device.bank, device.ctx, &stream.derive(r as u64))?.uncertainty;
    }
    Ok(total / inferences as f64)
}

/// Pool uncertainties of every test vector over `repetitions` inferences
/// (vector `i`, repetition `r` uses `stream.derive(i).derive(r)`).
pub fn fit_profile(
    device: &Device<'_>,
    tvs: &TestVectorSet,
    repetitions: usize,
    passes: usize,
    stream: &RngStream,
) -> Result<UncertaintyProfile> {
    fit_profile_averaged(device, tvs, repetitions, passes, 1, stream)
}

/// Profile over per-query averages of `inferences` inferences each.
pub fn fit_profile_averaged(
    device: &Device<'_>,
    tvs: &TestVectorSet,
    repetitions: usize,
    passes: usize,
    inferences: usize,
    stream: &RngStream,
) -> Result<UncertaintyProfile> {
    if tvs.len() < 2 {
        return Err(Error::spec("profile fitting needs at least two test vectors"));
    }
    if repetitions == 0 || inferences == 0 {
        return Err(Error::spec("profile fitting needs at least one repetition"));
    }
    let mut us = Vec::with_capacity(tvs.len() * repetitions);
    for i in 0..tvs.len() {
        for r in 0..repetitions {
            us.push(query_uncertainty(device, tvs, i, passes, inferences, &stream.derive(i as u64).derive(r as u64))?);
        }
    }
    UncertaintyProfile::from_samples(&us)
}

/// Everything the tester stores on the device: ranked vectors plus bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestKit {
    pub vectors: TestVectorSet,
    pub profile: UncertaintyProfile,
    pub fit_repetitions: usize,
    /// Dropout-module sharing the profile was fitted under.
    pub sharing: Sharing,
}

impl TestKit {
    pub fn validate(&self) -> Result<()> {
        self.vectors.validate()?;
        self.profile.validate()?;
        if self.vectors.len() < 2 || self.fit_repetitions == 0 {
            return Err(Error::spec("test kit needs at least two vectors and one fit repetition"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Healthy,
    Faulty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub uncertainty: f64,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub positives: usize,
    pub queries_used: usize,
    /// Forward passes spent on the session.
    pub passes_used: usize,
    pub queries: Vec<QueryRecord>,
}

/// Session parameters shared by the vote-based and estimation-based modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SessionConfig {
    pub query_length: usize,
    pub passes: usize,
    /// Inferences averaged per query (1 = vote-based detector).
    pub inferences: usize,
}

impl SessionConfig {
    pub fn vote(query_length: usize, passes: usize) -> Self {
        SessionConfig { query_length, passes, inferences: 1 }
    }

    pub fn estimation(query_length: usize, passes: usize) -> Self {
        SessionConfig { query_length, passes, inferences: ESTIMATION_INFERENCES }
    }

    pub fn passes_per_query(&self) -> usize {
        self.passes * self.inferences
    }
}

fn check_query_length(l: usize, n: usize) -> Result<()> {
    if l == 0 || l > n {
        return Err(Error::spec(format!("positive query length {l} outside 1..={n}")));
    }
    Ok(())
}

/// Live session: queries in ranked order (query `k` uses `stream.derive(k)`),
/// stopping as soon as `query_length` positives have been seen.
pub fn run_session(
    device: &Device<'_>,
    tvs: &TestVectorSet,
    profile: &UncertaintyProfile,
    cfg: SessionConfig,
    stream: &RngStream,
) -> Result<Verdict> {
    check_query_length(cfg.query_length, tvs.len())?;
    let mut queries = Vec::new();
    let mut positives = 0;
    for k in 0..tvs.len() {
        let u = query_uncertainty(device, tvs, k, cfg.passes, cfg.inferences, &stream.derive(k as u64))?;
        let positive = is_positive(u, profile);
        queries.push(QueryRecord { uncertainty: u, positive });
        if positive {
            positives += 1;
            if positives == cfg.query_length {
                break;
            }
        }
    }
    let decision = if positives >= cfg.query_length { Decision::Faulty } else { Decision::Healthy };
    Ok(Verdict {
        decision,
        positives,
        queries_used: queries.len(),
        passes_used: queries.len() * cfg.passes_per_query(),
        queries,
    })
}

/// Vote-based session with `query_length` = L.
pub fn run_test_session(
    device: &Device<'_>,
    tvs: &TestVectorSet,
    profile: &UncertaintyProfile,
    query_length: usize,
    passes: usize,
    stream: &RngStream,
) -> Result<Verdict> {
    run_session(device, tvs, profile, SessionConfig::vote(query_length, passes), stream)
}

/// Every query of a session without early stop, for replay at any L.
pub fn record_session(
    device: &Device<'_>,
    tvs: &TestVectorSet,
    profile: &UncertaintyProfile,
    passes: usize,
    inferences: usize,
    stream: &RngStream,
) -> Result<Vec<QueryRecord>> {
    (0..tvs.len())
        .map(|k| {
            let u = query_uncertainty(device, tvs, k, passes, inferences, &stream.derive(k as u64))?;
            Ok(QueryRecord { uncertainty: u, positive: is_positive(u, profile) })
        })
        .collect()
}

/// The verdict a live session with the same streams would have reached.
pub fn replay_verdict(records: &[QueryRecord], query_length: usize, passes_per_query: usize) -> Result<Verdict> {
    check_query_length(query_length, records.len())?;
    let mut positives = 0;
    let mut used = records.len();
    for (k, q) in records.iter().enumerate() {
        if q.positive {
            positives += 1;
            if positives == query_length {
                used = k + 1;
                break;
            }
        }
    }
    let decision = if positives >= query_length { Decision::Faulty } else { Decision::Healthy };
    Ok(Verdict {
        decision,
        positives,
        queries_used: used,
        passes_used: used * passes_per_query,
        queries: records[..used].to_vec(),
    })
}

/// Faulty at L iff at least L of the recorded queries are positive.
pub fn flags_faulty(flags: &[bool], query_length: usize) -> bool {
    flags.iter().filter(|f| **f).count() >= query_length
}
