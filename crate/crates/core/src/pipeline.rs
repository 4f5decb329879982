//! End-to-end pipeline configuration: train, generate the test kit, run a
//! campaign. Every stage seed is derived from one master seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::atpg::{generate_test_vectors, AtpgParams};
use crate::campaign::{run_campaign, CampaignConfig, CampaignResult};
use crate::detector::{fit_profile, Device, TestKit, DEFAULT_FIT_REPETITIONS};
use crate::engine::{BinaryNetwork, DropoutBank, DropoutConfig};
use crate::error::{Error, Result};
use crate::faults::FaultContext;
use crate::tensor::RngStream;
use crate::trainer::{load_idx, synth_dataset, train, Dataset, SynthConfig, TrainConfig, Trained};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data = 1,
    Train = 2,
    Atpg = 3,
    Profile = 4,
    Campaign = 5,
}

pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    RngStream::new(master).derive(stage as u64).key()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    Idx { images: PathBuf, labels: PathBuf, threshold: f64, eval_fraction: f64 },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub data: DataSource,
    pub layer_dims: Vec<usize>,
    pub dropout: DropoutConfig,
    pub train: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            data: DataSource::default(),
            layer_dims: vec![32, 64, 64, 4],
            dropout: DropoutConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenTestsSection {
    pub atpg: AtpgParams,
    pub fit_repetitions: usize,
}

impl Default for GenTestsSection {
    fn default() -> Self {
        GenTestsSection { atpg: AtpgParams::default(), fit_repetitions: DEFAULT_FIT_REPETITIONS }
    }
}

/// Seed fields inside the sections are overwritten with values derived
/// from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub train: TrainSection,
    pub gen_tests: GenTestsSection,
    pub campaign: CampaignConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            train: TrainSection::default(),
            gen_tests: GenTestsSection::default(),
            campaign: CampaignConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reference configuration with master seed 1.
    pub fn reference() -> Self {
        PipelineConfig::default()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Copy with every stage seed derived from the master seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        if let DataSource::Synth(s) = &mut c.train.data {
            s.seed = stage_seed(self.seed, Stage::Data);
        }
        c.train.train.seed = stage_seed(self.seed, Stage::Train);
        c.gen_tests.atpg.seed = stage_seed(self.seed, Stage::Atpg);
        c.campaign.seed = stage_seed(self.seed, Stage::Campaign);
        c
    }
}

pub fn build_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    match &cfg.seeded().train.data {
        DataSource::Synth(s) => synth_dataset(s),
        DataSource::Idx { images, labels, threshold, eval_fraction } => {
            load_idx(images, labels, *threshold, *eval_fraction)
        }
    }
}

pub fn train_stage(cfg: &PipelineConfig) -> Result<(Dataset, Trained)> {
    let c = cfg.seeded();
    let data = build_dataset(cfg)?;
    let trained = train(&c.train.layer_dims, &c.train.dropout, &data, &c.train.train)?;
    Ok((data, trained))
}

/// Rank the training inputs and fit the fault-free profile on the result.
pub fn gen_tests_stage(cfg: &PipelineConfig, net: &BinaryNetwork, data: &Dataset) -> Result<TestKit> {
    let c = cfg.seeded();
    if data.dim != net.input_dim() {
        return Err(Error::Config(format!("dataset dim {} does not match model input {}", data.dim, net.input_dim())));
    }
    let bank = DropoutBank::new(net);
    let params = &c.gen_tests.atpg;
    let vectors = generate_test_vectors(net, &bank, &data.train_inputs(), params, &RngStream::new(params.seed))?;
    let clean = FaultContext::clean();
    let device = Device::new(net, &bank, &clean);
    let profile = fit_profile(
        &device,
        &vectors,
        c.gen_tests.fit_repetitions,
        params.passes,
        &RngStream::new(stage_seed(cfg.seed, Stage::Profile)),
    )?;
    Ok(TestKit { vectors, profile, fit_repetitions: c.gen_tests.fit_repetitions, sharing: net.dropout().sharing })
}

pub fn campaign_stage(
    cfg: &PipelineConfig,
    net: &BinaryNetwork,
    kit: &TestKit,
    data: &Dataset,
) -> Result<CampaignResult> {
    run_campaign(net, kit, &data.eval, &cfg.seeded().campaign)
}
