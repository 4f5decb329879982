//! JSON persistence for models, datasets and test kits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::atpg::TestVectorSet;
use crate::detector::{TestKit, UncertaintyProfile};
use crate::engine::{BatchNorm, BinaryNetwork, DropoutConfig, Layer, Sharing};
use crate::error::{Error, Result};
use crate::tensor::BitMat;
use crate::trainer::Dataset;

pub const MODEL_FORMAT: &str = "cimtest-model/1";
pub const VECTORS_FILE: &str = "test_vectors.json";
pub const PROFILE_FILE: &str = "profile.json";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.display().to_string(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    }
    let text = serde_json::to_string_pretty(value).expect("artifact serializes") + "\n";
    fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    /// Row-major: one inner list per crossbar row (input).
    weights: Vec<Vec<i8>>,
    bn: BatchNorm,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    dims: Vec<usize>,
    dropout: DropoutConfig,
    layers: Vec<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mac_std: Option<Vec<f64>>,
}

pub fn model_to_json(net: &BinaryNetwork) -> String {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        dims: net.dims(),
        dropout: net.dropout().clone(),
        layers: net.layers().iter().map(|l| LayerFile { weights: l.weights.to_rows(), bn: l.bn.clone() }).collect(),
        mac_std: net.mac_std().map(|s| s.to_vec()),
    };
    serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
}

pub fn model_from_json(text: &str) -> Result<BinaryNetwork> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|source| Error::Json { path: "<model>".into(), source })?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Config(format!("unknown model format {:?}", file.format)));
    }
    let layers = file
        .layers
        .into_iter()
        .map(|l| Layer::new(BitMat::from_rows(&l.weights)?, l.bn))
        .collect::<Result<Vec<_>>>()?;
    let mut net = BinaryNetwork::new(layers, file.dropout)?;
    if net.dims() != file.dims {
        return Err(Error::Config(format!("model dims {:?} do not match its layers {:?}", file.dims, net.dims())));
    }
    if let Some(std) = file.mac_std {
        net.set_mac_std(std)?;
    }
    Ok(net)
}

pub fn save_model(path: &Path, net: &BinaryNetwork) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, model_to_json(net)).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: &Path) -> Result<BinaryNetwork> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    model_from_json(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json { path: path.display().to_string(), source },
        other => other,
    })
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_json(path, data)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let data: Dataset = read_json(path)?;
    data.validate()?;
    Ok(data)
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    profile: UncertaintyProfile,
    fit_repetitions: usize,
    sharing: Sharing,
}

/// Writes the two kit files into `dir` and returns their paths.
pub fn save_kit(dir: &Path, kit: &TestKit) -> Result<(PathBuf, PathBuf)> {
    let vectors = dir.join(VECTORS_FILE);
    let profile = dir.join(PROFILE_FILE);
    write_json(&vectors, &kit.vectors)?;
    write_json(
        &profile,
        &ProfileFile { profile: kit.profile.clone(), fit_repetitions: kit.fit_repetitions, sharing: kit.sharing },
    )?;
    Ok((vectors, profile))
}

pub fn load_kit(dir: &Path) -> Result<TestKit> {
    let vectors: TestVectorSet = read_json(&dir.join(VECTORS_FILE))?;
    let p: ProfileFile = read_json(&dir.join(PROFILE_FILE))?;
    let kit = TestKit { vectors, profile: p.profile, fit_repetitions: p.fit_repetitions, sharing: p.sharing };
    kit.validate()?;
    Ok(kit)
}

/// Checks that a kit's vectors fit the model's input layer.
pub fn check_kit_matches(kit: &TestKit, net: &BinaryNetwork) -> Result<()> {
    if kit.vectors.inputs().any(|x| x.len() != net.input_dim()) {
        return Err(Error::Config(format!("test vectors do not match the model input width {}", net.input_dim())));
    }
    Ok(())
}
