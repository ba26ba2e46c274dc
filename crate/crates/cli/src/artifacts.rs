//! File formats owned by the command line: versioned JSON envelopes and
//! JSON-lines files with a header line.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use recourse_core::artifact::{self, Envelope, LinesHeader};
use recourse_core::awp::Thresholds;
use recourse_core::metrics::FeatureWeights;
use recourse_core::preference::BtModel;
use recourse_core::synth::{read_dataset_csv, DatasetMeta, LabeledProfile};
use recourse_core::tree::{DecisionTree, TREE_FORMAT, TREE_VERSION};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const WEIGHTS: (&str, u32) = ("recourse-weights", 1);
pub const THRESHOLDS: (&str, u32) = ("recourse-thresholds", 1);
pub const RECOURSES: (&str, u32) = ("recourse-recourses", 1);
pub const REPORT: (&str, u32) = ("recourse-report", 1);
pub const SCENARIOS: (&str, u32) = ("recourse-scenarios", 1);
pub const RESPONSES: (&str, u32) = ("recourse-responses", 1);
pub const COMPARISONS: (&str, u32) = ("recourse-comparisons", 1);
pub const PREDICTIONS: (&str, u32) = ("recourse-predictions", 1);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsBody {
    pub weights: FeatureWeights,
    /// Absent when the weights were not fitted.
    #[serde(default)]
    pub model: Option<BtModel>,
}

fn with_path<T>(path: &Path, r: recourse_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::from(e).context(path))
}

pub fn load_dataset(path: &Path) -> Result<(DatasetMeta, Vec<LabeledProfile>), CliError> {
    let file = File::open(path).map_err(|e| CliError::from(e).context(path))?;
    with_path(path, read_dataset_csv(BufReader::new(file)))
}

pub fn load_tree(path: &Path) -> Result<Envelope<DecisionTree>, CliError> {
    with_path(path, artifact::load(path, TREE_FORMAT, TREE_VERSION))
}

pub fn load_json<T: DeserializeOwned>(path: &Path, (format, version): (&str, u32)) -> Result<Envelope<T>, CliError> {
    with_path(path, artifact::load(path, format, version))
}

pub fn save_json<T: Serialize>(
    path: &Path,
    (format, version): (&str, u32),
    provenance: serde_json::Value,
    body: T,
) -> Result<(), CliError> {
    with_path(path, artifact::save(path, &Envelope::new(format, version, provenance, body)))
}

pub fn load_weights(path: &Path) -> Result<WeightsBody, CliError> {
    Ok(load_json(path, WEIGHTS)?.body)
}

/// Unbounded when no file is given.
pub fn load_thresholds(path: Option<&Path>) -> Result<Thresholds, CliError> {
    match path {
        Some(p) => Ok(load_json(p, THRESHOLDS)?.body),
        None => Ok(Thresholds::unbounded()),
    }
}

pub fn load_lines<T: DeserializeOwned>(path: &Path, (format, version): (&str, u32)) -> Result<Vec<T>, CliError> {
    Ok(with_path(path, artifact::load_lines(path, format, version))?.1)
}

pub fn save_lines<T: Serialize>(
    path: &Path,
    (format, version): (&str, u32),
    provenance: serde_json::Value,
    items: &[T],
) -> Result<(), CliError> {
    let header = LinesHeader { format: format.into(), version, provenance };
    with_path(path, artifact::save_lines(path, &header, items))
}
