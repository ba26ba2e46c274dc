//! `recourse`: one binary for every pipeline stage.
//!
//! Exit codes: 0 on success, 2 for usage errors, 3 for invalid or
//! mismatched inputs, 4 for I/O failures.

mod artifacts;
mod commands;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recourse_core::preference::FitOptions;
use recourse_core::study::{Composition, PipelineConfig};
use recourse_core::synth::LabelingConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn context(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
            CliError::Validation(m) => CliError::Validation(format!("{p}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{p}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<recourse_core::Error> for CliError {
    fn from(e: recourse_core::Error) -> Self {
        match e {
            recourse_core::Error::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "recourse", version, about = "Personalized counterfactual recourse pipeline")]
struct Cli {
    /// JSON file with one object per subcommand (e.g. `{"simulate": {"users": 10}}`); its values override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample and label a synthetic credit dataset (CSV).
    Synth(SynthArgs),
    /// Train the decision tree on the 80% split and report test accuracy.
    Train(TrainArgs),
    /// Generate the top-K recourses for one rejected profile.
    Gen(GenArgs),
    /// Build a Session-1 or Session-2 scenario batch (JSON lines).
    Scenarios(ScenariosArgs),
    /// Fit Bradley-Terry weights from pairwise comparisons.
    Fit(FitArgs),
    /// Predict choices on scenarios with the AWP model.
    Predict(PredictArgs),
    /// Run the two-session pipeline for a cohort of simulated users.
    Simulate(SimulateArgs),
    /// Score recorded responses against weights and thresholds.
    Evaluate(EvaluateArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "dataset.csv")]
    pub out: PathBuf,
    /// Labeling parameters; config file only.
    #[arg(skip)]
    #[serde(default)]
    pub labeling: Option<LabelingConfig>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub split_seed: u64,
    #[arg(long, default_value = "tree.json")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub min_samples_leaf: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, default_value = "tree.json")]
    pub tree: PathBuf,
    /// Dataset row to explain.
    #[arg(long, conflicts_with = "profile")]
    pub row: Option<usize>,
    /// Profile as JSON, e.g. `{"income":30000,"credit_score":580,...}`.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value_t = 15)]
    pub k: usize,
    /// Rank by weighted proximity under these weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Also emit the rounded variant of each recourse.
    #[arg(long)]
    pub rounded: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ScenariosArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, default_value = "tree.json")]
    pub tree: PathBuf,
    /// 1 or 2.
    #[arg(long, default_value_t = 1)]
    pub session: u8,
    /// Session-1 batch size.
    #[arg(long, default_value_t = 25)]
    pub n: usize,
    /// Session-1 design: global_tradeoff, randomized_tradeoff or mixed.
    #[arg(long, default_value = "global_tradeoff")]
    pub design: String,
    /// Fitted weights; required for Session 2.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub min_margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "scenarios.jsonl")]
    pub out: PathBuf,
    /// Session-2 batch composition; config file only.
    #[arg(skip)]
    #[serde(default)]
    pub composition: Option<Composition>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long, default_value = "comparisons.jsonl")]
    pub comparisons: PathBuf,
    #[arg(long, default_value = "weights.json")]
    pub out: PathBuf,
    /// L2 strength on the Bradley-Terry coefficients.
    #[arg(long)]
    pub reg: Option<f64>,
    #[arg(skip)]
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long, default_value = "scenarios.jsonl")]
    pub scenarios: PathBuf,
    #[arg(long, default_value = "weights.json")]
    pub weights: PathBuf,
    /// Acceptability thresholds; none when omitted.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, default_value = "predictions.jsonl")]
    pub out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, default_value = "dataset.csv")]
    pub data: PathBuf,
    #[arg(long, default_value = "tree.json")]
    pub tree: PathBuf,
    #[arg(long, default_value_t = 41)]
    pub users: usize,
    /// Choice-noise temperature; 0 is noiseless.
    #[arg(long, default_value_t = 0.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the cohort report here (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write each user's comparisons, scenarios, responses, weights and thresholds under this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Pipeline parameters; config file only.
    #[arg(skip)]
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

#[derive(Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "scenarios.jsonl")]
    pub scenarios: PathBuf,
    #[arg(long, default_value = "responses.jsonl")]
    pub responses: PathBuf,
    #[arg(long, default_value = "weights.json")]
    pub weights: PathBuf,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
pub struct ServeArgs {
    /// Falls back to RECOURSE_PORT, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    /// Session storage; falls back to RECOURSE_DATA_DIR, then `sessions-data`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Falls back to RECOURSE_DATASET, then `dataset.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Falls back to RECOURSE_TREE, then `tree.json`.
    #[arg(long)]
    pub tree: Option<PathBuf>,
}

/// Overlays a config-file section onto parsed flags.
fn overlay<T: Serialize + DeserializeOwned>(args: T, section: Option<&serde_json::Value>) -> Result<T, CliError> {
    let Some(section) = section else { return Ok(args) };
    let serde_json::Value::Object(over) = section else {
        return Err(CliError::Validation("config sections must be JSON objects".into()));
    };
    let mut value = serde_json::to_value(args).map_err(|e| CliError::Validation(e.to_string()))?;
    let obj = value.as_object_mut().expect("argument structs serialize as objects");
    for (k, v) in over {
        if !obj.contains_key(k) {
            return Err(CliError::Validation(format!("unknown config key `{k}`")));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| CliError::Validation(format!("config: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config: serde_json::Value = match &cli.config {
        Some(path) => {
            let s = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path))?;
            serde_json::from_str(&s).map_err(|e| CliError::Validation(e.to_string()).context(path))?
        }
        None => serde_json::Value::Null,
    };
    let section = |name: &str| config.get(name);
    match cli.command {
        Command::Synth(a) => commands::synth(overlay(a, section("synth"))?),
        Command::Train(a) => commands::train(overlay(a, section("train"))?),
        Command::Gen(a) => commands::gen(overlay(a, section("gen"))?),
        Command::Scenarios(a) => commands::scenarios(overlay(a, section("scenarios"))?),
        Command::Fit(a) => commands::fit(overlay(a, section("fit"))?),
        Command::Predict(a) => commands::predict(overlay(a, section("predict"))?),
        Command::Simulate(a) => commands::simulate(overlay(a, section("simulate"))?),
        Command::Evaluate(a) => commands::evaluate(overlay(a, section("evaluate"))?),
        Command::Serve(a) => commands::serve(overlay(a, section("serve"))?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("recourse: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
