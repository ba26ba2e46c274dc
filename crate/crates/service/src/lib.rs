//! HTTP service for two-session preference elicitation.
//!
//! Session 1 delivers forced-choice trade-off scenarios; once answered, a
//! Bradley-Terry fit turns them into personal weights and Session 2 delivers
//! scenarios built with those weights, including interactive threshold
//! probing. Every session is stored as an event log under the data
//! directory and replayed on start.

pub mod http;
pub mod service;
pub mod session;
pub mod store;

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use recourse_core::artifact;
use recourse_core::study::StudyContext;
use recourse_core::synth::read_dataset_csv;
use recourse_core::tree::{DecisionTree, TREE_FORMAT, TREE_VERSION};

pub use http::router;
pub use service::{Next, Service, ServiceError, SubmitAck, SubmitRequest};
pub use session::{SessionConfig, SessionPhase, SessionRecord};

/// Builds the scenario context from a dataset CSV and a tree artifact.
pub fn load_context(dataset: &Path, tree: &Path) -> recourse_core::Result<StudyContext> {
    let (_, rows) = read_dataset_csv(BufReader::new(File::open(dataset)?))?;
    let tree: DecisionTree = artifact::load(tree, TREE_FORMAT, TREE_VERSION)?.body;
    StudyContext::new(tree, &rows)
}

/// Where the service reads its model and keeps its sessions. Unset fields
/// fall back to `RECOURSE_DATASET`, `RECOURSE_TREE`, `RECOURSE_DATA_DIR`
/// and `RECOURSE_PORT`.
#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub dataset: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub port: Option<u16>,
}

impl ServeConfig {
    pub fn with_env(mut self) -> Self {
        let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
        self.dataset = self.dataset.or_else(|| var("RECOURSE_DATASET"));
        self.tree = self.tree.or_else(|| var("RECOURSE_TREE"));
        self.data_dir = self.data_dir.or_else(|| var("RECOURSE_DATA_DIR"));
        self.port = self.port.or_else(|| std::env::var("RECOURSE_PORT").ok().and_then(|p| p.parse().ok()));
        self
    }
}

/// Serves until the process is stopped.
pub async fn serve(svc: Arc<Service>, port: u16) -> std::io::Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(svc)).await
}
