//! Desk-scale evaluations: decay trials, the terminal-depth oracle, the
//! grounding probe benchmark and the whisper benchmark.

pub mod grounding;
pub mod oracle;
pub mod report;
pub mod trial;
pub mod whisper_bench;

use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use grounding::{parse_probes, run_grounding_benchmark, Difficulty, GroundingReport, ProbeCase, ProbeResult};
pub use oracle::{depth_distribution_oracle, empirical_depth_distribution, DepthDistribution};
pub use report::{binomial_two_sided, run_trial_batch, BatchReport, ConditionSummary};
pub use trial::{compute_autonomy_share, run_trial, Setup, Termination, TrialConfig, TrialMetrics, TrialRun};
pub use whisper_bench::{
    parse_cross_cases, parse_whisper_cases, run_whisper_benchmark, Annotation, Condition, CrossCase, FailureMode,
    WhisperCase, WhisperReport,
};

use crate::catalog::BundleCatalog;
use crate::embed::{Embedder, FixtureEmbedder};
use crate::model::{AgentId, BundleId};
use crate::policy::{MockPolicy, PolicyBackend};
use crate::runtime::{MemorySink, Room, RoomConfig, RuntimeError, Scenario};

pub const SHIPPED_CATALOG: &str = include_str!("../../fixtures/sample_catalog.jsonl");
pub const SHIPPED_EMBEDDINGS: &str = include_str!("../../fixtures/embeddings.jsonl");
pub const SHIPPED_PROBES: &str = include_str!("../../fixtures/probes.jsonl");
pub const SHIPPED_WHISPER_CASES: &str = include_str!("../../fixtures/whisper_cases.jsonl");
pub const SHIPPED_CROSS_CASES: &str = include_str!("../../fixtures/cross_whisper.jsonl");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("trial with seed {seed} aborted: {source}")]
    TrialAborted {
        seed: u64,
        /// Trace lines written before the failure.
        partial_trace: String,
        #[source]
        source: RuntimeError,
    },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("unknown pool {0:?}")]
    UnknownPool(String),
    #[error("expected bundle {0} is not in the probed pool")]
    UnknownExpectedBundle(BundleId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("line {line}: {message}")]
    Case { line: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Catalog, embedder, policy and scenario shared by every trial of a run.
#[derive(Clone)]
pub struct Fixtures {
    pub catalog: Arc<BundleCatalog>,
    pub embedder: Arc<dyn Embedder>,
    pub policy: Arc<dyn PolicyBackend>,
    pub scenario: Scenario,
}

impl Fixtures {
    /// The shipped sample catalog, fixture embedder, mock policy and party room.
    pub fn shipped() -> Self {
        Self {
            catalog: Arc::new(BundleCatalog::parse_jsonl(SHIPPED_CATALOG).expect("shipped catalog parses")),
            embedder: Arc::new(FixtureEmbedder::parse_jsonl(SHIPPED_EMBEDDINGS).expect("shipped embeddings parse")),
            policy: Arc::new(MockPolicy::shipped()),
            scenario: Scenario::party(),
        }
    }

    /// A fresh room traced into memory.
    pub fn room(&self, config: RoomConfig) -> Result<(Room, Arc<Mutex<MemorySink>>), RuntimeError> {
        let state = self.scenario.build_state(config);
        let sink = Arc::new(Mutex::new(MemorySink::default()));
        let room = Room::new(state, self.catalog.clone(), self.embedder.clone(), self.policy.clone())?
            .with_sink(Box::new(sink.clone()))?;
        Ok((room, sink))
    }
}
