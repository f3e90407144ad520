use std::path::PathBuf;

use replicator_core::{AgentConfig, ControlPolicy, IntegrationConfig, SamplingConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Simulate,
    Portrait,
    Verify,
    Sweep,
    Agents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSettings {
    pub n_agents: usize,
    pub rounds: usize,
    pub config: AgentConfig,
}

/// Everything a run depends on. Written to `manifest.json` in the output
/// directory; `--manifest` replays it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: CommandKind,
    pub scenario: PathBuf,
    pub scenario_sha256: String,
    /// Resolved policy file contents; `None` runs the free dynamics.
    pub policy: Option<ControlPolicy>,
    /// Initial states as given: `m` action-1 shares or `m·n` values.
    pub x0: Vec<Vec<f64>>,
    /// Interior grid with this many points per population edge.
    pub grid: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
    pub integration: IntegrationConfig,
    pub sampling: SamplingConfig,
    pub d_values: Vec<f64>,
    /// Max-norm distance to the target below which a run counts as converged.
    pub tolerance: f64,
    pub agents: AgentSettings,
}
