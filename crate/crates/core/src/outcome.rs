//! Control-run results shared by the local algorithms, the central
//! optimizer, and the experiment harness.

use serde::{Deserialize, Serialize};

use crate::model::{BranchId, BusId};
use crate::pf::OperatingPoint;

/// Reactive-dispatch strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    NoAction,
    Llma,
    Lfma,
    HybridLlma,
    HybridLfma,
    CentralOpf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::NoAction,
        Algorithm::Llma,
        Algorithm::Lfma,
        Algorithm::HybridLlma,
        Algorithm::HybridLfma,
        Algorithm::CentralOpf,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::NoAction => "noaction",
            Algorithm::Llma => "llma",
            Algorithm::Lfma => "lfma",
            Algorithm::HybridLlma => "hybrid-llma",
            Algorithm::HybridLfma => "hybrid-lfma",
            Algorithm::CentralOpf => "opf",
        }
    }

    /// Local algorithm run as step 1 of a hybrid, if any.
    pub fn base_local(self) -> Option<LocalAlgorithm> {
        match self {
            Algorithm::Llma | Algorithm::HybridLlma => Some(LocalAlgorithm::Llma),
            Algorithm::Lfma | Algorithm::HybridLfma => Some(LocalAlgorithm::Lfma),
            _ => None,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| format!("unknown algorithm '{s}'"))
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// The two communication-free algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalAlgorithm {
    Llma,
    Lfma,
}

impl LocalAlgorithm {
    pub fn as_algorithm(self) -> Algorithm {
        match self {
            LocalAlgorithm::Llma => Algorithm::Llma,
            LocalAlgorithm::Lfma => Algorithm::Lfma,
        }
    }
}

/// Agent progress through one synchronized LFMA round sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// No-action / upstream detection; setpoint still zero.
    Idle,
    /// Own reactive load matched (LFMA step 2, also the LLMA endpoint).
    LlmaDone,
    /// Setpoint raised by the measured upstream flow (LFMA step 3).
    Increased,
    /// Reversal correction applied where needed (LFMA step 4).
    Final,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Idle => "idle",
            Stage::LlmaDone => "llma-done",
            Stage::Increased => "increased",
            Stage::Final => "final",
        }
    }
}

/// One row of the per-round trace log.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: u32,
    pub bus: BusId,
    pub stage: Stage,
    pub q_setpoint: f64,
    pub upstream: Option<BranchId>,
    /// Reactive flow on the upstream branch, positive into the agent's bus,
    /// measured at this round's solved state.
    pub upstream_q: Option<f64>,
}

/// Result of one control strategy applied to one operating condition.
#[derive(Debug, Clone)]
pub struct ControlOutcome {
    pub algorithm: Algorithm,
    /// Final reactive setpoints aligned with `net.inverters()`.
    pub q_setpoints: Vec<f64>,
    pub point: OperatingPoint,
    /// Inverters dispatched by the central coordinator (zero for the
    /// communication-free strategies).
    pub n_central: usize,
    /// True when a failed central optimization was replaced by its local
    /// fallback.
    pub fallback: bool,
    pub trace: Vec<TraceRow>,
}

impl ControlOutcome {
    pub fn loss(&self) -> f64 {
        self.point.total_loss
    }

    /// Per-round trace as CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("round,bus,stage,q_setpoint,upstream_branch,upstream_q\n");
        for row in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.round,
                row.bus,
                row.stage.label(),
                row.q_setpoint,
                row.upstream.map(|b| b.to_string()).unwrap_or_default(),
                row.upstream_q.map(|q| q.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}
