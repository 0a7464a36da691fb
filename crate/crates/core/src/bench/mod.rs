//! Benchmarks: the neural-network training kernels, a full-size streaming
//! run, and the synthetic single-load transfer benchmark.

pub mod fullsize;
pub mod ml;
pub mod report;
pub mod transfer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host::{OffloadError, RuntimeError};
use crate::model::{AccessMode, AccessStrategy, PrefetchSpec};

pub use fullsize::{run_fullsize_stream, FullsizeReport, FullsizeSpec};
pub use ml::{run_ml_benchmark, sweep_prefetch, MlReport, MlSpec, PhaseResult, SweepRow};
pub use transfer::{run_transfer_benchmark, TransferRow, TransferSpec, TransferStrategy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid benchmark: {0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Offload(#[from] OffloadError),
    /// The device disagreed with the host oracle; no timings are reported.
    #[error("result check failed: {0}")]
    Verification(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Eager,
    OnDemand,
    Prefetch,
}

impl StrategyChoice {
    pub fn label(self) -> &'static str {
        match self {
            StrategyChoice::Eager => "eager",
            StrategyChoice::OnDemand => "ondemand",
            StrategyChoice::Prefetch => "prefetch",
        }
    }
}

impl std::str::FromStr for StrategyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "eager" | "eagercopy" => Ok(StrategyChoice::Eager),
            "ondemand" => Ok(StrategyChoice::OnDemand),
            "prefetch" => Ok(StrategyChoice::Prefetch),
            _ => Err(format!("unknown strategy `{s}` (expected eager, ondemand or prefetch)")),
        }
    }
}

/// Buffer, chunk and distance applied to every external array of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefetchParams {
    pub buffer: usize,
    pub chunk: usize,
    pub distance: usize,
}

impl Default for PrefetchParams {
    fn default() -> Self {
        Self { buffer: 256, chunk: 128, distance: 128 }
    }
}

/// Builds the strategy for a kernel whose array parameters are `arrays`;
/// the ones listed in `written` get mutable prefetch buffers.
pub fn strategy_for(choice: StrategyChoice, params: PrefetchParams, arrays: &[&str], written: &[&str]) -> AccessStrategy {
    match choice {
        StrategyChoice::Eager => AccessStrategy::EagerCopy,
        StrategyChoice::OnDemand => AccessStrategy::OnDemand,
        StrategyChoice::Prefetch => AccessStrategy::Prefetch(
            arrays
                .iter()
                .map(|&name| {
                    let mode = if written.contains(&name) { AccessMode::Mutable } else { AccessMode::ReadOnly };
                    PrefetchSpec::new(name, params.buffer, params.chunk, params.distance, mode)
                })
                .collect(),
        ),
    }
}
