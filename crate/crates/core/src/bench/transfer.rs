//! Single-load stall measurement on one core.
//!
//! On-demand: a blocking load; the stall is the whole wait. Prefetch: a
//! non-blocking load, `overlap_ms` of other work, then polling until the
//! data is in; the stall is the time spent polling.

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::host::{Runtime, RuntimeConfig};
use crate::model::{ElemType, MemoryKindId};
use crate::timing::{synthetic_overlap_ms, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferStrategy {
    OnDemand,
    Prefetch,
}

impl TransferStrategy {
    pub fn label(self) -> &'static str {
        match self {
            TransferStrategy::OnDemand => "ondemand",
            TransferStrategy::Prefetch => "prefetch",
        }
    }
}

impl std::str::FromStr for TransferStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ondemand" => Ok(TransferStrategy::OnDemand),
            "prefetch" => Ok(TransferStrategy::Prefetch),
            _ => Err(format!("unknown transfer strategy `{s}` (expected ondemand or prefetch)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferSpec {
    pub sizes: Vec<usize>,
    pub strategies: Vec<TransferStrategy>,
    pub repetitions: usize,
    pub overlap_ms: f64,
    pub kind: MemoryKindId,
}

impl Default for TransferSpec {
    fn default() -> Self {
        Self {
            sizes: vec![128, 1024, 8192],
            strategies: vec![TransferStrategy::OnDemand, TransferStrategy::Prefetch],
            repetitions: 100,
            overlap_ms: synthetic_overlap_ms(),
            kind: MemoryKindId::Host,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub bytes: usize,
    pub strategy: TransferStrategy,
    pub repetitions: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
}

pub fn run_transfer_benchmark(spec: &TransferSpec, config: &RuntimeConfig) -> Result<Vec<TransferRow>, BenchError> {
    if spec.sizes.is_empty() || spec.strategies.is_empty() {
        return Err(BenchError::Validation("need at least one size and one strategy".into()));
    }
    if spec.repetitions == 0 {
        return Err(BenchError::Validation("repetitions must be positive".into()));
    }
    if let Some(bad) = spec.sizes.iter().find(|&&b| b == 0 || b % 4 != 0) {
        return Err(BenchError::Validation(format!("size {bad} is not a positive multiple of 4 bytes")));
    }
    if !(spec.overlap_ms.is_finite() && spec.overlap_ms >= 0.0) {
        return Err(BenchError::Validation("overlap_ms must be non-negative".into()));
    }
    if config.cores.is_empty() {
        return Err(BenchError::Validation("the runtime has no cores".into()));
    }
    let mut rt = Runtime::new(config.clone())?;
    let largest = spec.sizes.iter().max().copied().unwrap_or(0) / 4;
    let data = rt.allocate(ElemType::Float32, largest, spec.kind.clone())?;

    let mut rows = Vec::new();
    for &bytes in &spec.sizes {
        let count = bytes / 4;
        for &strategy in &spec.strategies {
            let mut samples = Vec::with_capacity(spec.repetitions);
            for _ in 0..spec.repetitions {
                let stall = match strategy {
                    TransferStrategy::OnDemand => {
                        let t0 = rt.core_time(0);
                        rt.blocking_load(0, &data, 0, count)?;
                        rt.core_time(0) - t0
                    }
                    TransferStrategy::Prefetch => {
                        let h = rt.nonblocking_load(0, &data, 0, count)?;
                        rt.advance_core(0, spec.overlap_ms);
                        let t0 = rt.core_time(0);
                        rt.wait_polling(h)?;
                        let stall = rt.core_time(0) - t0;
                        rt.collect(h)?;
                        stall
                    }
                };
                samples.push(stall.0);
            }
            // Averaged in integer picoseconds so identical samples give mean == min exactly.
            let min = SimTime(*samples.iter().min().expect("samples")).as_ms();
            let max = SimTime(*samples.iter().max().expect("samples")).as_ms();
            let total: u128 = samples.iter().map(|&s| u128::from(s)).sum();
            let mean = total as f64 / samples.len() as f64 / 1e9;
            rows.push(TransferRow {
                bytes,
                strategy,
                repetitions: spec.repetitions,
                min_ms: min,
                max_ms: max,
                mean_ms: mean,
            });
        }
    }
    Ok(rows)
}
