//! The simulated micro-core: a bounded local store, a bytecode interpreter
//! for kernels, and the fetch engine that reaches external data.

mod bytecode;
mod fetch;
mod vm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timing::SimTime;

pub use bytecode::{compile, ArraySource, CompiledKernel, Op};
pub use fetch::{LruPool, PrefetchBuffer};
pub use vm::{ArgValue, CoreVm, SetupError, VmStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreConfig {
    pub core_id: usize,
    /// Bytes of local memory available for data.
    pub data_budget_bytes: usize,
    /// Part of the budget set aside for elements fetched on demand.
    pub ondemand_pool_bytes: usize,
    pub clock_hz: f64,
    pub cycles_per_instruction: u32,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            core_id: 0,
            data_budget_bytes: 8192,
            ondemand_pool_bytes: 1024,
            clock_hz: 600e6,
            cycles_per_instruction: 50,
        }
    }
}

impl CoreConfig {
    pub fn with_id(&self, core_id: usize) -> Self {
        Self { core_id, ..self.clone() }
    }

    /// Simulated duration of one interpreted instruction, rounded to the picosecond.
    pub fn instruction_time(&self) -> SimTime {
        SimTime((self.cycles_per_instruction as f64 * 1e12 / self.clock_hz).round() as u64)
    }

    pub fn pool_elements(&self) -> usize {
        self.ondemand_pool_bytes / 4
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(format!("core {}: clock_hz must be positive", self.core_id));
        }
        if self.pool_elements() == 0 {
            return Err(format!("core {}: on-demand pool must hold at least one element", self.core_id));
        }
        if self.ondemand_pool_bytes > self.data_budget_bytes {
            return Err(format!("core {}: on-demand pool is larger than the data budget", self.core_id));
        }
        Ok(())
    }
}

/// Per-core counters for one kernel run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionStats {
    pub core_id: usize,
    pub instructions: u64,
    /// Logical load requests posted, whatever their size.
    pub loads: u64,
    pub stores: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    /// Time spent blocked on the transport, including `ready` polls.
    pub stall_ms: f64,
    pub total_ms: f64,
    #[serde(skip)]
    pub flops: u64,
    #[serde(skip)]
    pub polls: u64,
    #[serde(skip)]
    pub peak_live_bytes: usize,
}

impl ExecutionStats {
    /// Adds another run's counters and times to these.
    pub fn accumulate(&mut self, other: &ExecutionStats) {
        self.instructions += other.instructions;
        self.loads += other.loads;
        self.stores += other.stores;
        self.bytes_in += other.bytes_in;
        self.bytes_out += other.bytes_out;
        self.stall_ms += other.stall_ms;
        self.total_ms += other.total_ms;
        self.flops += other.flops;
        self.polls += other.polls;
        self.peak_live_bytes = self.peak_live_bytes.max(other.peak_live_bytes);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("core {core} needs {needed} bytes of local memory but only {available} are free")]
pub struct BudgetExceeded {
    pub core: usize,
    pub needed: usize,
    pub available: usize,
}

/// Accounting for a core's data region.
#[derive(Debug, Clone)]
pub struct LocalStore {
    core: usize,
    budget: usize,
    live: usize,
    peak: usize,
}

impl LocalStore {
    pub fn new(core: usize, budget: usize) -> Self {
        Self { core, budget, live: 0, peak: 0 }
    }

    pub fn reserve(&mut self, bytes: usize) -> Result<(), BudgetExceeded> {
        let needed = self.live + bytes;
        if needed > self.budget {
            return Err(BudgetExceeded {
                core: self.core,
                needed,
                available: self.budget,
            });
        }
        self.live = needed;
        self.peak = self.peak.max(self.live);
        self.check();
        Ok(())
    }

    pub fn release(&mut self, bytes: usize) {
        self.live -= bytes;
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// The budget invariant. Violations are bugs in the simulator, not user errors.
    #[inline]
    pub fn check(&self) {
        assert!(
            self.live <= self.budget,
            "core {} holds {} live bytes over a {}-byte budget",
            self.core,
            self.live,
            self.budget
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instruction_time_at_600mhz() {
        assert_eq!(CoreConfig::default().instruction_time(), SimTime(83_333));
    }

    #[test]
    fn store_rejects_over_budget() {
        let mut s = LocalStore::new(2, 100);
        s.reserve(60).unwrap();
        assert_eq!(s.reserve(41), Err(BudgetExceeded { core: 2, needed: 101, available: 100 }));
        s.reserve(40).unwrap();
        s.release(50);
        assert_eq!(s.live(), 50);
        assert_eq!(s.peak(), 100);
    }

    #[test]
    fn stats_json_has_exactly_the_public_fields() {
        let s = ExecutionStats { flops: 9, ..Default::default() };
        assert_eq!(
            serde_json::to_string(&s).unwrap(),
            r#"{"core_id":0,"instructions":0,"loads":0,"stores":0,"bytes_in":0,"bytes_out":0,"stall_ms":0.0,"total_ms":0.0}"#
        );
    }
}
