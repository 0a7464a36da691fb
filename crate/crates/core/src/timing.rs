//! Simulated time and the transfer cost model.
//!
//! Every transport service is charged `alpha + beta * bytes * tier`, scaled by
//! an optional seeded jitter factor in `[1, 1 + j]`. Time is kept as integer
//! picoseconds so that replays are bitwise reproducible.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::CELL_PAYLOAD_BYTES;

const PS_PER_MS: f64 = 1e9;

/// A point on the simulated clock, in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: f64) -> Self {
        assert!(ms.is_finite() && ms >= 0.0, "negative or non-finite duration {ms}");
        SimTime((ms * PS_PER_MS).round() as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / PS_PER_MS
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ms", self.as_ms())
    }
}

/// Where the far end of a transfer lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Host,
    Shared,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    /// Fixed cost of one core-initiated request.
    pub alpha_ms: f64,
    pub beta_ms_per_byte: f64,
    pub host_tier: f64,
    pub shared_tier: f64,
    /// Cost of the `ready` poll that observes a completed non-blocking transfer.
    pub poll_overhead_ms: f64,
    /// Upper bound `j` of the multiplicative jitter factor `[1, 1 + j]`; 0 disables it.
    pub jitter: f64,
}

impl TimingModel {
    pub fn tier_multiplier(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Host => self.host_tier,
            Tier::Shared => self.shared_tier,
            Tier::Local => 0.0,
        }
    }

    /// Jitter-free cost of moving `bytes` over `tier`, including `alpha`.
    pub fn cost_of_transfer(&self, bytes: usize, tier: Tier) -> f64 {
        if tier == Tier::Local {
            return 0.0;
        }
        self.alpha_ms + self.payload_cost(bytes, tier)
    }

    /// The per-byte part only, used for continuation chunks and control messages.
    pub fn payload_cost(&self, bytes: usize, tier: Tier) -> f64 {
        self.beta_ms_per_byte * bytes as f64 * self.tier_multiplier(tier)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        let fields = [
            ("alpha_ms", self.alpha_ms),
            ("beta_ms_per_byte", self.beta_ms_per_byte),
            ("host_tier", self.host_tier),
            ("shared_tier", self.shared_tier),
            ("poll_overhead_ms", self.poll_overhead_ms),
            ("jitter", self.jitter),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(TimingError::InvalidParameter { name, value: v });
            }
        }
        Ok(())
    }

    /// Affine model fitted to the on-demand means of [`MEASURED_STALLS`], with the
    /// poll overhead derived from the prefetch rows. See [`synthetic_poll_overhead_ms`].
    pub fn synthetic() -> Self {
        let points: Vec<TablePoint> = MEASURED_STALLS
            .iter()
            .map(|row| TablePoint {
                bytes: row.bytes,
                mean_ms: row.on_demand.mean,
            })
            .collect();
        let mut model = fit_from_table(&points).expect("table is well conditioned");
        model.poll_overhead_ms = synthetic_poll_overhead_ms();
        model
    }

    /// Epiphany-III board: 88 MB/s host link, 150 MB/s to shared DRAM.
    pub fn epiphany() -> Self {
        TimingModel {
            alpha_ms: PRESET_ALPHA_MS,
            beta_ms_per_byte: bandwidth_to_beta(88.0),
            host_tier: 1.0,
            shared_tier: 88.0 / 150.0,
            poll_overhead_ms: PRESET_POLL_MS,
            jitter: 0.0,
        }
    }

    /// MicroBlaze soft cores: 100 MB/s sustained, shared BRAM path at 131.25 MB/s.
    pub fn microblaze() -> Self {
        TimingModel {
            alpha_ms: PRESET_ALPHA_MS,
            beta_ms_per_byte: bandwidth_to_beta(100.0),
            host_tier: 1.0,
            shared_tier: 100.0 / 131.25,
            poll_overhead_ms: PRESET_POLL_MS,
            jitter: 0.0,
        }
    }
}

/// Per-request interpreter and messaging overhead used by the board presets.
pub const PRESET_ALPHA_MS: f64 = 0.02;
pub const PRESET_POLL_MS: f64 = 0.001;

/// `MB/s` (decimal megabytes) to milliseconds per byte.
pub fn bandwidth_to_beta(mb_per_s: f64) -> f64 {
    1e3 / (mb_per_s * 1e6)
}

/// Source of jitter factors for one runtime. Disabled sources always return 1.
#[derive(Debug, Clone)]
pub struct Jitter {
    fraction: f64,
    rng: ChaCha8Rng,
}

impl Jitter {
    pub fn new(fraction: f64, seed: u64) -> Self {
        Self {
            fraction,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn factor(&mut self) -> f64 {
        if self.fraction <= 0.0 {
            1.0
        } else {
            1.0 + self.rng.gen_range(0.0..=self.fraction)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePoint {
    pub bytes: usize,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("at least two points are needed to fit a line, got {0}")]
    TooFewPoints(usize),
    #[error("all points share the same byte count; slope is undetermined")]
    DegenerateFit,
    #[error("timing parameter {name} must be finite and non-negative, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Fits `mean = alpha + beta * bytes` with `alpha, beta >= 0`.
///
/// Residuals are weighted by `1 / mean^2` so the fit minimises relative
/// error; an ordinary fit over points spanning two decades lets the largest
/// point dominate and badly misses the small ones. When any mean is not
/// positive the weights fall back to uniform.
pub fn fit_from_table(points: &[TablePoint]) -> Result<TimingModel, TimingError> {
    if points.len() < 2 {
        return Err(TimingError::TooFewPoints(points.len()));
    }
    let x0 = points[0].bytes;
    if points.iter().all(|p| p.bytes == x0) {
        return Err(TimingError::DegenerateFit);
    }
    let relative = points.iter().all(|p| p.mean_ms > 0.0);
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for p in points {
        let x = p.bytes as f64;
        let y = p.mean_ms;
        let w = if relative { 1.0 / (y * y) } else { 1.0 };
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
    }
    let det = sw * swxx - swx * swx;
    let mut beta = (sw * swxy - swx * swy) / det;
    let mut alpha = (swy - beta * swx) / sw;
    if alpha < 0.0 {
        alpha = 0.0;
        beta = swxy / swxx;
    }
    if beta < 0.0 {
        beta = 0.0;
        alpha = swy / sw;
    }
    Ok(TimingModel {
        alpha_ms: alpha,
        beta_ms_per_byte: beta,
        host_tier: 1.0,
        shared_tier: 1.0,
        poll_overhead_ms: 0.0,
        jitter: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StallStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredStallRow {
    pub bytes: usize,
    pub on_demand: StallStats,
    pub prefetch: StallStats,
}

/// Measured core stall times (ms) for single loads of 128 B, 1 KB and 8 KB.
pub const MEASURED_STALLS: [MeasuredStallRow; 3] = [
    MeasuredStallRow {
        bytes: 128,
        on_demand: StallStats { min: 0.099, max: 0.112, mean: 0.104 },
        prefetch: StallStats { min: 0.098, max: 0.111, mean: 0.103 },
    },
    MeasuredStallRow {
        bytes: 1024,
        on_demand: StallStats { min: 0.759, max: 0.955, mean: 0.816 },
        prefetch: StallStats { min: 0.758, max: 0.913, mean: 0.804 },
    },
    MeasuredStallRow {
        bytes: 8192,
        on_demand: StallStats { min: 6.396, max: 11.801, mean: 7.882 },
        prefetch: StallStats { min: 7.215, max: 9.452, mean: 8.537 },
    },
];

/// Poll overhead implied by the prefetch rows.
///
/// A prefetched load of `k` cells pays one `ready` poll per cell and hides
/// roughly one poll's worth of overlapped work, so the prefetch penalty
/// grows by one poll per extra cell. Between the 1 KB row (one cell) and the
/// 8 KB row (eight cells) that is seven polls.
pub fn synthetic_poll_overhead_ms() -> f64 {
    let small = &MEASURED_STALLS[1];
    let large = &MEASURED_STALLS[2];
    let delta_small = small.prefetch.mean - small.on_demand.mean;
    let delta_large = large.prefetch.mean - large.on_demand.mean;
    let extra_polls = (large.bytes.div_ceil(CELL_PAYLOAD_BYTES) - small.bytes.div_ceil(CELL_PAYLOAD_BYTES)) as f64;
    (delta_large - delta_small) / extra_polls
}

/// Work the synthetic benchmark performs between posting a prefetch and
/// polling for it, chosen so a one-cell prefetch saves what the 1 KB row saves.
pub fn synthetic_overlap_ms() -> f64 {
    let small = &MEASURED_STALLS[1];
    synthetic_poll_overhead_ms() - (small.prefetch.mean - small.on_demand.mean)
}
