//! Forward pass over an image far larger than all core memory combined.
//! Image and weights both stay in host memory and are streamed.

use serde::{Deserialize, Serialize};

use super::ml::{generate, kernels};
use super::{strategy_for, BenchError, PrefetchParams, StrategyChoice};
use crate::device::ExecutionStats;
use crate::host::{ArgBinding, OffloadInvocation, Runtime, RuntimeConfig};
use crate::kernel::{evaluate_on_host, HostArg};
use crate::model::{Array, MemoryKindId, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullsizeSpec {
    pub n_pixels: usize,
    pub n_hidden: usize,
    pub n_cores: usize,
    pub strategy: StrategyChoice,
    pub prefetch: PrefetchParams,
    pub seed: u64,
}

impl Default for FullsizeSpec {
    fn default() -> Self {
        Self {
            n_pixels: 1_000_000,
            n_hidden: 1,
            n_cores: 16,
            strategy: StrategyChoice::Prefetch,
            prefetch: PrefetchParams::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullsizeReport {
    pub spec: FullsizeSpec,
    pub time_ms: f64,
    pub stall_ms: f64,
    pub loads: u64,
    pub bytes_in: u64,
    /// Bytes of image data, `n_pixels * 4`, for comparison with `bytes_in`.
    pub image_bytes: u64,
    pub per_core: Vec<ExecutionStats>,
}

pub fn run_fullsize_stream(spec: &FullsizeSpec, config: &RuntimeConfig) -> Result<FullsizeReport, BenchError> {
    if spec.n_pixels == 0 || spec.n_hidden == 0 || spec.n_cores == 0 {
        return Err(BenchError::Validation("pixels, hidden neurons and cores must be positive".into()));
    }
    if config.cores.len() < spec.n_cores {
        return Err(BenchError::Validation(format!(
            "benchmark wants {} cores but the runtime has {}",
            spec.n_cores,
            config.cores.len()
        )));
    }
    let mut cfg = config.clone();
    cfg.cores.truncate(spec.n_cores);
    // Millions of requests; the per-request log would dominate memory.
    cfg.log_requests = false;
    let mut rt = Runtime::new(cfg)?;
    let nh = spec.n_hidden;
    let ml = super::MlSpec {
        n_pixels: spec.n_pixels,
        n_hidden: nh,
        n_cores: spec.n_cores,
        ..super::MlSpec::desk()
    };
    let parts = ml.partition();
    let problem = generate(spec.n_pixels, nh, 1, spec.seed);
    let image = &problem.images[0];

    let x = rt.allocate_with(MemoryKindId::Host, &Array::Float(image.clone()))?;
    let v = rt.allocate_with(MemoryKindId::Host, &Array::Float(problem.v.clone()))?;
    let mut w_refs = Vec::with_capacity(spec.n_cores);
    for &(s, n) in &parts {
        let slice = Array::Float(problem.w[s * nh..(s + n) * nh].to_vec());
        w_refs.push(rt.allocate_with(MemoryKindId::Host, &slice)?);
    }
    let program = kernels().forward;
    let args = vec![
        ArgBinding::Ref(x),
        ArgBinding::PerCore(w_refs.iter().map(|r| ArgBinding::Ref(*r)).collect()),
        ArgBinding::Ref(v),
        ArgBinding::PerCore(parts.iter().map(|p| ArgBinding::Scalar(Scalar::Int(p.0 as i32))).collect()),
        ArgBinding::PerCore(parts.iter().map(|p| ArgBinding::Scalar(Scalar::Int(p.1 as i32))).collect()),
    ];
    let strategy = strategy_for(spec.strategy, spec.prefetch, &["x", "w", "v"], &[]);
    let t0 = rt.host_time();
    let out = rt.offload(OffloadInvocation::new(program.clone(), args, strategy))?;
    let time_ms = (rt.host_time() - t0).as_ms();

    for (c, r) in out.iter().enumerate() {
        let (s, n) = parts[c];
        let mut hargs = vec![
            HostArg::Array(Array::Float(image.clone())),
            HostArg::Array(Array::Float(problem.w[s * nh..(s + n) * nh].to_vec())),
            HostArg::Array(Array::Float(problem.v.clone())),
            HostArg::Scalar(Scalar::Int(s as i32)),
            HostArg::Scalar(Scalar::Int(n as i32)),
        ];
        let want = evaluate_on_host(&program, &mut hargs, c, spec.n_cores)
            .map_err(|e| BenchError::Verification(format!("host oracle: {e}")))?;
        if want != r.value {
            return Err(BenchError::Verification(format!("forward pass differs on core {c}")));
        }
    }

    Ok(FullsizeReport {
        spec: spec.clone(),
        time_ms,
        stall_ms: out.iter().map(|r| r.stats.stall_ms).sum(),
        loads: out.iter().map(|r| r.stats.loads).sum(),
        bytes_in: out.iter().map(|r| r.stats.bytes_in).sum(),
        image_bytes: spec.n_pixels as u64 * 4,
        per_core: out.into_iter().map(|r| r.stats).collect(),
    })
}
