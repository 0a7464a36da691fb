//! One-hidden-layer network trained on synthetic images.
//!
//! The weight matrix is stored pixel-row-major, `w[p * n_hidden + j]`, and
//! its rows are split contiguously across cores with the remainder going to
//! the last core. Each image runs three kernels: a forward pass (two dot
//! products), a gradient step (a dot product and an outer product
//! accumulated into the core's gradient slice), and a purely local weight
//! update. The network is linear, so per-core partial outputs simply add.
//!
//! Every kernel call is replayed through the host evaluator and the device
//! results must match it bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{strategy_for, BenchError, PrefetchParams, StrategyChoice};
use crate::device::ExecutionStats;
use crate::host::{ArgBinding, CoreResult, OffloadInvocation, Runtime, RuntimeConfig};
use crate::kernel::{evaluate_on_host, parse_kernel, HostArg, KernelProgram, KernelValue};
use crate::model::{Array, ElemType, MemoryKindId, Reference, Scalar};

pub const FORWARD: &str = "\
def forward(x: float[], w: float[], v: float[], row_start: int, rows: int):
    nh = len(v)
    out = [0.0] * (len(v) + 1)
    r = 0
    while r < rows:
        xv = x[row_start + r]
        base = r * nh
        j = 0
        while j < nh:
            out[j] = out[j] + xv * w[base + j]
            j += 1
        r += 1
    s = 0.0
    j = 0
    while j < nh:
        s = s + v[j] * out[j]
        j += 1
    out[nh] = s
    return out
";

pub const GRADIENT: &str = "\
def gradient(x: float[], v: float[], h: float[], gw: float[], target: float, row_start: int, rows: int):
    nh = len(v)
    y = 0.0
    j = 0
    while j < nh:
        y = y + v[j] * h[j]
        j += 1
    delta = y - target
    dv = [0.0] * len(v)
    j = 0
    while j < nh:
        dv[j] = delta * h[j]
        j += 1
    r = 0
    while r < rows:
        xd = x[row_start + r] * delta
        base = r * nh
        j = 0
        while j < nh:
            gw[base + j] = gw[base + j] + xd * v[j]
            j += 1
        r += 1
    return dv
";

pub const UPDATE: &str = "\
def update(w: float[], gw: float[], lr: float):
    i = 0
    while i < len(w):
        w[i] = w[i] - lr * gw[i]
        gw[i] = 0.0
        i += 1
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlSpec {
    pub n_pixels: usize,
    pub n_hidden: usize,
    pub n_cores: usize,
    /// Images processed, each a forward, gradient and update step.
    pub batch: usize,
    pub strategy: StrategyChoice,
    pub prefetch: PrefetchParams,
    pub seed: u64,
    pub learning_rate: f32,
}

impl MlSpec {
    /// Small enough to run in well under a second.
    pub fn desk() -> Self {
        Self {
            n_pixels: 144,
            n_hidden: 8,
            n_cores: 16,
            batch: 1,
            strategy: StrategyChoice::Prefetch,
            prefetch: PrefetchParams::default(),
            seed: 1,
            learning_rate: 0.01,
        }
    }

    /// The small-image configuration: 60x60 pixels, 100 hidden neurons.
    pub fn small_image() -> Self {
        Self { n_pixels: 3600, n_hidden: 100, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.n_pixels == 0 || self.n_hidden == 0 || self.n_cores == 0 || self.batch == 0 {
            return Err(BenchError::Validation(
                "pixels, hidden neurons, cores and batch must all be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() {
            return Err(BenchError::Validation("learning rate must be finite".into()));
        }
        Ok(())
    }

    /// `(first row, row count)` for each core.
    pub fn partition(&self) -> Vec<(usize, usize)> {
        let base = self.n_pixels / self.n_cores;
        (0..self.n_cores)
            .map(|c| {
                let rows = if c + 1 == self.n_cores { self.n_pixels - base * c } else { base };
                (c * base, rows)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: String,
    pub strategy: StrategyChoice,
    pub cores: usize,
    /// Host-observed time from launch until every core returned, summed over the batch.
    pub time_ms: f64,
    pub stall_ms: f64,
    pub loads: u64,
    pub stores: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub instructions: u64,
    /// Most floating-point operations any core did in one call.
    pub max_flops_per_call: u64,
    #[serde(skip)]
    pub per_core: Vec<ExecutionStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlReport {
    pub spec: MlSpec,
    /// Where the per-core weight slices lived.
    pub weights_kind: String,
    pub feed_forward_ms: f64,
    pub combine_gradients_ms: f64,
    pub model_update_ms: f64,
    pub total_ms: f64,
    pub phases: Vec<PhaseResult>,
}

/// Seeded images, targets and initial weights.
pub(crate) struct Problem {
    pub images: Vec<Vec<f32>>,
    pub targets: Vec<f32>,
    pub w: Vec<f32>,
    pub v: Vec<f32>,
}

pub(crate) fn generate(n_pixels: usize, n_hidden: usize, batch: usize, seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..n_pixels * n_hidden).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
    let v = (0..n_hidden).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let images = (0..batch).map(|_| (0..n_pixels).map(|_| rng.gen::<f32>()).collect()).collect();
    let targets = (0..batch).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
    Problem { images, targets, w, v }
}

pub(crate) fn floats(a: &Array) -> &[f32] {
    match a {
        Array::Float(v) => v,
        Array::Int(_) => panic!("expected a float array"),
    }
}

fn harg(v: &[f32]) -> HostArg {
    HostArg::Array(Array::Float(v.to_vec()))
}

fn int(v: usize) -> Scalar {
    Scalar::Int(v as i32)
}

fn value_array(r: &CoreResult) -> Result<Vec<f32>, BenchError> {
    match &r.value {
        Some(KernelValue::Array(Array::Float(v))) => Ok(v.clone()),
        other => Err(BenchError::Verification(format!("core {} returned {other:?}", r.core_id))),
    }
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn oracle(program: &KernelProgram, args: &mut [HostArg], core: usize, cores: usize) -> Result<Option<KernelValue>, BenchError> {
    evaluate_on_host(program, args, core, cores).map_err(|e| BenchError::Verification(format!("host oracle: {e}")))
}

pub(crate) struct Kernels {
    pub forward: KernelProgram,
    pub gradient: KernelProgram,
    pub update: KernelProgram,
}

pub(crate) fn kernels() -> Kernels {
    Kernels {
        forward: parse_kernel(FORWARD).expect("forward kernel parses"),
        gradient: parse_kernel(GRADIENT).expect("gradient kernel parses"),
        update: parse_kernel(UPDATE).expect("update kernel parses"),
    }
}

fn phase(name: &str, spec: &MlSpec) -> PhaseResult {
    PhaseResult {
        phase: name.into(),
        strategy: spec.strategy,
        cores: spec.n_cores,
        time_ms: 0.0,
        stall_ms: 0.0,
        loads: 0,
        stores: 0,
        bytes_in: 0,
        bytes_out: 0,
        instructions: 0,
        max_flops_per_call: 0,
        per_core: vec![ExecutionStats::default(); spec.n_cores],
    }
}

fn record(p: &mut PhaseResult, results: &[CoreResult], elapsed_ms: f64) {
    p.time_ms += elapsed_ms;
    for r in results {
        let s = &r.stats;
        p.stall_ms += s.stall_ms;
        p.loads += s.loads;
        p.stores += s.stores;
        p.bytes_in += s.bytes_in;
        p.bytes_out += s.bytes_out;
        p.instructions += s.instructions;
        p.max_flops_per_call = p.max_flops_per_call.max(s.flops);
        let acc = &mut p.per_core[r.core_id];
        acc.core_id = r.core_id;
        acc.accumulate(s);
    }
}

fn runtime_for(spec: &MlSpec, config: &RuntimeConfig) -> Result<Runtime, BenchError> {
    if config.cores.len() < spec.n_cores {
        return Err(BenchError::Validation(format!(
            "benchmark wants {} cores but the runtime has {}",
            spec.n_cores,
            config.cores.len()
        )));
    }
    let mut cfg = config.clone();
    cfg.cores.truncate(spec.n_cores);
    Ok(Runtime::new(cfg)?)
}

/// Runs the training loop and verifies every kernel call.
pub fn run_ml_benchmark(spec: &MlSpec, config: &RuntimeConfig) -> Result<MlReport, BenchError> {
    spec.validate()?;
    let mut rt = runtime_for(spec, config)?;
    let nh = spec.n_hidden;
    let cores = spec.n_cores;
    let parts = spec.partition();
    let Problem { images, targets, w, v } = generate(spec.n_pixels, nh, spec.batch, spec.seed);
    let k = kernels();

    // Weight and gradient slices live on their core when both fit in half
    // the data budget; otherwise they fall back to Shared memory.
    let largest = parts.iter().map(|p| p.1).max().unwrap_or(0) * nh * 4;
    let min_budget = rt.config().cores.iter().map(|c| c.data_budget_bytes).min().unwrap_or(0);
    let resident = 2 * largest <= min_budget / 2;

    let mut w_host: Vec<Vec<f32>> = parts.iter().map(|&(s, n)| w[s * nh..(s + n) * nh].to_vec()).collect();
    let mut gw_host: Vec<Vec<f32>> = parts.iter().map(|&(_, n)| vec![0.0; n * nh]).collect();
    let mut w_refs = Vec::with_capacity(cores);
    let mut gw_refs = Vec::with_capacity(cores);
    for c in 0..cores {
        let (wr, gr) = if resident {
            let wr = rt.define_on_device(c, ElemType::Float32, w_host[c].len())?;
            let gr = rt.define_on_device(c, ElemType::Float32, gw_host[c].len())?;
            rt.copy_to_device(&wr, &Array::Float(w_host[c].clone()))?;
            rt.copy_to_device(&gr, &Array::Float(gw_host[c].clone()))?;
            (wr, gr)
        } else {
            let wr = rt.allocate_with(MemoryKindId::Shared, &Array::Float(w_host[c].clone()))?;
            let gr = rt.allocate_with(MemoryKindId::Shared, &Array::Float(gw_host[c].clone()))?;
            (wr, gr)
        };
        w_refs.push(wr);
        gw_refs.push(gr);
    }
    let mut v_host = v;
    let x_ref = rt.allocate(ElemType::Float32, spec.n_pixels, MemoryKindId::Host)?;
    let v_ref = rt.allocate_with(MemoryKindId::Host, &Array::Float(v_host.clone()))?;
    let h_ref = rt.allocate(ElemType::Float32, nh, MemoryKindId::Host)?;

    let per_core = |refs: &[Reference]| ArgBinding::PerCore(refs.iter().map(|r| ArgBinding::Ref(*r)).collect());
    let starts = ArgBinding::PerCore(parts.iter().map(|p| ArgBinding::Scalar(int(p.0))).collect());
    let counts = ArgBinding::PerCore(parts.iter().map(|p| ArgBinding::Scalar(int(p.1))).collect());

    let mut forward = phase("feed_forward", spec);
    let mut gradient = phase("combine_gradients", spec);
    let mut update = phase("model_update", spec);

    for (image, &target) in images.iter().zip(&targets) {
        rt.write(&x_ref, &Array::Float(image.clone()))?;

        // Forward pass.
        let strategy = strategy_for(spec.strategy, spec.prefetch, &["x", "w", "v"], &[]);
        let args = vec![
            ArgBinding::Ref(x_ref),
            per_core(&w_refs),
            ArgBinding::Ref(v_ref),
            starts.clone(),
            counts.clone(),
        ];
        let t0 = rt.host_time();
        let out = rt.offload(OffloadInvocation::new(k.forward.clone(), args, strategy))?;
        record(&mut forward, &out, (rt.host_time() - t0).as_ms());
        let mut h = vec![0.0f32; nh];
        for (c, r) in out.iter().enumerate() {
            let got = value_array(r)?;
            let mut hargs = vec![
                harg(image),
                harg(&w_host[c]),
                harg(&v_host),
                HostArg::Scalar(int(parts[c].0)),
                HostArg::Scalar(int(parts[c].1)),
            ];
            let want = oracle(&k.forward, &mut hargs, c, cores)?;
            if want != r.value {
                return Err(BenchError::Verification(format!("forward pass differs on core {c}")));
            }
            for j in 0..nh {
                h[j] += got[j];
            }
        }

        // Gradients.
        rt.write(&h_ref, &Array::Float(h.clone()))?;
        let strategy = strategy_for(spec.strategy, spec.prefetch, &["x", "v", "h", "gw"], &["gw"]);
        let args = vec![
            ArgBinding::Ref(x_ref),
            ArgBinding::Ref(v_ref),
            ArgBinding::Ref(h_ref),
            per_core(&gw_refs),
            ArgBinding::Scalar(Scalar::Float(target)),
            starts.clone(),
            counts.clone(),
        ];
        let t0 = rt.host_time();
        let out = rt.offload(OffloadInvocation::new(k.gradient.clone(), args, strategy))?;
        record(&mut gradient, &out, (rt.host_time() - t0).as_ms());
        let mut dv: Option<Vec<f32>> = None;
        for (c, r) in out.iter().enumerate() {
            let got = value_array(r)?;
            let mut hargs = vec![
                harg(image),
                harg(&v_host),
                harg(&h),
                harg(&gw_host[c]),
                HostArg::Scalar(Scalar::Float(target)),
                HostArg::Scalar(int(parts[c].0)),
                HostArg::Scalar(int(parts[c].1)),
            ];
            let want = oracle(&k.gradient, &mut hargs, c, cores)?;
            if want != r.value {
                return Err(BenchError::Verification(format!("gradient result differs on core {c}")));
            }
            if let HostArg::Array(a) = &hargs[3] {
                gw_host[c] = floats(a).to_vec();
            }
            if !same_bits(floats(&rt.peek(&gw_refs[c])?), &gw_host[c]) {
                return Err(BenchError::Verification(format!("gradient slice differs on core {c}")));
            }
            match &dv {
                None => dv = Some(got),
                Some(d) if same_bits(d, &got) => {}
                Some(_) => return Err(BenchError::Verification(format!("core {c} disagrees on dv"))),
            }
        }

        // Local update.
        let strategy = strategy_for(spec.strategy, spec.prefetch, &["w", "gw"], &["w", "gw"]);
        let args = vec![per_core(&w_refs), per_core(&gw_refs), ArgBinding::Scalar(Scalar::Float(spec.learning_rate))];
        let t0 = rt.host_time();
        let out = rt.offload(OffloadInvocation::new(k.update.clone(), args, strategy))?;
        record(&mut update, &out, (rt.host_time() - t0).as_ms());
        for c in 0..cores {
            let mut hargs = vec![harg(&w_host[c]), harg(&gw_host[c]), HostArg::Scalar(Scalar::Float(spec.learning_rate))];
            oracle(&k.update, &mut hargs, c, cores)?;
            w_host[c] = match &hargs[0] {
                HostArg::Array(a) => floats(a).to_vec(),
                HostArg::Scalar(_) => unreachable!(),
            };
            gw_host[c] = match &hargs[1] {
                HostArg::Array(a) => floats(a).to_vec(),
                HostArg::Scalar(_) => unreachable!(),
            };
            if !same_bits(floats(&rt.peek(&w_refs[c])?), &w_host[c])
                || !same_bits(floats(&rt.peek(&gw_refs[c])?), &gw_host[c])
            {
                return Err(BenchError::Verification(format!("weight update differs on core {c}")));
            }
        }

        let dv = dv.expect("at least one core");
        for j in 0..nh {
            v_host[j] -= spec.learning_rate * dv[j];
        }
        rt.write(&v_ref, &Array::Float(v_host.clone()))?;
    }

    let total_ms = forward.time_ms + gradient.time_ms + update.time_ms;
    Ok(MlReport {
        spec: spec.clone(),
        weights_kind: if resident { "Microcore" } else { "Shared" }.into(),
        feed_forward_ms: forward.time_ms,
        combine_gradients_ms: gradient.time_ms,
        model_update_ms: update.time_ms,
        total_ms,
        phases: vec![forward, gradient, update],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub buffer: usize,
    pub chunk: usize,
    pub distance: usize,
    pub feed_forward_ms: f64,
    pub combine_gradients_ms: f64,
    pub total_ms: f64,
    pub loads: u64,
}

/// Prefetch parameter grid: buffers of 64, 128 and 256 elements, chunks
/// from 16 up to the buffer in powers of two, and distances of one chunk
/// or one buffer.
pub fn sweep_grid() -> Vec<PrefetchParams> {
    let mut grid = Vec::new();
    for buffer in [64, 128, 256] {
        let mut chunk = 16;
        while chunk <= buffer {
            let mut distances = vec![chunk];
            if buffer != chunk {
                distances.push(buffer);
            }
            for distance in distances {
                grid.push(PrefetchParams { buffer, chunk, distance });
            }
            chunk *= 2;
        }
    }
    grid
}

/// Runs the benchmark under prefetch once per grid point.
pub fn sweep_prefetch(spec: &MlSpec, config: &RuntimeConfig, grid: &[PrefetchParams]) -> Result<Vec<SweepRow>, BenchError> {
    let mut rows = Vec::with_capacity(grid.len());
    for &params in grid {
        let s = MlSpec { strategy: StrategyChoice::Prefetch, prefetch: params, ..spec.clone() };
        let r = run_ml_benchmark(&s, config)?;
        rows.push(SweepRow {
            buffer: params.buffer,
            chunk: params.chunk,
            distance: params.distance,
            feed_forward_ms: r.feed_forward_ms,
            combine_gradients_ms: r.combine_gradients_ms,
            total_ms: r.total_ms,
            loads: r.phases.iter().map(|p| p.loads).sum(),
        });
    }
    Ok(rows)
}
