//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line whether or not it fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcoffload::bench::{
    run_fullsize_stream, run_ml_benchmark, run_transfer_benchmark, BenchError, FullsizeSpec, MlSpec, StrategyChoice,
    TransferSpec, TransferStrategy,
};
use mcoffload::corpus::{check, generate, sample_strategies, Verdict};
use mcoffload::device::CoreConfig;
use mcoffload::host::{ArgBinding, CoreResult, OffloadError, OffloadInvocation, Runtime, RuntimeConfig};
use mcoffload::kernel::{evaluate_on_host, parse_kernel, HostArg, KernelValue};
use mcoffload::model::{AccessMode, AccessStrategy, Array, MemoryKindId, PrefetchSpec, Scalar};
use mcoffload::timing::{fit_from_table, SimTime, TablePoint, TimingModel};
use mcoffload::transport::{CellState, Channel, Request, RequestKind, TransferHandle, TransportError, CELLS_PER_CHANNEL};

/// Minimum number of randomized corpus cases.
const CORPUS_CASES: u64 = 200;
/// Prefetch specs sampled per corpus case, on top of eager and on-demand.
const PREFETCH_SAMPLES: usize = 3;
const CORPUS_LIMIT: Duration = Duration::from_secs(60);
/// Measured on-demand means (bytes, ms) the fitted model has to replay.
const MEASURED: [(usize, f64); 3] = [(128, 0.104), (1024, 0.816), (8192, 7.882)];
const FIT_REL_TOL: f64 = 0.20;
const MIN_ML_SPEEDUP: f64 = 5.0;
const FULLSIZE_PIXELS: usize = 1_000_000;
const FULLSIZE_LIMIT: Duration = Duration::from_secs(300);
const MEMORY_TRIALS: u64 = 1000;
const REGION: usize = 16;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn epiphany(cores: usize) -> RuntimeConfig {
    RuntimeConfig::uniform(cores, CoreConfig::default(), TimingModel::epiphany())
}

fn strategy_equivalence() -> Outcome {
    let start = Instant::now();
    let core = CoreConfig::default();
    let timing = TimingModel::epiphany();
    let (mut runs, mut rejected) = (0, 0);
    for seed in 0..CORPUS_CASES {
        let case = generate(seed);
        for strategy in sample_strategies(&case, seed ^ 0x5eed, PREFETCH_SAMPLES) {
            match check(&case, &strategy, &core, &timing) {
                Ok(Verdict::Matched) => runs += 1,
                Ok(Verdict::DidNotFit) => rejected += 1,
                Err(e) => return Err(format!("case {seed} ({}) under {strategy:?}: {e}", case.template)),
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(runs >= CORPUS_CASES as usize * (1 + PREFETCH_SAMPLES), || format!("only {runs} streaming runs matched"))?;
    ensure(elapsed < CORPUS_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{CORPUS_CASES} cases, {runs} runs exact, {rejected} eager rejections, {elapsed:.1?}"))
}

const SCAN: &str = "\
def scan(a: int[]):
    s = 0
    i = 0
    while i < len(a):
        s = s + a[i]
        i += 1
    return s
";

fn request_count_law() -> Outcome {
    let run = |strategy| -> Result<u64, String> {
        let mut rt = Runtime::new(epiphany(1)).map_err(|e| e.to_string())?;
        let a = rt.allocate_with(MemoryKindId::Host, &Array::Int((0..1000).collect())).map_err(|e| e.to_string())?;
        let out = rt
            .offload(OffloadInvocation::new(parse_kernel(SCAN).unwrap(), vec![ArgBinding::Ref(a)], strategy))
            .map_err(|e| e.to_string())?;
        ensure(out[0].value == Some(KernelValue::Scalar(Scalar::Int(499_500))), || "wrong sum".into())?;
        Ok(out[0].stats.loads)
    };
    let od = run(AccessStrategy::OnDemand)?;
    let pf = run(AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", 10, 2, 10, AccessMode::ReadOnly)]))?;
    ensure(od == 1000 && pf == 500, || format!("on-demand {od} loads, prefetch {pf} loads"))?;
    Ok(format!("on-demand {od} loads, prefetch {pf} loads"))
}

fn transfer_rows() -> Result<Vec<mcoffload::bench::TransferRow>, String> {
    let points: Vec<TablePoint> = MEASURED.iter().map(|&(bytes, mean_ms)| TablePoint { bytes, mean_ms }).collect();
    let fitted = fit_from_table(&points).map_err(|e| e.to_string())?;
    // The fit covers alpha and beta; polling and jitter come from the synthetic model.
    let model = TimingModel { jitter: 0.0, poll_overhead_ms: TimingModel::synthetic().poll_overhead_ms, ..fitted };
    let config = RuntimeConfig::uniform(1, CoreConfig::default(), model);
    run_transfer_benchmark(&TransferSpec::default(), &config).map_err(|e| e.to_string())
}

fn mean(rows: &[mcoffload::bench::TransferRow], bytes: usize, s: TransferStrategy) -> f64 {
    rows.iter().find(|r| r.bytes == bytes && r.strategy == s).map_or(f64::NAN, |r| r.mean_ms)
}

fn timing_fit() -> Outcome {
    let rows = transfer_rows()?;
    let mut detail = Vec::new();
    for (bytes, want) in MEASURED {
        let got = mean(&rows, bytes, TransferStrategy::OnDemand);
        let err = (got - want).abs() / want;
        detail.push(format!("{bytes} B {got:.3} ms ({:+.1}%)", 100.0 * (got - want) / want));
        ensure(err <= FIT_REL_TOL, || format!("{bytes} B: {got:.4} ms vs {want} ms"))?;
    }
    Ok(detail.join(", "))
}

fn crossover() -> Outcome {
    let rows = transfer_rows()?;
    let pair = |b| (mean(&rows, b, TransferStrategy::Prefetch), mean(&rows, b, TransferStrategy::OnDemand));
    let (p128, o128) = pair(128);
    let (p1k, o1k) = pair(1024);
    let (p8k, o8k) = pair(8192);
    let detail = format!("128 B {p128:.3}/{o128:.3}, 1 KB {p1k:.3}/{o1k:.3}, 8 KB {p8k:.3}/{o8k:.3} ms prefetch/on-demand");
    ensure(p128 <= o128 && p1k <= o1k && p8k >= o8k, || detail.clone())?;
    Ok(detail)
}

fn ml_speedup() -> Outcome {
    let run = |strategy| {
        run_ml_benchmark(&MlSpec { strategy, ..MlSpec::desk() }, &epiphany(16)).map_err(|e| e.to_string())
    };
    let od = run(StrategyChoice::OnDemand)?;
    let pf = run(StrategyChoice::Prefetch)?;
    let eager = run(StrategyChoice::Eager)?;
    let ratio = od.total_ms / pf.total_ms;
    ensure(ratio >= MIN_ML_SPEEDUP, || format!("speedup {ratio:.2}"))?;
    ensure(od.model_update_ms == pf.model_update_ms && pf.model_update_ms == eager.model_update_ms, || {
        format!("update {} / {} / {} ms", od.model_update_ms, pf.model_update_ms, eager.model_update_ms)
    })?;
    Ok(format!("prefetch {ratio:.2}x faster, update {:.4} ms for every strategy", od.model_update_ms))
}

fn arbitrarily_large() -> Outcome {
    let start = Instant::now();
    let spec = FullsizeSpec { n_pixels: FULLSIZE_PIXELS, ..FullsizeSpec::default() };
    let mut detail = Vec::new();
    for strategy in [StrategyChoice::OnDemand, StrategyChoice::Prefetch] {
        // Verifies every core's result against the host evaluator.
        let r = run_fullsize_stream(&FullsizeSpec { strategy, ..spec.clone() }, &epiphany(16))
            .map_err(|e| format!("{strategy:?}: {e}"))?;
        detail.push(format!("{strategy:?} {:.0} ms simulated", r.time_ms));
    }
    match run_fullsize_stream(&FullsizeSpec { strategy: StrategyChoice::Eager, ..spec }, &epiphany(16)) {
        Err(BenchError::Offload(OffloadError::BudgetExceeded(_))) => {}
        other => return Err(format!("eager copy gave {:?}", other.map(|r| r.time_ms))),
    }
    let elapsed = start.elapsed();
    ensure(elapsed < FULLSIZE_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{FULLSIZE_PIXELS} elements exact, {}, eager rejected, {elapsed:.1?}", detail.join(", ")))
}

fn within_budget(results: &[CoreResult], budget: usize) -> Result<(), String> {
    match results.iter().find(|r| r.stats.peak_live_bytes > budget) {
        Some(r) => Err(format!("core {} peaked at {} bytes", r.core_id, r.stats.peak_live_bytes)),
        None => Ok(()),
    }
}

/// Random stores inside the core's region; returns source and store offsets in program order.
fn store_program(rng: &mut ChaCha8Rng) -> (String, Vec<usize>) {
    let mut src = format!("def prog(a: int[]):\n    b = core_id() * {REGION}\n    t = 0\n");
    let mut writes = Vec::new();
    for _ in 0..rng.gen_range(1..=12) {
        let o = rng.gen_range(0..REGION);
        match rng.gen_range(0..3) {
            0 => src += &format!("    t = a[b + {o}]\n"),
            1 => {
                src += &format!("    a[b + {o}] = t + {}\n", rng.gen_range(-50..50));
                writes.push(o);
            }
            _ => {
                let (n, step) = (rng.gen_range(1..6), rng.gen_range(1..5));
                src += &format!("    i = 0\n    while i < {n}:\n        a[b + (i * {step}) % {REGION}] = i + t\n        i += 1\n");
                writes.extend((0..n).map(|i| (i * step) % REGION));
            }
        }
    }
    src += "    return t\n";
    (src, writes)
}

fn store_fifo(rng: &mut ChaCha8Rng, trial: u64) -> Result<(), String> {
    let cores = rng.gen_range(1..=4);
    let (src, writes) = store_program(rng);
    let program = parse_kernel(&src).map_err(|e| e.to_string())?;
    let initial = Array::Int((0..(cores * REGION) as i32).collect());
    let strategy = if rng.gen_bool(0.5) {
        AccessStrategy::OnDemand
    } else {
        let buffer = rng.gen_range(1..=REGION);
        let chunk = rng.gen_range(1..=buffer);
        AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", buffer, chunk, rng.gen_range(1..=buffer), AccessMode::Mutable)])
    };
    let mut config = epiphany(cores);
    config.timing.jitter = if rng.gen_bool(0.5) { 0.5 } else { 0.0 };
    config.jitter_seed = trial;
    let mut rt = Runtime::new(config).map_err(|e| e.to_string())?;
    let a = rt.allocate_with(MemoryKindId::Host, &initial).map_err(|e| e.to_string())?;
    let out = rt.offload(OffloadInvocation::new(program.clone(), vec![ArgBinding::Ref(a)], strategy)).map_err(|e| e.to_string())?;
    within_budget(&out, CoreConfig::default().data_budget_bytes)?;
    for c in 0..cores {
        let stores: Vec<_> =
            rt.log().iter().filter(|e| e.kind == RequestKind::Store && e.core_id == c && e.reference_id == a.id).collect();
        let offsets: Vec<usize> = stores.iter().map(|e| e.offset - c * REGION).collect();
        ensure(offsets == writes, || format!("trial {trial} core {c}: stores {offsets:?}, program {writes:?}"))?;
        ensure(stores.windows(2).all(|w| w[0].sequence < w[1].sequence), || format!("trial {trial}: sequence order"))?;
    }
    let mut host = vec![HostArg::Array(initial)];
    for c in 0..cores {
        evaluate_on_host(&program, &mut host, c, cores).map_err(|e| e.to_string())?;
    }
    ensure(host[0] == HostArg::Array(rt.peek(&a).map_err(|e| e.to_string())?), || format!("trial {trial}: final memory"))
}

const RACE: &str = "\
def race(a: int[], v: int, delay: int):
    i = 0
    while i < delay:
        i += 1
    a[0] = v
    a[len(a) - 1] = v
    return v
";

fn torn_write(rng: &mut ChaCha8Rng, trial: u64, winners: &mut BTreeSet<usize>) -> Result<(), String> {
    let k = 4;
    let values: Vec<i32> = (0..k).map(|_| rng.gen()).collect();
    let mut config = epiphany(k);
    config.timing.jitter = rng.gen_range(0.0..1.0);
    config.jitter_seed = trial;
    let mut rt = Runtime::new(config).map_err(|e| e.to_string())?;
    let len = rng.gen_range(1..300);
    let a = rt.allocate_with(MemoryKindId::Host, &Array::Int(vec![0; len])).map_err(|e| e.to_string())?;
    let strategy = match rng.gen_range(0..3) {
        0 => AccessStrategy::OnDemand,
        1 => AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", 8, 4, 4, AccessMode::Mutable)]),
        _ => AccessStrategy::EagerCopy,
    };
    let args = vec![
        ArgBinding::Ref(a),
        ArgBinding::PerCore(values.iter().map(|v| ArgBinding::Scalar(Scalar::Int(*v))).collect()),
        ArgBinding::PerCore((0..k).map(|_| ArgBinding::Scalar(Scalar::Int(rng.gen_range(0..40)))).collect()),
    ];
    let out = rt.offload(OffloadInvocation::new(parse_kernel(RACE).unwrap(), args, strategy)).map_err(|e| e.to_string())?;
    within_budget(&out, CoreConfig::default().data_budget_bytes)?;
    let after = rt.peek(&a).map_err(|e| e.to_string())?;
    for index in [0, len - 1] {
        let got = after.get(index).ok_or("short array")?;
        let who = values.iter().position(|v| Scalar::Int(*v) == got);
        winners.insert(who.ok_or_else(|| format!("trial {trial}: element {index} = {got:?} was never written"))?);
    }
    Ok(())
}

fn memory_model() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1f0);
    for trial in 0..MEMORY_TRIALS {
        store_fifo(&mut rng, trial)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ea2);
    let mut winners = BTreeSet::new();
    for trial in 0..MEMORY_TRIALS {
        torn_write(&mut rng, trial, &mut winners)?;
    }
    ensure(winners.len() > 1, || "the same core always won".into())?;
    Ok(format!("{MEMORY_TRIALS} FIFO programs, {MEMORY_TRIALS} races untorn ({} distinct winners), budget held", winners.len()))
}

fn load() -> Request {
    Request { kind: RequestKind::Load, reference_id: 0, element_offset: 0, element_count: 1, payload: Vec::new() }
}

fn transport_model() -> Outcome {
    const CELLS: usize = 2;
    const STEPS: u32 = 3;
    // Post, then Begin/Complete/Collect for each of the first two cells.
    let actions = 1 + 3 * CELLS;
    let mut sequences = 0;
    for code in 0..actions.pow(STEPS) {
        let mut ch = Channel::new(0);
        let mut handles: [Option<TransferHandle>; CELLS] = [None; CELLS];
        let mut model = [CellState::Free; CELLS_PER_CHANNEL];
        let mut rest = code;
        for _ in 0..STEPS {
            let a = rest % actions;
            rest /= actions;
            let before: Vec<CellState> = ch.cells().iter().map(|c| c.state).collect();
            let (ok, want) = if a == 0 {
                let ok = match ch.post(load(), SimTime::ZERO) {
                    Ok(h) if h.cell_index < CELLS => {
                        handles[h.cell_index] = Some(h);
                        true
                    }
                    Ok(_) => true,
                    Err(_) => false,
                };
                let want = match model.iter().position(|&s| s == CellState::Free) {
                    Some(i) => {
                        model[i] = CellState::RequestPosted;
                        true
                    }
                    None => false,
                };
                (ok, want)
            } else {
                let (i, op) = ((a - 1) / 3, (a - 1) % 3);
                let ok = match op {
                    0 => ch.begin_service(i).is_ok(),
                    1 => ch.complete(i, Ok(vec![0; 4]), SimTime::ZERO).is_ok(),
                    _ => {
                        let h = handles[i].unwrap_or(TransferHandle { core_id: 0, cell_index: i, sequence_number: u64::MAX });
                        ch.collect(h).is_ok()
                    }
                };
                let (from, to) = match op {
                    0 => (CellState::RequestPosted, CellState::InService),
                    1 => (CellState::InService, CellState::ResponseReady),
                    _ => (CellState::ResponseReady, CellState::Free),
                };
                let want = model[i] == from;
                if want {
                    model[i] = to;
                }
                (ok, want)
            };
            ensure(ok == want, || format!("sequence {code}: action {a} accepted={ok}, expected {want}"))?;
            let after: Vec<CellState> = ch.cells().iter().map(|c| c.state).collect();
            for (b, s) in before.iter().zip(&after) {
                ensure(b == s || b.can_become(*s), || format!("sequence {code}: illegal {b:?} -> {s:?}"))?;
            }
            ensure(after[..] == model[..], || format!("sequence {code}: cells {after:?} vs model {model:?}"))?;
        }
        sequences += 1;
    }
    let mut ch = Channel::new(0);
    for i in 0..32 {
        ch.post(load(), SimTime::ZERO).map_err(|e| format!("request {}: {e:?}", i + 1))?;
    }
    let last = ch.post(load(), SimTime::ZERO);
    ensure(last == Err(TransportError::WouldBlock), || format!("33rd request gave {last:?}"))?;
    Ok(format!("{sequences} sequences explored, 33rd request WouldBlock"))
}

const VADD: &str = "\
def vadd(a: float[], b: float[]):
    out = [0.0] * 64
    i = 0
    while i < len(a):
        out[i % 64] = out[i % 64] + a[i] * b[i]
        i += 1
    return out
";

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let inputs = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kernel = inputs.path().join("vadd.py");
    let args = inputs.path().join("args.json");
    let config = inputs.path().join("jitter.toml");
    fs::write(&kernel, VADD).unwrap();
    fs::write(&args, r#"{"a": {"iota": 700}, "b": {"fill": 0.25, "len": 700}}"#).unwrap();
    fs::write(&config, "seed = 11\n[timing]\njitter = 0.4\n").unwrap();
    let (k, a, c) = (kernel.to_str().unwrap(), args.to_str().unwrap(), config.to_str().unwrap());
    let invocations: Vec<Vec<&str>> = vec![
        vec!["--config", c, "run", k, a, "--cores", "4", "--prefetch", "a:32:8:16:readonly", "--kind", "b=Shared"],
        vec!["--config", c, "run", k, a, "--strategy", "ondemand"],
        vec!["--config", c, "bench", "transfer", "--repetitions", "20"],
        vec!["--config", c, "bench", "ml"],
        vec!["--seed", "3", "bench", "fullsize", "--pixels", "20000"],
        vec!["timing", "show"],
    ];
    let mut files = 0;
    for argv in &invocations {
        let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
            .map(|_| -> Result<_, String> {
                let out = tempfile::tempdir().map_err(|e| e.to_string())?;
                let status = Command::new(env!("CARGO_BIN_EXE_mcoffload"))
                    .args(argv)
                    .args(["--out", out.path().to_str().unwrap(), "--format", "both"])
                    .output()
                    .map_err(|e| e.to_string())?;
                ensure(status.status.success(), || {
                    format!("{argv:?} failed: {}", String::from_utf8_lossy(&status.stderr))
                })?;
                Ok(read_tree(out.path()))
            })
            .collect::<Result<_, _>>()?;
        ensure(!runs[0].is_empty(), || format!("{argv:?} wrote no reports"))?;
        ensure(runs[0] == runs[1], || format!("{argv:?} reports differ between runs"))?;
        files += runs[0].len();
    }
    Ok(format!("{} invocations, {files} report files byte-identical across repeats", invocations.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("strategy equivalence", strategy_equivalence),
        ("request-count law", request_count_law),
        ("timing-model fit", timing_fit),
        ("prefetch crossover", crossover),
        ("ML speedup direction", ml_speedup),
        ("arbitrarily large data", arbitrarily_large),
        ("memory model", memory_model),
        ("transport state machine", transport_model),
        ("CLI determinism", determinism),
    ];
    // Independent checks; run them side by side and report in order.
    let results: Vec<Outcome> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(f)).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("panicked".into()))).collect()
    });
    let mut failed = 0;
    for (n, ((name, _), r)) in criteria.iter().zip(&results).enumerate() {
        match r {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {why}", n + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
