use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcoffload::device::CoreConfig;
use mcoffload::host::{ArgBinding, CoreResult, OffloadInvocation, Runtime, RuntimeConfig};
use mcoffload::kernel::{evaluate_on_host, parse_kernel, HostArg};
use mcoffload::model::{AccessMode, AccessStrategy, Array, MemoryKindId, PrefetchSpec, Scalar};
use mcoffload::timing::TimingModel;
use mcoffload::transport::RequestKind;

const REGION: usize = 16;

fn assert_within_budget(results: &[CoreResult], budget: usize) {
    for r in results {
        assert!(r.stats.peak_live_bytes <= budget, "core {} peaked at {}", r.core_id, r.stats.peak_live_bytes);
    }
}

/// A random straight-line program of stores and loads inside the core's
/// own region, with the region offsets of its stores in program order.
fn store_program(rng: &mut ChaCha8Rng) -> (String, Vec<usize>) {
    let mut src = format!("def prog(a: int[]):\n    b = core_id() * {REGION}\n    t = 0\n");
    let mut writes = Vec::new();
    for _ in 0..rng.gen_range(1..=12) {
        match rng.gen_range(0..4) {
            0 => {
                let o = rng.gen_range(0..REGION);
                src += &format!("    t = a[b + {o}]\n");
            }
            1 => {
                let (o, k) = (rng.gen_range(0..REGION), rng.gen_range(-50..50));
                src += &format!("    a[b + {o}] = t + {k}\n");
                writes.push(o);
            }
            2 => {
                let (n, step, k) = (rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(0..9));
                src += &format!(
                    "    i = 0\n    while i < {n}:\n        a[b + (i * {step}) % {REGION}] = i * {k} + t\n        i += 1\n"
                );
                writes.extend((0..n).map(|i| (i * step) % REGION));
            }
            _ => {
                let o = rng.gen_range(0..REGION);
                let v = rng.gen_range(-1000..1000);
                src += &format!("    a[b + {o}] = {v}\n");
                writes.push(o);
            }
        }
    }
    src += "    return t\n";
    (src, writes)
}

#[test]
fn per_core_stores_are_serviced_in_program_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1f0);
    let core = CoreConfig::default();
    for trial in 0..1000 {
        let cores = rng.gen_range(1..=4);
        let (src, writes) = store_program(&mut rng);
        let program = parse_kernel(&src).unwrap();
        let initial = Array::Int((0..(cores * REGION) as i32).collect());
        let strategy = if rng.gen_bool(0.5) {
            AccessStrategy::OnDemand
        } else {
            let buffer = rng.gen_range(1..=REGION);
            let chunk = rng.gen_range(1..=buffer);
            let distance = rng.gen_range(1..=buffer);
            AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", buffer, chunk, distance, AccessMode::Mutable)])
        };
        let mut config = RuntimeConfig::uniform(cores, core.clone(), TimingModel::epiphany());
        config.timing.jitter = if rng.gen_bool(0.5) { 0.5 } else { 0.0 };
        config.jitter_seed = trial;
        let mut rt = Runtime::new(config).unwrap();
        let a = rt.allocate_with(MemoryKindId::Host, &initial).unwrap();
        let out = rt.offload(OffloadInvocation::new(program.clone(), vec![ArgBinding::Ref(a)], strategy)).unwrap();
        assert_within_budget(&out, core.data_budget_bytes);

        for c in 0..cores {
            let stores: Vec<_> = rt
                .log()
                .iter()
                .filter(|e| e.kind == RequestKind::Store && e.core_id == c && e.reference_id == a.id)
                .collect();
            let offsets: Vec<usize> = stores.iter().map(|e| e.offset - c * REGION).collect();
            assert_eq!(offsets, writes, "trial {trial} core {c}\n{src}");
            assert!(stores.windows(2).all(|w| w[0].sequence < w[1].sequence));
        }

        let mut host = vec![HostArg::Array(initial)];
        for c in 0..cores {
            evaluate_on_host(&program, &mut host, c, cores).unwrap();
        }
        match &host[0] {
            HostArg::Array(want) => assert_eq!(&rt.peek(&a).unwrap(), want, "trial {trial}\n{src}"),
            HostArg::Scalar(_) => unreachable!(),
        }
    }
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

const RACE_FLOAT: &str = "\
def race(a: float[], v: float, delay: int):
    i = 0
    while i < delay:
        i += 1
    a[0] = v
    a[len(a) - 1] = v
    return v
";

#[test]
fn concurrent_writes_to_one_element_never_tear() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7ea2);
    let ints = parse_kernel(RACE).unwrap();
    let floats = parse_kernel(RACE_FLOAT).unwrap();
    let mut winners = BTreeSet::new();
    for trial in 0..1000 {
        let k = 4;
        let float = rng.gen_bool(0.5);
        let values: Vec<Scalar> = (0..k)
            .map(|_| {
                let bits: u32 = rng.gen();
                if float {
                    Scalar::Float(f32::from_bits(bits & 0x7f7f_ffff))
                } else {
                    Scalar::Int(bits as i32)
                }
            })
            .collect();
        let delays: Vec<ArgBinding> =
            (0..k).map(|_| ArgBinding::Scalar(Scalar::Int(rng.gen_range(0..40)))).collect();
        let mut config = RuntimeConfig::uniform(k, CoreConfig::default(), TimingModel::epiphany());
        config.timing.jitter = rng.gen_range(0.0..1.0);
        config.jitter_seed = trial;
        let mut rt = Runtime::new(config).unwrap();
        let len = rng.gen_range(1..300);
        let init = if float { Array::Float(vec![0.0; len]) } else { Array::Int(vec![0; len]) };
        let a = rt.allocate_with(MemoryKindId::Host, &init).unwrap();
        let strategy = match rng.gen_range(0..3) {
            0 => AccessStrategy::OnDemand,
            1 => AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", 8, 4, 4, AccessMode::Mutable)]),
            _ => AccessStrategy::EagerCopy,
        };
        let args = vec![
            ArgBinding::Ref(a),
            ArgBinding::PerCore(values.iter().map(|v| ArgBinding::Scalar(*v)).collect()),
            ArgBinding::PerCore(delays),
        ];
        let program = if float { floats.clone() } else { ints.clone() };
        let out = rt.offload(OffloadInvocation::new(program, args, strategy)).unwrap();
        assert_within_budget(&out, 8192);
        let after = rt.peek(&a).unwrap();
        for index in [0, len - 1] {
            let got = after.get(index).unwrap();
            let who = values.iter().position(|v| *v == got);
            assert!(who.is_some(), "trial {trial}: element {index} = {got:?} is not one of {values:?}");
            winners.insert(who.unwrap());
        }
    }
    assert!(winners.len() > 1, "the same core always won");
}
