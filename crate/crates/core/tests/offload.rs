use mcoffload::device::CoreConfig;
use mcoffload::host::{ArgBinding, OffloadError, OffloadInvocation, Runtime, RuntimeConfig};
use mcoffload::kernel::{parse_kernel, KernelValue, Trap};
use mcoffload::model::{AccessMode, AccessStrategy, Array, ElemType, MemoryKindId, PrefetchSpec, Scalar};
use mcoffload::timing::TimingModel;
use mcoffload::transport::RequestKind;

const SUM: &str = "\
def mykernel(a: int[], b: int[]):
    ret_data = [0] * len(a)
    i = 0
    while i < len(a):
        ret_data[i] = a[i] + b[i]
        i += 1
    return ret_data
";

fn runtime(cores: usize) -> Runtime {
    Runtime::new(RuntimeConfig::uniform(cores, CoreConfig::default(), TimingModel::epiphany())).unwrap()
}

fn ints(v: impl IntoIterator<Item = i32>) -> Array {
    Array::Int(v.into_iter().collect())
}

fn sum_setup(rt: &mut Runtime, n: i32, kind: MemoryKindId) -> Vec<ArgBinding> {
    let a = rt.allocate_with(kind.clone(), &ints(0..n)).unwrap();
    let b = rt.allocate_with(kind, &ints((0..n).map(|x| 3 * x))).unwrap();
    vec![ArgBinding::Ref(a), ArgBinding::Ref(b)]
}

fn expected_sum(n: i32) -> KernelValue {
    KernelValue::Array(ints((0..n).map(|x| 4 * x)))
}

#[test]
fn sum_on_sixteen_cores_gives_sixteen_identical_results() {
    let mut rt = runtime(16);
    let args = sum_setup(&mut rt, 50, MemoryKindId::Host);
    let p = parse_kernel(SUM).unwrap();
    let out = rt.offload(OffloadInvocation::new(p, args, AccessStrategy::OnDemand)).unwrap();
    assert_eq!(out.len(), 16);
    for (i, r) in out.iter().enumerate() {
        assert_eq!(r.core_id, i);
        assert_eq!(r.value.as_ref(), Some(&expected_sum(50)));
    }
}

#[test]
fn subset_dispatch_runs_one_core() {
    let mut rt = runtime(4);
    let args = sum_setup(&mut rt, 10, MemoryKindId::Host);
    let p = parse_kernel(SUM).unwrap();
    let out = rt.offload(OffloadInvocation::new(p, args, AccessStrategy::OnDemand).on_cores(vec![2])).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].core_id, 2);
}

#[test]
fn on_demand_and_prefetch_request_counts() {
    let mut rt = runtime(1);
    let args = sum_setup(&mut rt, 1000, MemoryKindId::Host);
    let p = parse_kernel(SUM).unwrap();
    let od = rt.offload(OffloadInvocation::new(p.clone(), args.clone(), AccessStrategy::OnDemand)).unwrap();
    assert_eq!(od[0].value.as_ref(), Some(&expected_sum(1000)));
    assert_eq!(od[0].stats.loads, 2000);

    let specs = vec![
        PrefetchSpec::new("a", 10, 2, 10, AccessMode::ReadOnly),
        PrefetchSpec::new("b", 10, 2, 10, AccessMode::ReadOnly),
    ];
    let pf = rt.offload(OffloadInvocation::new(p, args, AccessStrategy::Prefetch(specs))).unwrap();
    assert_eq!(pf[0].value.as_ref(), Some(&expected_sum(1000)));
    assert_eq!(pf[0].stats.loads, 1000);
    assert!(pf[0].stats.total_ms < od[0].stats.total_ms);
}

#[test]
fn eager_copy_over_budget_is_rejected() {
    let mut rt = runtime(1);
    let args = sum_setup(&mut rt, 1024, MemoryKindId::Host);
    let p = parse_kernel(SUM).unwrap();
    let err = rt.offload(OffloadInvocation::new(p, args, AccessStrategy::EagerCopy)).unwrap_err();
    assert!(matches!(err, OffloadError::BudgetExceeded(_)), "{err:?}");
}

#[test]
fn eager_copy_that_fits_matches() {
    let mut rt = runtime(2);
    let args = sum_setup(&mut rt, 100, MemoryKindId::Shared);
    let p = parse_kernel(SUM).unwrap();
    let out = rt.offload(OffloadInvocation::new(p, args, AccessStrategy::EagerCopy)).unwrap();
    assert_eq!(out[1].value.as_ref(), Some(&expected_sum(100)));
    assert_eq!(out[1].stats.loads, 2);
    assert_eq!(out[1].stats.bytes_in, 800);
}

#[test]
fn writes_reach_home_and_read_only_traps() {
    let src = "def k(a: float[]):\n    i = 0\n    while i < len(a):\n        a[i] = a[i] * 2.0\n        i += 1\n";
    let p = parse_kernel(src).unwrap();
    let mut rt = runtime(1);
    let a = rt.allocate_with(MemoryKindId::Host, &Array::Float(vec![1.0, 2.5, -3.0])).unwrap();
    let out = rt
        .offload(OffloadInvocation::new(p.clone(), vec![ArgBinding::Ref(a)], AccessStrategy::OnDemand))
        .unwrap();
    assert_eq!(out[0].value, None);
    assert_eq!(out[0].stats.stores, 3);
    assert_eq!(rt.read(&a).unwrap(), Array::Float(vec![2.0, 5.0, -6.0]));

    let ro = AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", 4, 2, 2, AccessMode::ReadOnly)]);
    let err = rt.offload(OffloadInvocation::new(p, vec![ArgBinding::Ref(a)], ro)).unwrap_err();
    assert_eq!(err, OffloadError::Trap { core: 0, trap: Trap::ReadOnlyViolation("a".into()) });
    assert_eq!(rt.read(&a).unwrap(), Array::Float(vec![2.0, 5.0, -6.0]));
}

#[test]
fn resident_variable_is_read_without_host_loads() {
    let src = "def k(a: float[]):\n    s = 0.0\n    i = 0\n    while i < len(a):\n        s += a[i]\n        i += 1\n    return s\n";
    let p = parse_kernel(src).unwrap();
    let mut rt = runtime(4);
    let r = rt.define_on_device(3, ElemType::Float32, 100).unwrap();
    rt.copy_to_device(&r, &Array::Float((0..100).map(|x| x as f32).collect())).unwrap();
    rt.clear_log();
    let out = rt
        .offload(OffloadInvocation::new(p, vec![ArgBinding::Ref(r)], AccessStrategy::OnDemand).on_cores(vec![3]))
        .unwrap();
    assert_eq!(out[0].value, Some(KernelValue::Scalar(Scalar::Float(4950.0))));
    assert!(rt.log().iter().all(|e| !(e.kind == RequestKind::Load && e.reference_id == r.id)));
    assert_eq!(out[0].stats.loads, 0);
}

#[test]
fn scalar_args_and_core_id() {
    let src = "def k(x: int):\n    y = x * 10 + core_id()\n    return y\n";
    let p = parse_kernel(src).unwrap();
    let mut rt = runtime(3);
    let out = rt
        .offload(OffloadInvocation::new(p, vec![ArgBinding::Scalar(Scalar::Int(7))], AccessStrategy::OnDemand))
        .unwrap();
    let got: Vec<_> = out.iter().map(|r| r.value.clone().unwrap()).collect();
    assert_eq!(
        got,
        (0..3).map(|c| KernelValue::Scalar(Scalar::Int(70 + c))).collect::<Vec<_>>()
    );
}

#[test]
fn trap_on_one_core_lets_others_finish() {
    let src = "def k(a: int[]):\n    y = 10 / (core_id() - 1)\n    a[core_id()] = y\n    return y\n";
    let p = parse_kernel(src).unwrap();
    let mut rt = runtime(3);
    let a = rt.allocate_with(MemoryKindId::Host, &ints([0, 0, 0])).unwrap();
    let err = rt.offload(OffloadInvocation::new(p, vec![ArgBinding::Ref(a)], AccessStrategy::OnDemand)).unwrap_err();
    assert_eq!(err, OffloadError::Trap { core: 1, trap: Trap::DivByZero });
    assert_eq!(rt.read(&a).unwrap(), ints([-10, 0, 10]));
}

#[test]
fn prefetch_left_in_flight_does_not_leak_cells() {
    // Reads two elements and returns while the lookahead is still fetching.
    let src = "def k(a: int[]):\n    s = a[0] + a[1]\n    return s\n";
    let p = parse_kernel(src).unwrap();
    let mut rt = runtime(1);
    let a = rt.allocate_with(MemoryKindId::Host, &ints(0..100)).unwrap();
    let spec = AccessStrategy::Prefetch(vec![PrefetchSpec::new("a", 8, 2, 8, AccessMode::ReadOnly)]);
    for _ in 0..40 {
        let out = rt.offload(OffloadInvocation::new(p.clone(), vec![ArgBinding::Ref(a)], spec.clone())).unwrap();
        assert_eq!(out[0].value, Some(KernelValue::Scalar(Scalar::Int(1))));
        assert_eq!(rt.link().channel(0).busy_cells(), 0);
    }
}

#[test]
fn returning_an_external_array_fetches_it() {
    let src = "def k(a: int[]):\n    a[1] = 7\n    return a\n";
    let p = parse_kernel(src).unwrap();
    for strategy in [AccessStrategy::OnDemand, AccessStrategy::EagerCopy] {
        let mut rt = runtime(1);
        let a = rt.allocate_with(MemoryKindId::Shared, &ints(0..4)).unwrap();
        let out = rt.offload(OffloadInvocation::new(p.clone(), vec![ArgBinding::Ref(a)], strategy)).unwrap();
        assert_eq!(out[0].value, Some(KernelValue::Array(ints([0, 7, 2, 3]))));
    }
}
