//! Seeded random kernels with inputs, and a checker that runs one of them
//! on the simulated cores and compares against [`evaluate_on_host`].
//!
//! Kernels come from a handful of templates (element-wise maps, reductions,
//! gathers, strided in-place updates, nested loops, row blocks) whose
//! expressions are generated at random. Kernels that write an array
//! parameter only touch indices `core_id, core_id + num_cores, ...`, so the
//! host oracle can run the cores one after another.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device::CoreConfig;
use crate::host::{ArgBinding, OffloadError, OffloadInvocation, Runtime, RuntimeConfig};
use crate::kernel::{evaluate_on_host, parse_kernel, HostArg, KernelProgram, KernelValue};
use crate::model::{AccessMode, AccessStrategy, Array, ElemType, MemoryKindId, PrefetchSpec, Scalar};
use crate::timing::TimingModel;

#[derive(Debug, Clone)]
pub struct Case {
    pub seed: u64,
    pub template: &'static str,
    pub source: String,
    pub program: KernelProgram,
    pub args: Vec<HostArg>,
    pub cores: usize,
    /// Memory kind every array argument is allocated in.
    pub kind: MemoryKindId,
    /// Array parameters the kernel writes.
    pub written: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Matched,
    /// Eager copy was rejected because the arguments do not fit.
    DidNotFit,
}

const TEMPLATES: [&str; 8] = ["map", "reduce", "strided", "gather", "scan", "rows", "pairs", "rewrite"];

/// Builds the case for `seed`. The same seed always gives the same case.
pub fn generate(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let ty = if rng.gen_bool(0.5) { ElemType::Int32 } else { ElemType::Float32 };
    let cores = rng.gen_range(1..=4);
    let kind = if rng.gen_bool(0.7) { MemoryKindId::Host } else { MemoryKindId::Shared };
    let t = ty_name(ty);
    let z = zero(ty);
    let mut g = ExprGen { rng: &mut rng, ty };
    let (source, args, written) = match template {
        "map" => {
            let n = g.rng.gen_range(0..=200);
            let e = g.expr(&["a[i]", "b[i]", "i"], 3);
            let src = format!(
                "def map_kernel(a: {t}[], b: {t}[]):\n    out = [{z}] * len(a)\n    i = 0\n    while i < len(a):\n        out[i] = {e}\n        i += 1\n    return out\n"
            );
            let a = g.array(n);
            let b = g.array(n);
            (src, vec![a, b], vec![])
        }
        "reduce" => {
            let n = g.rng.gen_range(0..=250);
            let e = g.expr(&["a[i]", "b[i]", "s", "i"], 3);
            let src = format!(
                "def reduce_kernel(a: {t}[], b: {t}[]):\n    s = {z}\n    i = 0\n    while i < len(a):\n        s = s + {e}\n        i += 1\n    return s\n"
            );
            let a = g.array(n);
            let b = g.array(n);
            (src, vec![a, b], vec![])
        }
        "strided" => {
            let n = g.rng.gen_range(0..=200);
            let e = g.expr(&["a[i]", "b[i]", "c", "i"], 3);
            let src = format!(
                "def strided_kernel(a: {t}[], b: {t}[], c: {t}):\n    count = 0\n    i = core_id()\n    while i < len(a):\n        a[i] = {e}\n        count += 1\n        i += num_cores()\n    return count\n"
            );
            let a = g.array(n);
            let b = g.array(n);
            let c = g.scalar();
            (src, vec![a, b, c], vec!["a".to_string()])
        }
        "gather" => {
            let n = g.rng.gen_range(1..=150);
            let m = g.rng.gen_range(0..=150);
            let e = g.expr(&["a[idx[i]]", "a[i % len(a)]", "i"], 2);
            let src = format!(
                "def gather_kernel(a: {t}[], idx: int[]):\n    out = [{z}] * len(idx)\n    i = 0\n    while i < len(idx):\n        out[i] = {e}\n        i += 1\n    return out\n"
            );
            let a = g.array(n);
            let idx = HostArg::Array(Array::Int((0..m).map(|_| g.rng.gen_range(0..n as i32)).collect()));
            (src, vec![a, idx], vec![])
        }
        "scan" => {
            let n = g.rng.gen_range(1..=250);
            let step = g.rng.gen_range(1..=7);
            let e = g.expr(&["a[(i * s) % n]", "a[n - 1 - i]", "acc"], 2);
            let src = format!(
                "def scan_kernel(a: {t}[], s: int):\n    n = len(a)\n    acc = {z}\n    i = 0\n    while i < n:\n        acc = {e}\n        i += 1\n    return acc\n"
            );
            let a = g.array(n);
            (src, vec![a, HostArg::Scalar(Scalar::Int(step))], vec![])
        }
        "rows" => {
            let rows = g.rng.gen_range(1..=6);
            let cols = g.rng.gen_range(1..=40);
            let src = format!(
                "def rows_kernel(m: {t}[], x: {t}[], rows: int):\n    cols = len(x)\n    out = [{z}] * rows\n    r = 0\n    while r < rows:\n        row = core_id() * rows + r\n        acc = {z}\n        j = 0\n        while j < cols:\n            acc = acc + m[row * cols + j] * x[j]\n            j += 1\n        out[r] = acc\n        r += 1\n    return out\n"
            );
            let m = g.array(cores * rows * cols);
            let x = g.array(cols);
            (src, vec![m, x, HostArg::Scalar(Scalar::Int(rows as i32))], vec![])
        }
        "pairs" => {
            let n = g.rng.gen_range(0..=40);
            let src = format!(
                "def pairs_kernel(a: {t}[]):\n    c = 0\n    i = 0\n    while i < len(a):\n        j = 0\n        while j < i:\n            c = c + (a[j] < a[i])\n            j += 1\n        i += 1\n    return c\n"
            );
            let a = g.array(n);
            (src, vec![a], vec![])
        }
        _ => {
            let n = g.rng.gen_range(0..=160);
            let e1 = g.expr(&["a[i]", "i"], 2);
            let e2 = g.expr(&["a[i]", "i"], 2);
            let src = format!(
                "def rewrite_kernel(a: {t}[]):\n    i = core_id()\n    while i < len(a):\n        a[i] = {e1}\n        a[i] = {e2}\n        i += num_cores()\n    s = {z}\n    i = core_id()\n    while i < len(a):\n        s = s + a[i]\n        i += num_cores()\n    return s\n"
            );
            let a = g.array(n);
            (src, vec![a], vec!["a".to_string()])
        }
    };
    let program = parse_kernel(&source).unwrap_or_else(|e| panic!("corpus kernel does not parse: {e}\n{source}"));
    Case {
        seed,
        template,
        source,
        program,
        args,
        cores,
        kind,
        written,
    }
}

/// Eager copy, on-demand, then `prefetch` randomly drawn prefetch strategies.
/// Written arrays always get mutable buffers; each drawn strategy covers a
/// random non-empty subset of the array parameters.
pub fn sample_strategies(case: &Case, seed: u64, prefetch: usize) -> Vec<AccessStrategy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrays: Vec<&str> = case.program.array_params().map(|(_, p)| p.name.as_str()).collect();
    let mut out = vec![AccessStrategy::EagerCopy, AccessStrategy::OnDemand];
    for _ in 0..prefetch {
        let mut names = arrays.clone();
        names.shuffle(&mut rng);
        let keep = rng.gen_range(1..=names.len());
        let specs = names[..keep]
            .iter()
            .map(|&name| {
                let buffer = rng.gen_range(1..=64);
                let chunk = rng.gen_range(1..=buffer);
                let distance = rng.gen_range(1..=2 * buffer);
                let mode = if case.written.iter().any(|w| w == name) || rng.gen_bool(0.3) {
                    AccessMode::Mutable
                } else {
                    AccessMode::ReadOnly
                };
                PrefetchSpec::new(name, buffer, chunk, distance, mode)
            })
            .collect();
        out.push(AccessStrategy::Prefetch(specs));
    }
    out
}

/// Per-core return values and final argument arrays from the host oracle.
pub fn oracle(case: &Case) -> Result<(Vec<Option<KernelValue>>, Vec<HostArg>), String> {
    let mut args = case.args.clone();
    let mut values = Vec::with_capacity(case.cores);
    for core in 0..case.cores {
        let v = evaluate_on_host(&case.program, &mut args, core, case.cores).map_err(|e| format!("oracle: {e}"))?;
        values.push(v);
    }
    Ok((values, args))
}

/// Runs `case` under `strategy` on a fresh runtime and compares every core's
/// return value and every array argument's final contents with the oracle.
pub fn check(case: &Case, strategy: &AccessStrategy, core: &CoreConfig, timing: &TimingModel) -> Result<Verdict, String> {
    let (want_values, want_args) = oracle(case)?;
    let mut rt = Runtime::new(RuntimeConfig::uniform(case.cores, core.clone(), timing.clone()))
        .map_err(|e| e.to_string())?;
    let mut bindings = Vec::with_capacity(case.args.len());
    let mut refs = Vec::new();
    for arg in &case.args {
        match arg {
            HostArg::Scalar(s) => bindings.push(ArgBinding::Scalar(*s)),
            HostArg::Array(a) => {
                let r = rt.allocate_with(case.kind.clone(), a).map_err(|e| e.to_string())?;
                refs.push((bindings.len(), r));
                bindings.push(ArgBinding::Ref(r));
            }
        }
    }
    let results = match rt.offload(OffloadInvocation::new(case.program.clone(), bindings, strategy.clone())) {
        Ok(r) => r,
        Err(OffloadError::BudgetExceeded(_)) if *strategy == AccessStrategy::EagerCopy => return Ok(Verdict::DidNotFit),
        Err(e) => return Err(format!("{}: {e}", strategy.label())),
    };
    for (r, want) in results.iter().zip(&want_values) {
        if &r.value != want {
            return Err(format!(
                "{}: core {} returned {:?}, oracle {:?}",
                strategy.label(),
                r.core_id,
                r.value,
                want
            ));
        }
    }
    for (pos, r) in refs {
        let got = rt.peek(&r).map_err(|e| e.to_string())?;
        match &want_args[pos] {
            HostArg::Array(want) if *want == got => {}
            _ => return Err(format!("{}: argument {pos} differs after the kernel", strategy.label())),
        }
    }
    Ok(Verdict::Matched)
}

struct ExprGen<'a> {
    rng: &'a mut ChaCha8Rng,
    ty: ElemType,
}

impl ExprGen<'_> {
    /// Random expression of the case's element type over `terms`. A term
    /// `i` stands for the loop counter and is cast when the type is float.
    fn expr(&mut self, terms: &[&str], depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.leaf(terms);
        }
        let a = self.expr(terms, depth - 1);
        let b = self.expr(terms, depth - 1);
        match self.rng.gen_range(0..8) {
            0 | 1 => format!("({a} + {b})"),
            2 => format!("({a} - {b})"),
            3 | 4 => format!("({a} * {b})"),
            5 => format!("-({a})"),
            6 => match self.ty {
                ElemType::Int32 => format!("({a} % {})", self.rng.gen_range(1..=17)),
                ElemType::Float32 => format!("({a} / {})", self.float_literal_nonzero()),
            },
            _ => {
                let cmp = ["<", "<=", ">", ">=", "==", "!="][self.rng.gen_range(0..6)];
                match self.ty {
                    ElemType::Int32 => format!("({a} {cmp} {b})"),
                    ElemType::Float32 => format!("float({a} {cmp} {b})"),
                }
            }
        }
    }

    fn leaf(&mut self, terms: &[&str]) -> String {
        if self.rng.gen_bool(0.25) {
            return match self.ty {
                ElemType::Int32 => self.rng.gen_range(0..=50).to_string(),
                ElemType::Float32 => self.float_literal(),
            };
        }
        let t = terms[self.rng.gen_range(0..terms.len())];
        match (t, self.ty) {
            ("i", ElemType::Float32) => "float(i)".to_string(),
            _ => t.to_string(),
        }
    }

    fn float_literal(&mut self) -> String {
        format!("{}.{}", self.rng.gen_range(0..8), [0, 25, 5, 75][self.rng.gen_range(0..4)])
    }

    fn float_literal_nonzero(&mut self) -> String {
        format!("{}.{}", self.rng.gen_range(1..8), [0, 25, 5, 75][self.rng.gen_range(0..4)])
    }

    fn array(&mut self, n: usize) -> HostArg {
        HostArg::Array(match self.ty {
            ElemType::Int32 => Array::Int((0..n).map(|_| self.rng.gen_range(-1000..=1000)).collect()),
            ElemType::Float32 => Array::Float((0..n).map(|_| self.rng.gen_range(-4.0f32..4.0)).collect()),
        })
    }

    fn scalar(&mut self) -> HostArg {
        HostArg::Scalar(match self.ty {
            ElemType::Int32 => Scalar::Int(self.rng.gen_range(-100..=100)),
            ElemType::Float32 => Scalar::Float(self.rng.gen_range(-2.0f32..2.0)),
        })
    }
}

fn ty_name(ty: ElemType) -> &'static str {
    match ty {
        ElemType::Int32 => "int",
        ElemType::Float32 => "float",
    }
}

fn zero(ty: ElemType) -> &'static str {
    match ty {
        ElemType::Int32 => "0",
        ElemType::Float32 => "0.0",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_appears_and_parses() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let case = generate(seed);
            seen.insert(case.template);
            oracle(&case).unwrap();
        }
        assert_eq!(seen.len(), TEMPLATES.len());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(17).source, generate(17).source);
        assert_eq!(sample_strategies(&generate(17), 3, 4), sample_strategies(&generate(17), 3, 4));
    }
}
