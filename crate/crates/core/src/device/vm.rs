//! Resumable kernel interpreter for one core.
//!
//! [`CoreVm::run`] executes until the kernel finishes or needs a response
//! the host has not produced yet. In the latter case it returns
//! [`VmStatus::Blocked`]; calling `run` again after the host has serviced
//! the core picks up the same wait and re-executes the blocked instruction.

use std::cell::RefCell;
use std::rc::Rc;

use super::bytecode::{ArraySource, CompiledKernel, Op};
use super::fetch::{InFlight, LruPool, PrefetchBuffer};
use super::{BudgetExceeded, CoreConfig, ExecutionStats, LocalStore};
use crate::host::kinds::LocalData;
use crate::host::link::{Drive, Link, WaitMode};
use crate::kernel::{ops, BinOp, KernelValue, Trap};
use crate::model::{
    bits_to_bytes, bytes_to_bits, validate_prefetch_spec, AccessMode, AccessStrategy, Array, PrefetchError, Reference,
    Scalar,
};
use crate::timing::SimTime;
use crate::transport::{RequestKind, TransferHandle, TransportError};

/// What a core receives for one kernel parameter.
#[derive(Debug, Clone)]
pub enum ArgValue {
    Scalar(Scalar),
    /// Data already resident in this core's local store.
    Resident(Reference, LocalData),
    /// Data elsewhere in the hierarchy, reached through the transport.
    External(Reference),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VmStatus {
    Blocked,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SetupError {
    #[error(transparent)]
    Budget(#[from] BudgetExceeded),
    #[error(transparent)]
    Prefetch(#[from] PrefetchError),
    #[error("trap while sizing local arrays: {0}")]
    Trap(Trap),
}

#[derive(Debug, Clone)]
enum Binding {
    /// In local memory. `home` is set for eager copies, whose writes are
    /// also stored back to the original variable.
    Local { data: LocalData, home: Option<Reference> },
    External { reference: Reference, read_only: bool, buffer: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Launch,
    Eager(u16),
    PoolFill { slot: u16, index: usize },
    Prefetch(usize),
    Store,
    ReturnFetch(u16),
    /// A prefetch still in flight when the kernel returned; its data is dropped.
    Drain(usize),
    Return,
}

#[derive(Debug, Clone, Copy)]
struct Wait {
    handle: TransferHandle,
    mode: WaitMode,
    purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Launch,
    Eager(usize),
    Run,
    Draining,
    Returning,
    Finished,
}

enum Exec {
    Blocked,
    Returned,
}

pub struct CoreVm {
    kernel: Rc<CompiledKernel>,
    core: usize,
    core_count: usize,
    instr_time: SimTime,
    launch_words: usize,
    pc: usize,
    stack: Vec<u32>,
    scalars: Vec<u32>,
    arrays: Vec<Binding>,
    buffers: Vec<PrefetchBuffer>,
    pool: Option<LruPool>,
    store: LocalStore,
    eager: Vec<u16>,
    phase: Phase,
    wait: Option<Wait>,
    pending_instr: u64,
    stall: SimTime,
    start: SimTime,
    polls_at_start: u64,
    stats: ExecutionStats,
    result: Option<KernelValue>,
}

fn transport_trap(e: TransportError) -> Trap {
    match e {
        TransportError::UnknownReference(id) => Trap::UnknownReference(id),
        TransportError::ReadOnlyViolation(id) => Trap::ReadOnlyViolation(format!("reference {id}")),
        TransportError::OutOfBounds { reference, offset, count, length } => Trap::OutOfBounds {
            array: format!("reference {reference}"),
            index: (offset + count.saturating_sub(1)) as i64,
            length,
        },
        other => Trap::Transport(other.to_string()),
    }
}

/// Executes one side-effect-free stack op. Returns false for ops it does not handle.
#[inline]
fn pure_op(op: Op, stack: &mut Vec<u32>, flops: &mut u64) -> Result<bool, Trap> {
    let bin = |stack: &mut Vec<u32>| {
        let r = stack.pop().expect("stack");
        let l = stack.pop().expect("stack");
        (l, r)
    };
    let v = match op {
        Op::IAdd | Op::ISub | Op::IMul | Op::IDiv | Op::IRem => {
            let (l, r) = bin(stack);
            let o = match op {
                Op::IAdd => BinOp::Add,
                Op::ISub => BinOp::Sub,
                Op::IMul => BinOp::Mul,
                Op::IDiv => BinOp::Div,
                _ => BinOp::Rem,
            };
            ops::int(o, l as i32, r as i32)? as u32
        }
        Op::FAdd | Op::FSub | Op::FMul | Op::FDiv | Op::FRem => {
            let (l, r) = bin(stack);
            let o = match op {
                Op::FAdd => BinOp::Add,
                Op::FSub => BinOp::Sub,
                Op::FMul => BinOp::Mul,
                Op::FDiv => BinOp::Div,
                _ => BinOp::Rem,
            };
            *flops += 1;
            ops::float(o, f32::from_bits(l), f32::from_bits(r))?.to_bits()
        }
        Op::ICmp(c) => {
            let (l, r) = bin(stack);
            ops::cmp(c, l as i32, r as i32) as u32
        }
        Op::FCmp(c) => {
            let (l, r) = bin(stack);
            ops::cmp(c, f32::from_bits(l), f32::from_bits(r)) as u32
        }
        Op::INeg => (stack.pop().expect("stack") as i32).wrapping_neg() as u32,
        Op::FNeg => (-f32::from_bits(stack.pop().expect("stack"))).to_bits(),
        Op::IToF => ops::int_to_float(stack.pop().expect("stack") as i32).to_bits(),
        Op::FToI => ops::float_to_int(f32::from_bits(stack.pop().expect("stack"))) as u32,
        _ => return Ok(false),
    };
    stack.push(v);
    Ok(true)
}

impl CoreVm {
    /// Binds arguments and reserves local memory. `resident_bytes` is what
    /// device-resident variables already occupy on this core.
    pub fn new(
        kernel: Rc<CompiledKernel>,
        config: &CoreConfig,
        core_count: usize,
        args: &[ArgValue],
        strategy: &AccessStrategy,
        resident_bytes: usize,
    ) -> Result<Self, SetupError> {
        assert_eq!(args.len(), kernel.params.len(), "arguments checked by the host");
        let core = config.core_id;
        let mut store = LocalStore::new(core, config.data_budget_bytes);
        store.reserve(resident_bytes)?;
        store.reserve(4 * kernel.scalars.len())?;

        let mut scalars = vec![0u32; kernel.scalars.len()];
        for (s, slot) in kernel.scalars.iter().enumerate() {
            if let Some(p) = slot.param {
                match &args[p] {
                    ArgValue::Scalar(v) => scalars[s] = v.to_bits(),
                    _ => unreachable!("arguments checked by the host"),
                }
            }
        }

        let free = config.data_budget_bytes.saturating_sub(resident_bytes);
        let mut arrays: Vec<Binding> = Vec::with_capacity(kernel.arrays.len());
        let mut buffers = Vec::new();
        let mut eager = Vec::new();
        let mut needs_pool = false;
        let mut lengths: Vec<usize> = Vec::with_capacity(kernel.arrays.len());
        for (a, slot) in kernel.arrays.iter().enumerate() {
            let binding = match &slot.source {
                ArraySource::Param(p) => match &args[*p] {
                    ArgValue::Resident(r, data) => {
                        lengths.push(r.length);
                        Binding::Local { data: data.clone(), home: None }
                    }
                    ArgValue::External(r) => {
                        lengths.push(r.length);
                        match strategy {
                            AccessStrategy::EagerCopy => {
                                store.reserve(r.byte_len())?;
                                eager.push(a as u16);
                                Binding::Local {
                                    data: Rc::new(RefCell::new(vec![0; r.length])),
                                    home: Some(*r),
                                }
                            }
                            AccessStrategy::Prefetch(specs) => {
                                match specs.iter().find(|s| s.variable_name == slot.name) {
                                    Some(spec) => {
                                        let bytes = validate_prefetch_spec(spec, slot.elem_type, free)?;
                                        store.reserve(bytes)?;
                                        buffers.push(PrefetchBuffer::new(spec.clone(), r.length));
                                        Binding::External {
                                            reference: *r,
                                            read_only: spec.access_modifier == AccessMode::ReadOnly,
                                            buffer: Some(buffers.len() - 1),
                                        }
                                    }
                                    None => {
                                        needs_pool = true;
                                        Binding::External { reference: *r, read_only: false, buffer: None }
                                    }
                                }
                            }
                            AccessStrategy::OnDemand => {
                                needs_pool = true;
                                Binding::External { reference: *r, read_only: false, buffer: None }
                            }
                        }
                    }
                    ArgValue::Scalar(_) => unreachable!("arguments checked by the host"),
                },
                ArraySource::Local { length, fill } => {
                    let n = Self::eval_length(length, &scalars, &lengths, core, core_count).map_err(SetupError::Trap)?;
                    store.reserve(n * 4)?;
                    lengths.push(n);
                    Binding::Local { data: Rc::new(RefCell::new(vec![*fill; n])), home: None }
                }
            };
            arrays.push(binding);
        }
        let pool = if needs_pool {
            store.reserve(config.ondemand_pool_bytes)?;
            Some(LruPool::new(config.pool_elements()))
        } else {
            None
        };
        let launch_words = kernel.params.iter().map(|p| if p.is_array { 2 } else { 1 }).sum();

        Ok(Self {
            kernel,
            core,
            core_count,
            instr_time: config.instruction_time(),
            launch_words,
            pc: 0,
            stack: Vec::with_capacity(16),
            scalars,
            arrays,
            buffers,
            pool,
            stats: ExecutionStats {
                core_id: core,
                peak_live_bytes: store.peak(),
                ..Default::default()
            },
            store,
            eager,
            phase: Phase::Idle,
            wait: None,
            pending_instr: 0,
            stall: SimTime::ZERO,
            start: SimTime::ZERO,
            polls_at_start: 0,
            result: None,
        })
    }

    fn eval_length(
        code: &[Op],
        scalars: &[u32],
        lengths: &[usize],
        core: usize,
        core_count: usize,
    ) -> Result<usize, Trap> {
        let mut stack = Vec::new();
        let mut flops = 0;
        for &op in code {
            if pure_op(op, &mut stack, &mut flops)? {
                continue;
            }
            let v = match op {
                Op::Push(v) => v,
                Op::LoadScalar(s) => scalars[s as usize],
                Op::Len(a) => lengths[a as usize] as u32,
                Op::CoreId => core as u32,
                Op::CoreCount => core_count as u32,
                other => unreachable!("{other:?} in a length expression"),
            };
            stack.push(v);
        }
        let n = stack.pop().expect("length value") as i32;
        if n < 0 {
            return Err(Trap::NegativeLength(n as i64));
        }
        Ok(n as usize)
    }

    pub fn core_id(&self) -> usize {
        self.core
    }

    pub fn live_bytes(&self) -> usize {
        self.store.live()
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    pub fn stats(&self) -> &ExecutionStats {
        &self.stats
    }

    pub fn result(&self) -> Option<&KernelValue> {
        self.result.as_ref()
    }

    pub fn into_outcome(self) -> (Option<KernelValue>, ExecutionStats) {
        (self.result, self.stats)
    }

    /// The host launches the kernel at `at`; the launch message is the
    /// first thing the core waits for.
    pub fn start(&mut self, link: &mut Link, at: SimTime) -> Result<(), Trap> {
        assert_eq!(self.phase, Phase::Idle);
        let t = link.clock(self.core).max(at);
        link.set_clock(self.core, t);
        self.start = t;
        self.polls_at_start = link.polls(self.core);
        let words = self.launch_words;
        let handle = link
            .post_at(self.core, RequestKind::KernelCtl, 0, 0, words, vec![0; words * 4], false, t)
            .map_err(transport_trap)?;
        self.wait = Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::Launch });
        self.phase = Phase::Launch;
        Ok(())
    }

    fn flush(&mut self, link: &mut Link) {
        if self.pending_instr > 0 {
            link.advance(self.core, SimTime(self.instr_time.0 * self.pending_instr));
            self.stats.instructions += self.pending_instr;
            self.pending_instr = 0;
        }
        self.store.check();
    }

    fn post(
        &mut self,
        link: &mut Link,
        kind: RequestKind,
        reference: &Reference,
        offset: usize,
        count: usize,
        payload: Vec<u8>,
    ) -> Result<TransferHandle, Trap> {
        self.flush(link);
        let h = link.post(self.core, kind, reference.id, offset, count, payload).map_err(transport_trap)?;
        match kind {
            RequestKind::Load => self.stats.loads += 1,
            RequestKind::Store => self.stats.stores += 1,
            RequestKind::KernelCtl => {}
        }
        Ok(h)
    }

    /// Drives the current wait. Returns false if the host must run first.
    fn finish_wait(&mut self, link: &mut Link) -> Result<bool, Trap> {
        let w = self.wait.expect("a wait is pending");
        self.flush(link);
        let before = link.clock(self.core);
        let d = link.drive(w.handle, w.mode).map_err(transport_trap)?;
        self.stall += link.clock(self.core) - before;
        if d == Drive::NeedHost {
            return Ok(false);
        }
        self.wait = None;
        let bytes = link.collect(w.handle).map_err(transport_trap)?;
        match w.purpose {
            Purpose::Launch | Purpose::Return => {}
            Purpose::Store => self.stats.bytes_out += 4,
            Purpose::Eager(slot) => {
                self.stats.bytes_in += bytes.len() as u64;
                if let Binding::Local { data, .. } = &self.arrays[slot as usize] {
                    data.borrow_mut().copy_from_slice(&bytes_to_bits(&bytes));
                }
            }
            Purpose::PoolFill { slot, index } => {
                self.stats.bytes_in += bytes.len() as u64;
                let v = bytes_to_bits(&bytes)[0];
                self.pool.as_mut().expect("pool").insert(LruPool::key(slot, index), v);
            }
            Purpose::Prefetch(b) => {
                self.stats.bytes_in += bytes.len() as u64;
                let buf = &mut self.buffers[b];
                let f = buf.in_flight.take().expect("in flight");
                buf.accept(f.start, &bytes_to_bits(&bytes));
            }
            Purpose::Drain(b) => {
                self.stats.bytes_in += bytes.len() as u64;
                self.buffers[b].in_flight = None;
            }
            Purpose::ReturnFetch(slot) => {
                self.stats.bytes_in += bytes.len() as u64;
                let elem = self.kernel.arrays[slot as usize].elem_type;
                self.result = Some(KernelValue::Array(Array::from_bytes(elem, &bytes)));
            }
        }
        Ok(true)
    }

    /// Runs until finished or blocked on the host.
    pub fn run(&mut self, link: &mut Link) -> Result<VmStatus, Trap> {
        loop {
            if self.wait.is_some() && !self.finish_wait(link)? {
                return Ok(VmStatus::Blocked);
            }
            match self.phase {
                Phase::Idle => panic!("run before start"),
                Phase::Launch => self.phase = Phase::Eager(0),
                Phase::Eager(i) => {
                    if let Some(&slot) = self.eager.get(i) {
                        let r = match &self.arrays[slot as usize] {
                            Binding::Local { home: Some(r), .. } => *r,
                            _ => unreachable!("eager slot has a home"),
                        };
                        let handle = self.post(link, RequestKind::Load, &r, 0, r.length, Vec::new())?;
                        self.wait = Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::Eager(slot) });
                        self.phase = Phase::Eager(i + 1);
                    } else {
                        self.phase = Phase::Run;
                    }
                }
                Phase::Run => match self.exec(link)? {
                    Exec::Blocked => return Ok(VmStatus::Blocked),
                    Exec::Returned => self.phase = Phase::Draining,
                },
                Phase::Draining => {
                    // Cells must be free before the core reports completion.
                    match self.buffers.iter().position(|b| b.in_flight.is_some()) {
                        Some(b) => {
                            let handle = self.buffers[b].in_flight.expect("in flight").handle;
                            self.wait = Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::Drain(b) });
                        }
                        None => self.post_return(link)?,
                    }
                }
                Phase::Returning => {
                    self.flush(link);
                    self.finalize(link);
                    self.phase = Phase::Finished;
                    return Ok(VmStatus::Finished);
                }
                Phase::Finished => return Ok(VmStatus::Finished),
            }
        }
    }

    fn post_return(&mut self, link: &mut Link) -> Result<(), Trap> {
        let words = match &self.result {
            None => 0,
            Some(KernelValue::Scalar(_)) => 1,
            Some(KernelValue::Array(a)) => a.len(),
        };
        self.flush(link);
        let handle = link
            .post(self.core, RequestKind::KernelCtl, 0, 0, words, vec![0; words * 4])
            .map_err(transport_trap)?;
        self.wait = Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::Return });
        self.phase = Phase::Returning;
        Ok(())
    }

    fn finalize(&mut self, link: &Link) {
        let end = link.clock(self.core);
        self.stats.total_ms = (end - self.start).as_ms();
        self.stats.stall_ms = self.stall.as_ms();
        self.stats.polls = link.polls(self.core) - self.polls_at_start;
        self.stats.peak_live_bytes = self.store.peak();
    }

    fn check_index(&self, a: u16, raw: u32) -> Result<usize, Trap> {
        let i = raw as i32;
        let len = match &self.arrays[a as usize] {
            Binding::Local { data, .. } => data.borrow().len(),
            Binding::External { reference, .. } => reference.length,
        };
        if i < 0 || i as usize >= len {
            return Err(Trap::OutOfBounds {
                array: self.kernel.arrays[a as usize].name.clone(),
                index: i as i64,
                length: len,
            });
        }
        Ok(i as usize)
    }

    fn array_len(&self, a: u16) -> usize {
        match &self.arrays[a as usize] {
            Binding::Local { data, .. } => data.borrow().len(),
            Binding::External { reference, .. } => reference.length,
        }
    }

    fn advance_prefetch(&mut self, link: &mut Link, b: usize, reference: Reference) -> Result<(), Trap> {
        if let Some((start, count)) = self.buffers[b].wanted() {
            self.flush(link);
            match link.post(self.core, RequestKind::Load, reference.id, start, count, Vec::new()) {
                Ok(handle) => {
                    self.stats.loads += 1;
                    self.buffers[b].in_flight = Some(InFlight { handle, start, count });
                }
                Err(TransportError::WouldBlock) => {}
                Err(e) => return Err(transport_trap(e)),
            }
        }
        Ok(())
    }

    /// Reads element `i` of array slot `a`. `None` means the core blocked.
    fn read(&mut self, link: &mut Link, a: u16, i: usize) -> Result<Option<u32>, Trap> {
        loop {
            match self.arrays[a as usize].clone() {
                Binding::Local { data, .. } => return Ok(Some(data.borrow()[i])),
                Binding::External { reference, buffer: None, .. } => {
                    let key = LruPool::key(a, i);
                    if let Some(v) = self.pool.as_mut().expect("pool").get(key) {
                        return Ok(Some(v));
                    }
                    let handle = self.post(link, RequestKind::Load, &reference, i, 1, Vec::new())?;
                    self.wait = Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::PoolFill { slot: a, index: i } });
                    if !self.finish_wait(link)? {
                        return Ok(None);
                    }
                }
                Binding::External { reference, buffer: Some(b), .. } => {
                    if self.buffers[b].contains(i) {
                        let v = self.buffers[b].get(i);
                        self.buffers[b].cursor = i;
                        self.advance_prefetch(link, b, reference)?;
                        return Ok(Some(v));
                    }
                    let handle = match self.buffers[b].in_flight {
                        Some(f) => f.handle,
                        None => {
                            let buf = &mut self.buffers[b];
                            if i != buf.frontier() {
                                buf.restart(i);
                            }
                            let (start, count) = buf.chunk_at(i);
                            let handle = self.post(link, RequestKind::Load, &reference, start, count, Vec::new())?;
                            self.buffers[b].in_flight = Some(InFlight { handle, start, count });
                            handle
                        }
                    };
                    self.wait = Some(Wait { handle, mode: WaitMode::Polling, purpose: Purpose::Prefetch(b) });
                    if !self.finish_wait(link)? {
                        return Ok(None);
                    }
                }
            }
        }
    }

    /// Writes element `i`; returns true if a store is now awaiting its acknowledgement.
    fn write(&mut self, link: &mut Link, a: u16, i: usize, v: u32) -> Result<bool, Trap> {
        let home = match &self.arrays[a as usize] {
            Binding::Local { data, home } => {
                data.borrow_mut()[i] = v;
                match home {
                    Some(r) => *r,
                    None => return Ok(false),
                }
            }
            Binding::External { read_only: true, .. } => {
                return Err(Trap::ReadOnlyViolation(self.kernel.arrays[a as usize].name.clone()))
            }
            Binding::External { reference, buffer, .. } => {
                let r = *reference;
                match buffer {
                    Some(b) => self.buffers[*b].write(i, v),
                    None => {
                        self.pool.as_mut().expect("pool").update(LruPool::key(a, i), v);
                    }
                }
                r
            }
        };
        let handle = self.post(link, RequestKind::Store, &home, i, 1, bits_to_bytes(&[v]))?;
        self.wait = Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::Store });
        Ok(true)
    }

    fn exec(&mut self, link: &mut Link) -> Result<Exec, Trap> {
        let kernel = self.kernel.clone();
        let code = &kernel.code;
        loop {
            let op = code[self.pc];
            if pure_op(op, &mut self.stack, &mut self.stats.flops)? {
                self.pc += 1;
                self.pending_instr += 1;
                continue;
            }
            match op {
                Op::Push(v) => self.stack.push(v),
                Op::LoadScalar(s) => self.stack.push(self.scalars[s as usize]),
                Op::StoreScalar(s) => self.scalars[s as usize] = self.stack.pop().expect("stack"),
                Op::LoadElem(a) => {
                    let raw = *self.stack.last().expect("stack");
                    let i = self.check_index(a, raw)?;
                    match self.read(link, a, i)? {
                        Some(v) => *self.stack.last_mut().expect("stack") = v,
                        None => return Ok(Exec::Blocked),
                    }
                }
                Op::StoreElem(a) => {
                    let n = self.stack.len();
                    let (raw, v) = (self.stack[n - 2], self.stack[n - 1]);
                    let i = self.check_index(a, raw)?;
                    let waiting = self.write(link, a, i, v)?;
                    self.stack.truncate(n - 2);
                    self.pc += 1;
                    self.pending_instr += 1;
                    if waiting && !self.finish_wait(link)? {
                        return Ok(Exec::Blocked);
                    }
                    continue;
                }
                Op::Len(a) => self.stack.push(self.array_len(a) as u32),
                Op::CoreId => self.stack.push(self.core as u32),
                Op::CoreCount => self.stack.push(self.core_count as u32),
                Op::Jz(t) => {
                    self.pending_instr += 1;
                    if self.stack.pop().expect("stack") == 0 {
                        self.pc = t as usize;
                    } else {
                        self.pc += 1;
                    }
                    continue;
                }
                Op::Jmp(t) => {
                    self.pending_instr += 1;
                    self.pc = t as usize;
                    continue;
                }
                Op::RetScalar(s) => {
                    self.pending_instr += 1;
                    let elem = kernel.scalars[s as usize].elem_type;
                    self.result = Some(KernelValue::Scalar(Scalar::from_bits(elem, self.scalars[s as usize])));
                    return Ok(Exec::Returned);
                }
                Op::RetArray(a) => {
                    self.pending_instr += 1;
                    let elem = kernel.arrays[a as usize].elem_type;
                    match self.arrays[a as usize].clone() {
                        Binding::Local { data, .. } => {
                            self.result = Some(KernelValue::Array(Array::from_bits(elem, &data.borrow())));
                        }
                        Binding::External { reference, .. } => {
                            let handle =
                                self.post(link, RequestKind::Load, &reference, 0, reference.length, Vec::new())?;
                            // `run` completes this wait before posting the return message.
                            self.wait =
                                Some(Wait { handle, mode: WaitMode::Blocking, purpose: Purpose::ReturnFetch(a) });
                        }
                    }
                    return Ok(Exec::Returned);
                }
                Op::Halt => {
                    self.pending_instr += 1;
                    self.result = None;
                    return Ok(Exec::Returned);
                }
                _ => unreachable!("handled by pure_op"),
            }
            self.pc += 1;
            self.pending_instr += 1;
        }
    }
}
