//! The host side: memory kinds, the service loop, and kernel offload.
//!
//! All cores and the host share one discrete-event clock. The scheduler
//! repeatedly either runs the core with the earliest clock until it blocks,
//! or lets the host service the earliest posted request, whichever comes
//! first in `(time, core)` order. A request is only serviced once no
//! runnable core could still post an earlier one, so the host always sees
//! requests in global time order.

pub mod kinds;
pub mod link;

use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;

use thiserror::Error;

use crate::device::{compile, ArgValue, BudgetExceeded, CompiledKernel, CoreConfig, CoreVm, ExecutionStats, SetupError, VmStatus};
use crate::kernel::{KernelProgram, KernelValue, Trap};
use crate::model::{
    bits_to_bytes, bytes_to_bits, AccessMode, AccessStrategy, Array, ElemType, MemoryKindId, PrefetchError, Reference,
    Scalar, VariableDescriptor,
};
use crate::timing::{SimTime, TimingModel};
use crate::transport::{LogEntry, RequestKind, TransferHandle, TransportError};

pub use kinds::{AllocError, BufferKind, CallbackKind, HostMemory, KindBackend, LocalData};
pub use link::{Drive, Link, RefTraffic, WaitMode, ELEMS_PER_CELL};

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    /// One entry per core; `core_id` must equal the position.
    pub cores: Vec<CoreConfig>,
    pub timing: TimingModel,
    pub jitter_seed: u64,
    /// Keep the per-request service log. Long streaming runs may turn it off.
    pub log_requests: bool,
}

impl RuntimeConfig {
    pub fn uniform(core_count: usize, core: CoreConfig, timing: TimingModel) -> Self {
        Self {
            cores: (0..core_count).map(|i| core.with_id(i)).collect(),
            timing,
            jitter_seed: 0,
            log_requests: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, c) in self.cores.iter().enumerate() {
            if c.core_id != i {
                return Err(format!("core entry {i} has core_id {}", c.core_id));
            }
            c.validate()?;
        }
        self.timing.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArgBinding {
    Scalar(Scalar),
    Ref(Reference),
    /// A different binding for each target core, in target order.
    PerCore(Vec<ArgBinding>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetCores {
    All,
    Subset(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct OffloadInvocation {
    pub program: KernelProgram,
    pub args: Vec<ArgBinding>,
    pub strategy: AccessStrategy,
    pub target: TargetCores,
}

impl OffloadInvocation {
    pub fn new(program: KernelProgram, args: Vec<ArgBinding>, strategy: AccessStrategy) -> Self {
        Self { program, args, strategy, target: TargetCores::All }
    }

    pub fn on_cores(mut self, cores: Vec<usize>) -> Self {
        self.target = TargetCores::Subset(cores);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreResult {
    pub core_id: usize,
    pub value: Option<KernelValue>,
    pub stats: ExecutionStats,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OffloadError {
    #[error("invalid invocation: {0}")]
    Validation(String),
    #[error(transparent)]
    Prefetch(#[from] PrefetchError),
    #[error(transparent)]
    BudgetExceeded(#[from] BudgetExceeded),
    #[error("kernel trapped on core {core}: {trap}")]
    Trap { core: usize, trap: Trap },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    BudgetExceeded(#[from] BudgetExceeded),
    #[error("reference {id} has kind {kind}, expected {expected}")]
    WrongKind { id: u64, kind: MemoryKindId, expected: MemoryKindId },
    #[error("value of {got} elements for a reference of length {length}")]
    LengthMismatch { got: usize, length: usize },
    #[error("value of type {got} for a reference of type {expected}")]
    TypeMismatch { got: ElemType, expected: ElemType },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("no such job {0}")]
    UnknownJob(u64),
    #[error("core {0} is running a kernel")]
    CoreBusy(usize),
}

/// Handle for a launched offload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobId(pub u64);

struct Job {
    cores: Vec<usize>,
    outcomes: BTreeMap<usize, Result<CoreResult, Trap>>,
}

struct Queued {
    job: JobId,
    vm: CoreVm,
    launch_at: SimTime,
    read_only: Vec<u64>,
    started: bool,
    blocked: bool,
}

pub struct Runtime {
    config: RuntimeConfig,
    link: Link,
    resident: Vec<usize>,
    queues: Vec<VecDeque<Queued>>,
    jobs: BTreeMap<JobId, Job>,
    next_job: u64,
    host_time: SimTime,
}

impl Runtime {
    pub fn new(config: RuntimeConfig) -> Result<Self, RuntimeError> {
        config.validate().map_err(RuntimeError::Config)?;
        let n = config.cores.len();
        let mut link = Link::new(n, config.timing.clone(), config.jitter_seed, HostMemory::new(n));
        link.log_mut().set_enabled(config.log_requests);
        Ok(Self {
            link,
            resident: vec![0; n],
            queues: (0..n).map(|_| VecDeque::new()).collect(),
            jobs: BTreeMap::new(),
            next_job: 0,
            host_time: SimTime::ZERO,
            config,
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn core_count(&self) -> usize {
        self.config.cores.len()
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn log(&self) -> &[LogEntry] {
        self.link.log_entries()
    }

    pub fn clear_log(&mut self) {
        self.link.log_mut().clear();
    }

    pub fn traffic(&self, reference: &Reference) -> RefTraffic {
        self.link.traffic(reference.id)
    }

    /// The host's notion of now: the latest completion it has observed.
    pub fn host_time(&self) -> SimTime {
        self.host_time
    }

    pub fn resident_bytes(&self, core: usize) -> usize {
        self.resident[core]
    }

    pub fn register_kind(&mut self, name: impl Into<String>, backend: Box<dyn KindBackend>) -> Result<(), RuntimeError> {
        self.link.memory_mut().register_kind(name, backend).map_err(RuntimeError::Config)
    }

    pub fn descriptor(&self, reference: &Reference) -> Result<&VariableDescriptor, RuntimeError> {
        Ok(self.link.memory().descriptor(reference.id)?)
    }

    /// Allocates a variable of the given kind. Microcore allocations go
    /// through [`Runtime::define_on_device`].
    pub fn allocate(&mut self, elem_type: ElemType, length: usize, kind: MemoryKindId) -> Result<Reference, RuntimeError> {
        if kind == MemoryKindId::Microcore {
            return Err(RuntimeError::Config("Microcore variables need an owner; use define_on_device".into()));
        }
        Ok(self.link.memory_mut().allocate(elem_type, length, kind, None)?)
    }

    /// Allocates and fills a variable.
    pub fn allocate_with(&mut self, kind: MemoryKindId, values: &Array) -> Result<Reference, RuntimeError> {
        let r = self.allocate(values.elem_type(), values.len(), kind)?;
        self.write(&r, values)?;
        Ok(r)
    }

    /// Allocates a variable resident in `core`'s local store.
    pub fn define_on_device(&mut self, core: usize, elem_type: ElemType, length: usize) -> Result<Reference, RuntimeError> {
        if core >= self.core_count() {
            return Err(AllocError::Model(crate::model::ModelError::InvalidOwner {
                owner: Some(core),
                core_count: self.core_count(),
            })
            .into());
        }
        let bytes = length * elem_type.size();
        let budget = self.config.cores[core].data_budget_bytes;
        if self.resident[core] + bytes > budget {
            return Err(BudgetExceeded { core, needed: self.resident[core] + bytes, available: budget }.into());
        }
        let r = self.link.memory_mut().allocate(elem_type, length, MemoryKindId::Microcore, Some(core))?;
        self.resident[core] += bytes;
        Ok(r)
    }

    fn check_value(reference: &Reference, values: &Array) -> Result<(), RuntimeError> {
        if values.elem_type() != reference.elem_type {
            return Err(RuntimeError::TypeMismatch { got: values.elem_type(), expected: reference.elem_type });
        }
        if values.len() != reference.length {
            return Err(RuntimeError::LengthMismatch { got: values.len(), length: reference.length });
        }
        Ok(())
    }

    /// Host-side write. Device-resident variables are written by a copy to the device.
    pub fn write(&mut self, reference: &Reference, values: &Array) -> Result<(), RuntimeError> {
        if self.descriptor(reference)?.kind == MemoryKindId::Microcore {
            return self.copy_to_device(reference, values);
        }
        Self::check_value(reference, values)?;
        self.link.memory_mut().store_bits(reference.id, 0, &values.to_bits())?;
        Ok(())
    }

    /// Host-side read. Device-resident variables are read by a copy from the device.
    pub fn read(&mut self, reference: &Reference) -> Result<Array, RuntimeError> {
        if self.descriptor(reference)?.kind == MemoryKindId::Microcore {
            return self.copy_from_device(reference);
        }
        let bits = self.link.memory().load_bits(reference.id, 0, reference.length)?;
        Ok(Array::from_bits(reference.elem_type, &bits))
    }

    /// Reads a variable's current contents without simulating any transfer.
    /// Meant for checking results, not for modelling the host.
    pub fn peek(&self, reference: &Reference) -> Result<Array, RuntimeError> {
        let bits = self.link.memory().load_bits(reference.id, 0, reference.length)?;
        Ok(Array::from_bits(reference.elem_type, &bits))
    }

    fn device_owner(&self, reference: &Reference) -> Result<usize, RuntimeError> {
        let d = self.descriptor(reference)?;
        match (&d.kind, d.owner_core) {
            (MemoryKindId::Microcore, Some(core)) => Ok(core),
            (kind, _) => Err(RuntimeError::WrongKind {
                id: reference.id,
                kind: kind.clone(),
                expected: MemoryKindId::Microcore,
            }),
        }
    }

    fn ensure_idle(&self, core: usize) -> Result<(), RuntimeError> {
        if self.queues[core].is_empty() {
            Ok(())
        } else {
            Err(RuntimeError::CoreBusy(core))
        }
    }

    pub fn copy_to_device(&mut self, reference: &Reference, values: &Array) -> Result<(), RuntimeError> {
        let core = self.device_owner(reference)?;
        Self::check_value(reference, values)?;
        self.ensure_idle(core)?;
        let at = self.host_time.max(self.link.clock(core));
        let (_, done) =
            self.link.host_transfer(core, RequestKind::Store, reference.id, values.len(), values.to_bytes(), at)?;
        self.host_time = done;
        Ok(())
    }

    pub fn copy_from_device(&mut self, reference: &Reference) -> Result<Array, RuntimeError> {
        let core = self.device_owner(reference)?;
        self.ensure_idle(core)?;
        let at = self.host_time.max(self.link.clock(core));
        let (bytes, done) =
            self.link.host_transfer(core, RequestKind::Load, reference.id, reference.length, Vec::new(), at)?;
        self.host_time = done;
        Ok(Array::from_bytes(reference.elem_type, &bytes))
    }

    /// Services every posted request once, in arrival order.
    pub fn service_loop_step(&mut self) -> usize {
        let n = self.link.service_all();
        for q in &mut self.queues {
            if let Some(head) = q.front_mut() {
                head.blocked = false;
            }
        }
        n
    }

    // Direct transport access from a core with no kernel running. Requests
    // are serviced as soon as they are posted.

    pub fn core_time(&self, core: usize) -> SimTime {
        self.link.clock(core)
    }

    pub fn advance_core(&mut self, core: usize, ms: f64) {
        self.link.advance(core, SimTime::from_ms(ms));
    }

    pub fn polls(&self, core: usize) -> u64 {
        self.link.polls(core)
    }

    pub fn nonblocking_load(
        &mut self,
        core: usize,
        reference: &Reference,
        offset: usize,
        count: usize,
    ) -> Result<TransferHandle, RuntimeError> {
        self.ensure_idle(core)?;
        Ok(self.link.post(core, RequestKind::Load, reference.id, offset, count, Vec::new())?)
    }

    pub fn nonblocking_store(
        &mut self,
        core: usize,
        reference: &Reference,
        offset: usize,
        values: &[u32],
    ) -> Result<TransferHandle, RuntimeError> {
        self.ensure_idle(core)?;
        Ok(self.link.post(core, RequestKind::Store, reference.id, offset, values.len(), bits_to_bytes(values))?)
    }

    /// One poll of `handle` from its core.
    pub fn ready(&mut self, handle: TransferHandle) -> Result<bool, RuntimeError> {
        self.link.service_all();
        Ok(self.link.ready(handle)?)
    }

    fn wait_handle(&mut self, handle: TransferHandle, mode: WaitMode) -> Result<(), RuntimeError> {
        while self.link.drive(handle, mode)? == Drive::NeedHost {
            self.link.service_all();
        }
        Ok(())
    }

    /// Spins on `ready` until every chunk of `handle` has arrived.
    pub fn wait_polling(&mut self, handle: TransferHandle) -> Result<(), RuntimeError> {
        self.wait_handle(handle, WaitMode::Polling)
    }

    pub fn wait_blocking(&mut self, handle: TransferHandle) -> Result<(), RuntimeError> {
        self.wait_handle(handle, WaitMode::Blocking)
    }

    /// Frees the handle's cell and returns the loaded elements.
    pub fn collect(&mut self, handle: TransferHandle) -> Result<Vec<u32>, RuntimeError> {
        Ok(bytes_to_bits(&self.link.collect(handle)?))
    }

    pub fn blocking_load(
        &mut self,
        core: usize,
        reference: &Reference,
        offset: usize,
        count: usize,
    ) -> Result<Vec<u32>, RuntimeError> {
        let h = self.nonblocking_load(core, reference, offset, count)?;
        self.wait_blocking(h)?;
        self.collect(h)
    }

    pub fn blocking_store(
        &mut self,
        core: usize,
        reference: &Reference,
        offset: usize,
        values: &[u32],
    ) -> Result<(), RuntimeError> {
        let h = self.nonblocking_store(core, reference, offset, values)?;
        self.wait_blocking(h)?;
        self.collect(h).map(|_| ())
    }

    // Offload.

    fn target_cores(&self, target: &TargetCores) -> Result<Vec<usize>, OffloadError> {
        let cores = match target {
            TargetCores::All => (0..self.core_count()).collect::<Vec<_>>(),
            TargetCores::Subset(c) => c.clone(),
        };
        if cores.is_empty() {
            return Err(OffloadError::Validation("no target cores".into()));
        }
        let mut seen = vec![false; self.core_count()];
        for &c in &cores {
            if c >= self.core_count() {
                return Err(OffloadError::Validation(format!("core {c} does not exist")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(OffloadError::Validation(format!("core {c} targeted twice")));
            }
        }
        Ok(cores)
    }

    fn bind(&self, program: &KernelProgram, binding: &ArgBinding, param: usize, core: usize, slot: usize) -> Result<ArgValue, OffloadError> {
        let p = &program.params[param];
        match binding {
            ArgBinding::PerCore(per) => {
                let b = per.get(slot).ok_or_else(|| {
                    OffloadError::Validation(format!("argument `{}` has no binding for target {slot}", p.name))
                })?;
                if matches!(b, ArgBinding::PerCore(_)) {
                    return Err(OffloadError::Validation(format!("argument `{}` nests per-core bindings", p.name)));
                }
                self.bind(program, b, param, core, slot)
            }
            ArgBinding::Scalar(v) => {
                if p.is_array || v.elem_type() != p.elem_type {
                    return Err(OffloadError::Validation(format!(
                        "argument `{}` expects {}, got a {} scalar",
                        p.name,
                        describe(p.elem_type, p.is_array),
                        v.elem_type()
                    )));
                }
                Ok(ArgValue::Scalar(*v))
            }
            ArgBinding::Ref(r) => {
                let d = self
                    .link
                    .memory()
                    .descriptor(r.id)
                    .map_err(|_| OffloadError::Validation(format!("argument `{}`: unknown reference {}", p.name, r.id)))?;
                if !p.is_array || d.reference.elem_type != p.elem_type {
                    return Err(OffloadError::Validation(format!(
                        "argument `{}` expects {}, got a reference to {}[]",
                        p.name,
                        describe(p.elem_type, p.is_array),
                        d.reference.elem_type
                    )));
                }
                if d.kind == MemoryKindId::Microcore && d.owner_core == Some(core) {
                    let data = self.link.memory().local_data(r.id).expect("resident data");
                    Ok(ArgValue::Resident(d.reference, data))
                } else {
                    Ok(ArgValue::External(d.reference))
                }
            }
        }
    }

    /// Validates and queues a kernel on its target cores.
    pub fn launch(&mut self, invocation: OffloadInvocation) -> Result<JobId, OffloadError> {
        let OffloadInvocation { program, args, strategy, target } = invocation;
        program.validate().map_err(|e| OffloadError::Validation(e.to_string()))?;
        if args.len() != program.params.len() {
            return Err(OffloadError::Validation(format!(
                "kernel `{}` takes {} arguments, got {}",
                program.name,
                program.params.len(),
                args.len()
            )));
        }
        if let AccessStrategy::Prefetch(specs) = &strategy {
            for (i, s) in specs.iter().enumerate() {
                match program.param(&s.variable_name) {
                    Some(p) if p.is_array => {}
                    _ => return Err(PrefetchError::UnknownVariable(s.variable_name.clone()).into()),
                }
                if specs[..i].iter().any(|o| o.variable_name == s.variable_name) {
                    return Err(OffloadError::Validation(format!("two prefetch specs for `{}`", s.variable_name)));
                }
            }
        }
        let cores = self.target_cores(&target)?;
        let kernel: Rc<CompiledKernel> = Rc::new(compile(&program));

        let mut prepared = Vec::with_capacity(cores.len());
        for (slot, &core) in cores.iter().enumerate() {
            let values = args
                .iter()
                .enumerate()
                .map(|(i, b)| self.bind(&program, b, i, core, slot))
                .collect::<Result<Vec<_>, _>>()?;
            let mut read_only = Vec::new();
            if let AccessStrategy::Prefetch(specs) = &strategy {
                for s in specs.iter().filter(|s| s.access_modifier == AccessMode::ReadOnly) {
                    let i = program.params.iter().position(|p| p.name == s.variable_name).expect("checked");
                    if let ArgValue::External(r) = &values[i] {
                        read_only.push(r.id);
                    }
                }
            }
            let vm = CoreVm::new(
                kernel.clone(),
                &self.config.cores[core],
                self.core_count(),
                &values,
                &strategy,
                self.resident[core],
            )
            .map_err(|e| match e {
                SetupError::Budget(b) => OffloadError::BudgetExceeded(b),
                SetupError::Prefetch(p) => OffloadError::Prefetch(p),
                SetupError::Trap(trap) => OffloadError::Trap { core, trap },
            })?;
            prepared.push((core, vm, read_only));
        }

        let id = JobId(self.next_job);
        self.next_job += 1;
        for (core, vm, read_only) in prepared {
            self.queues[core].push_back(Queued {
                job: id,
                vm,
                launch_at: self.host_time,
                read_only,
                started: false,
                blocked: false,
            });
        }
        self.jobs.insert(id, Job { cores, outcomes: BTreeMap::new() });
        Ok(id)
    }

    fn job_done(&self, id: JobId) -> bool {
        let job = &self.jobs[&id];
        job.outcomes.len() == job.cores.len()
    }

    /// Runs the simulation until job `id` has finished on every target core.
    /// Results come back ordered by core id.
    pub fn wait(&mut self, id: JobId) -> Result<Result<Vec<CoreResult>, OffloadError>, RuntimeError> {
        if !self.jobs.contains_key(&id) {
            return Err(RuntimeError::UnknownJob(id.0));
        }
        while !self.job_done(id) {
            assert!(self.step(), "scheduler stalled with job {} unfinished", id.0);
        }
        let job = self.jobs.remove(&id).expect("present");
        let mut results = Vec::with_capacity(job.cores.len());
        for (core, outcome) in job.outcomes {
            match outcome {
                Ok(r) => {
                    self.host_time = self.host_time.max(self.link.clock(core));
                    results.push(r);
                }
                Err(trap) => {
                    self.host_time = self.host_time.max(self.link.clock(core));
                    return Ok(Err(OffloadError::Trap { core, trap }));
                }
            }
        }
        Ok(Ok(results))
    }

    /// Launches and waits.
    pub fn offload(&mut self, invocation: OffloadInvocation) -> Result<Vec<CoreResult>, OffloadError> {
        let id = self.launch(invocation)?;
        self.wait(id).expect("job was just launched")
    }

    /// Earliest time the head job of `core` can run, if it is runnable.
    fn runnable_at(&self, core: usize) -> Option<SimTime> {
        let head = self.queues[core].front()?;
        if head.blocked {
            return None;
        }
        let clock = self.link.clock(core);
        Some(if head.started { clock } else { clock.max(head.launch_at) })
    }

    /// One scheduling decision. Returns false when nothing can make progress.
    fn step(&mut self) -> bool {
        let next_core = (0..self.core_count())
            .filter_map(|c| self.runnable_at(c).map(|t| (t, c)))
            .min();
        let pending = self.link.peek_pending();
        let serve = match (pending, next_core) {
            (Some(p), Some(r)) => p < r,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => return false,
        };
        if serve {
            let s = self.link.service_next().expect("pending request");
            if let Some(head) = self.queues[s.core].front_mut() {
                head.blocked = false;
            }
            return true;
        }
        let (_, core) = next_core.expect("runnable core");
        self.run_head(core);
        true
    }

    fn run_head(&mut self, core: usize) {
        let head = self.queues[core].front_mut().expect("runnable head");
        let outcome = (|| {
            if !head.started {
                head.started = true;
                for &id in &head.read_only {
                    self.link.set_read_only(core, id, true);
                }
                head.vm.start(&mut self.link, head.launch_at)?;
            }
            head.vm.run(&mut self.link)
        })();
        match outcome {
            Ok(VmStatus::Blocked) => head.blocked = true,
            Ok(VmStatus::Finished) => {
                let q = self.queues[core].pop_front().expect("head");
                self.link.clear_read_only(core);
                let (value, stats) = q.vm.into_outcome();
                self.jobs
                    .get_mut(&q.job)
                    .expect("live job")
                    .outcomes
                    .insert(core, Ok(CoreResult { core_id: core, value, stats }));
            }
            Err(trap) => {
                let q = self.queues[core].pop_front().expect("head");
                self.link.reset_core(core);
                self.link.clear_read_only(core);
                self.jobs.get_mut(&q.job).expect("live job").outcomes.insert(core, Err(trap));
            }
        }
    }
}

fn describe(elem_type: ElemType, is_array: bool) -> String {
    if is_array {
        format!("{elem_type}[]")
    } else {
        elem_type.to_string()
    }
}
