//! The host/core link: every core's channel and clock, the single host
//! server that services posted cells, and the logical-transfer bookkeeping
//! that splits large transfers into sequential cell services.
//!
//! The host is one FIFO server. Requests are serviced in order of
//! `(posted_at, core, sequence)`; service starts at the later of the post
//! time and the moment the host became free, and the response becomes
//! visible to the core at `start + cost`.

use std::collections::{BTreeMap, BTreeSet};

use super::kinds::HostMemory;
use crate::timing::{Jitter, SimTime, Tier, TimingModel};
use crate::transport::{
    Channel, LogEntry, Request, RequestKind, RequestLog, TransferHandle, TransportError, CELL_PAYLOAD_BYTES,
};

/// Four-byte elements carried by one cell.
pub const ELEMS_PER_CELL: usize = CELL_PAYLOAD_BYTES / 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitMode {
    /// Sleep until the response arrives.
    Blocking,
    /// Spin on `ready`; observing each completed cell costs one poll.
    Polling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drive {
    /// The current cell has not been serviced; the host must run first.
    NeedHost,
    /// Every chunk has arrived; `collect` will succeed.
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct PendingKey {
    posted_at: SimTime,
    core: usize,
    sequence: u64,
    cell: usize,
}

#[derive(Debug, Clone)]
struct Transfer {
    kind: RequestKind,
    reference_id: u64,
    offset: usize,
    count: usize,
    /// Elements covered by chunks posted so far.
    posted: usize,
    charge_alpha: bool,
    /// Outgoing payload for stores and control messages; gathered response for loads.
    data: Vec<u8>,
    complete: bool,
}

impl Transfer {
    fn chunk(&self) -> Request {
        let n = (self.count - self.posted).min(ELEMS_PER_CELL);
        let payload = match self.kind {
            RequestKind::Load => Vec::new(),
            _ => self.data[self.posted * 4..(self.posted + n) * 4].to_vec(),
        };
        Request {
            kind: self.kind,
            reference_id: self.reference_id,
            element_offset: self.offset + self.posted,
            element_count: n,
            payload,
        }
    }
}

/// Per-reference traffic as seen by the host.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefTraffic {
    pub loads: u64,
    pub stores: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Serviced {
    pub core: usize,
    pub cell: usize,
    pub ready_at: SimTime,
}

pub struct Link {
    channels: Vec<Channel>,
    clocks: Vec<SimTime>,
    polls: Vec<u64>,
    pending: BTreeSet<PendingKey>,
    transfers: Vec<BTreeMap<usize, Transfer>>,
    host_free: SimTime,
    timing: TimingModel,
    poll_cost: SimTime,
    jitter: Jitter,
    log: RequestLog,
    memory: HostMemory,
    read_only: Vec<BTreeSet<u64>>,
    traffic: BTreeMap<u64, RefTraffic>,
}

impl Link {
    pub fn new(core_count: usize, timing: TimingModel, jitter_seed: u64, memory: HostMemory) -> Self {
        Self {
            channels: (0..core_count).map(Channel::new).collect(),
            clocks: vec![SimTime::ZERO; core_count],
            polls: vec![0; core_count],
            pending: BTreeSet::new(),
            transfers: vec![BTreeMap::new(); core_count],
            host_free: SimTime::ZERO,
            poll_cost: SimTime::from_ms(timing.poll_overhead_ms),
            jitter: Jitter::new(timing.jitter, jitter_seed),
            timing,
            log: RequestLog::new(true),
            memory,
            read_only: vec![BTreeSet::new(); core_count],
            traffic: BTreeMap::new(),
        }
    }

    pub fn core_count(&self) -> usize {
        self.channels.len()
    }

    pub fn timing(&self) -> &TimingModel {
        &self.timing
    }

    pub fn clock(&self, core: usize) -> SimTime {
        self.clocks[core]
    }

    pub fn set_clock(&mut self, core: usize, t: SimTime) {
        self.clocks[core] = t;
    }

    pub fn advance(&mut self, core: usize, d: SimTime) {
        self.clocks[core] += d;
    }

    pub fn polls(&self, core: usize) -> u64 {
        self.polls[core]
    }

    pub fn host_free(&self) -> SimTime {
        self.host_free
    }

    pub fn channel(&self, core: usize) -> &Channel {
        &self.channels[core]
    }

    pub fn log(&self) -> &RequestLog {
        &self.log
    }

    pub fn log_entries(&self) -> &[LogEntry] {
        self.log.entries()
    }

    pub fn log_mut(&mut self) -> &mut RequestLog {
        &mut self.log
    }

    pub fn memory(&self) -> &HostMemory {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut HostMemory {
        &mut self.memory
    }

    pub fn traffic(&self, reference_id: u64) -> RefTraffic {
        self.traffic.get(&reference_id).copied().unwrap_or_default()
    }

    /// Marks `reference_id` read-only for stores arriving from `core`.
    pub fn set_read_only(&mut self, core: usize, reference_id: u64, read_only: bool) {
        if read_only {
            self.read_only[core].insert(reference_id);
        } else {
            self.read_only[core].remove(&reference_id);
        }
    }

    pub fn clear_read_only(&mut self, core: usize) {
        self.read_only[core].clear();
    }

    /// Posts a logical transfer from `core` at its current clock.
    pub fn post(
        &mut self,
        core: usize,
        kind: RequestKind,
        reference_id: u64,
        offset: usize,
        count: usize,
        payload: Vec<u8>,
    ) -> Result<TransferHandle, TransportError> {
        let at = self.clocks[core];
        let charge_alpha = kind != RequestKind::KernelCtl;
        self.post_at(core, kind, reference_id, offset, count, payload, charge_alpha, at)
    }

    /// Posts a logical transfer at an explicit time. Host-originated
    /// messages use this with `charge_alpha = false`.
    #[allow(clippy::too_many_arguments)]
    pub fn post_at(
        &mut self,
        core: usize,
        kind: RequestKind,
        reference_id: u64,
        offset: usize,
        count: usize,
        payload: Vec<u8>,
        charge_alpha: bool,
        at: SimTime,
    ) -> Result<TransferHandle, TransportError> {
        if kind != RequestKind::Load {
            assert_eq!(payload.len(), count * 4, "payload must hold exactly `count` elements");
        }
        let mut transfer = Transfer {
            kind,
            reference_id,
            offset,
            count,
            posted: 0,
            charge_alpha,
            data: payload,
            complete: false,
        };
        let request = transfer.chunk();
        transfer.posted = request.element_count;
        let channel = &mut self.channels[core];
        let handle = channel.post(request, at)?;
        if count == 0 {
            channel.begin_service(handle.cell_index)?;
            channel.complete(handle.cell_index, Ok(Vec::new()), at)?;
            transfer.complete = true;
        } else {
            self.pending.insert(PendingKey {
                posted_at: at,
                core,
                sequence: handle.sequence_number,
                cell: handle.cell_index,
            });
        }
        if kind == RequestKind::Load {
            transfer.data = Vec::with_capacity(count * 4);
        }
        self.transfers[core].insert(handle.cell_index, transfer);
        Ok(handle)
    }

    /// `(posted_at, core)` of the request the host would service next.
    pub fn peek_pending(&self) -> Option<(SimTime, usize)> {
        self.pending.first().map(|k| (k.posted_at, k.core))
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Services the earliest posted request.
    pub fn service_next(&mut self) -> Option<Serviced> {
        let key = self.pending.pop_first()?;
        let channel = &mut self.channels[key.core];
        let header = channel.begin_service(key.cell).expect("pending cell is posted");
        let outgoing = channel.take_payload(key.cell);
        let charge_alpha = self.transfers[key.core][&key.cell].charge_alpha && !header.continuation;
        let id = header.reference_id;
        let bytes = header.element_count * 4;

        let (response, tier) = match header.request_kind {
            RequestKind::Load => {
                let r = self.memory.load(id, header.element_offset, header.element_count);
                (r, self.memory.tier_of(id).unwrap_or(Tier::Host))
            }
            RequestKind::Store => {
                let r = if self.read_only[key.core].contains(&id) {
                    Err(TransportError::ReadOnlyViolation(id))
                } else {
                    self.memory.store(id, header.element_offset, &outgoing).map(|_| Vec::new())
                };
                (r, self.memory.tier_of(id).unwrap_or(Tier::Host))
            }
            RequestKind::KernelCtl => (Ok(Vec::new()), Tier::Host),
        };

        let base = match &response {
            Err(_) => self.timing.alpha_ms,
            Ok(_) => {
                let alpha = if charge_alpha { self.timing.alpha_ms } else { 0.0 };
                alpha + self.timing.payload_cost(bytes, tier)
            }
        };
        let cost = base * self.jitter.factor();
        let start = key.posted_at.max(self.host_free);
        let ready_at = start + SimTime::from_ms(cost);
        self.host_free = ready_at;

        if response.is_ok() {
            let t = self.traffic.entry(id).or_default();
            match header.request_kind {
                RequestKind::Load => {
                    t.bytes_in += bytes as u64;
                    t.loads += u64::from(!header.continuation);
                }
                RequestKind::Store => {
                    t.bytes_out += bytes as u64;
                    t.stores += u64::from(!header.continuation);
                }
                RequestKind::KernelCtl => {}
            }
        }
        self.log.record(key.core, key.cell, &header);
        self.channels[key.core]
            .complete(key.cell, response, ready_at)
            .expect("cell in service");
        Some(Serviced {
            core: key.core,
            cell: key.cell,
            ready_at,
        })
    }

    /// Services everything currently posted, in order. Returns the count.
    pub fn service_all(&mut self) -> usize {
        let mut n = 0;
        while self.service_next().is_some() {
            n += 1;
        }
        n
    }

    fn transfer_mut(&mut self, h: TransferHandle) -> Result<&mut Transfer, TransportError> {
        self.channels
            .get(h.core_id)
            .ok_or(TransportError::StaleHandle)?
            .cell_of(h)?;
        self.transfers[h.core_id]
            .get_mut(&h.cell_index)
            .ok_or(TransportError::StaleHandle)
    }

    /// Waits on `h` from the point of view of a clock at `now`, continuing
    /// multi-cell transfers as chunks arrive. Returns the advanced clock.
    fn drive_at(
        &mut self,
        h: TransferHandle,
        mode: WaitMode,
        mut now: SimTime,
    ) -> Result<(Drive, SimTime), TransportError> {
        loop {
            if self.transfer_mut(h)?.complete {
                return Ok((Drive::Done, now));
            }
            let cell = self.channels[h.core_id].cell_of(h)?;
            if cell.state != crate::transport::CellState::ResponseReady {
                return Ok((Drive::NeedHost, now));
            }
            let failed = cell.error.is_some();
            now = now.max(cell.ready_at);
            if mode == WaitMode::Polling {
                now += self.poll_cost;
                self.polls[h.core_id] += 1;
            }
            self.step_transfer(h, failed, now)?;
        }
    }

    /// After the current chunk of `h` became visible at `now`: post the next
    /// chunk, or mark the transfer complete.
    fn step_transfer(&mut self, h: TransferHandle, failed: bool, now: SimTime) -> Result<(), TransportError> {
        let t = self.transfer_mut(h)?;
        if failed || t.posted >= t.count {
            t.complete = true;
            return Ok(());
        }
        let request = t.chunk();
        t.posted += request.element_count;
        let is_load = t.kind == RequestKind::Load;
        let previous = self.channels[h.core_id].continue_transfer(h, request, now)?;
        let previous = previous.expect("failed chunks are not continued");
        if is_load {
            self.transfers[h.core_id]
                .get_mut(&h.cell_index)
                .expect("live transfer")
                .data
                .extend_from_slice(&previous);
        }
        let sequence = self.channels[h.core_id].cell_of(h)?.header.as_ref().expect("posted").sequence_number;
        self.pending.insert(PendingKey {
            posted_at: now,
            core: h.core_id,
            sequence,
            cell: h.cell_index,
        });
        Ok(())
    }

    /// Core-side wait on the core's own clock.
    pub fn drive(&mut self, h: TransferHandle, mode: WaitMode) -> Result<Drive, TransportError> {
        let (d, t) = self.drive_at(h, mode, self.clocks[h.core_id])?;
        self.clocks[h.core_id] = t;
        Ok(d)
    }

    /// Whether every chunk of `h` has arrived.
    pub fn is_complete(&self, h: TransferHandle) -> bool {
        self.transfers
            .get(h.core_id)
            .and_then(|m| m.get(&h.cell_index))
            .is_some_and(|t| t.complete)
            && self.channels[h.core_id].cell_of(h).is_ok()
    }

    /// One `ready` poll from the owning core: costs one poll overhead and
    /// reports whether the whole transfer has arrived. A completed
    /// intermediate chunk is consumed and the next one posted.
    pub fn ready(&mut self, h: TransferHandle) -> Result<bool, TransportError> {
        let core = h.core_id;
        if self.transfer_mut(h)?.complete {
            self.clocks[core] += self.poll_cost;
            self.polls[core] += 1;
            return Ok(true);
        }
        self.clocks[core] += self.poll_cost;
        self.polls[core] += 1;
        let now = self.clocks[core];
        let cell = self.channels[core].cell_of(h)?;
        if cell.state_at(now) != crate::transport::CellState::ResponseReady {
            return Ok(false);
        }
        let failed = cell.error.is_some();
        self.step_transfer(h, failed, now)?;
        Ok(self.transfer_mut(h)?.complete)
    }

    /// Frees the transfer's cell and returns the loaded bytes (empty for
    /// stores), or the error the host responded with.
    pub fn collect(&mut self, h: TransferHandle) -> Result<Vec<u8>, TransportError> {
        if !self.transfer_mut(h)?.complete {
            return Err(TransportError::NotReady);
        }
        let last = self.channels[h.core_id].collect(h)?;
        let t = self.transfers[h.core_id].remove(&h.cell_index).expect("live transfer");
        let last = last?;
        if t.kind == RequestKind::Load {
            let mut data = t.data;
            data.extend_from_slice(&last);
            Ok(data)
        } else {
            Ok(Vec::new())
        }
    }

    /// Runs a host-originated transfer over `core`'s channel to completion,
    /// starting at `at`, and returns the loaded bytes and completion time.
    pub fn host_transfer(
        &mut self,
        core: usize,
        kind: RequestKind,
        reference_id: u64,
        count: usize,
        payload: Vec<u8>,
        at: SimTime,
    ) -> Result<(Vec<u8>, SimTime), TransportError> {
        let h = self.post_at(core, kind, reference_id, 0, count, payload, false, at)?;
        let mut now = at;
        loop {
            let (d, t) = self.drive_at(h, WaitMode::Blocking, now)?;
            now = t;
            match d {
                Drive::Done => break,
                Drive::NeedHost => {
                    self.service_all();
                }
            }
        }
        Ok((self.collect(h)?, now))
    }

    /// Abandons every transfer of `core`, e.g. after its kernel trapped.
    pub fn reset_core(&mut self, core: usize) {
        self.pending.retain(|k| k.core != core);
        self.channels[core].reset();
        self.transfers[core].clear();
    }
}
