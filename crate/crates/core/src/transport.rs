//! Per-core channels of fixed-size cells shared between host and core.
//!
//! A cell moves through `Free -> RequestPosted -> InService -> ResponseReady
//! -> Free`. Any other transition is refused with
//! [`TransportError::IllegalTransition`]. Transfers larger than one cell are
//! split into sequential services of the same cell; the whole sequence is one
//! logical transfer and is identified by the sequence number of its first
//! chunk.

use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timing::SimTime;

pub const CELLS_PER_CHANNEL: usize = 32;
pub const CELL_PAYLOAD_BYTES: usize = 1024;

/// Number of sequential cell services needed for `bytes` (zero for zero).
pub fn chunk_count(bytes: usize) -> usize {
    bytes.div_ceil(CELL_PAYLOAD_BYTES)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Free,
    RequestPosted,
    InService,
    ResponseReady,
}

impl CellState {
    pub fn can_become(self, next: CellState) -> bool {
        use CellState::*;
        matches!(
            (self, next),
            (Free, RequestPosted) | (RequestPosted, InService) | (InService, ResponseReady) | (ResponseReady, Free)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestKind {
    Load,
    Store,
    KernelCtl,
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequestKind::Load => "load",
            RequestKind::Store => "store",
            RequestKind::KernelCtl => "kernelctl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("all {CELLS_PER_CHANNEL} cells of the channel are in use")]
    WouldBlock,
    #[error("handle does not name a live transfer")]
    StaleHandle,
    #[error("transfer has not completed")]
    NotReady,
    #[error("unknown reference id {0}")]
    UnknownReference(u64),
    #[error("elements {offset}..{end} out of bounds for reference {reference} of length {length}", end = offset + count)]
    OutOfBounds { reference: u64, offset: usize, count: usize, length: usize },
    #[error("reference {0} is read-only for this core")]
    ReadOnlyViolation(u64),
    #[error("payload of {0} bytes exceeds the {CELL_PAYLOAD_BYTES}-byte cell")]
    PayloadTooLarge(usize),
    #[error("illegal cell transition {from:?} -> {to:?}")]
    IllegalTransition { from: CellState, to: CellState },
    #[error("memory kind failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellHeader {
    pub request_kind: RequestKind,
    pub reference_id: u64,
    pub element_offset: usize,
    pub element_count: usize,
    pub core_id: usize,
    pub sequence_number: u64,
    /// Later chunk of a multi-cell transfer; the fixed per-request cost is not charged again.
    pub continuation: bool,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub state: CellState,
    pub header: Option<CellHeader>,
    pub payload: Vec<u8>,
    pub posted_at: SimTime,
    pub ready_at: SimTime,
    pub error: Option<TransportError>,
    /// Sequence number of the first chunk of the logical transfer using this cell.
    pub transfer_tag: u64,
}

impl Cell {
    fn new() -> Self {
        Self {
            state: CellState::Free,
            header: None,
            payload: Vec::new(),
            posted_at: SimTime::ZERO,
            ready_at: SimTime::ZERO,
            error: None,
            transfer_tag: 0,
        }
    }

    /// State as observed by the core at `now`: a serviced response stays
    /// invisible until its arrival time.
    pub fn state_at(&self, now: SimTime) -> CellState {
        if self.state == CellState::ResponseReady && self.ready_at > now {
            CellState::InService
        } else {
            self.state
        }
    }

    fn transition(&mut self, to: CellState) -> Result<(), TransportError> {
        if !self.state.can_become(to) {
            return Err(TransportError::IllegalTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }
}

/// Names one logical transfer: the cell carrying it and its tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransferHandle {
    pub core_id: usize,
    pub cell_index: usize,
    pub sequence_number: u64,
}

/// The part of a request that the poster chooses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub kind: RequestKind,
    pub reference_id: u64,
    pub element_offset: usize,
    pub element_count: usize,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Channel {
    core_id: usize,
    cells: Vec<Cell>,
    next_sequence: u64,
}

impl Channel {
    pub fn new(core_id: usize) -> Self {
        Self {
            core_id,
            cells: (0..CELLS_PER_CHANNEL).map(|_| Cell::new()).collect(),
            next_sequence: 0,
        }
    }

    pub fn core_id(&self) -> usize {
        self.core_id
    }

    pub fn cell(&self, index: usize) -> &Cell {
        &self.cells[index]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn busy_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.state != CellState::Free).count()
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    /// Posts a request into the lowest-index free cell.
    pub fn post(&mut self, request: Request, now: SimTime) -> Result<TransferHandle, TransportError> {
        let index = self
            .cells
            .iter()
            .position(|c| c.state == CellState::Free)
            .ok_or(TransportError::WouldBlock)?;
        let tag = self.next_sequence;
        self.post_into(index, request, now, false, tag)?;
        Ok(TransferHandle {
            core_id: self.core_id,
            cell_index: index,
            sequence_number: tag,
        })
    }

    /// Collects the current chunk of `handle` and immediately posts the next
    /// chunk of the same logical transfer into the same cell.
    pub fn continue_transfer(
        &mut self,
        handle: TransferHandle,
        request: Request,
        now: SimTime,
    ) -> Result<Result<Vec<u8>, TransportError>, TransportError> {
        let previous = self.collect(handle)?;
        self.post_into(handle.cell_index, request, now, true, handle.sequence_number)?;
        Ok(previous)
    }

    fn post_into(
        &mut self,
        index: usize,
        request: Request,
        now: SimTime,
        continuation: bool,
        tag: u64,
    ) -> Result<(), TransportError> {
        if request.payload.len() > CELL_PAYLOAD_BYTES {
            return Err(TransportError::PayloadTooLarge(request.payload.len()));
        }
        let sequence_number = self.next_sequence;
        let cell = &mut self.cells[index];
        cell.transition(CellState::RequestPosted)?;
        self.next_sequence += 1;
        cell.header = Some(CellHeader {
            request_kind: request.kind,
            reference_id: request.reference_id,
            element_offset: request.element_offset,
            element_count: request.element_count,
            core_id: self.core_id,
            sequence_number,
            continuation,
        });
        cell.payload = request.payload;
        cell.posted_at = now;
        cell.ready_at = now;
        cell.error = None;
        cell.transfer_tag = tag;
        Ok(())
    }

    /// Host side: takes a posted request for service.
    pub fn begin_service(&mut self, index: usize) -> Result<CellHeader, TransportError> {
        let cell = &mut self.cells[index];
        cell.transition(CellState::InService)?;
        Ok(cell.header.clone().expect("posted cell has a header"))
    }

    /// Host side: takes the request payload out of a cell in service.
    pub fn take_payload(&mut self, index: usize) -> Vec<u8> {
        std::mem::take(&mut self.cells[index].payload)
    }

    /// Host side: writes the response, visible to the core from `ready_at`.
    pub fn complete(
        &mut self,
        index: usize,
        response: Result<Vec<u8>, TransportError>,
        ready_at: SimTime,
    ) -> Result<(), TransportError> {
        let cell = &mut self.cells[index];
        cell.transition(CellState::ResponseReady)?;
        cell.ready_at = ready_at;
        match response {
            Ok(payload) => {
                cell.payload = payload;
                cell.error = None;
            }
            Err(e) => {
                cell.payload.clear();
                cell.error = Some(e);
            }
        }
        Ok(())
    }

    fn live_cell(&self, handle: TransferHandle) -> Result<&Cell, TransportError> {
        if handle.core_id != self.core_id || handle.cell_index >= CELLS_PER_CHANNEL {
            return Err(TransportError::StaleHandle);
        }
        let cell = &self.cells[handle.cell_index];
        if cell.state == CellState::Free || cell.transfer_tag != handle.sequence_number {
            return Err(TransportError::StaleHandle);
        }
        Ok(cell)
    }

    /// The cell behind a live handle.
    pub fn cell_of(&self, handle: TransferHandle) -> Result<&Cell, TransportError> {
        self.live_cell(handle)
    }

    /// True once the current chunk's response is visible at `now`.
    pub fn ready(&self, handle: TransferHandle, now: SimTime) -> Result<bool, TransportError> {
        Ok(self.live_cell(handle)?.state_at(now) == CellState::ResponseReady)
    }

    /// Frees the cell and returns its response. Fails with `NotReady` unless
    /// the host has completed the request.
    pub fn collect(&mut self, handle: TransferHandle) -> Result<Result<Vec<u8>, TransportError>, TransportError> {
        let state = self.live_cell(handle)?.state;
        if state != CellState::ResponseReady {
            return Err(TransportError::NotReady);
        }
        let cell = &mut self.cells[handle.cell_index];
        cell.transition(CellState::Free)?;
        cell.header = None;
        let payload = std::mem::take(&mut cell.payload);
        Ok(match cell.error.take() {
            Some(e) => Err(e),
            None => Ok(payload),
        })
    }

    /// Drops every in-flight transfer, e.g. after a kernel trapped.
    pub fn reset(&mut self) {
        for cell in &mut self.cells {
            *cell = Cell::new();
        }
    }
}

/// One host service, in the order the host performed them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: u64,
    pub core_id: usize,
    pub cell: usize,
    pub kind: RequestKind,
    pub reference_id: u64,
    pub offset: usize,
    pub count: usize,
    pub sequence: u64,
}

#[derive(Debug, Clone)]
pub struct RequestLog {
    enabled: bool,
    next_step: u64,
    entries: Vec<LogEntry>,
}

impl Default for RequestLog {
    fn default() -> Self {
        Self::new(true)
    }
}

impl RequestLog {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            next_step: 0,
            entries: Vec::new(),
        }
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn record(&mut self, core_id: usize, cell: usize, header: &CellHeader) {
        let step = self.next_step;
        self.next_step += 1;
        if self.enabled {
            self.entries.push(LogEntry {
                step,
                core_id,
                cell,
                kind: header.request_kind,
                reference_id: header.reference_id,
                offset: header.element_offset,
                count: header.element_count,
                sequence: header.sequence_number,
            });
        }
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    /// Services performed so far, including ones not retained while disabled.
    pub fn steps(&self) -> u64 {
        self.next_step
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "core_id", "cell", "kind", "reference_id", "offset", "count", "sequence"])?;
        for e in &self.entries {
            w.write_record([
                e.step.to_string(),
                e.core_id.to_string(),
                e.cell.to_string(),
                e.kind.to_string(),
                e.reference_id.to_string(),
                e.offset.to_string(),
                e.count.to_string(),
                e.sequence.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(count: usize) -> Request {
        Request {
            kind: RequestKind::Load,
            reference_id: 0,
            element_offset: 0,
            element_count: count,
            payload: Vec::new(),
        }
    }

    #[test]
    fn thirty_third_request_would_block() {
        let mut ch = Channel::new(0);
        for i in 0..CELLS_PER_CHANNEL {
            let h = ch.post(load(1), SimTime::ZERO).unwrap();
            assert_eq!(h.cell_index, i);
        }
        assert_eq!(ch.post(load(1), SimTime::ZERO), Err(TransportError::WouldBlock));
    }

    #[test]
    fn full_cycle_frees_cell() {
        let mut ch = Channel::new(3);
        let h = ch.post(load(2), SimTime(10)).unwrap();
        assert_eq!(ch.collect(h), Err(TransportError::NotReady));
        let header = ch.begin_service(h.cell_index).unwrap();
        assert_eq!(header.core_id, 3);
        ch.complete(h.cell_index, Ok(vec![1, 2, 3, 4]), SimTime(50)).unwrap();
        assert!(!ch.ready(h, SimTime(49)).unwrap());
        assert!(ch.ready(h, SimTime(50)).unwrap());
        assert_eq!(ch.collect(h).unwrap(), Ok(vec![1, 2, 3, 4]));
        assert_eq!(ch.cell(0).state, CellState::Free);
        assert_eq!(ch.ready(h, SimTime(60)), Err(TransportError::StaleHandle));
    }

    #[test]
    fn illegal_transitions_are_refused() {
        let mut ch = Channel::new(0);
        assert!(matches!(ch.begin_service(0), Err(TransportError::IllegalTransition { .. })));
        assert!(matches!(
            ch.complete(0, Ok(vec![]), SimTime::ZERO),
            Err(TransportError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn continuation_keeps_handle_and_bumps_sequence() {
        let mut ch = Channel::new(0);
        let h = ch.post(load(256), SimTime::ZERO).unwrap();
        ch.begin_service(0).unwrap();
        ch.complete(0, Ok(vec![0; 1024]), SimTime(5)).unwrap();
        let first = ch.continue_transfer(h, load(256), SimTime(6)).unwrap().unwrap();
        assert_eq!(first.len(), 1024);
        let cell = ch.cell_of(h).unwrap();
        assert_eq!(cell.header.as_ref().unwrap().sequence_number, 1);
        assert!(cell.header.as_ref().unwrap().continuation);
        assert_eq!(ch.next_sequence(), 2);
    }

    #[test]
    fn oversize_payload_rejected() {
        let mut ch = Channel::new(0);
        let mut r = load(0);
        r.payload = vec![0; CELL_PAYLOAD_BYTES + 1];
        assert_eq!(ch.post(r, SimTime::ZERO), Err(TransportError::PayloadTooLarge(1025)));
    }

    #[test]
    fn chunk_counts() {
        assert_eq!(chunk_count(0), 0);
        assert_eq!(chunk_count(1), 1);
        assert_eq!(chunk_count(1024), 1);
        assert_eq!(chunk_count(1025), 2);
        assert_eq!(chunk_count(8192), 8);
    }

    #[test]
    fn log_csv_header() {
        let mut log = RequestLog::new(true);
        let header = CellHeader {
            request_kind: RequestKind::Store,
            reference_id: 4,
            element_offset: 7,
            element_count: 1,
            core_id: 2,
            sequence_number: 9,
            continuation: false,
        };
        log.record(2, 5, &header);
        assert_eq!(
            log.to_csv_string(),
            "step,core_id,cell,kind,reference_id,offset,count,sequence\n0,2,5,store,4,7,1,9\n"
        );
        let mut off = RequestLog::new(false);
        off.record(2, 5, &header);
        assert!(off.entries().is_empty());
        assert_eq!(off.steps(), 1);
    }
}
