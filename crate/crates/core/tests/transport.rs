use mcoffload::timing::SimTime;
use mcoffload::transport::{
    CellState, Channel, Request, RequestKind, TransferHandle, TransportError, CELLS_PER_CHANNEL,
};

fn load() -> Request {
    Request {
        kind: RequestKind::Load,
        reference_id: 0,
        element_offset: 0,
        element_count: 1,
        payload: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy)]
enum Action {
    Post,
    Begin(usize),
    Complete(usize),
    Collect(usize),
}

const CELLS: usize = 2;
const STEPS: usize = 3;

fn actions() -> Vec<Action> {
    let mut v = vec![Action::Post];
    for i in 0..CELLS {
        v.extend([Action::Begin(i), Action::Complete(i), Action::Collect(i)]);
    }
    v
}

/// Reference model of which actions are legal in which state.
fn model_step(states: &mut [CellState], action: Action) -> bool {
    use CellState::*;
    let (cell, from, to) = match action {
        Action::Post => match states.iter().position(|&s| s == Free) {
            Some(i) => (i, Free, RequestPosted),
            None => return false,
        },
        Action::Begin(i) => (i, RequestPosted, InService),
        Action::Complete(i) => (i, InService, ResponseReady),
        Action::Collect(i) => (i, ResponseReady, Free),
    };
    if states[cell] != from {
        return false;
    }
    states[cell] = to;
    true
}

fn real_step(ch: &mut Channel, handles: &mut [Option<TransferHandle>; CELLS], action: Action) -> bool {
    match action {
        Action::Post => match ch.post(load(), SimTime::ZERO) {
            Ok(h) => {
                if h.cell_index < CELLS {
                    handles[h.cell_index] = Some(h);
                }
                true
            }
            Err(_) => false,
        },
        Action::Begin(i) => ch.begin_service(i).is_ok(),
        Action::Complete(i) => ch.complete(i, Ok(vec![0; 4]), SimTime::ZERO).is_ok(),
        Action::Collect(i) => {
            let h = handles[i].unwrap_or(TransferHandle { core_id: 0, cell_index: i, sequence_number: u64::MAX });
            ch.collect(h).is_ok()
        }
    }
}

#[test]
fn exhaustive_two_cell_exploration_finds_no_illegal_transition() {
    let acts = actions();
    let mut sequences = 0;
    let mut legal_steps = 0;
    let mut idx = [0usize; STEPS];
    loop {
        let mut ch = Channel::new(0);
        let mut handles = [None; CELLS];
        let mut model = vec![CellState::Free; CELLS_PER_CHANNEL];
        for &k in &idx {
            let before: Vec<CellState> = ch.cells().iter().map(|c| c.state).collect();
            let ok = real_step(&mut ch, &mut handles, acts[k]);
            let expect_ok = model_step(&mut model, acts[k]);
            assert_eq!(ok, expect_ok, "sequence {idx:?} action {:?}", acts[k]);
            let after: Vec<CellState> = ch.cells().iter().map(|c| c.state).collect();
            for (b, a) in before.iter().zip(&after) {
                assert!(b == a || b.can_become(*a), "illegal {b:?} -> {a:?} in {idx:?}");
            }
            let changed = before.iter().zip(&after).filter(|(b, a)| b != a).count();
            assert_eq!(changed, usize::from(ok));
            assert_eq!(after, model);
            legal_steps += usize::from(ok);
        }
        sequences += 1;
        // Next sequence in lexicographic order.
        let mut pos = STEPS;
        loop {
            if pos == 0 {
                assert_eq!(sequences, acts.len().pow(STEPS as u32));
                assert!(legal_steps > 0);
                return;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < acts.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[test]
fn thirty_third_concurrent_request_would_block() {
    let mut ch = Channel::new(5);
    let handles: Vec<_> = (0..32).map(|_| ch.post(load(), SimTime::ZERO).unwrap()).collect();
    assert_eq!(ch.busy_cells(), 32);
    assert_eq!(ch.post(load(), SimTime::ZERO), Err(TransportError::WouldBlock));
    // Freeing one cell makes room again.
    ch.begin_service(7).unwrap();
    ch.complete(7, Ok(vec![1, 2, 3, 4]), SimTime::ZERO).unwrap();
    assert_eq!(ch.collect(handles[7]).unwrap(), Ok(vec![1, 2, 3, 4]));
    let h = ch.post(load(), SimTime::ZERO).unwrap();
    assert_eq!(h.cell_index, 7);
    assert_eq!(ch.collect(handles[7]), Err(TransportError::StaleHandle));
}

#[test]
fn response_is_invisible_before_its_arrival_time() {
    let mut ch = Channel::new(0);
    let h = ch.post(load(), SimTime(10)).unwrap();
    ch.begin_service(0).unwrap();
    ch.complete(0, Ok(vec![0; 4]), SimTime(500)).unwrap();
    assert!(!ch.ready(h, SimTime(499)).unwrap());
    assert_eq!(ch.cell(0).state_at(SimTime(499)), CellState::InService);
    assert!(ch.ready(h, SimTime(500)).unwrap());
}
