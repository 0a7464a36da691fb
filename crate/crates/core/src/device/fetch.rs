//! Local copies of external data: the on-demand element pool and the
//! per-parameter prefetch ring buffers.

use std::collections::HashMap;

use crate::model::PrefetchSpec;
use crate::transport::TransferHandle;

const NIL: usize = usize::MAX;

#[derive(Debug, Clone)]
struct Node {
    key: u64,
    value: u32,
    prev: usize,
    next: usize,
}

/// Fixed-capacity least-recently-used cache of single elements.
#[derive(Debug, Clone)]
pub struct LruPool {
    capacity: usize,
    map: HashMap<u64, usize>,
    nodes: Vec<Node>,
    head: usize,
    tail: usize,
}

impl LruPool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "pool needs room for one element");
        Self {
            capacity,
            map: HashMap::with_capacity(capacity),
            nodes: Vec::with_capacity(capacity),
            head: NIL,
            tail: NIL,
        }
    }

    pub fn key(slot: u16, index: usize) -> u64 {
        (u64::from(slot) << 32) | index as u64
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn unlink(&mut self, i: usize) {
        let (prev, next) = (self.nodes[i].prev, self.nodes[i].next);
        if prev == NIL {
            self.head = next;
        } else {
            self.nodes[prev].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.nodes[next].prev = prev;
        }
    }

    fn push_front(&mut self, i: usize) {
        self.nodes[i].prev = NIL;
        self.nodes[i].next = self.head;
        if self.head != NIL {
            self.nodes[self.head].prev = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    pub fn get(&mut self, key: u64) -> Option<u32> {
        let i = *self.map.get(&key)?;
        self.unlink(i);
        self.push_front(i);
        Some(self.nodes[i].value)
    }

    /// Updates an element if it is already resident.
    pub fn update(&mut self, key: u64, value: u32) -> bool {
        match self.map.get(&key) {
            Some(&i) => {
                self.nodes[i].value = value;
                self.unlink(i);
                self.push_front(i);
                true
            }
            None => false,
        }
    }

    /// Inserts, evicting the least recently used element when full.
    pub fn insert(&mut self, key: u64, value: u32) {
        if self.update(key, value) {
            return;
        }
        let i = if self.nodes.len() < self.capacity {
            self.nodes.push(Node { key, value, prev: NIL, next: NIL });
            self.nodes.len() - 1
        } else {
            let victim = self.tail;
            self.unlink(victim);
            self.map.remove(&self.nodes[victim].key);
            self.nodes[victim].key = key;
            self.nodes[victim].value = value;
            victim
        };
        self.map.insert(key, i);
        self.push_front(i);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InFlight {
    pub handle: TransferHandle,
    pub start: usize,
    pub count: usize,
}

/// Sliding window over one external array, stored as a ring: element `i`
/// lives in slot `i % buffer_size`.
#[derive(Debug, Clone)]
pub struct PrefetchBuffer {
    pub spec: PrefetchSpec,
    /// Length of the whole external array.
    pub length: usize,
    ring: Vec<u32>,
    window_start: usize,
    valid: usize,
    pub in_flight: Option<InFlight>,
    /// Writes made while a transfer covering them was in flight; they win
    /// over the older data that transfer brings back.
    overrides: Vec<(usize, u32)>,
    /// Index of the most recent read.
    pub cursor: usize,
}

impl PrefetchBuffer {
    pub fn new(spec: PrefetchSpec, length: usize) -> Self {
        Self {
            ring: vec![0; spec.buffer_size],
            spec,
            length,
            window_start: 0,
            valid: 0,
            in_flight: None,
            overrides: Vec::new(),
            cursor: 0,
        }
    }

    pub fn window(&self) -> (usize, usize) {
        (self.window_start, self.valid)
    }

    pub fn frontier(&self) -> usize {
        self.window_start + self.valid
    }

    pub fn contains(&self, index: usize) -> bool {
        index >= self.window_start && index < self.frontier()
    }

    pub fn get(&self, index: usize) -> u32 {
        debug_assert!(self.contains(index));
        self.ring[index % self.spec.buffer_size]
    }

    /// Discards the window and restarts it at `index`. Only legal with nothing in flight.
    pub fn restart(&mut self, index: usize) {
        assert!(self.in_flight.is_none());
        self.window_start = index;
        self.valid = 0;
        self.overrides.clear();
    }

    /// Next chunk to request, if the lookahead wants one and nothing is in flight.
    pub fn wanted(&self) -> Option<(usize, usize)> {
        let frontier = self.frontier();
        if self.in_flight.is_some() || frontier >= self.length {
            return None;
        }
        if self.cursor + self.spec.distance < frontier {
            return None;
        }
        let count = self.spec.elements_per_prefetch.min(self.length - frontier);
        // Accepting the chunk must not evict the element after the cursor.
        if frontier + count > self.cursor + 1 + self.spec.buffer_size {
            return None;
        }
        Some((frontier, count))
    }

    /// The chunk for a read of `index` that missed, with nothing in flight.
    pub fn chunk_at(&self, index: usize) -> (usize, usize) {
        (index, self.spec.elements_per_prefetch.min(self.length - index))
    }

    /// Appends an arrived chunk at the frontier, evicting the oldest elements.
    pub fn accept(&mut self, start: usize, values: &[u32]) {
        assert_eq!(start, self.frontier(), "prefetch chunks arrive in order");
        let size = self.spec.buffer_size;
        for (k, &v) in values.iter().enumerate() {
            if self.valid == size {
                self.window_start += 1;
                self.valid -= 1;
            }
            self.ring[(start + k) % size] = v;
            self.valid += 1;
        }
        let end = start + values.len();
        for (i, v) in std::mem::take(&mut self.overrides) {
            if i >= start && i < end && self.contains(i) {
                self.ring[i % size] = v;
            }
        }
    }

    /// Updates the local copy of `index`, if any.
    pub fn write(&mut self, index: usize, value: u32) {
        if self.contains(index) {
            self.ring[index % self.spec.buffer_size] = value;
        }
        if let Some(f) = self.in_flight {
            if index >= f.start && index < f.start + f.count {
                self.overrides.push((index, value));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AccessMode;
    use proptest::prelude::*;

    #[test]
    fn lru_evicts_least_recent() {
        let mut p = LruPool::new(2);
        p.insert(1, 10);
        p.insert(2, 20);
        assert_eq!(p.get(1), Some(10));
        p.insert(3, 30);
        assert_eq!(p.get(2), None);
        assert_eq!(p.get(1), Some(10));
        assert_eq!(p.get(3), Some(30));
        assert!(p.update(3, 31));
        assert!(!p.update(2, 0));
        assert_eq!(p.get(3), Some(31));
    }

    #[test]
    fn ring_window_slides() {
        let spec = PrefetchSpec::new("a", 4, 2, 4, AccessMode::ReadOnly);
        let mut b = PrefetchBuffer::new(spec, 10);
        assert_eq!(b.wanted(), Some((0, 2)));
        b.accept(0, &[0, 1]);
        b.accept(2, &[2, 3]);
        b.accept(4, &[4, 5]);
        assert_eq!(b.window(), (2, 4));
        assert!(!b.contains(1));
        assert_eq!(b.get(5), 5);
        b.cursor = 5;
        assert_eq!(b.wanted(), Some((6, 2)));
        b.cursor = 1;
        assert_eq!(b.wanted(), None);
    }

    #[test]
    fn last_chunk_is_clamped() {
        let spec = PrefetchSpec::new("a", 8, 4, 8, AccessMode::ReadOnly);
        let mut b = PrefetchBuffer::new(spec, 6);
        b.accept(0, &[0, 1, 2, 3]);
        assert_eq!(b.wanted(), Some((4, 2)));
        b.accept(4, &[4, 5]);
        assert_eq!(b.wanted(), None);
    }

    /// Reference model: a plain map with recency stamps.
    fn model_lru(capacity: usize, ops: &[(bool, u64, u32)]) -> Vec<Option<u32>> {
        let mut entries: Vec<(u64, u32, usize)> = Vec::new();
        let mut out = Vec::new();
        for (stamp, &(is_get, key, value)) in ops.iter().enumerate() {
            let pos = entries.iter().position(|e| e.0 == key);
            if is_get {
                out.push(pos.map(|p| {
                    entries[p].2 = stamp;
                    entries[p].1
                }));
            } else if let Some(p) = pos {
                entries[p] = (key, value, stamp);
            } else {
                if entries.len() == capacity {
                    let oldest = (0..entries.len()).min_by_key(|&i| entries[i].2).unwrap();
                    entries.remove(oldest);
                }
                entries.push((key, value, stamp));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn lru_matches_model(
            capacity in 1usize..6,
            ops in proptest::collection::vec((any::<bool>(), 0u64..8, any::<u32>()), 0..200)
        ) {
            let mut pool = LruPool::new(capacity);
            let mut got = Vec::new();
            for &(is_get, key, value) in &ops {
                if is_get { got.push(pool.get(key)); } else { pool.insert(key, value); }
                prop_assert!(pool.len() <= capacity);
            }
            prop_assert_eq!(got, model_lru(capacity, &ops));
        }

        #[test]
        fn ring_holds_exactly_the_window(
            size in 1usize..12, chunk_seed in 1usize..12, len in 1usize..100
        ) {
            let chunk = chunk_seed.min(size);
            let spec = PrefetchSpec::new("a", size, chunk, 1, AccessMode::ReadOnly);
            let mut b = PrefetchBuffer::new(spec, len);
            while b.frontier() < len {
                let (start, n) = b.chunk_at(b.frontier());
                let vals: Vec<u32> = (start..start + n).map(|i| i as u32 * 3).collect();
                b.accept(start, &vals);
                let (ws, valid) = b.window();
                prop_assert!(valid <= size);
                for i in ws..ws + valid { prop_assert_eq!(b.get(i), i as u32 * 3); }
            }
        }
    }
}
