//! Array-backed binary min-heap keyed on demand volume.
//!
//! The sift routines are generic over [`HeapStorage`] so the same code runs
//! on a plain vector (scratch memory) and on metered ledger cells.

use std::convert::Infallible;

/// One demand in a heap. `weight` is only meaningful for weighted variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HeapEntry {
    pub volume: u64,
    pub user_id: u64,
    pub weight: u64,
}

impl HeapEntry {
    pub fn new(volume: u64, user_id: u64) -> Self {
        Self { volume, user_id, weight: 1 }
    }

    pub fn weighted(volume: u64, user_id: u64, weight: u64) -> Self {
        Self { volume, user_id, weight }
    }
}

/// Instrumentation counters.
///
/// `comparisons` counts parent/child key comparisons, one per tree level
/// visited. `sibling_comparisons` counts the left/right child selections
/// made during sift-down.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeapStats {
    pub comparisons: u64,
    pub sibling_comparisons: u64,
    pub accesses: u64,
}

/// Backing array of a heap.
#[allow(clippy::len_without_is_empty)]
pub trait HeapStorage {
    type Error;

    fn len(&mut self) -> Result<usize, Self::Error>;
    fn set_len(&mut self, len: usize) -> Result<(), Self::Error>;
    fn get(&mut self, index: usize) -> Result<HeapEntry, Self::Error>;
    /// Writes slot `index`; `index == len` appends.
    fn set(&mut self, index: usize, entry: HeapEntry) -> Result<(), Self::Error>;
}

pub fn insert<S: HeapStorage>(store: &mut S, entry: HeapEntry, stats: &mut HeapStats) -> Result<(), S::Error> {
    let len = store.len()?;
    let mut idx = len;
    while idx > 0 {
        let parent = (idx - 1) / 2;
        let up = store.get(parent)?;
        stats.accesses += 1;
        stats.comparisons += 1;
        if up.volume <= entry.volume {
            break;
        }
        store.set(idx, up)?;
        stats.accesses += 1;
        idx = parent;
    }
    store.set(idx, entry)?;
    stats.accesses += 1;
    store.set_len(len + 1)?;
    Ok(())
}

/// Removes and returns the root. Panics on an empty heap.
pub fn delete_min<S: HeapStorage>(store: &mut S, stats: &mut HeapStats) -> Result<HeapEntry, S::Error> {
    let len = store.len()?;
    assert!(len > 0, "delete_min on empty heap");
    let root = store.get(0)?;
    stats.accesses += 1;
    let last_idx = len - 1;
    if last_idx == 0 {
        store.set_len(0)?;
        return Ok(root);
    }
    let last = store.get(last_idx)?;
    stats.accesses += 1;
    store.set_len(last_idx)?;
    let size = last_idx;
    let mut idx = 0;
    loop {
        let left = 2 * idx + 1;
        if left >= size {
            break;
        }
        let mut child = left;
        let mut down = store.get(left)?;
        stats.accesses += 1;
        let right = left + 1;
        if right < size {
            let r = store.get(right)?;
            stats.accesses += 1;
            stats.sibling_comparisons += 1;
            if r.volume < down.volume {
                child = right;
                down = r;
            }
        }
        stats.comparisons += 1;
        if last.volume <= down.volume {
            break;
        }
        store.set(idx, down)?;
        stats.accesses += 1;
        idx = child;
    }
    store.set(idx, last)?;
    stats.accesses += 1;
    Ok(root)
}

/// Returns the root without removing it. Panics on an empty heap.
pub fn peek_min<S: HeapStorage>(store: &mut S, stats: &mut HeapStats) -> Result<HeapEntry, S::Error> {
    assert!(store.len()? > 0, "peek_min on empty heap");
    stats.accesses += 1;
    store.get(0)
}

/// Heap held in ordinary memory.
#[derive(Debug, Clone, Default)]
pub struct MinHeap {
    entries: Vec<HeapEntry>,
    stats: HeapStats,
}

impl HeapStorage for Vec<HeapEntry> {
    type Error = Infallible;

    fn len(&mut self) -> Result<usize, Infallible> {
        Ok(Vec::len(self))
    }

    fn set_len(&mut self, len: usize) -> Result<(), Infallible> {
        self.truncate(len);
        Ok(())
    }

    fn get(&mut self, index: usize) -> Result<HeapEntry, Infallible> {
        Ok(self[index])
    }

    fn set(&mut self, index: usize, entry: HeapEntry) -> Result<(), Infallible> {
        if index == Vec::len(self) {
            self.push(entry);
        } else {
            self[index] = entry;
        }
        Ok(())
    }
}

fn infallible<T>(r: Result<T, Infallible>) -> T {
    match r {
        Ok(v) => v,
        Err(never) => match never {},
    }
}

impl MinHeap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> HeapStats {
        self.stats
    }

    pub fn insert(&mut self, entry: HeapEntry) {
        infallible(insert(&mut self.entries, entry, &mut self.stats));
    }

    pub fn delete_min(&mut self) -> HeapEntry {
        infallible(delete_min(&mut self.entries, &mut self.stats))
    }

    pub fn peek_min(&mut self) -> HeapEntry {
        infallible(peek_min(&mut self.entries, &mut self.stats))
    }

    /// Occupied prefix of the backing array.
    pub fn as_slice(&self) -> &[HeapEntry] {
        &self.entries
    }

    /// Applies `f` to every entry in place. Only order-preserving updates
    /// (the same shift applied to every volume) keep the heap valid.
    pub fn shift_all(&mut self, mut f: impl FnMut(&mut HeapEntry)) {
        for e in &mut self.entries {
            f(e);
        }
        self.stats.accesses += 2 * self.entries.len() as u64;
    }

    /// Depth of the complete tree (levels).
    pub fn depth(&self) -> u32 {
        usize::BITS - self.entries.len().leading_zeros()
    }

    /// True when every parent is no larger than its children.
    pub fn is_valid(&self) -> bool {
        (1..self.entries.len()).all(|i| self.entries[(i - 1) / 2].volume <= self.entries[i].volume)
    }
}

/// `ceil(log2(size)) + 1`, the per-operation level bound.
pub fn level_bound(size: usize) -> u64 {
    if size <= 1 {
        1
    } else {
        u64::from(usize::BITS - (size - 1).leading_zeros()) + 1
    }
}
