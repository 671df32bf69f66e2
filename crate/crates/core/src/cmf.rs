//! Centralized max-min fairness (CMF): demands wait in a storage-backed
//! heap and a single `distribute` call runs the whole water-fill on chain.

use crate::faucet::{
    balance_key, ensure, register_user, require_user, Algorithm, ConfigError, Faucet, CAPACITY, EPOCH, USER_COUNT,
};
use crate::heap::{self, HeapEntry, HeapStats, HeapStorage};
use crate::ledger::{Abort, Call, CellKey, Contract, TrackedStorage, TxContext};
use crate::oracle::AllocationResult;

fn heap_len_key(h: u64) -> CellKey {
    CellKey::at("heap_len", h)
}

fn heap_volume_key(h: u64, i: usize) -> CellKey {
    CellKey::at2("heap_volume", h, i as u64)
}

fn heap_user_key(h: u64, i: usize) -> CellKey {
    CellKey::at2("heap_user", h, i as u64)
}

/// Heap array living in contract storage; every slot access is metered.
struct StorageHeap<'c, 'a> {
    ctx: &'c mut TxContext<'a>,
    id: u64,
}

impl HeapStorage for StorageHeap<'_, '_> {
    type Error = Abort;

    fn len(&mut self) -> Result<usize, Abort> {
        Ok(self.ctx.read(heap_len_key(self.id))? as usize)
    }

    fn set_len(&mut self, len: usize) -> Result<(), Abort> {
        self.ctx.write(heap_len_key(self.id), len as u64)
    }

    fn get(&mut self, index: usize) -> Result<HeapEntry, Abort> {
        let volume = self.ctx.read(heap_volume_key(self.id, index))?;
        let user = self.ctx.read(heap_user_key(self.id, index))?;
        Ok(HeapEntry::new(volume, user))
    }

    fn set(&mut self, index: usize, entry: HeapEntry) -> Result<(), Abort> {
        self.ctx.write(heap_volume_key(self.id, index), entry.volume)?;
        self.ctx.write(heap_user_key(self.id, index), entry.user_id)
    }
}

fn heap_insert(ctx: &mut TxContext<'_>, id: u64, entry: HeapEntry) -> Result<(), Abort> {
    let mut stats = HeapStats::default();
    heap::insert(&mut StorageHeap { ctx, id }, entry, &mut stats)?;
    ctx.arith(stats.comparisons + stats.sibling_comparisons)
}

fn heap_delete_min(ctx: &mut TxContext<'_>, id: u64) -> Result<HeapEntry, Abort> {
    let mut stats = HeapStats::default();
    let e = heap::delete_min(&mut StorageHeap { ctx, id }, &mut stats)?;
    ctx.arith(stats.comparisons + stats.sibling_comparisons)?;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CmfConfig {
    /// Capacity added by every `distribute` call.
    pub epoch_capacity: u64,
}

impl CmfConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.epoch_capacity > 0, "epoch_capacity must be positive")
    }
}

#[derive(Debug, Clone)]
pub struct CmfFaucet {
    cfg: CmfConfig,
    last: Option<AllocationResult>,
}

impl CmfFaucet {
    pub fn new(cfg: CmfConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self { cfg, last: None })
    }

    /// Allocation computed by the most recent `distribute` call that
    /// ran to completion. A reverted call may leave a stale value here,
    /// so callers should check the receipt status first.
    pub fn last_distribution(&self) -> Option<&AllocationResult> {
        self.last.as_ref()
    }

    /// Demands waiting for the next distribution, in heap array order.
    pub fn pending(&self, storage: &TrackedStorage) -> Vec<HeapEntry> {
        let len = storage.peek(heap_len_key(0)) as usize;
        (0..len)
            .map(|i| HeapEntry::new(storage.peek(heap_volume_key(0, i)), storage.peek(heap_user_key(0, i))))
            .collect()
    }

    fn demand(&self, ctx: &mut TxContext<'_>, user: u64, volume: u64) -> Result<(), Abort> {
        require_user(ctx, user)?;
        if volume == 0 {
            return Err(Abort::Rejected("demand volume must be positive"));
        }
        heap_insert(ctx, 0, HeapEntry::new(volume, user))
    }

    /// Water-fill over the pending heap. Demands move between the two heaps
    /// each iteration; whatever is unsatisfied at the end is discarded.
    fn distribute(&mut self, ctx: &mut TxContext<'_>) -> Result<(), Abort> {
        let round = ctx.read(EPOCH)?;
        ctx.write(EPOCH, round + 1)?;
        let mut capacity = ctx.read(CAPACITY)? + self.cfg.epoch_capacity;
        ctx.arith(1)?;
        ctx.write(CAPACITY, capacity)?;
        let users = ctx.read(USER_COUNT)? as usize;
        let mut allocations = vec![0u64; users];
        let mut shares = Vec::new();
        let mut source = 0u64;
        loop {
            let size = ctx.read(heap_len_key(source))?;
            if size == 0 || capacity == 0 {
                break;
            }
            ctx.arith(2)?;
            let share = if capacity < size { 1 } else { capacity / size };
            shares.push(share);
            let target = 1 - source;
            for _ in 0..size {
                if capacity == 0 {
                    break;
                }
                let mut entry = heap_delete_min(ctx, source)?;
                let grant = share.min(entry.volume).min(capacity);
                let balance = ctx.read(balance_key(entry.user_id))?;
                ctx.write(balance_key(entry.user_id), balance + grant)?;
                capacity -= grant;
                ctx.write(CAPACITY, capacity)?;
                ctx.arith(4)?;
                allocations[entry.user_id as usize] += grant;
                entry.volume -= grant;
                if entry.volume > 0 {
                    heap_insert(ctx, target, entry)?;
                }
            }
            if capacity == 0 {
                break;
            }
            source = target;
        }
        ctx.write(heap_len_key(0), 0)?;
        ctx.write(heap_len_key(1), 0)?;
        self.last = Some(AllocationResult {
            allocations,
            leftover_capacity: capacity,
            iterations: shares.len(),
            per_iteration_shares: shares,
        });
        Ok(())
    }
}

impl Contract for CmfFaucet {
    fn execute(&mut self, ctx: &mut TxContext<'_>, call: &Call) -> Result<(), Abort> {
        match *call {
            Call::Register { user, .. } => register_user(ctx, user, None),
            Call::Demand { user, volume } => self.demand(ctx, user, volume),
            Call::Distribute => self.distribute(ctx),
            Call::Claim { .. } | Call::Noop => Err(Abort::UnknownEntryPoint),
        }
    }

    fn log_tags(&self, storage: &TrackedStorage) -> (u64, u64) {
        (storage.peek(EPOCH), 0)
    }
}

impl Faucet for CmfFaucet {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Cmf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Ledger, TxStatus};
    use crate::oracle::{maxmin_allocate_ordered, ResidueOrder};

    fn deploy(n: u64, capacity: u64, limit: u64) -> Ledger<CmfFaucet> {
        let f = CmfFaucet::new(CmfConfig { epoch_capacity: capacity }).unwrap();
        let mut ledger = Ledger::new(f, Default::default(), limit).unwrap();
        for u in 0..n {
            ledger.submit_tx(Call::Register { user: u, weight: None });
        }
        ledger
    }

    #[test]
    fn three_user_distribution() {
        let mut ledger = deploy(3, 30, u64::MAX);
        for (u, d) in [4, 11, 15].into_iter().enumerate() {
            ledger.submit_tx(Call::Demand { user: u as u64, volume: d });
        }
        let r = ledger.submit_tx(Call::Distribute);
        assert_eq!(r.status, TxStatus::Committed);
        let (f, s) = (ledger.contract(), ledger.storage());
        let last = f.last_distribution().unwrap();
        assert_eq!(last.allocations, vec![4, 11, 15]);
        assert_eq!(last.per_iteration_shares, vec![10, 3, 2]);
        assert_eq!((0..3).map(|u| f.balance(s, u)).collect::<Vec<_>>(), vec![4, 11, 15]);
        assert_eq!(f.capacity(s), 0);
        assert!(f.pending(s).is_empty());
    }

    #[test]
    fn empty_heap_keeps_capacity() {
        let mut ledger = deploy(2, 30, u64::MAX);
        ledger.submit_tx(Call::Distribute);
        let f = ledger.contract();
        assert_eq!(f.capacity(ledger.storage()), 30);
        assert_eq!(f.last_distribution().unwrap().total_granted(), 0);
    }

    #[test]
    fn residue_follows_heap_order() {
        let mut ledger = deploy(4, 7, u64::MAX);
        for (u, d) in [9, 3, 5, 3].into_iter().enumerate() {
            ledger.submit_tx(Call::Demand { user: u as u64, volume: d });
        }
        ledger.submit_tx(Call::Distribute);
        let got = ledger.contract().last_distribution().unwrap().clone();
        let want = maxmin_allocate_ordered(&[9, 3, 5, 3], 7, ResidueOrder::AscendingVolume);
        assert_eq!(got.total_granted(), 7);
        let mut a = got.allocations.clone();
        let mut b = want.allocations.clone();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn large_population_exceeds_block_limit() {
        let mut ledger = deploy(100, 2000, crate::ledger::DEFAULT_BLOCK_GAS_LIMIT);
        for u in 0..100 {
            ledger.submit_tx(Call::Demand { user: u, volume: 10 + (u * 7) % 20 });
        }
        let before = ledger.storage().clone();
        let r = ledger.submit_tx(Call::Distribute);
        assert_eq!(r.status, TxStatus::RevertedGasLimit);
        assert_eq!(ledger.storage(), &before);
    }
}
