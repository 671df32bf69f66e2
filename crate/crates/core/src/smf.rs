//! Simulated max-min fairness (SMF) and its weighted variant (WSMF).
//!
//! At each epoch boundary the water-fill is replayed over a scratch heap
//! holding every valid demand; the contract only stores the resulting
//! share. Scratch heap work is charged at memory rates.

use crate::faucet::{
    balance_key, checked_debit, claim_stamp_key, demand_key, demand_stamp_key, elapsed, ensure, register_user,
    require_user, stamp, total_demand_key, weight_key, Algorithm, ConfigError, Faucet, CAPACITY, EPOCH, SHARE,
    USER_COUNT,
};
use crate::heap::{HeapEntry, HeapStats, MinHeap};
use crate::ledger::{Abort, Call, Contract, TrackedStorage, TxContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmfWeighting {
    /// Plain SMF.
    Unit,
    /// WSMF with weights fixed at registration.
    Constant,
    /// WSMF with `floor(precision / total_demand)`.
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmfConfig {
    pub epoch_capacity: u64,
    pub epoch_span: u64,
    pub weighting: SmfWeighting,
    /// Fixed-point scale of reciprocal weights. Unit and constant
    /// weighting run at precision 1.
    pub precision: u64,
    /// Registration ceiling; `None` leaves it to the gas limit.
    pub max_users: Option<u64>,
}

impl SmfConfig {
    pub fn unweighted(epoch_capacity: u64, epoch_span: u64) -> Self {
        Self { epoch_capacity, epoch_span, weighting: SmfWeighting::Unit, precision: 1, max_users: None }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.epoch_capacity > 0, "epoch_capacity must be positive")?;
        ensure(self.epoch_span > 0, "epoch_span must be positive")?;
        ensure(self.precision > 0, "precision must be positive")?;
        if self.weighting != SmfWeighting::Reciprocal {
            ensure(self.precision == 1, "precision applies to reciprocal weighting only")?;
        }
        Ok(())
    }
}

/// Unweighted replay: repeatedly grant `floor(capacity / live)` to every
/// live demand, retiring demands no larger than the running share, until
/// the heap empties or the capacity no longer covers one unit per demand.
/// Returns the cumulative share. Zero demands give 0.
pub fn simulate_share(heap: &mut MinHeap, capacity: u64) -> u64 {
    let mut capacity = capacity;
    let mut result = 0u64;
    if heap.is_empty() {
        return 0;
    }
    let mut share = capacity / heap.len() as u64;
    while !heap.is_empty() && share > 0 {
        while !heap.is_empty() && heap.peek_min().volume <= share {
            capacity -= heap.delete_min().volume;
        }
        capacity -= share * heap.len() as u64;
        heap.shift_all(|e| e.volume -= share);
        result += share;
        if heap.is_empty() {
            break;
        }
        share = capacity / heap.len() as u64;
    }
    result
}

/// Weighted replay over two alternating heaps. Entry volumes and the
/// capacity share one scale; each pass advances the unit share by
/// `max(1, floor(capacity / live_weight))` if the pass is affordable and
/// stops otherwise. Returns the cumulative unit share.
pub fn simulate_unit_share(source: &mut MinHeap, target: &mut MinHeap, capacity: u64) -> u64 {
    let mut capacity = capacity;
    let mut result = 0u64;
    let mut live_weight: u64 = source.as_slice().iter().map(|e| e.weight).sum();
    while !source.is_empty() && live_weight > 0 {
        let unit = (capacity / live_weight).max(1);
        let mut cost = 0u64;
        let mut retired = 0u64;
        while !source.is_empty() {
            let mut node = source.delete_min();
            let grant = unit.saturating_mul(node.weight).min(node.volume);
            cost = cost.saturating_add(grant);
            node.volume -= grant;
            if node.volume == 0 {
                retired += node.weight;
            } else {
                target.insert(node);
            }
        }
        if cost > capacity {
            break;
        }
        capacity -= cost;
        live_weight -= retired;
        result += unit;
        std::mem::swap(source, target);
    }
    result
}

#[derive(Debug, Clone)]
pub struct SmfFaucet {
    cfg: SmfConfig,
}

impl SmfFaucet {
    pub fn new(cfg: SmfConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SmfConfig {
        &self.cfg
    }

    fn weighted(&self) -> bool {
        self.cfg.weighting != SmfWeighting::Unit
    }

    fn charge_heap(ctx: &mut TxContext<'_>, before: HeapStats, after: HeapStats) -> Result<(), Abort> {
        ctx.mem(after.accesses - before.accesses)?;
        ctx.arith(after.comparisons - before.comparisons + after.sibling_comparisons - before.sibling_comparisons)
    }

    /// Share computed at an epoch boundary; reads every user's demand
    /// record and writes nothing.
    fn calculate_share(&self, ctx: &mut TxContext<'_>, epoch: u64, capacity: u64) -> Result<u64, Abort> {
        if epoch == 0 {
            return Ok(0);
        }
        let slot = epoch % 2;
        let users = ctx.read(USER_COUNT)?;
        let mut heap = MinHeap::new();
        let p = self.cfg.precision;
        for u in 0..users {
            if ctx.read(demand_stamp_key(u, slot))? != stamp(epoch - 1) {
                continue;
            }
            let d = ctx.read(demand_key(u, slot))?;
            let entry = match self.cfg.weighting {
                SmfWeighting::Unit => HeapEntry::new(d, u),
                SmfWeighting::Constant => HeapEntry::weighted(d, u, ctx.read(weight_key(u))?),
                SmfWeighting::Reciprocal => {
                    let total = ctx.read(total_demand_key(u))?;
                    ctx.arith(2)?;
                    HeapEntry::weighted(d.saturating_mul(p), u, p / total.max(1))
                }
            };
            let before = heap.stats();
            heap.insert(entry);
            Self::charge_heap(ctx, before, heap.stats())?;
        }
        if !self.weighted() {
            let before = heap.stats();
            let share = simulate_share(&mut heap, capacity);
            Self::charge_heap(ctx, before, heap.stats())?;
            return Ok(share);
        }
        let mut target = MinHeap::new();
        let before = (heap.stats(), HeapStats::default());
        let unit = simulate_unit_share(&mut heap, &mut target, capacity.saturating_mul(p));
        // the two heaps may have been swapped; charge both
        let total_after = add_stats(heap.stats(), target.stats());
        Self::charge_heap(ctx, add_stats(before.0, before.1), total_after)?;
        Ok(unit)
    }

    fn update_state(&self, ctx: &mut TxContext<'_>) -> Result<u64, Abort> {
        let since = elapsed(ctx)?;
        ctx.arith(1)?;
        let epoch_now = since / self.cfg.epoch_span;
        let epoch = ctx.read(EPOCH)?;
        if epoch < epoch_now {
            let start = ctx.gas_used();
            ctx.write(EPOCH, epoch_now)?;
            let capacity = ctx.read(CAPACITY)? + self.cfg.epoch_capacity;
            ctx.arith(1)?;
            ctx.write(CAPACITY, capacity)?;
            let share = self.calculate_share(ctx, epoch_now, capacity)?;
            ctx.write(SHARE, share)?;
            ctx.add_refund(ctx.gas_used() - start);
        }
        Ok(epoch_now)
    }

    fn register(&self, ctx: &mut TxContext<'_>, user: u64, weight: Option<u64>) -> Result<(), Abort> {
        register_user(ctx, user, self.cfg.max_users)?;
        if self.cfg.weighting == SmfWeighting::Constant {
            match weight {
                Some(w) if w > 0 => ctx.write(weight_key(user), w)?,
                _ => return Err(Abort::Rejected("constant weighting needs a positive weight")),
            }
        }
        Ok(())
    }

    fn demand(&self, ctx: &mut TxContext<'_>, user: u64, volume: u64) -> Result<(), Abort> {
        let epoch = self.update_state(ctx)?;
        require_user(ctx, user)?;
        if volume == 0 {
            return Err(Abort::Rejected("demand volume must be positive"));
        }
        ctx.arith(2)?;
        let slot = (epoch + 1) % 2;
        if ctx.read(demand_stamp_key(user, slot))? == stamp(epoch) {
            return Ok(());
        }
        ctx.write(demand_key(user, slot), volume)?;
        ctx.write(demand_stamp_key(user, slot), stamp(epoch))?;
        if self.cfg.weighting == SmfWeighting::Reciprocal {
            let total = ctx.read(total_demand_key(user))? + volume;
            ctx.arith(1)?;
            if self.cfg.precision / total == 0 {
                return Err(Abort::Rejected("precision below cumulative demand"));
            }
            ctx.write(total_demand_key(user), total)?;
        }
        Ok(())
    }

    /// Weight the user held when the claimed demand was counted: a newer
    /// demand from this epoch is excluded from the cumulative total.
    fn claim_weight(&self, ctx: &mut TxContext<'_>, user: u64, epoch: u64) -> Result<u64, Abort> {
        match self.cfg.weighting {
            SmfWeighting::Unit => Ok(1),
            SmfWeighting::Constant => ctx.read(weight_key(user)),
            SmfWeighting::Reciprocal => {
                let mut total = ctx.read(total_demand_key(user))?;
                let newer = (epoch + 1) % 2;
                if ctx.read(demand_stamp_key(user, newer))? == stamp(epoch) {
                    total -= ctx.read(demand_key(user, newer))?;
                }
                ctx.arith(3)?;
                Ok(self.cfg.precision / total.max(1))
            }
        }
    }

    fn claim(&self, ctx: &mut TxContext<'_>, user: u64) -> Result<(), Abort> {
        let epoch = self.update_state(ctx)?;
        require_user(ctx, user)?;
        if epoch == 0 {
            return Ok(());
        }
        ctx.arith(1)?;
        let slot = epoch % 2;
        if ctx.read(demand_stamp_key(user, slot))? != stamp(epoch - 1) {
            return Ok(());
        }
        if ctx.read(claim_stamp_key(user))? == stamp(epoch) {
            return Ok(());
        }
        ctx.write(claim_stamp_key(user), stamp(epoch))?;
        let share = ctx.read(SHARE)?;
        let demand = ctx.read(demand_key(user, slot))?;
        let weight = self.claim_weight(ctx, user, epoch)?;
        ctx.arith(3)?;
        let user_share = (u128::from(share) * u128::from(weight) / u128::from(self.cfg.precision)) as u64;
        let grant = user_share.min(demand);
        let balance = ctx.read(balance_key(user))?;
        ctx.write(balance_key(user), balance + grant)?;
        let capacity = ctx.read(CAPACITY)?;
        ctx.write(CAPACITY, checked_debit(capacity, grant)?)?;
        ctx.arith(2)?;
        Ok(())
    }
}

fn add_stats(a: HeapStats, b: HeapStats) -> HeapStats {
    HeapStats {
        comparisons: a.comparisons + b.comparisons,
        sibling_comparisons: a.sibling_comparisons + b.sibling_comparisons,
        accesses: a.accesses + b.accesses,
    }
}

impl Contract for SmfFaucet {
    fn execute(&mut self, ctx: &mut TxContext<'_>, call: &Call) -> Result<(), Abort> {
        match *call {
            Call::Register { user, weight } => self.register(ctx, user, weight),
            Call::Demand { user, volume } => self.demand(ctx, user, volume),
            Call::Claim { user } => self.claim(ctx, user),
            Call::Noop | Call::Distribute => Err(Abort::UnknownEntryPoint),
        }
    }

    fn log_tags(&self, storage: &TrackedStorage) -> (u64, u64) {
        (storage.peek(EPOCH), 0)
    }
}

impl Faucet for SmfFaucet {
    fn algorithm(&self) -> Algorithm {
        if self.weighted() {
            Algorithm::Wsmf
        } else {
            Algorithm::Smf
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{CostTable, Ledger, TxStatus};
    use crate::oracle::{bruteforce_share, bruteforce_unit_share, saturate, saturate_unit};
    use proptest::prelude::*;

    fn heap_of(demands: &[u64]) -> MinHeap {
        let mut h = MinHeap::new();
        for (u, &d) in demands.iter().enumerate() {
            h.insert(HeapEntry::new(d, u as u64));
        }
        h
    }

    fn unit_share(demands: &[u64], weights: &[u64], capacity: u64) -> u64 {
        let mut src = MinHeap::new();
        for (u, (&d, &w)) in demands.iter().zip(weights).enumerate() {
            src.insert(HeapEntry::weighted(d, u as u64, w));
        }
        simulate_unit_share(&mut src, &mut MinHeap::new(), capacity)
    }

    #[test]
    fn three_user_share() {
        assert_eq!(simulate_share(&mut heap_of(&[4, 11, 15]), 30), 15);
    }

    #[test]
    fn pair_leaves_residue() {
        assert_eq!(simulate_share(&mut heap_of(&[3, 3]), 5), 2);
    }

    #[test]
    fn pop_includes_equal_volumes() {
        // a strict comparison would leave 2 live at share 2 and stop at 2
        assert_eq!(simulate_share(&mut heap_of(&[2, 5]), 5), 3);
        assert_eq!(bruteforce_share(&[2, 5], 5), 3);
    }

    #[test]
    fn no_demands_share_zero() {
        assert_eq!(simulate_share(&mut MinHeap::new(), 40), 0);
    }

    #[test]
    fn weighted_pair() {
        assert_eq!(unit_share(&[10, 10], &[1, 4], 10), 2);
    }

    #[test]
    fn weighted_finishing_unit() {
        // floor(5 / 4) = 1 leaves 1 unit of capacity against weight 4,
        // yet the last unit of demand still fits
        assert_eq!(unit_share(&[5], &[4], 5), 2);
    }

    #[test]
    fn equal_weights_reduce_to_unweighted() {
        let d = [4, 11, 15];
        let p = 1000;
        let scaled: Vec<u64> = d.iter().map(|x| x * p).collect();
        assert_eq!(unit_share(&scaled, &[p; 3], 30 * p), 15);
    }

    fn deploy(cfg: SmfConfig, weights: &[Option<u64>]) -> Ledger<SmfFaucet> {
        let mut ledger = Ledger::with_defaults(SmfFaucet::new(cfg).unwrap());
        for (u, &w) in weights.iter().enumerate() {
            ledger.submit_tx(Call::Register { user: u as u64, weight: w });
        }
        ledger
    }

    #[test]
    fn ledger_round_trip() {
        let mut ledger = deploy(SmfConfig::unweighted(30, 20), &[None; 3]);
        for (u, d) in [4, 11, 15].into_iter().enumerate() {
            ledger.submit_tx(Call::Demand { user: u as u64, volume: d });
        }
        ledger.fill_empty_blocks(20 - ledger.block_number());
        for u in 0..3 {
            ledger.submit_tx(Call::Claim { user: u });
        }
        let r = ledger.submit_tx(Call::Claim { user: 1 });
        assert_eq!(r.status, TxStatus::Committed);
        let (f, s) = (ledger.contract(), ledger.storage());
        assert_eq!(f.share(s), 15);
        assert_eq!((0..3).map(|u| f.balance(s, u)).collect::<Vec<_>>(), vec![4, 11, 15]);
        assert_eq!(f.capacity(s), 0);
    }

    #[test]
    fn boundary_writes_only_scalars() {
        let mut ledger = deploy(SmfConfig::unweighted(30, 20), &[None; 4]);
        for u in 0..4 {
            ledger.submit_tx(Call::Demand { user: u, volume: 7 + u });
        }
        ledger.fill_empty_blocks(20 - ledger.block_number());
        let r = ledger.submit_tx(Call::Noop);
        assert_eq!(r.refunded_gas, 0);
        let r = ledger.submit_tx(Call::Demand { user: 0, volume: 9 });
        // epoch, capacity, share; then demand and stamp
        assert_eq!(r.ops.writes(), 3 + 2);
        assert_eq!(r.ops.reads, 1 + 1 + 1 + 2 * 4 + 1 + 1);
    }

    #[test]
    fn user_ceiling() {
        let cfg = SmfConfig { max_users: Some(2), ..SmfConfig::unweighted(30, 20) };
        let mut ledger = deploy(cfg, &[None; 2]);
        let r = ledger.submit_tx(Call::Register { user: 2, weight: None });
        assert_eq!(r.status, TxStatus::Rejected);
    }

    #[test]
    fn reciprocal_claim_excludes_newer_demand() {
        let cfg =
            SmfConfig { weighting: SmfWeighting::Reciprocal, precision: 1_000_000, ..SmfConfig::unweighted(1000, 20) };
        let mut ledger = deploy(cfg, &[None; 3]);
        for (u, d) in [20, 40, 50].into_iter().enumerate() {
            ledger.submit_tx(Call::Demand { user: u as u64, volume: d });
        }
        ledger.fill_empty_blocks(20 - ledger.block_number());
        // new demand before claiming: weight must still come from 20
        ledger.submit_tx(Call::Demand { user: 0, volume: 30 });
        ledger.submit_tx(Call::Claim { user: 0 });
        let (f, s) = (ledger.contract(), ledger.storage());
        let unit = f.share(s);
        let weights = [50_000, 25_000, 20_000];
        let expected = bruteforce_unit_share(&[20_000_000, 40_000_000, 50_000_000], &weights, 1000 * 1_000_000);
        assert_eq!(
            saturate_unit(unit, &[20_000_000, 40_000_000, 50_000_000], &weights),
            saturate_unit(expected, &[20_000_000, 40_000_000, 50_000_000], &weights)
        );
        assert_eq!(f.balance(s, 0), 20.min(unit * 50_000 / 1_000_000));
    }

    #[test]
    fn constant_weights_beyond_ceiling_revert() {
        let cfg = SmfConfig { weighting: SmfWeighting::Constant, ..SmfConfig::unweighted(30, 100) };
        let costs = CostTable::default();
        let mut ledger = Ledger::new(SmfFaucet::new(cfg).unwrap(), costs, 200_000).unwrap();
        for u in 0..40 {
            ledger.submit_tx(Call::Register { user: u, weight: Some(3) });
        }
        for u in 0..40 {
            ledger.submit_tx(Call::Demand { user: u, volume: 10 });
        }
        ledger.fill_empty_blocks(100 - ledger.block_number());
        let before = ledger.storage().clone();
        let r = ledger.submit_tx(Call::Claim { user: 0 });
        assert_eq!(r.status, TxStatus::RevertedGasLimit);
        assert_eq!(ledger.storage(), &before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn share_matches_bruteforce(demands in proptest::collection::vec(1u64..60, 0..25), capacity in 0u64..600) {
            let got = simulate_share(&mut heap_of(&demands), capacity);
            if demands.is_empty() {
                prop_assert_eq!(got, 0);
            } else {
                prop_assert_eq!(saturate(got, &demands), bruteforce_share(&demands, capacity));
            }
        }

        #[test]
        fn unit_share_matches_bruteforce(
            users in proptest::collection::vec((1u64..60, 1u64..=10), 1..15),
            capacity in 0u64..600,
        ) {
            let d: Vec<u64> = users.iter().map(|p| p.0).collect();
            let w: Vec<u64> = users.iter().map(|p| p.1).collect();
            let got = unit_share(&d, &w, capacity);
            let grants: u64 = d.iter().zip(&w).map(|(&d, &w)| (got * w).min(d)).sum();
            prop_assert!(grants <= capacity);
            prop_assert_eq!(saturate_unit(got, &d, &w), bruteforce_unit_share(&d, &w, capacity));
        }
    }
}
