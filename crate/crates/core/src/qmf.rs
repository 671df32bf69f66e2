//! Quantized max-min fairness (QMF) and its weighted variant (WQMF).
//!
//! Demands are integers in `1..=quanta` and are kept as a per-volume
//! histogram, so the epoch share is found with one pass over the buckets.

use crate::faucet::{
    balance_key, checked_debit, claim_stamp_key, demand_key, demand_stamp_key, elapsed, ensure, register_user,
    require_user, stamp, weight_key, Algorithm, ConfigError, Faucet, CAPACITY, EPOCH, SHARE,
};
use crate::ledger::{Abort, Call, CellKey, Contract, TrackedStorage, TxContext};

/// Default upper end of the WQMF weight interval.
pub const DEFAULT_WEIGHT_MAX: u64 = 10;

fn count_key(slot: u64, bucket: u64) -> CellKey {
    CellKey::at2("demands", slot, bucket)
}

fn bucket_weight_key(slot: u64, bucket: u64) -> CellKey {
    CellKey::at2("weights", slot, bucket)
}

fn bucket_stamp_key(slot: u64, bucket: u64) -> CellKey {
    CellKey::at2("reset_epoch", slot, bucket)
}

fn total_demands_key(slot: u64) -> CellKey {
    CellKey::at("total_demands", slot)
}

fn total_weights_key(slot: u64) -> CellKey {
    CellKey::at("total_weights", slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QmfConfig {
    pub epoch_capacity: u64,
    pub epoch_span: u64,
    pub quanta: u64,
    /// `Some(max)` selects WQMF with constant weights in `1..=max`.
    pub weight_max: Option<u64>,
}

impl QmfConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.epoch_capacity > 0, "epoch_capacity must be positive")?;
        ensure(self.epoch_span > 0, "epoch_span must be positive")?;
        ensure(self.quanta > 0, "quanta must be positive")?;
        ensure(self.weight_max != Some(0), "weight_max must be positive")
    }
}

/// Outcome of one share search, with the necessary capacity of every
/// proposal evaluated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareSearch {
    pub share: u64,
    pub necessary: Vec<u64>,
}

/// Unweighted search over a histogram (`counts[k]` = demands of volume
/// `k + 1`). Returns `i - 1` at the first proposal `i` whose necessary
/// capacity exceeds `capacity`, else `counts.len()`.
pub fn histogram_share(counts: &[u64], capacity: u64) -> ShareSearch {
    let total: u64 = counts.iter().sum();
    let mut necessary = Vec::new();
    let mut cum_count = 0u64;
    let mut cum_volume = 0u64;
    for (k, &c) in counts.iter().enumerate() {
        let i = k as u64 + 1;
        let nc = cum_volume + i * (total - cum_count);
        necessary.push(nc);
        if capacity < nc {
            return ShareSearch { share: i - 1, necessary };
        }
        cum_count += c;
        cum_volume += i * c;
    }
    ShareSearch { share: counts.len() as u64, necessary }
}

#[derive(Debug, Clone)]
pub struct QmfFaucet {
    cfg: QmfConfig,
}

impl QmfFaucet {
    pub fn new(cfg: QmfConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &QmfConfig {
        &self.cfg
    }

    fn weighted(&self) -> bool {
        self.cfg.weight_max.is_some()
    }

    /// Valid histogram for the claim side of `epoch`, read without metering:
    /// (per-bucket demand values, per-bucket weights). Unweighted buckets
    /// hold counts.
    pub fn histogram(&self, storage: &TrackedStorage, epoch: u64) -> (Vec<u64>, Vec<u64>) {
        let slot = epoch % 2;
        let valid = |b| epoch > 0 && storage.peek(bucket_stamp_key(slot, b)) == stamp(epoch - 1);
        (1..=self.cfg.quanta)
            .map(|b| {
                if valid(b) {
                    (storage.peek(count_key(slot, b)), storage.peek(bucket_weight_key(slot, b)))
                } else {
                    (0, 0)
                }
            })
            .unzip()
    }

    /// Share search run at each epoch boundary. Only reads storage.
    fn calculate_share(&self, ctx: &mut TxContext<'_>, epoch: u64, capacity: u64) -> Result<u64, Abort> {
        let slot = epoch % 2;
        let prior = epoch.checked_sub(1).map(stamp);
        let total = ctx.read(total_demands_key(slot))?;
        let total_w = if self.weighted() { ctx.read(total_weights_key(slot))? } else { total };
        let mut cum_units = 0u64;
        let mut cum_volume = 0u64;
        for i in 1..=self.cfg.quanta {
            ctx.arith(4)?;
            let nc = u128::from(cum_volume) + u128::from(i) * u128::from(total_w.saturating_sub(cum_units));
            if u128::from(capacity) < nc {
                return Ok(i - 1);
            }
            if Some(ctx.read(bucket_stamp_key(slot, i))?) != prior {
                continue;
            }
            let value = ctx.read(count_key(slot, i))?;
            ctx.arith(3)?;
            if self.weighted() {
                cum_volume += value;
                cum_units += ctx.read(bucket_weight_key(slot, i))?;
            } else {
                cum_volume += i * value;
                cum_units += value;
            }
        }
        Ok(self.cfg.quanta)
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
            let next = (epoch_now + 1) % 2;
            ctx.write(total_demands_key(next), 0)?;
            if self.weighted() {
                ctx.write(total_weights_key(next), 0)?;
            }
            ctx.add_refund(ctx.gas_used() - start);
        }
        Ok(epoch_now)
    }

    fn register(&self, ctx: &mut TxContext<'_>, user: u64, weight: Option<u64>) -> Result<(), Abort> {
        register_user(ctx, user, None)?;
        if let Some(max) = self.cfg.weight_max {
            match weight {
                Some(w) if (1..=max).contains(&w) => ctx.write(weight_key(user), w)?,
                _ => return Err(Abort::Rejected("weight outside the admissible set")),
            }
        }
        Ok(())
    }

    fn demand(&self, ctx: &mut TxContext<'_>, user: u64, volume: u64) -> Result<(), Abort> {
        let epoch = self.update_state(ctx)?;
        require_user(ctx, user)?;
        let weight = if self.weighted() { ctx.read(weight_key(user))? } else { 1 };
        ctx.arith(3)?;
        let bucket = volume.div_ceil(weight);
        if volume == 0 || bucket > self.cfg.quanta {
            return Err(Abort::Rejected("demand volume outside the quantized interval"));
        }
        let slot = (epoch + 1) % 2;
        if ctx.read(demand_stamp_key(user, slot))? == stamp(epoch) {
            return Ok(());
        }
        ctx.write(demand_key(user, slot), volume)?;
        ctx.write(demand_stamp_key(user, slot), stamp(epoch))?;

        let added = if self.weighted() { volume } else { 1 };
        if ctx.read(bucket_stamp_key(slot, bucket))? != stamp(epoch) {
            ctx.write(bucket_stamp_key(slot, bucket), stamp(epoch))?;
            ctx.write(count_key(slot, bucket), added)?;
            if self.weighted() {
                ctx.write(bucket_weight_key(slot, bucket), weight)?;
            }
        } else {
            let c = ctx.read(count_key(slot, bucket))?;
            ctx.write(count_key(slot, bucket), c + added)?;
            if self.weighted() {
                let w = ctx.read(bucket_weight_key(slot, bucket))?;
                ctx.write(bucket_weight_key(slot, bucket), w + weight)?;
            }
        }
        let total = ctx.read(total_demands_key(slot))?;
        ctx.write(total_demands_key(slot), total + added)?;
        if self.weighted() {
            let tw = ctx.read(total_weights_key(slot))?;
            ctx.write(total_weights_key(slot), tw + weight)?;
        }
        ctx.arith(3)?;
        Ok(())
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
        let user_share = if self.weighted() { share.saturating_mul(ctx.read(weight_key(user))?) } else { share };
        ctx.arith(2)?;
        let grant = user_share.min(demand);
        let balance = ctx.read(balance_key(user))?;
        ctx.write(balance_key(user), balance + grant)?;
        let capacity = ctx.read(CAPACITY)?;
        ctx.write(CAPACITY, checked_debit(capacity, grant)?)?;
        ctx.arith(2)?;
        Ok(())
    }
}

impl Contract for QmfFaucet {
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

impl Faucet for QmfFaucet {
    fn algorithm(&self) -> Algorithm {
        if self.weighted() {
            Algorithm::Wqmf
        } else {
            Algorithm::Qmf
        }
    }
}
