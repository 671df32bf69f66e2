//! Autonomous max-min fairness (AMF) and its weighted variant (WAMF).
//!
//! Every user claims once per round; a round's share is computed from the
//! capacity and the weight of the users still unsatisfied, so a full epoch
//! of rounds replays the water-fill iterations one claim at a time.

use crate::faucet::{
    balance_key, checked_debit, claim_stamp_key, demand_key, demand_stamp_key, elapsed, ensure, register_user,
    require_user, stamp, total_demand_key, weight_key, Algorithm, ConfigError, Faucet, CAPACITY, EPOCH, ROUND, SHARE,
};
use crate::ledger::{Abort, Call, CellKey, Contract, TrackedStorage, TxContext};
use crate::oracle::weighted_grant;

const RESET_EPOCH: CellKey = CellKey::scalar("reset_epoch");

fn total_weight_key(slot: u64) -> CellKey {
    CellKey::at("total_weight", slot)
}

fn claim_round_key(user: u64) -> CellKey {
    CellKey::at("claim_round", user)
}

fn demand_weight_key(user: u64, slot: u64) -> CellKey {
    CellKey::at2("demand_weight", user, slot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmfWeighting {
    /// Plain AMF: every weight is 1 and precision is 1.
    Unit,
    /// Weight fixed at registration.
    Constant,
    /// `floor(precision / total_demand)`, recomputed on every demand.
    Reciprocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmfConfig {
    pub epoch_capacity: u64,
    pub epoch_span: u64,
    pub round_span: u64,
    pub weighting: AmfWeighting,
    pub precision: u64,
}

impl AmfConfig {
    pub fn unweighted(epoch_capacity: u64, epoch_span: u64, round_span: u64) -> Self {
        Self { epoch_capacity, epoch_span, round_span, weighting: AmfWeighting::Unit, precision: 1 }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.epoch_capacity > 0, "epoch_capacity must be positive")?;
        ensure(self.round_span > 0, "round_span must be positive")?;
        ensure(
            self.round_span <= self.epoch_span && self.epoch_span.is_multiple_of(self.round_span),
            "epoch_span must be a multiple of round_span",
        )?;
        ensure(self.precision > 0, "precision must be positive")?;
        if self.weighting == AmfWeighting::Unit {
            ensure(self.precision == 1, "unweighted AMF uses precision 1")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AmfFaucet {
    cfg: AmfConfig,
}

impl AmfFaucet {
    pub fn new(cfg: AmfConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &AmfConfig {
        &self.cfg
    }

    pub fn round(&self, storage: &TrackedStorage) -> u64 {
        storage.peek(ROUND)
    }

    /// Unclaimed part of `user`'s demand in buffer `slot`.
    pub fn remaining_demand(&self, storage: &TrackedStorage, user: u64, slot: u64) -> u64 {
        storage.peek(demand_key(user, slot))
    }

    fn refresh_share(&self, ctx: &mut TxContext<'_>, epoch: u64, capacity: u64) -> Result<(), Abort> {
        let tw = ctx.read(total_weight_key(epoch % 2))?;
        ctx.arith(3)?;
        let share =
            if tw == 0 { 0 } else { (u128::from(capacity) * u128::from(self.cfg.precision) / u128::from(tw)) as u64 };
        ctx.write(SHARE, share)
    }

    /// Advances epoch/round from the block clock. Returns the current
    /// (epoch, round).
    fn update_state(&self, ctx: &mut TxContext<'_>) -> Result<(u64, u64), Abort> {
        let since = elapsed(ctx)?;
        ctx.arith(3)?;
        let epoch_now = since / self.cfg.epoch_span;
        let round_now = (since % self.cfg.epoch_span) / self.cfg.round_span;
        let epoch = ctx.read(EPOCH)?;
        if epoch < epoch_now {
            let start = ctx.gas_used();
            ctx.write(EPOCH, epoch_now)?;
            ctx.write(ROUND, round_now)?;
            let capacity = ctx.read(CAPACITY)? + self.cfg.epoch_capacity;
            ctx.arith(1)?;
            ctx.write(CAPACITY, capacity)?;
            self.refresh_share(ctx, epoch_now, capacity)?;
            ctx.add_refund(ctx.gas_used() - start);
        } else {
            let round = ctx.read(ROUND)?;
            if round < round_now {
                let start = ctx.gas_used();
                ctx.write(ROUND, round_now)?;
                let capacity = ctx.read(CAPACITY)?;
                self.refresh_share(ctx, epoch_now, capacity)?;
                ctx.add_refund(ctx.gas_used() - start);
            }
        }
        Ok((epoch_now, round_now))
    }

    fn register(&self, ctx: &mut TxContext<'_>, user: u64, weight: Option<u64>) -> Result<(), Abort> {
        register_user(ctx, user, None)?;
        if self.cfg.weighting == AmfWeighting::Constant {
            match weight {
                Some(w) if w > 0 => ctx.write(weight_key(user), w)?,
                _ => return Err(Abort::Rejected("constant weighting needs a positive weight")),
            }
        }
        Ok(())
    }

    fn demand(&self, ctx: &mut TxContext<'_>, user: u64, volume: u64) -> Result<(), Abort> {
        let (epoch, _) = self.update_state(ctx)?;
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
        let weight = match self.cfg.weighting {
            AmfWeighting::Unit => 1,
            AmfWeighting::Constant => ctx.read(weight_key(user))?,
            AmfWeighting::Reciprocal => {
                let total = ctx.read(total_demand_key(user))? + volume;
                ctx.arith(2)?;
                let w = self.cfg.precision / total;
                if w == 0 {
                    return Err(Abort::Rejected("precision below cumulative demand"));
                }
                ctx.write(total_demand_key(user), total)?;
                ctx.write(demand_weight_key(user, slot), w)?;
                w
            }
        };
        if ctx.read(RESET_EPOCH)? != stamp(epoch) {
            ctx.write(RESET_EPOCH, stamp(epoch))?;
            ctx.write(total_weight_key(slot), weight)?;
        } else {
            let tw = ctx.read(total_weight_key(slot))?;
            ctx.arith(1)?;
            ctx.write(total_weight_key(slot), tw + weight)?;
        }
        Ok(())
    }

    fn claim_weight(&self, ctx: &mut TxContext<'_>, user: u64, slot: u64) -> Result<u64, Abort> {
        match self.cfg.weighting {
            AmfWeighting::Unit => Ok(1),
            AmfWeighting::Constant => ctx.read(weight_key(user)),
            AmfWeighting::Reciprocal => ctx.read(demand_weight_key(user, slot)),
        }
    }

    fn claim(&self, ctx: &mut TxContext<'_>, user: u64) -> Result<(), Abort> {
        let (epoch, round) = self.update_state(ctx)?;
        require_user(ctx, user)?;
        if epoch == 0 {
            return Ok(());
        }
        ctx.arith(1)?;
        let slot = epoch % 2;
        if ctx.read(demand_stamp_key(user, slot))? != stamp(epoch - 1) {
            return Ok(());
        }
        let capacity = ctx.read(CAPACITY)?;
        if capacity == 0 {
            return Ok(());
        }
        let remaining = ctx.read(demand_key(user, slot))?;
        if remaining == 0 {
            return Ok(());
        }
        if ctx.read(claim_stamp_key(user))? == stamp(epoch) {
            if ctx.read(claim_round_key(user))? == stamp(round) {
                return Ok(());
            }
        } else {
            ctx.write(claim_stamp_key(user), stamp(epoch))?;
        }
        ctx.write(claim_round_key(user), stamp(round))?;
        let share = ctx.read(SHARE)?;
        let weight = self.claim_weight(ctx, user, slot)?;
        ctx.arith(4)?;
        let grant = weighted_grant(remaining, share, weight, self.cfg.precision, capacity);
        let balance = ctx.read(balance_key(user))?;
        ctx.arith(3)?;
        ctx.write(balance_key(user), balance + grant)?;
        ctx.write(demand_key(user, slot), remaining - grant)?;
        ctx.write(CAPACITY, checked_debit(capacity, grant)?)?;
        if remaining == grant {
            let tw = ctx.read(total_weight_key(slot))?;
            ctx.arith(1)?;
            ctx.write(total_weight_key(slot), tw.saturating_sub(weight))?;
        }
        Ok(())
    }
}

impl Contract for AmfFaucet {
    fn execute(&mut self, ctx: &mut TxContext<'_>, call: &Call) -> Result<(), Abort> {
        match *call {
            Call::Register { user, weight } => self.register(ctx, user, weight),
            Call::Demand { user, volume } => self.demand(ctx, user, volume),
            Call::Claim { user } => self.claim(ctx, user),
            Call::Noop | Call::Distribute => Err(Abort::UnknownEntryPoint),
        }
    }

    fn log_tags(&self, storage: &TrackedStorage) -> (u64, u64) {
        (storage.peek(EPOCH), storage.peek(ROUND))
    }
}

impl Faucet for AmfFaucet {
    fn algorithm(&self) -> Algorithm {
        match self.cfg.weighting {
            AmfWeighting::Unit => Algorithm::Amf,
            _ => Algorithm::Wamf,
        }
    }
}
