//! Pieces shared by every faucet contract: storage layout names, user
//! registration, and epoch arithmetic.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ledger::{Abort, CellKey, Contract, TrackedStorage, TxContext};

/// Contract parameters that cannot be deployed.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid faucet parameters: {0}")]
pub struct ConfigError(pub String);

pub(crate) fn ensure(cond: bool, msg: &str) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError(msg.to_string()))
    }
}

pub(crate) const USER_COUNT: CellKey = CellKey::scalar("user_count");
pub(crate) const CAPACITY: CellKey = CellKey::scalar("capacity");
pub(crate) const EPOCH: CellKey = CellKey::scalar("epoch");
pub(crate) const ROUND: CellKey = CellKey::scalar("round");
pub(crate) const SHARE: CellKey = CellKey::scalar("share");

pub(crate) fn balance_key(user: u64) -> CellKey {
    CellKey::at("balance", user)
}

pub(crate) fn weight_key(user: u64) -> CellKey {
    CellKey::at("weight", user)
}

pub(crate) fn total_demand_key(user: u64) -> CellKey {
    CellKey::at("total_demand", user)
}

pub(crate) fn demand_key(user: u64, slot: u64) -> CellKey {
    CellKey::at2("demand", user, slot)
}

/// Epoch stamps are stored as `epoch + 1` so the zero default means "never".
pub(crate) fn demand_stamp_key(user: u64, slot: u64) -> CellKey {
    CellKey::at2("demand_epoch", user, slot)
}

pub(crate) fn claim_stamp_key(user: u64) -> CellKey {
    CellKey::at("claim_epoch", user)
}

pub(crate) const fn stamp(epoch: u64) -> u64 {
    epoch + 1
}

/// The seven faucet algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Cmf,
    Amf,
    Wamf,
    Qmf,
    Wqmf,
    Smf,
    Wsmf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Cmf,
        Algorithm::Amf,
        Algorithm::Wamf,
        Algorithm::Qmf,
        Algorithm::Wqmf,
        Algorithm::Smf,
        Algorithm::Wsmf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Cmf => "cmf",
            Algorithm::Amf => "amf",
            Algorithm::Wamf => "wamf",
            Algorithm::Qmf => "qmf",
            Algorithm::Wqmf => "wqmf",
            Algorithm::Smf => "smf",
            Algorithm::Wsmf => "wsmf",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, Algorithm::Wamf | Algorithm::Wqmf | Algorithm::Wsmf)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Read-only views every faucet exposes to the harness. Views use
/// unmetered peeks and never run inside a transaction.
pub trait Faucet: Contract {
    fn algorithm(&self) -> Algorithm;

    fn balance(&self, storage: &TrackedStorage, user: u64) -> u64 {
        storage.peek(balance_key(user))
    }

    fn capacity(&self, storage: &TrackedStorage) -> u64 {
        storage.peek(CAPACITY)
    }

    /// Declared share (unit share for weighted variants).
    fn share(&self, storage: &TrackedStorage) -> u64 {
        storage.peek(SHARE)
    }

    fn epoch(&self, storage: &TrackedStorage) -> u64 {
        storage.peek(EPOCH)
    }

    fn user_count(&self, storage: &TrackedStorage) -> u64 {
        storage.peek(USER_COUNT)
    }
}

/// Registers the next dense user id.
pub(crate) fn register_user(ctx: &mut TxContext<'_>, user: u64, max_users: Option<u64>) -> Result<(), Abort> {
    let count = ctx.read(USER_COUNT)?;
    if user != count {
        return Err(Abort::Rejected("user ids must be registered densely"));
    }
    if max_users.is_some_and(|m| count >= m) {
        return Err(Abort::Rejected("user ceiling reached"));
    }
    ctx.arith(1)?;
    ctx.write(USER_COUNT, count + 1)
}

pub(crate) fn require_user(ctx: &mut TxContext<'_>, user: u64) -> Result<(), Abort> {
    let count = ctx.read(USER_COUNT)?;
    ctx.arith(1)?;
    if user < count {
        Ok(())
    } else {
        Err(Abort::Rejected("unregistered user"))
    }
}

/// Blocks elapsed since deployment.
pub(crate) fn elapsed(ctx: &mut TxContext<'_>) -> Result<u64, Abort> {
    ctx.arith(1)?;
    Ok(ctx.block_number() - ctx.offset())
}

pub(crate) fn checked_debit(capacity: u64, amount: u64) -> Result<u64, Abort> {
    capacity.checked_sub(amount).ok_or(Abort::Rejected("grant exceeds capacity"))
}
