//! Instant-seal ledger: one transaction per block, metered storage, atomic
//! rollback on gas exhaustion.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Block gas limit used when a scenario does not override it.
pub const DEFAULT_BLOCK_GAS_LIMIT: u64 = 8_000_000;

/// Per-operation gas prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostTable {
    pub storage_write_new: u64,
    pub storage_write_update: u64,
    pub storage_read: u64,
    pub memory_op: u64,
    pub arithmetic_op: u64,
    pub base_tx: u64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            storage_write_new: 20_000,
            storage_write_update: 5_000,
            storage_read: 800,
            memory_op: 3,
            arithmetic_op: 3,
            base_tx: 21_000,
        }
    }
}

impl CostTable {
    /// Checks positivity and the ordinal structure
    /// `write_new >= write_update > read > memory >= arithmetic`.
    pub fn validate(&self) -> Result<(), LedgerError> {
        let entries = [
            self.storage_write_new,
            self.storage_write_update,
            self.storage_read,
            self.memory_op,
            self.arithmetic_op,
            self.base_tx,
        ];
        if entries.contains(&0) {
            return Err(LedgerError::InvalidCostTable("all costs must be positive"));
        }
        let ordered = self.storage_write_new >= self.storage_write_update
            && self.storage_write_update > self.storage_read
            && self.storage_read > self.memory_op
            && self.memory_op >= self.arithmetic_op;
        if !ordered {
            return Err(LedgerError::InvalidCostTable(
                "expected write_new >= write_update > read > memory_op >= arithmetic_op",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid cost table: {0}")]
    InvalidCostTable(&'static str),
    #[error("block gas limit {limit} is below the base transaction cost {base}")]
    GasLimitTooLow { limit: u64, base: u64 },
}

/// Reason a contract call stopped before committing.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Abort {
    #[error("block gas limit exhausted")]
    OutOfGas,
    #[error("call rejected: {0}")]
    Rejected(&'static str),
    #[error("entry point not provided by this contract")]
    UnknownEntryPoint,
}

/// Address of one storage word: a contract variable name plus up to two
/// indices (user id, buffer slot, histogram bucket, heap position, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub var: &'static str,
    pub a: u64,
    pub b: u64,
}

impl CellKey {
    pub const fn scalar(var: &'static str) -> Self {
        Self { var, a: 0, b: 0 }
    }

    pub const fn at(var: &'static str, a: u64) -> Self {
        Self { var, a, b: 0 }
    }

    pub const fn at2(var: &'static str, a: u64, b: u64) -> Self {
        Self { var, a, b }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}][{}]", self.var, self.a, self.b)
    }
}

/// Handle returned by [`TrackedStorage::snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotToken {
    id: u64,
    journal_len: usize,
}

/// Contract storage. Cells default to zero; zero-valued cells are not kept
/// so two storages with equal contents compare equal.
#[derive(Debug, Default, Clone)]
pub struct TrackedStorage {
    cells: HashMap<CellKey, u64>,
    journal: Vec<(CellKey, u64)>,
    snapshot_id: Option<u64>,
    next_snapshot_id: u64,
}

impl PartialEq for TrackedStorage {
    fn eq(&self, other: &Self) -> bool {
        self.cells == other.cells
    }
}

impl TrackedStorage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Unmetered read for inspection outside a transaction.
    pub fn peek(&self, key: CellKey) -> u64 {
        self.cells.get(&key).copied().unwrap_or(0)
    }

    /// Number of non-zero cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Copy of every non-zero cell, sorted by key.
    pub fn image(&self) -> Vec<(CellKey, u64)> {
        let mut out: Vec<_> = self.cells.iter().map(|(k, v)| (*k, *v)).collect();
        out.sort_unstable();
        out
    }

    fn set_raw(&mut self, key: CellKey, value: u64) -> u64 {
        let prior = if value == 0 { self.cells.remove(&key) } else { self.cells.insert(key, value) };
        prior.unwrap_or(0)
    }

    /// Unmetered write, journaled when a snapshot is open.
    pub fn poke(&mut self, key: CellKey, value: u64) {
        let prior = self.set_raw(key, value);
        if self.snapshot_id.is_some() {
            self.journal.push((key, prior));
        }
    }

    /// Opens a snapshot. Only one snapshot can be open at a time.
    pub fn snapshot(&mut self) -> SnapshotToken {
        assert!(self.snapshot_id.is_none(), "snapshot already open");
        let id = self.next_snapshot_id;
        self.next_snapshot_id += 1;
        self.snapshot_id = Some(id);
        self.journal.clear();
        SnapshotToken { id, journal_len: 0 }
    }

    /// Restores the image captured by `token` and closes the snapshot.
    ///
    /// Panics on a stale token: that is a simulator bug, not a contract
    /// failure.
    pub fn rollback(&mut self, token: SnapshotToken) {
        assert_eq!(self.snapshot_id, Some(token.id), "rollback with stale snapshot token");
        while self.journal.len() > token.journal_len {
            let (key, prior) = self.journal.pop().expect("journal entry");
            self.set_raw(key, prior);
        }
        self.snapshot_id = None;
    }

    /// Keeps all writes made since `token` and closes the snapshot.
    pub fn commit(&mut self, token: SnapshotToken) {
        assert_eq!(self.snapshot_id, Some(token.id), "commit with stale snapshot token");
        self.journal.clear();
        self.snapshot_id = None;
    }
}

/// Count of sealed blocks plus the deployment block of the contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockClock {
    pub block_number: u64,
    pub offset: u64,
}

impl BlockClock {
    /// Blocks elapsed since deployment at the block currently being sealed.
    pub fn elapsed(&self) -> u64 {
        self.block_number - self.offset
    }
}

/// Shadow counter of metered operations inside one transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub reads: u64,
    pub writes_new: u64,
    pub writes_update: u64,
    pub memory_ops: u64,
    pub arithmetic_ops: u64,
}

impl OpCounts {
    pub fn writes(&self) -> u64 {
        self.writes_new + self.writes_update
    }

    /// Gas implied by these counts, excluding the base transaction cost.
    pub fn gas(&self, costs: &CostTable) -> u64 {
        self.reads * costs.storage_read
            + self.writes_new * costs.storage_write_new
            + self.writes_update * costs.storage_write_update
            + self.memory_ops * costs.memory_op
            + self.arithmetic_ops * costs.arithmetic_op
    }
}

#[derive(Debug, Clone)]
pub struct GasMeter {
    pub cost_table: CostTable,
    pub used_in_tx: u64,
    pub block_gas_limit: u64,
}

impl GasMeter {
    pub fn new(cost_table: CostTable, block_gas_limit: u64) -> Self {
        Self { cost_table, used_in_tx: 0, block_gas_limit }
    }

    fn charge(&mut self, amount: u64) -> Result<(), Abort> {
        self.used_in_tx = self.used_in_tx.saturating_add(amount);
        if self.used_in_tx > self.block_gas_limit {
            Err(Abort::OutOfGas)
        } else {
            Ok(())
        }
    }
}

/// Execution context handed to a contract for the duration of one call.
pub struct TxContext<'a> {
    storage: &'a mut TrackedStorage,
    meter: &'a mut GasMeter,
    clock: BlockClock,
    ops: OpCounts,
    refunded: u64,
}

impl<'a> TxContext<'a> {
    pub fn block_number(&self) -> u64 {
        self.clock.block_number
    }

    pub fn offset(&self) -> u64 {
        self.clock.offset
    }

    pub fn gas_used(&self) -> u64 {
        self.meter.used_in_tx
    }

    pub fn costs(&self) -> &CostTable {
        &self.meter.cost_table
    }

    pub fn ops(&self) -> OpCounts {
        self.ops
    }

    pub fn read(&mut self, key: CellKey) -> Result<u64, Abort> {
        self.ops.reads += 1;
        self.meter.charge(self.meter.cost_table.storage_read)?;
        Ok(self.storage.peek(key))
    }

    pub fn write(&mut self, key: CellKey, value: u64) -> Result<(), Abort> {
        let fresh = self.storage.peek(key) == 0 && value != 0;
        let cost = if fresh {
            self.ops.writes_new += 1;
            self.meter.cost_table.storage_write_new
        } else {
            self.ops.writes_update += 1;
            self.meter.cost_table.storage_write_update
        };
        self.meter.charge(cost)?;
        self.storage.poke(key, value);
        Ok(())
    }

    /// Charges `count` memory operations.
    pub fn mem(&mut self, count: u64) -> Result<(), Abort> {
        self.ops.memory_ops += count;
        self.meter.charge(count.saturating_mul(self.meter.cost_table.memory_op))
    }

    /// Charges `count` arithmetic operations.
    pub fn arith(&mut self, count: u64) -> Result<(), Abort> {
        self.ops.arithmetic_ops += count;
        self.meter.charge(count.saturating_mul(self.meter.cost_table.arithmetic_op))
    }

    /// Tags gas as returned to the caller (state-update work done on
    /// behalf of every user).
    pub fn add_refund(&mut self, gas: u64) {
        self.refunded += gas;
    }
}

/// Transaction kind as recorded in the gas log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Register,
    Demand,
    Claim,
    Distribute,
    Noop,
}

impl TxKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxKind::Register => "register",
            TxKind::Demand => "demand",
            TxKind::Claim => "claim",
            TxKind::Distribute => "distribute",
            TxKind::Noop => "noop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Committed,
    RevertedGasLimit,
    Rejected,
}

/// Call descriptor routed to a contract entry point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Call {
    Noop,
    Register { user: u64, weight: Option<u64> },
    Demand { user: u64, volume: u64 },
    Claim { user: u64 },
    Distribute,
}

impl Call {
    pub fn kind(&self) -> TxKind {
        match self {
            Call::Noop => TxKind::Noop,
            Call::Register { .. } => TxKind::Register,
            Call::Demand { .. } => TxKind::Demand,
            Call::Claim { .. } => TxKind::Claim,
            Call::Distribute => TxKind::Distribute,
        }
    }

    pub fn user(&self) -> Option<u64> {
        match *self {
            Call::Register { user, .. } | Call::Demand { user, .. } | Call::Claim { user } => Some(user),
            Call::Noop | Call::Distribute => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub block_number: u64,
    pub tx_kind: TxKind,
    pub user_id: Option<u64>,
    pub gas_used: u64,
    pub refunded_gas: u64,
    pub status: TxStatus,
    pub epoch: u64,
    pub round: u64,
    /// Shadow op counts; not part of the CSV log.
    pub ops: OpCounts,
}

/// Contract logic executed by the ledger. All persistent state must live in
/// [`TrackedStorage`] so it is metered and rolled back.
pub trait Contract {
    fn execute(&mut self, ctx: &mut TxContext<'_>, call: &Call) -> Result<(), Abort>;

    /// (epoch, round) reported in the gas log after a transaction.
    fn log_tags(&self, _storage: &TrackedStorage) -> (u64, u64) {
        (0, 0)
    }
}

/// A ledger hosting a single deployed contract.
pub struct Ledger<C> {
    contract: C,
    storage: TrackedStorage,
    clock: BlockClock,
    meter: GasMeter,
    receipts: Vec<Receipt>,
}

impl<C: Contract> Ledger<C> {
    /// Deploys `contract` at block 0 with the given costs and limit.
    pub fn new(contract: C, cost_table: CostTable, block_gas_limit: u64) -> Result<Self, LedgerError> {
        cost_table.validate()?;
        if block_gas_limit < cost_table.base_tx {
            return Err(LedgerError::GasLimitTooLow { limit: block_gas_limit, base: cost_table.base_tx });
        }
        Ok(Self {
            contract,
            storage: TrackedStorage::new(),
            clock: BlockClock::default(),
            meter: GasMeter::new(cost_table, block_gas_limit),
            receipts: Vec::new(),
        })
    }

    pub fn with_defaults(contract: C) -> Self {
        Self::new(contract, CostTable::default(), DEFAULT_BLOCK_GAS_LIMIT).expect("default cost table is valid")
    }

    pub fn contract(&self) -> &C {
        &self.contract
    }

    pub fn storage(&self) -> &TrackedStorage {
        &self.storage
    }

    pub fn clock(&self) -> BlockClock {
        self.clock
    }

    pub fn block_number(&self) -> u64 {
        self.clock.block_number
    }

    pub fn cost_table(&self) -> &CostTable {
        &self.meter.cost_table
    }

    pub fn block_gas_limit(&self) -> u64 {
        self.meter.block_gas_limit
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    /// Seals one block holding `call`.
    pub fn submit_tx(&mut self, call: Call) -> Receipt {
        let base = self.meter.cost_table.base_tx;
        self.meter.used_in_tx = base;
        let token = self.storage.snapshot();
        let (status, ops, refunded) = if call == Call::Noop {
            (TxStatus::Committed, OpCounts::default(), 0)
        } else {
            let mut ctx = TxContext {
                storage: &mut self.storage,
                meter: &mut self.meter,
                clock: self.clock,
                ops: OpCounts::default(),
                refunded: 0,
            };
            let outcome = self.contract.execute(&mut ctx, &call);
            let (ops, refunded) = (ctx.ops, ctx.refunded);
            match outcome {
                Ok(()) => (TxStatus::Committed, ops, refunded),
                Err(Abort::OutOfGas) => (TxStatus::RevertedGasLimit, ops, 0),
                Err(Abort::Rejected(_)) | Err(Abort::UnknownEntryPoint) => (TxStatus::Rejected, ops, 0),
            }
        };
        if status == TxStatus::Committed {
            self.storage.commit(token);
        } else {
            self.storage.rollback(token);
        }
        let gas_used = if status == TxStatus::Rejected { base } else { self.meter.used_in_tx };
        let (epoch, round) = self.contract.log_tags(&self.storage);
        let receipt = Receipt {
            block_number: self.clock.block_number,
            tx_kind: call.kind(),
            user_id: call.user(),
            gas_used,
            refunded_gas: refunded,
            status,
            epoch,
            round,
            ops,
        };
        self.clock.block_number += 1;
        self.meter.used_in_tx = 0;
        self.receipts.push(receipt.clone());
        receipt
    }

    /// Seals `k` empty blocks.
    pub fn fill_empty_blocks(&mut self, k: u64) {
        for _ in 0..k {
            self.submit_tx(Call::Noop);
        }
    }

    pub fn into_parts(self) -> (C, TrackedStorage, Vec<Receipt>) {
        (self.contract, self.storage, self.receipts)
    }
}
