//! Workload generation and block-accurate schedules.
//!
//! A run deploys the scenario's faucet, replays registrations, demands and
//! claims epoch by epoch, and compares every epoch's grants with the
//! matching oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::amf::{AmfConfig, AmfFaucet, AmfWeighting};
use crate::cmf::{CmfConfig, CmfFaucet};
use crate::faucet::{Algorithm, ConfigError, Faucet};
use crate::ledger::{Abort, Call, Contract, Ledger, LedgerError, Receipt, TrackedStorage, TxContext, TxStatus};
use crate::oracle::{
    bruteforce_share, bruteforce_unit_share, bucketed_unit_share, bucketize, demand_allocation_pairs,
    maxmin_allocate_ordered, saturate, saturate_unit, weighted_maxmin_allocate_limited, ResidueOrder,
};
use crate::qmf::{histogram_share, QmfConfig, QmfFaucet};
use crate::report::{AllocationRow, GasLogRow};
use crate::scenario::{DemandInterval, Scenario, ScenarioError, WeightPolicy};
use crate::smf::{SmfConfig, SmfFaucet, SmfWeighting};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Faucet(#[from] ConfigError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    /// A call the schedule relies on did not commit.
    #[error("internal fault: {0}")]
    Fault(String),
}

const DEMAND_STREAM: u64 = 1;
const WEIGHT_STREAM: u64 = 2;
const ORDER_STREAM: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform demands in `interval`, one row of `n` per demanding epoch.
pub fn generate_demands(n: u64, interval: DemandInterval, rows: u64, seed: u64) -> Vec<Vec<u64>> {
    let mut r = rng(seed, DEMAND_STREAM);
    (0..rows).map(|_| (0..n).map(|_| r.gen_range(interval.lo..interval.hi)).collect()).collect()
}

/// Per-user weights. Reciprocal weights are maintained by the faucet, so
/// that policy yields `None`.
pub fn assign_weights(policy: WeightPolicy, n: u64, seed: u64) -> Option<Vec<u64>> {
    match policy {
        WeightPolicy::Unit => Some(vec![1; n as usize]),
        WeightPolicy::ConstantRandom { lo, hi } => {
            let mut r = rng(seed, WEIGHT_STREAM);
            Some((0..n).map(|_| r.gen_range(lo..=hi)).collect())
        }
        WeightPolicy::ReciprocalTotalDemand => None,
    }
}

/// Any of the four contract implementations behind one type.
#[derive(Debug, Clone)]
pub enum FaucetImpl {
    Cmf(CmfFaucet),
    Amf(AmfFaucet),
    Qmf(QmfFaucet),
    Smf(SmfFaucet),
}

impl FaucetImpl {
    pub fn from_scenario(s: &Scenario) -> Result<Self, HarnessError> {
        use Algorithm::*;
        let span = || s.epoch_span.unwrap_or(1);
        Ok(match s.algorithm {
            Cmf => FaucetImpl::Cmf(CmfFaucet::new(CmfConfig { epoch_capacity: s.epoch_capacity })?),
            Amf | Wamf => FaucetImpl::Amf(AmfFaucet::new(AmfConfig {
                epoch_capacity: s.epoch_capacity,
                epoch_span: span(),
                round_span: s.round_span.unwrap_or(1),
                weighting: match s.weight_policy {
                    WeightPolicy::Unit => AmfWeighting::Unit,
                    WeightPolicy::ConstantRandom { .. } => AmfWeighting::Constant,
                    WeightPolicy::ReciprocalTotalDemand => AmfWeighting::Reciprocal,
                },
                precision: s.precision,
            })?),
            Qmf | Wqmf => FaucetImpl::Qmf(QmfFaucet::new(QmfConfig {
                epoch_capacity: s.epoch_capacity,
                epoch_span: span(),
                quanta: s.quanta.unwrap_or(1),
                weight_max: match s.weight_policy {
                    WeightPolicy::ConstantRandom { hi, .. } => Some(hi),
                    _ => None,
                },
            })?),
            Smf | Wsmf => FaucetImpl::Smf(SmfFaucet::new(SmfConfig {
                epoch_capacity: s.epoch_capacity,
                epoch_span: span(),
                weighting: match s.weight_policy {
                    WeightPolicy::Unit => SmfWeighting::Unit,
                    WeightPolicy::ConstantRandom { .. } => SmfWeighting::Constant,
                    WeightPolicy::ReciprocalTotalDemand => SmfWeighting::Reciprocal,
                },
                precision: s.precision,
                max_users: s.max_users,
            })?),
        })
    }

    fn inner(&self) -> &dyn Faucet {
        match self {
            FaucetImpl::Cmf(f) => f,
            FaucetImpl::Amf(f) => f,
            FaucetImpl::Qmf(f) => f,
            FaucetImpl::Smf(f) => f,
        }
    }
}

impl Contract for FaucetImpl {
    fn execute(&mut self, ctx: &mut TxContext<'_>, call: &Call) -> Result<(), Abort> {
        match self {
            FaucetImpl::Cmf(f) => f.execute(ctx, call),
            FaucetImpl::Amf(f) => f.execute(ctx, call),
            FaucetImpl::Qmf(f) => f.execute(ctx, call),
            FaucetImpl::Smf(f) => f.execute(ctx, call),
        }
    }

    fn log_tags(&self, storage: &TrackedStorage) -> (u64, u64) {
        self.inner().log_tags(storage)
    }
}

impl Faucet for FaucetImpl {
    fn algorithm(&self) -> Algorithm {
        self.inner().algorithm()
    }
}

/// Per-epoch outcome of a run. Epoch numbers are contract epochs; the
/// registration epoch 0 has no entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochOutcome {
    pub epoch: u64,
    pub demands: Vec<u64>,
    /// Capacity after injection, before any grant.
    pub capacity_start: u64,
    pub capacity_end: u64,
    pub grants: Vec<u64>,
    /// Declared share (unit share for weighted variants).
    pub share: u64,
    /// Claim rounds in which anything was granted (AMF family).
    pub rounds_used: u64,
    /// Every demand met or capacity exhausted when the epoch ended.
    pub completed: bool,
    /// Refunded gas of the epoch-boundary state update, if one committed.
    pub boundary_gas: u64,
    /// The boundary transaction ran out of gas.
    pub reverted: bool,
    /// WQMF: saturated ideal unit share minus the bucketed one.
    pub ideal_gap: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub algorithm: Algorithm,
    pub receipts: Vec<Receipt>,
    pub allocations: Vec<AllocationRow>,
    pub epochs: Vec<EpochOutcome>,
    /// Oracle disagreements; empty on a clean run.
    pub mismatches: Vec<String>,
    /// Capacity injections observed (epoch advances or distributions).
    pub injections: u64,
    pub total_balance: u64,
    pub final_capacity: u64,
}

impl RunReport {
    pub fn gas_log(&self) -> Vec<GasLogRow> {
        self.receipts.iter().map(GasLogRow::from).collect()
    }

    pub fn conserved(&self, epoch_capacity: u64) -> bool {
        self.total_balance + self.final_capacity == self.injections * epoch_capacity
    }
}

struct Driver {
    ledger: Ledger<FaucetImpl>,
    injections: u64,
}

impl Driver {
    fn storage(&self) -> &TrackedStorage {
        self.ledger.storage()
    }

    fn faucet(&self) -> &FaucetImpl {
        self.ledger.contract()
    }

    fn capacity(&self) -> u64 {
        self.faucet().capacity(self.storage())
    }

    fn share(&self) -> u64 {
        self.faucet().share(self.storage())
    }

    fn balances(&self, n: u64) -> Vec<u64> {
        (0..n).map(|u| self.faucet().balance(self.storage(), u)).collect()
    }

    fn submit(&mut self, call: Call) -> Receipt {
        let epoch_before = self.faucet().epoch(self.storage());
        let r = self.ledger.submit_tx(call);
        if self.faucet().epoch(self.storage()) > epoch_before {
            self.injections += 1;
        }
        r
    }

    /// Submits a call that must commit.
    fn submit_ok(&mut self, call: Call) -> Result<Receipt, HarnessError> {
        let r = self.submit(call);
        if r.status != TxStatus::Committed {
            return Err(HarnessError::Fault(format!("{call:?} at block {} ended {:?}", r.block_number, r.status)));
        }
        Ok(r)
    }

    fn fill_to(&mut self, block: u64) -> Result<(), HarnessError> {
        let now = self.ledger.block_number();
        if now > block {
            return Err(HarnessError::Fault(format!("schedule overran block {block} (at {now})")));
        }
        self.ledger.fill_empty_blocks(block - now);
        Ok(())
    }
}

fn order(n: u64, shuffle: bool, r: &mut ChaCha8Rng) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).collect();
    if shuffle {
        v.shuffle(r);
    }
    v
}

/// Weight and precision the oracles use for this scenario's epoch `e`.
struct WeightBook {
    fixed: Option<Vec<u64>>,
    precision: u64,
    /// Cumulative demand per user (reciprocal policy).
    totals: Vec<u64>,
}

impl WeightBook {
    fn record(&mut self, demands: &[u64]) {
        for (t, d) in self.totals.iter_mut().zip(demands) {
            *t += d;
        }
    }

    fn current(&self) -> Vec<u64> {
        match &self.fixed {
            Some(w) => w.clone(),
            None => self.totals.iter().map(|&t| self.precision / t.max(1)).collect(),
        }
    }
}

/// Runs the scenario's full schedule.
pub fn run_epoch_schedule(s: &Scenario) -> Result<RunReport, HarnessError> {
    s.validate()?;
    let faucet = FaucetImpl::from_scenario(s)?;
    let ledger = Ledger::new(faucet, s.cost_table, s.block_gas_limit)?;
    let mut d = Driver { ledger, injections: 0 };
    let n = s.n;
    let demand_rows = match &s.demand_script {
        Some(script) => script.clone(),
        None => generate_demands(n, s.demand_interval, s.epochs - 1, s.seed),
    };
    let weights = assign_weights(s.weight_policy, n, s.seed);
    let mut book = WeightBook { fixed: weights.clone(), precision: s.precision, totals: vec![0; n as usize] };
    let mut order_rng = rng(s.seed, ORDER_STREAM);
    let mut out = Outcomes::default();

    for u in 0..n {
        let weight = match s.weight_policy {
            WeightPolicy::ConstantRandom { .. } => weights.as_ref().map(|w| w[u as usize]),
            _ => None,
        };
        d.submit_ok(Call::Register { user: u, weight })?;
    }

    match s.algorithm {
        Algorithm::Amf | Algorithm::Wamf => run_amf(s, &mut d, &demand_rows, &mut book, &mut order_rng, &mut out)?,
        Algorithm::Cmf => run_cmf(s, &mut d, &demand_rows, &mut order_rng, &mut out)?,
        _ => run_single_round(s, &mut d, &demand_rows, &mut book, &mut order_rng, &mut out)?,
    }

    let total_balance = d.balances(n).iter().sum();
    let final_capacity = d.capacity();
    let (_, _, receipts) = d.ledger.into_parts();
    let report = RunReport {
        algorithm: s.algorithm,
        receipts,
        allocations: out.rows,
        epochs: out.epochs,
        mismatches: out.mismatches,
        injections: d.injections,
        total_balance,
        final_capacity,
    };
    let mut report = report;
    if !report.conserved(s.epoch_capacity) {
        report.mismatches.push(format!(
            "conservation: balances {} + capacity {} != {} injections x {}",
            report.total_balance, report.final_capacity, report.injections, s.epoch_capacity
        ));
    }
    Ok(report)
}

#[derive(Default)]
struct Outcomes {
    rows: Vec<AllocationRow>,
    epochs: Vec<EpochOutcome>,
    mismatches: Vec<String>,
}

impl Outcomes {
    fn check_conservation(&mut self, e: &EpochOutcome) {
        let granted: u64 = e.grants.iter().sum();
        if granted > e.capacity_start {
            self.mismatches.push(format!("epoch {}: granted {granted} > capacity {}", e.epoch, e.capacity_start));
        } else if e.capacity_start - granted != e.capacity_end {
            self.mismatches.push(format!(
                "epoch {}: capacity {} - grants {granted} != {}",
                e.epoch, e.capacity_start, e.capacity_end
            ));
        }
    }

    fn compare(&mut self, epoch: u64, what: &str, got: &[u64], want: &[u64]) {
        if got != want {
            self.mismatches.push(format!("epoch {epoch}: {what}: got {got:?}, oracle {want:?}"));
        }
    }
}

fn submit_demands(d: &mut Driver, row: &[u64], ord: &[u64]) -> Result<(), HarnessError> {
    for &u in ord {
        d.submit_ok(Call::Demand { user: u, volume: row[u as usize] })?;
    }
    Ok(())
}

/// Boundary receipt bookkeeping: (refunded gas, reverted).
fn boundary(r: &Receipt) -> (u64, bool) {
    (r.refunded_gas, r.status == TxStatus::RevertedGasLimit)
}

fn run_amf(
    s: &Scenario,
    d: &mut Driver,
    rows: &[Vec<u64>],
    book: &mut WeightBook,
    order_rng: &mut ChaCha8Rng,
    out: &mut Outcomes,
) -> Result<(), HarnessError> {
    let n = s.n;
    let es = s.epoch_span.unwrap_or(1);
    let rs = s.round_span.unwrap_or(1);
    let rounds = s.rounds_per_epoch.unwrap_or(1);
    let demand_at = rounds * rs;

    d.fill_to(demand_at)?;
    submit_demands(d, &rows[0], &order(n, s.shuffle, order_rng))?;
    book.record(&rows[0]);

    for e in 1..s.epochs {
        let start = e * es;
        d.fill_to(start)?;
        let demands = &rows[e as usize - 1];
        let weights = book.current();
        let capacity_start = d.capacity() + s.epoch_capacity;
        let claim_order = order(n, s.shuffle, order_rng);
        let mut grants = vec![0u64; n as usize];
        let mut shares = Vec::new();
        let mut rounds_used = 0;
        let mut gas = (0, false);
        for r in 0..rounds {
            d.fill_to(start + r * rs)?;
            let before = d.balances(n);
            for (i, &u) in claim_order.iter().enumerate() {
                let rec = d.submit(Call::Claim { user: u });
                if r == 0 && i == 0 {
                    gas = boundary(&rec);
                }
            }
            let after = d.balances(n);
            let share = d.share();
            let capacity = d.capacity();
            shares.push(share);
            let round_grants: Vec<u64> = after.iter().zip(&before).map(|(a, b)| a - b).collect();
            if round_grants.iter().any(|&g| g > 0) {
                rounds_used += 1;
            }
            for &u in &claim_order {
                let g = round_grants[u as usize];
                if g > 0 || r == 0 {
                    out.rows.push(AllocationRow {
                        epoch: e,
                        round: r,
                        user_id: u,
                        demand: demands[u as usize],
                        grant: g,
                        share,
                        capacity,
                    });
                }
                grants[u as usize] += g;
            }
        }
        let capacity_end = d.capacity();
        let satisfied = grants.iter().zip(demands).all(|(g, d)| g == d);
        let outcome = EpochOutcome {
            epoch: e,
            demands: demands.clone(),
            capacity_start,
            capacity_end,
            grants: grants.clone(),
            share: shares[0],
            rounds_used,
            completed: satisfied || capacity_end == 0,
            boundary_gas: gas.0,
            reverted: gas.1,
            ideal_gap: 0,
        };
        out.check_conservation(&outcome);
        if !outcome.reverted {
            let idx: Vec<usize> = claim_order.iter().map(|&u| u as usize).collect();
            let dp: Vec<u64> = idx.iter().map(|&i| demands[i]).collect();
            let wp: Vec<u64> = idx.iter().map(|&i| weights[i]).collect();
            let precision = if s.algorithm == Algorithm::Amf { 1 } else { s.precision };
            match weighted_maxmin_allocate_limited(&dp, &wp, capacity_start, precision, Some(rounds as usize)) {
                Ok(oracle) => {
                    let mut want = vec![0u64; n as usize];
                    for (k, &i) in idx.iter().enumerate() {
                        want[i] = oracle.allocations[k];
                    }
                    out.compare(e, "grants", &grants, &want);
                    let k = oracle.per_iteration_shares.len();
                    out.compare(e, "round shares", &shares[..k.min(shares.len())], &oracle.per_iteration_shares);
                }
                Err(err) => out.mismatches.push(format!("epoch {e}: oracle rejected input: {err}")),
            }
        }
        out.epochs.push(outcome);

        if e + 1 < s.epochs {
            d.fill_to(start + demand_at)?;
            let row = &rows[e as usize];
            submit_demands(d, row, &order(n, s.shuffle, order_rng))?;
            book.record(row);
        }
    }
    Ok(())
}

fn run_single_round(
    s: &Scenario,
    d: &mut Driver,
    rows: &[Vec<u64>],
    book: &mut WeightBook,
    order_rng: &mut ChaCha8Rng,
    out: &mut Outcomes,
) -> Result<(), HarnessError> {
    let n = s.n;
    let es = s.epoch_span.unwrap_or(1);
    submit_demands(d, &rows[0], &order(n, s.shuffle, order_rng))?;
    book.record(&rows[0]);

    for e in 1..s.epochs {
        d.fill_to(e * es)?;
        let demands = &rows[e as usize - 1];
        let weights = book.current();
        let capacity_start = d.capacity() + s.epoch_capacity;
        let before = d.balances(n);
        let claim_order = order(n, s.shuffle, order_rng);
        let mut gas = (0, false);
        for (i, &u) in claim_order.iter().enumerate() {
            let rec = d.submit(Call::Claim { user: u });
            if i == 0 {
                gas = boundary(&rec);
            }
        }
        let grants: Vec<u64> = d.balances(n).iter().zip(&before).map(|(a, b)| a - b).collect();
        let share = d.share();
        let capacity_end = d.capacity();
        for &u in &claim_order {
            out.rows.push(AllocationRow {
                epoch: e,
                round: 0,
                user_id: u,
                demand: demands[u as usize],
                grant: grants[u as usize],
                share,
                capacity: capacity_end,
            });
        }
        let mut outcome = EpochOutcome {
            epoch: e,
            demands: demands.clone(),
            capacity_start,
            capacity_end,
            grants: grants.clone(),
            share,
            rounds_used: 1,
            completed: true,
            boundary_gas: gas.0,
            reverted: gas.1,
            ideal_gap: 0,
        };
        out.check_conservation(&outcome);
        if !outcome.reverted {
            check_single_round(s, &mut outcome, &weights, out);
        }
        out.epochs.push(outcome);

        if e + 1 < s.epochs {
            let row = &rows[e as usize];
            submit_demands(d, row, &order(n, s.shuffle, order_rng))?;
            book.record(row);
        }
    }
    Ok(())
}

fn check_single_round(s: &Scenario, o: &mut EpochOutcome, weights: &[u64], out: &mut Outcomes) {
    let (e, dm, cap, share) = (o.epoch, &o.demands, o.capacity_start, o.share);
    let expected_grants: Vec<u64>;
    match s.algorithm {
        Algorithm::Qmf => {
            let q = s.quanta.unwrap_or(1);
            let mut counts = vec![0u64; q as usize];
            for &v in dm {
                counts[v as usize - 1] += 1;
            }
            let search = histogram_share(&counts, cap).share;
            out.compare(e, "share search", &[share], &[search]);
            out.compare(e, "share", &[saturate(share, dm)], &[bruteforce_share(dm, cap)]);
            expected_grants = dm.iter().map(|&v| v.min(share)).collect();
        }
        Algorithm::Wqmf => {
            let q = s.quanta.unwrap_or(1);
            let (db, wb) = bucketize(dm, weights, q);
            let want = bucketed_unit_share(&db, &wb, weights.iter().sum(), cap, q);
            out.compare(e, "unit share", &[share], &[want]);
            let ideal = saturate_unit(bruteforce_unit_share(dm, weights, cap), dm, weights);
            o.ideal_gap = ideal.saturating_sub(saturate_unit(share, dm, weights));
            expected_grants = dm.iter().zip(weights).map(|(&v, &w)| v.min(w * share)).collect();
        }
        Algorithm::Smf => {
            out.compare(e, "share", &[saturate(share, dm)], &[bruteforce_share(dm, cap)]);
            expected_grants = dm.iter().map(|&v| v.min(share)).collect();
        }
        Algorithm::Wsmf => {
            let p = if s.weight_policy == WeightPolicy::ReciprocalTotalDemand { s.precision } else { 1 };
            let scaled: Vec<u64> = dm.iter().map(|&v| v * p).collect();
            let want = bruteforce_unit_share(&scaled, weights, cap * p);
            out.compare(
                e,
                "unit share",
                &[saturate_unit(share, &scaled, weights)],
                &[saturate_unit(want, &scaled, weights)],
            );
            expected_grants = dm
                .iter()
                .zip(weights)
                .map(|(&v, &w)| v.min((u128::from(share) * u128::from(w) / u128::from(p)) as u64))
                .collect();
        }
        _ => return,
    }
    out.compare(e, "grants", &o.grants, &expected_grants);
}

fn run_cmf(
    s: &Scenario,
    d: &mut Driver,
    rows: &[Vec<u64>],
    order_rng: &mut ChaCha8Rng,
    out: &mut Outcomes,
) -> Result<(), HarnessError> {
    let n = s.n;
    submit_demands(d, &rows[0], &order(n, s.shuffle, order_rng))?;
    for e in 1..s.epochs {
        let demands = &rows[e as usize - 1];
        let capacity_before = d.capacity();
        let before = d.balances(n);
        let rec = d.submit(Call::Distribute);
        let reverted = rec.status == TxStatus::RevertedGasLimit;
        if !reverted && rec.status != TxStatus::Committed {
            return Err(HarnessError::Fault(format!("distribute ended {:?}", rec.status)));
        }
        let grants: Vec<u64> = d.balances(n).iter().zip(&before).map(|(a, b)| a - b).collect();
        let capacity_end = d.capacity();
        let share = match (reverted, d.faucet()) {
            (false, FaucetImpl::Cmf(f)) => {
                f.last_distribution().and_then(|r| r.per_iteration_shares.first().copied()).unwrap_or(0)
            }
            _ => 0,
        };
        for u in 0..n {
            out.rows.push(AllocationRow {
                epoch: e,
                round: 0,
                user_id: u,
                demand: demands[u as usize],
                grant: grants[u as usize],
                share,
                capacity: capacity_end,
            });
        }
        let outcome = EpochOutcome {
            epoch: e,
            demands: demands.clone(),
            capacity_start: if reverted { capacity_before } else { capacity_before + s.epoch_capacity },
            capacity_end,
            grants: grants.clone(),
            share,
            rounds_used: 0,
            completed: !reverted,
            boundary_gas: if reverted { 0 } else { rec.gas_used },
            reverted,
            ideal_gap: 0,
        };
        out.check_conservation(&outcome);
        if !reverted {
            let want = maxmin_allocate_ordered(demands, outcome.capacity_start, ResidueOrder::AscendingVolume);
            let got_pairs = demand_allocation_pairs(demands, &grants);
            let want_pairs = demand_allocation_pairs(demands, &want.allocations);
            if got_pairs != want_pairs {
                out.mismatches.push(format!("epoch {e}: distribution {got_pairs:?} != oracle {want_pairs:?}"));
            }
        }
        out.epochs.push(outcome);
        if reverted {
            // pending demands stay queued; stop rather than pile up more
            break;
        }
        if e + 1 < s.epochs {
            submit_demands(d, &rows[e as usize], &order(n, s.shuffle, order_rng))?;
        }
    }
    Ok(())
}
