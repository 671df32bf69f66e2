//! CSV artifacts of a run: the per-transaction gas log, the allocation
//! table, and the cost summary derived from the gas log.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faucet::Algorithm;
use crate::ledger::{Receipt, TxKind, TxStatus};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
}

pub const GAS_LOG_HEADER: [&str; 8] =
    ["block", "tx_kind", "user_id", "gas_used", "refunded_gas", "status", "epoch", "round"];

pub const ALLOCATIONS_HEADER: [&str; 7] = ["epoch", "round", "user_id", "demand", "grant", "share", "capacity"];

pub const SUMMARY_HEADER: [&str; 4] = ["algorithm", "size", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasLogRow {
    pub block: u64,
    pub tx_kind: TxKind,
    pub user_id: Option<u64>,
    pub gas_used: u64,
    pub refunded_gas: u64,
    pub status: TxStatus,
    pub epoch: u64,
    pub round: u64,
}

impl From<&Receipt> for GasLogRow {
    fn from(r: &Receipt) -> Self {
        Self {
            block: r.block_number,
            tx_kind: r.tx_kind,
            user_id: r.user_id,
            gas_used: r.gas_used,
            refunded_gas: r.refunded_gas,
            status: r.status,
            epoch: r.epoch,
            round: r.round,
        }
    }
}

/// One grant event. AMF-family runs produce a row per claim round; other
/// algorithms use round 0. `capacity` is the faucet capacity after the
/// round's claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub epoch: u64,
    pub round: u64,
    pub user_id: u64,
    pub demand: u64,
    pub grant: u64,
    pub share: u64,
    pub capacity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub size: u64,
    pub metric: String,
    pub value: f64,
}

fn write_rows<W: io::Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_rows<T: for<'de> Deserialize<'de>>(text: &str, header: &[&str]) -> Result<Vec<T>, ReportError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(ReportError::Invalid(format!("expected header {}, found {}", header.join(","), found.join(","))));
    }
    r.deserialize().map(|row| row.map_err(ReportError::from)).collect()
}

pub fn write_gas_log<W: io::Write>(out: W, rows: &[GasLogRow]) -> Result<(), ReportError> {
    write_rows(out, &GAS_LOG_HEADER, rows)
}

pub fn parse_gas_log(text: &str) -> Result<Vec<GasLogRow>, ReportError> {
    parse_rows(text, &GAS_LOG_HEADER)
}

pub fn write_allocations<W: io::Write>(out: W, rows: &[AllocationRow]) -> Result<(), ReportError> {
    write_rows(out, &ALLOCATIONS_HEADER, rows)
}

pub fn parse_allocations(text: &str) -> Result<Vec<AllocationRow>, ReportError> {
    parse_rows(text, &ALLOCATIONS_HEADER)
}

/// Averages are printed with three decimals so the file is stable.
pub fn write_summary<W: io::Write>(out: W, rows: &[SummaryRow]) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([r.algorithm.clone(), r.size.to_string(), r.metric.clone(), format!("{:.3}", r.value)])?;
    }
    w.flush()?;
    Ok(())
}

fn mean(xs: &[u64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64)
    }
}

/// Cost summary of a gas log.
///
/// User-facing averages use `gas_used - refunded_gas` over committed
/// calls. `update_state_max` is the largest refunded amount. AMF-family
/// logs also get one claim average per round, and their `claim_total` is
/// the sum of those; elsewhere `claim_total` equals `claim_avg`.
pub fn summarize(rows: &[GasLogRow], algorithm: &str, size: u64) -> Vec<SummaryRow> {
    let committed = || rows.iter().filter(|r| r.status == TxStatus::Committed);
    let user_cost = |r: &GasLogRow| r.gas_used - r.refunded_gas.min(r.gas_used);
    let demand: Vec<u64> = committed().filter(|r| r.tx_kind == TxKind::Demand).map(user_cost).collect();
    let claim: Vec<u64> = committed().filter(|r| r.tx_kind == TxKind::Claim).map(user_cost).collect();
    let mut per_round: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for r in committed().filter(|r| r.tx_kind == TxKind::Claim) {
        per_round.entry(r.round).or_default().push(user_cost(r));
    }
    let update_max = committed().map(|r| r.refunded_gas).max().filter(|&m| m > 0);

    let rounds = matches!(algorithm.parse::<Algorithm>(), Ok(Algorithm::Amf) | Ok(Algorithm::Wamf));
    let mut out = Vec::new();
    let mut push =
        |metric: String, value: f64| out.push(SummaryRow { algorithm: algorithm.to_string(), size, metric, value });
    if let Some(v) = mean(&demand) {
        push("demand_avg".into(), v);
    }
    if let Some(v) = mean(&claim) {
        push("claim_avg".into(), v);
        let total = if rounds { per_round.values().filter_map(|xs| mean(xs)).sum() } else { v };
        push("claim_total".into(), total);
    }
    if let Some(m) = update_max {
        push("update_state_max".into(), m as f64);
    }
    if rounds {
        for (round, xs) in &per_round {
            if let Some(v) = mean(xs) {
                push(format!("claim_avg_round_{}", round + 1), v);
            }
        }
    }
    out
}
