//! Experiment configuration: a `key = value` text format with `#` comments.
//!
//! Keys left out take the defaults of the selected algorithm's test
//! procedure. Values that derive from `n` or `quanta` (capacity, spans) are
//! resolved after all keys are read, so overriding `n` rescales them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::faucet::Algorithm;
use crate::ledger::{CostTable, DEFAULT_BLOCK_GAS_LIMIT};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("key `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Incompatible(String),
}

fn value_err(key: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Value { key: key.to_string(), message: message.into() }
}

/// Half-open integer interval `[lo, hi)` of demand volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemandInterval {
    pub lo: u64,
    pub hi: u64,
}

impl DemandInterval {
    pub fn max(&self) -> u64 {
        self.hi - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    Unit,
    /// Uniform draw from the closed interval `[lo, hi]`, fixed per user.
    ConstantRandom {
        lo: u64,
        hi: u64,
    },
    /// Maintained by the faucet as `floor(precision / total_demand)`.
    ReciprocalTotalDemand,
}

impl WeightPolicy {
    fn to_text(self) -> String {
        match self {
            WeightPolicy::Unit => "unit".into(),
            WeightPolicy::ConstantRandom { lo, hi } => format!("constant_random[{lo},{hi}]"),
            WeightPolicy::ReciprocalTotalDemand => "reciprocal_total_demand".into(),
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub algorithm: Algorithm,
    pub n: u64,
    /// QMF/WQMF only.
    pub quanta: Option<u64>,
    pub epoch_capacity: u64,
    /// Unused by CMF, whose epochs are delimited by `distribute` calls.
    pub epoch_span: Option<u64>,
    /// AMF/WAMF only.
    pub round_span: Option<u64>,
    /// AMF/WAMF only.
    pub rounds_per_epoch: Option<u64>,
    pub demand_interval: DemandInterval,
    pub weight_policy: WeightPolicy,
    pub precision: u64,
    /// Epochs in the schedule, counting the registration epoch. The last
    /// epoch only claims.
    pub epochs: u64,
    pub seed: u64,
    pub cost_table: CostTable,
    pub block_gas_limit: u64,
    /// Randomize call order inside each window.
    pub shuffle: bool,
    /// Fixed demands, one row per demanding epoch, replacing random draws.
    pub demand_script: Option<Vec<Vec<u64>>>,
    /// SMF/WSMF registration ceiling.
    pub max_users: Option<u64>,
}

const KEYS: &[&str] = &[
    "algorithm",
    "n",
    "quanta",
    "epoch_capacity",
    "epoch_span",
    "round_span",
    "rounds_per_epoch",
    "demand_interval",
    "weight_policy",
    "precision",
    "epochs",
    "seed",
    "cost_table.storage_write_new",
    "cost_table.storage_write_update",
    "cost_table.storage_read",
    "cost_table.memory_op",
    "cost_table.arithmetic_op",
    "cost_table.base_tx",
    "block_gas_limit",
    "shuffle",
    "demand_script",
    "max_users",
];

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// Source line, 0 for overrides.
    pub line: usize,
}

/// Splits config text into entries. Checks syntax, known keys and
/// duplicates; values are interpreted later.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ScenarioError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ScenarioError::Syntax { line, message: format!("expected `key = value`, found `{content}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ScenarioError::Syntax { line, message: format!("unknown key `{key}`") });
        }
        if value.is_empty() {
            return Err(ScenarioError::Syntax { line, message: format!("empty value for `{key}`") });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(ScenarioError::Syntax { line, message: format!("duplicate key `{key}`") });
        }
        entries.push(Entry { key: key.to_string(), value: value.to_string(), line });
    }
    Ok(entries)
}

/// Replaces or appends `key = value`.
pub fn override_entry(entries: &mut Vec<Entry>, key: &str, value: &str) -> Result<(), ScenarioError> {
    if !KEYS.contains(&key) {
        return Err(ScenarioError::Syntax { line: 0, message: format!("unknown key `{key}`") });
    }
    match entries.iter_mut().find(|e| e.key == key) {
        Some(e) => e.value = value.to_string(),
        None => entries.push(Entry { key: key.to_string(), value: value.to_string(), line: 0 }),
    }
    Ok(())
}

/// One `--sweep key=v1,v2,...` axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_sweep(text: &str) -> Result<SweepAxis, ScenarioError> {
    let bad = |m: &str| ScenarioError::Syntax { line: 0, message: format!("sweep `{text}`: {m}") };
    let (key, values) = text.split_once('=').ok_or_else(|| bad("expected key=v1,v2,..."))?;
    let key = key.trim();
    if !KEYS.contains(&key) {
        return Err(bad("unknown key"));
    }
    if key == "demand_script" {
        return Err(bad("demand_script cannot be swept"));
    }
    let values = split_top_level(values);
    if values.iter().any(|v| v.is_empty()) {
        return Err(bad("empty value"));
    }
    Ok(SweepAxis { key: key.to_string(), values })
}

/// Splits on commas outside brackets, so interval values survive.
fn split_top_level(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '[' => depth += 1,
            ']' | ')' if depth > 0 => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur.trim().to_string());
    out
}

/// Cartesian product of sweep axes, first axis varying slowest. Each point
/// is a list of (key, value) overrides.
pub fn expand_sweep(axes: &[SweepAxis]) -> Vec<Vec<(String, String)>> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ScenarioError> {
    let cleaned: String = v.chars().filter(|&c| c != '_').collect();
    if let Some(exp) = cleaned.strip_prefix("10^") {
        let k: u32 = exp.parse().map_err(|_| value_err(key, format!("bad exponent in `{v}`")))?;
        return 10u64.checked_pow(k).ok_or_else(|| value_err(key, format!("`{v}` overflows")));
    }
    cleaned.parse().map_err(|_| value_err(key, format!("expected a non-negative integer, found `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ScenarioError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(value_err(key, format!("expected true or false, found `{v}`"))),
    }
}

/// `[lo,hi)` or `[lo,hi]`, returned as a half-open pair.
fn parse_interval(key: &str, v: &str) -> Result<(u64, u64), ScenarioError> {
    let bad = || value_err(key, format!("expected `[lo,hi)` or `[lo,hi]`, found `{v}`"));
    let inner = v.strip_prefix('[').ok_or_else(bad)?;
    let (inner, closed) = if let Some(s) = inner.strip_suffix(']') {
        (s, true)
    } else if let Some(s) = inner.strip_suffix(')') {
        (s, false)
    } else {
        return Err(bad());
    };
    let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
    let lo = parse_u64(key, lo.trim())?;
    let hi = parse_u64(key, hi.trim())?;
    let hi = if closed { hi.checked_add(1).ok_or_else(bad)? } else { hi };
    if lo >= hi {
        return Err(value_err(key, "interval is empty"));
    }
    Ok((lo, hi))
}

fn parse_weight_policy(key: &str, v: &str) -> Result<WeightPolicy, ScenarioError> {
    match v {
        "unit" => Ok(WeightPolicy::Unit),
        "reciprocal_total_demand" => Ok(WeightPolicy::ReciprocalTotalDemand),
        "constant_random" => Ok(WeightPolicy::ConstantRandom { lo: 1, hi: 10 }),
        _ => {
            let rest = v
                .strip_prefix("constant_random")
                .ok_or_else(|| value_err(key, format!("unknown weight policy `{v}`")))?;
            let (lo, hi) = parse_interval(key, rest.trim())?;
            if lo == 0 {
                return Err(value_err(key, "weights must be positive"));
            }
            Ok(WeightPolicy::ConstantRandom { lo, hi: hi - 1 })
        }
    }
}

fn parse_script(key: &str, v: &str) -> Result<Vec<Vec<u64>>, ScenarioError> {
    v.split(';').map(|row| row.split(',').map(|x| parse_u64(key, x.trim())).collect::<Result<Vec<_>, _>>()).collect()
}

fn is_power_of_ten(mut p: u64) -> bool {
    while p >= 10 && p.is_multiple_of(10) {
        p /= 10;
    }
    p == 1
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Self::from_entries(&parse_entries(text)?)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self, ScenarioError> {
        let map: BTreeMap<&str, &str> = entries.iter().map(|e| (e.key.as_str(), e.value.as_str())).collect();
        let get = |k: &str| map.get(k).copied();
        let num = |k: &str| get(k).map(|v| parse_u64(k, v)).transpose();

        let algorithm: Algorithm = get("algorithm")
            .ok_or_else(|| ScenarioError::Incompatible("missing key `algorithm`".into()))?
            .parse()
            .map_err(|e: String| value_err("algorithm", e))?;
        use Algorithm::*;
        let amf_family = matches!(algorithm, Amf | Wamf);
        let qmf_family = matches!(algorithm, Qmf | Wqmf);
        let smf_family = matches!(algorithm, Smf | Wsmf);

        let reject = |k: &str, why: &str| -> Result<(), ScenarioError> {
            if map.contains_key(k) {
                Err(ScenarioError::Incompatible(format!("`{k}` does not apply to {algorithm}: {why}")))
            } else {
                Ok(())
            }
        };
        if !qmf_family {
            reject("quanta", "only quantized faucets take quanta")?;
        }
        if !amf_family {
            reject("round_span", "only autonomous faucets have claim rounds")?;
            reject("rounds_per_epoch", "only autonomous faucets have claim rounds")?;
        }
        if algorithm == Cmf {
            reject("epoch_span", "epochs are delimited by distribute calls")?;
        }
        if !smf_family {
            reject("max_users", "only simulated faucets have a user ceiling")?;
        }

        let n = num("n")?.unwrap_or(match algorithm {
            Qmf | Wqmf => 1000,
            Smf | Wsmf => 100,
            _ => 10,
        });
        if n == 0 {
            return Err(value_err("n", "at least one user is required"));
        }
        let quanta = if qmf_family { Some(num("quanta")?.unwrap_or(100)) } else { None };
        if quanta == Some(0) {
            return Err(value_err("quanta", "must be positive"));
        }
        let epoch_capacity = match num("epoch_capacity")? {
            Some(c) => c,
            None => match quanta {
                Some(q) => q.saturating_mul(500),
                None => n.saturating_mul(20),
            },
        };
        let epoch_span = match algorithm {
            Cmf => None,
            Amf | Wamf => Some(num("epoch_span")?.unwrap_or(n.saturating_mul(4))),
            Qmf | Wqmf => Some(num("epoch_span")?.unwrap_or(n.saturating_mul(2).max(2000))),
            Smf | Wsmf => Some(num("epoch_span")?.unwrap_or(n.saturating_mul(2))),
        };
        let (round_span, rounds_per_epoch) = if amf_family {
            (Some(num("round_span")?.unwrap_or(n)), Some(num("rounds_per_epoch")?.unwrap_or(3)))
        } else {
            (None, None)
        };
        let demand_interval = match get("demand_interval") {
            Some(v) => {
                let (lo, hi) = parse_interval("demand_interval", v)?;
                DemandInterval { lo, hi }
            }
            None => match algorithm {
                Qmf | Wqmf => DemandInterval { lo: 1, hi: quanta.unwrap_or(1) + 1 },
                Smf | Wsmf => DemandInterval { lo: 15, hi: 35 },
                _ => DemandInterval { lo: 10, hi: 30 },
            },
        };
        let weight_policy = match get("weight_policy") {
            Some(v) => parse_weight_policy("weight_policy", v)?,
            None => match algorithm {
                Wamf => WeightPolicy::ReciprocalTotalDemand,
                Wqmf | Wsmf => WeightPolicy::ConstantRandom { lo: 1, hi: 10 },
                _ => WeightPolicy::Unit,
            },
        };
        let precision = num("precision")?.unwrap_or(match weight_policy {
            WeightPolicy::ReciprocalTotalDemand => 1_000_000,
            _ => 1,
        });
        let epochs = num("epochs")?.unwrap_or(4);
        let seed = num("seed")?.unwrap_or(0);
        let defaults = CostTable::default();
        let cost_table = CostTable {
            storage_write_new: num("cost_table.storage_write_new")?.unwrap_or(defaults.storage_write_new),
            storage_write_update: num("cost_table.storage_write_update")?.unwrap_or(defaults.storage_write_update),
            storage_read: num("cost_table.storage_read")?.unwrap_or(defaults.storage_read),
            memory_op: num("cost_table.memory_op")?.unwrap_or(defaults.memory_op),
            arithmetic_op: num("cost_table.arithmetic_op")?.unwrap_or(defaults.arithmetic_op),
            base_tx: num("cost_table.base_tx")?.unwrap_or(defaults.base_tx),
        };
        let block_gas_limit = num("block_gas_limit")?.unwrap_or(DEFAULT_BLOCK_GAS_LIMIT);
        let shuffle = get("shuffle").map(|v| parse_bool("shuffle", v)).transpose()?.unwrap_or(false);
        let demand_script = get("demand_script").map(|v| parse_script("demand_script", v)).transpose()?;
        let max_users = num("max_users")?;

        let s = Scenario {
            algorithm,
            n,
            quanta,
            epoch_capacity,
            epoch_span,
            round_span,
            rounds_per_epoch,
            demand_interval,
            weight_policy,
            precision,
            epochs,
            seed,
            cost_table,
            block_gas_limit,
            shuffle,
            demand_script,
            max_users,
        };
        s.validate()?;
        Ok(s)
    }

    /// Cross-field checks, including that the call schedule fits the spans.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        use Algorithm::*;
        let inc = |m: String| Err(ScenarioError::Incompatible(m));
        let alg = self.algorithm;
        self.cost_table.validate().map_err(|e| ScenarioError::Incompatible(e.to_string()))?;
        if self.block_gas_limit < self.cost_table.base_tx {
            return inc("block_gas_limit is below the base transaction cost".into());
        }
        if self.epoch_capacity == 0 {
            return Err(value_err("epoch_capacity", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(value_err("epochs", "must be positive"));
        }
        if self.demand_interval.lo == 0 {
            return Err(value_err("demand_interval", "demands must be at least 1"));
        }
        if self.precision == 0 || !is_power_of_ten(self.precision) {
            return Err(value_err("precision", "must be a power of ten"));
        }

        let policy_ok = matches!(
            (alg, self.weight_policy),
            (Amf | Qmf | Smf | Cmf, WeightPolicy::Unit)
                | (Wamf | Wsmf, WeightPolicy::ConstantRandom { .. } | WeightPolicy::ReciprocalTotalDemand)
                | (Wqmf, WeightPolicy::ConstantRandom { .. })
        );
        if !policy_ok {
            return inc(format!("weight_policy {} is not available for {alg}", self.weight_policy.to_text()));
        }
        if let WeightPolicy::ConstantRandom { lo, hi } = self.weight_policy {
            if lo == 0 || lo > hi {
                return Err(value_err("weight_policy", "weight interval must be non-empty and positive"));
            }
        }
        match self.weight_policy {
            WeightPolicy::ReciprocalTotalDemand => {
                let most = self.demand_interval.max().saturating_mul(self.epochs);
                if self.precision <= most {
                    return inc(format!(
                        "precision {} must exceed the largest cumulative demand {most}",
                        self.precision
                    ));
                }
            }
            _ if self.precision != 1 && alg != Wamf => {
                return Err(value_err("precision", "only reciprocal weighting uses precision"));
            }
            _ => {}
        }

        if let Some(q) = self.quanta {
            let max_bucket = match self.weight_policy {
                WeightPolicy::ConstantRandom { lo, .. } => self.demand_interval.max().div_ceil(lo),
                _ => self.demand_interval.max(),
            };
            if max_bucket > q {
                return inc(format!("demands up to {} exceed quanta {q}", self.demand_interval.max()));
            }
        }

        if let Some(script) = &self.demand_script {
            if script.len() as u64 != self.epochs - 1 {
                return inc(format!(
                    "demand_script has {} rows; expected one per demanding epoch ({})",
                    script.len(),
                    self.epochs - 1
                ));
            }
            for row in script {
                if row.len() as u64 != self.n {
                    return inc(format!("demand_script row has {} entries; n is {}", row.len(), self.n));
                }
                if row.contains(&0) {
                    return Err(value_err("demand_script", "demands must be at least 1"));
                }
                if let Some(q) = self.quanta {
                    if self.weight_policy == WeightPolicy::Unit && row.iter().any(|&d| d > q) {
                        return inc(format!("demand_script exceeds quanta {q}"));
                    }
                }
            }
        }
        if let Some(m) = self.max_users {
            if m < self.n {
                return inc(format!("max_users {m} is below n {}", self.n));
            }
        }
        self.check_schedule()
    }

    fn check_schedule(&self) -> Result<(), ScenarioError> {
        let n = self.n;
        let overflow = |m: String| Err(ScenarioError::Incompatible(format!("schedule overflow: {m}")));
        match (self.epoch_span, self.round_span, self.rounds_per_epoch) {
            (Some(es), Some(rs), Some(rounds)) => {
                if rs == 0 || es % rs != 0 {
                    return Err(value_err("round_span", "must be positive and divide epoch_span"));
                }
                if rounds == 0 {
                    return Err(value_err("rounds_per_epoch", "must be positive"));
                }
                if n > rs {
                    return overflow(format!("{n} claims do not fit a round of {rs} blocks"));
                }
                let claims = rounds.saturating_mul(rs);
                if claims.saturating_add(n) > es {
                    return overflow(format!("{rounds} rounds of {rs} blocks plus {n} demands exceed epoch_span {es}"));
                }
                if n > claims {
                    return overflow("registrations do not fit before the demand window".into());
                }
            }
            (Some(es), None, None) if n.saturating_mul(2) > es => {
                return overflow(format!("{n} claims plus {n} demands exceed epoch_span {es}"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical config text; parses back to an equal scenario.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("algorithm", self.algorithm.to_string());
        kv("n", self.n.to_string());
        if let Some(q) = self.quanta {
            kv("quanta", q.to_string());
        }
        kv("epoch_capacity", self.epoch_capacity.to_string());
        if let Some(es) = self.epoch_span {
            kv("epoch_span", es.to_string());
        }
        if let Some(rs) = self.round_span {
            kv("round_span", rs.to_string());
        }
        if let Some(r) = self.rounds_per_epoch {
            kv("rounds_per_epoch", r.to_string());
        }
        kv("demand_interval", format!("[{},{})", self.demand_interval.lo, self.demand_interval.hi));
        kv("weight_policy", self.weight_policy.to_text());
        kv("precision", self.precision.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        let c = &self.cost_table;
        kv("cost_table.storage_write_new", c.storage_write_new.to_string());
        kv("cost_table.storage_write_update", c.storage_write_update.to_string());
        kv("cost_table.storage_read", c.storage_read.to_string());
        kv("cost_table.memory_op", c.memory_op.to_string());
        kv("cost_table.arithmetic_op", c.arithmetic_op.to_string());
        kv("cost_table.base_tx", c.base_tx.to_string());
        kv("block_gas_limit", self.block_gas_limit.to_string());
        kv("shuffle", self.shuffle.to_string());
        if let Some(script) = &self.demand_script {
            let rows: Vec<String> =
                script.iter().map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(",")).collect();
            kv("demand_script", rows.join("; "));
        }
        if let Some(m) = self.max_users {
            kv("max_users", m.to_string());
        }
        out
    }
}
