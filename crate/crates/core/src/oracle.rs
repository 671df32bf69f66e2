//! Reference max-min fair allocations and brute-force share searches.
//!
//! These are plain functions over value inputs. The faucet contracts are
//! checked against them.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AllocationResult {
    /// Granted amount per user, indexed like the input demands.
    pub allocations: Vec<u64>,
    pub leftover_capacity: u64,
    pub iterations: usize,
    /// Share (unit share when weighted) used in each iteration.
    pub per_iteration_shares: Vec<u64>,
}

impl AllocationResult {
    pub fn total_granted(&self) -> u64 {
        self.allocations.iter().sum()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("demands and weights differ in length ({demands} vs {weights})")]
    LengthMismatch { demands: usize, weights: usize },
    #[error("zero total weight among users with outstanding demand")]
    ZeroTotalWeight,
    #[error("precision must be positive")]
    ZeroPrecision,
}

/// Order in which demanders are visited inside an iteration. It only
/// matters for the residue iteration (`capacity < demanders`), where each
/// visited demander receives one unit until capacity runs out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidueOrder {
    /// Input order: first come, first served.
    #[default]
    InputOrder,
    /// Ascending remaining demand, ties by input position.
    AscendingVolume,
}

/// Iterative max-min fair allocation with first-come-first-served residue.
pub fn maxmin_allocate(demands: &[u64], capacity: u64) -> AllocationResult {
    maxmin_allocate_ordered(demands, capacity, ResidueOrder::InputOrder)
}

pub fn maxmin_allocate_ordered(demands: &[u64], capacity: u64, order: ResidueOrder) -> AllocationResult {
    let mut allocations = vec![0u64; demands.len()];
    let mut active: Vec<(usize, u64)> =
        demands.iter().enumerate().filter(|(_, &d)| d > 0).map(|(i, &d)| (i, d)).collect();
    let mut capacity = capacity;
    let mut shares = Vec::new();
    while !active.is_empty() && capacity > 0 {
        if order == ResidueOrder::AscendingVolume {
            active.sort_by_key(|&(i, rem)| (rem, i));
        }
        let n = active.len() as u64;
        let share = if capacity < n { 1 } else { capacity / n };
        shares.push(share);
        let mut next = Vec::with_capacity(active.len());
        for &(user, rem) in &active {
            if capacity == 0 {
                break;
            }
            let grant = share.min(rem);
            allocations[user] += grant;
            capacity -= grant;
            if rem > share {
                next.push((user, rem - share));
            }
        }
        active = next;
    }
    AllocationResult {
        allocations,
        leftover_capacity: capacity,
        iterations: shares.len(),
        per_iteration_shares: shares,
    }
}

/// Weighted iterative allocation with fixed-point weights.
///
/// Each iteration computes a unit share `s = floor(c * precision / W)` over
/// the weights `W` of users with outstanding demand; a user receives
/// `min(remaining, floor(s * w / precision))`. A user whose computed grant
/// is zero receives one unit instead (residue), capped by the capacity left
/// in the iteration. Users are visited in input order.
pub fn weighted_maxmin_allocate(
    demands: &[u64],
    weights: &[u64],
    capacity: u64,
    precision: u64,
) -> Result<AllocationResult, OracleError> {
    weighted_maxmin_allocate_limited(demands, weights, capacity, precision, None)
}

/// As [`weighted_maxmin_allocate`], stopping after `max_iterations`.
pub fn weighted_maxmin_allocate_limited(
    demands: &[u64],
    weights: &[u64],
    capacity: u64,
    precision: u64,
    max_iterations: Option<usize>,
) -> Result<AllocationResult, OracleError> {
    if demands.len() != weights.len() {
        return Err(OracleError::LengthMismatch { demands: demands.len(), weights: weights.len() });
    }
    if precision == 0 {
        return Err(OracleError::ZeroPrecision);
    }
    let mut allocations = vec![0u64; demands.len()];
    let mut remaining: Vec<u64> = demands.to_vec();
    let mut capacity = capacity;
    let mut shares = Vec::new();
    let limit = max_iterations.unwrap_or(usize::MAX);
    while shares.len() < limit && capacity > 0 && remaining.iter().any(|&r| r > 0) {
        let total_weight: u128 =
            remaining.iter().zip(weights).filter(|(&r, _)| r > 0).map(|(_, &w)| u128::from(w)).sum();
        if total_weight == 0 {
            return Err(OracleError::ZeroTotalWeight);
        }
        let unit = (u128::from(capacity) * u128::from(precision) / total_weight) as u64;
        shares.push(unit);
        for (user, rem) in remaining.iter_mut().enumerate() {
            if capacity == 0 {
                break;
            }
            if *rem == 0 {
                continue;
            }
            let grant = weighted_grant(*rem, unit, weights[user], precision, capacity);
            allocations[user] += grant;
            *rem -= grant;
            capacity -= grant;
        }
    }
    Ok(AllocationResult {
        allocations,
        leftover_capacity: capacity,
        iterations: shares.len(),
        per_iteration_shares: shares,
    })
}

/// Grant rule shared by the weighted allocation and the autonomous faucet:
/// `min(remaining, floor(unit * weight / precision))`, one residue unit when
/// that is zero, never more than `capacity`.
pub fn weighted_grant(remaining: u64, unit: u64, weight: u64, precision: u64, capacity: u64) -> u64 {
    let user_share = (u128::from(unit) * u128::from(weight) / u128::from(precision)) as u64;
    let grant = remaining.min(user_share);
    let grant = if grant == 0 { remaining.min(1) } else { grant };
    grant.min(capacity)
}

/// Largest `s` in `0..=max(demands)` with `sum(min(s, d)) <= capacity`.
pub fn bruteforce_share(demands: &[u64], capacity: u64) -> u64 {
    let max = demands.iter().copied().max().unwrap_or(0);
    let mut best = 0;
    for s in 0..=max {
        let need: u128 = demands.iter().map(|&d| u128::from(s.min(d))).sum();
        if need <= u128::from(capacity) {
            best = s;
        } else {
            break;
        }
    }
    best
}

/// Largest `p` with `sum(min(p * w, d)) <= capacity`, searched up to the
/// point where every demand is covered.
pub fn bruteforce_unit_share(demands: &[u64], weights: &[u64], capacity: u64) -> u64 {
    assert_eq!(demands.len(), weights.len(), "demands/weights length mismatch");
    let bound = demands.iter().zip(weights).filter(|(_, &w)| w > 0).map(|(&d, &w)| d.div_ceil(w)).max().unwrap_or(0);
    let mut best = 0;
    for p in 0..=bound {
        let need: u128 =
            demands.iter().zip(weights).map(|(&d, &w)| (u128::from(p) * u128::from(w)).min(u128::from(d))).sum();
        if need <= u128::from(capacity) {
            best = p;
        } else {
            break;
        }
    }
    best
}

/// Aggregates demands into buckets by `ceil(d / w)`. Element `k` of each
/// returned vector is bucket `k + 1`; demands whose index exceeds `quanta`
/// are dropped.
pub fn bucketize(demands: &[u64], weights: &[u64], quanta: u64) -> (Vec<u64>, Vec<u64>) {
    let mut dsum = vec![0u64; quanta as usize];
    let mut wsum = vec![0u64; quanta as usize];
    for (&d, &w) in demands.iter().zip(weights) {
        if d == 0 || w == 0 {
            continue;
        }
        let idx = d.div_ceil(w);
        if (1..=quanta).contains(&idx) {
            dsum[idx as usize - 1] += d;
            wsum[idx as usize - 1] += w;
        }
    }
    (dsum, wsum)
}

/// Bucketed necessary-capacity search: largest `p` in `0..=quanta` such that
/// `sum_{i<p} D_i + p * (W - sum_{i<p} W_i) <= capacity` holds for every
/// proposal up to `p`. Each proposal is evaluated from scratch.
pub fn bucketed_unit_share(
    demand_buckets: &[u64],
    weight_buckets: &[u64],
    total_weight: u64,
    capacity: u64,
    quanta: u64,
) -> u64 {
    for p in 1..=quanta {
        let below = (p - 1) as usize;
        let d: u128 = demand_buckets.iter().take(below).map(|&x| u128::from(x)).sum();
        let w: u128 = weight_buckets.iter().take(below).map(|&x| u128::from(x)).sum();
        let needed = d + u128::from(p) * (u128::from(total_weight).saturating_sub(w));
        if u128::from(capacity) < needed {
            return p - 1;
        }
    }
    quanta
}

/// Clamps a declared share to the largest demand. Shares at or above the
/// largest demand all grant every demand in full, so they are equivalent.
pub fn saturate(share: u64, demands: &[u64]) -> u64 {
    share.min(demands.iter().copied().max().unwrap_or(0))
}

/// Same as [`saturate`] for a weighted unit share: clamps to the smallest
/// unit share at which every demand is covered.
pub fn saturate_unit(unit: u64, demands: &[u64], weights: &[u64]) -> u64 {
    let bound = demands.iter().zip(weights).filter(|(_, &w)| w > 0).map(|(&d, &w)| d.div_ceil(w)).max().unwrap_or(0);
    unit.min(bound)
}

/// Expands a histogram (element `k` = number of demands of volume `k + 1`)
/// into the demand multiset.
pub fn expand_histogram(counts: &[u64]) -> Vec<u64> {
    counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(i as u64 + 1, c as usize)).collect()
}

/// Residue-order helper used to compare allocations irrespective of tie
/// order: sorted `(demand, allocation)` pairs.
pub fn demand_allocation_pairs(demands: &[u64], allocations: &[u64]) -> Vec<(u64, u64)> {
    let mut pairs: Vec<_> = demands.iter().copied().zip(allocations.iter().copied()).collect();
    pairs.sort_unstable();
    pairs
}
