//! Site and network access policies: weight derivation from cost parameters,
//! adversary-rate evaluation, and the anonymity-degree measure.
//!
//! A site caps a Tor-routed adversary's normalized request rate by choosing
//! per-seed weights `w_i = epsilon * c_i * baseline / (identity_cost * r_i)`;
//! the network caps circuit creation with per-seed issuance rates
//! `q_i = 3 * c_i * max_circuit_rate / identity_cost`. Rates here are all
//! "per measurement interval" (600 s by default) and only ratios matter.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::directory::SeedType;

/// The 10-minute measurement window all published rates normalize to.
pub const DEFAULT_MEASUREMENT_INTERVAL_S: f64 = 600.0;

/// Cost and issuance parameters of one seed class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedClass {
    pub seed_type: SeedType,
    /// Assumed cost of obtaining one seed, in the site's currency units.
    pub cost: f64,
    /// Published site-kind pre-capability rate per interval for this seed.
    pub rate_per_interval: f64,
}

/// Inputs a site chooses; weights are derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SitePolicyInputs {
    /// Bound on the normalized Tor-routed request rate.
    pub epsilon: f64,
    /// Requests per interval the site tolerates from one direct client.
    pub baseline_rate: f64,
    /// Cost of one network identity.
    pub identity_cost: f64,
    pub seeds: Vec<SeedClass>,
}

/// Derived site policy: inputs plus the per-seed request weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SitePolicy {
    pub epsilon: f64,
    pub baseline_rate: f64,
    pub identity_cost: f64,
    pub seeds: Vec<SeedClass>,
    /// Requests allowed per capability, one entry per seed class.
    pub weights: Vec<f64>,
}

/// Sets every weight at the maximal value the bound permits:
/// `w_i = epsilon * c_i * baseline / (identity_cost * r_i)`.
pub fn derive_site_weights(inputs: &SitePolicyInputs) -> Result<SitePolicy, PolicyError> {
    if inputs.epsilon <= 0.0 || inputs.baseline_rate <= 0.0 || inputs.identity_cost <= 0.0 {
        return Err(PolicyError::NonPositiveParameter);
    }
    if inputs.seeds.is_empty() {
        return Err(PolicyError::NoSeedClasses);
    }
    let mut weights = Vec::with_capacity(inputs.seeds.len());
    for seed in &inputs.seeds {
        if seed.cost <= 0.0 || seed.rate_per_interval <= 0.0 {
            return Err(PolicyError::NonPositiveParameter);
        }
        weights.push(
            inputs.epsilon * seed.cost * inputs.baseline_rate
                / (inputs.identity_cost * seed.rate_per_interval),
        );
    }
    Ok(SitePolicy {
        epsilon: inputs.epsilon,
        baseline_rate: inputs.baseline_rate,
        identity_cost: inputs.identity_cost,
        seeds: inputs.seeds.clone(),
        weights,
    })
}

/// Inputs the network operator chooses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorPolicyInputs {
    /// Maximum circuit creation rate per client, per interval.
    pub max_circuit_rate: f64,
    pub identity_cost: f64,
    pub seeds: Vec<SeedClass>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorPolicy {
    pub max_circuit_rate: f64,
    pub identity_cost: f64,
    pub seeds: Vec<SeedClass>,
    /// Relay-kind pre-capability rates per seed class, per interval.
    pub relay_rates: Vec<f64>,
}

/// `q_i = 3 * c_i * max_circuit_rate / identity_cost`; the 3 is one token
/// per relay on a standard three-hop circuit. A zero circuit rate closes the
/// network entirely and is allowed.
pub fn derive_relay_rates(inputs: &TorPolicyInputs) -> Result<TorPolicy, PolicyError> {
    if inputs.max_circuit_rate < 0.0 || inputs.identity_cost <= 0.0 {
        return Err(PolicyError::NonPositiveParameter);
    }
    if inputs.seeds.is_empty() {
        return Err(PolicyError::NoSeedClasses);
    }
    let mut relay_rates = Vec::with_capacity(inputs.seeds.len());
    for seed in &inputs.seeds {
        if seed.cost <= 0.0 {
            return Err(PolicyError::NonPositiveParameter);
        }
        relay_rates.push(3.0 * seed.cost * inputs.max_circuit_rate / inputs.identity_cost);
    }
    Ok(TorPolicy {
        max_circuit_rate: inputs.max_circuit_rate,
        identity_cost: inputs.identity_cost,
        seeds: inputs.seeds.clone(),
        relay_rates,
    })
}

/// How an adversary splits its budget across seed classes, plus the actual
/// market costs it pays (which may differ from the site's assumptions).
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryStrategy {
    pub fractions: Vec<f64>,
    pub budget: f64,
    pub true_costs: Vec<f64>,
}

const SIMPLEX_TOLERANCE: f64 = 1e-12;

impl AdversaryStrategy {
    pub fn new(fractions: Vec<f64>, budget: f64, true_costs: Vec<f64>) -> Result<Self, PolicyError> {
        if fractions.len() != true_costs.len() {
            return Err(PolicyError::DimensionMismatch);
        }
        if budget <= 0.0 || true_costs.iter().any(|c| *c <= 0.0) {
            return Err(PolicyError::NonPositiveParameter);
        }
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|a| *a < 0.0 || *a > 1.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(PolicyError::NotOnSimplex { sum });
        }
        Ok(AdversaryStrategy {
            fractions,
            budget,
            true_costs,
        })
    }
}

/// The adversary's Tor-routed request rate, normalized by what the same
/// budget buys without Tor (`budget / identity_cost * baseline`).
///
/// Raw rate: sum over seeds of (seeds bought) x (issuance rate) x (weight) =
/// sum_i (a_i * budget / c_i') * r_i * w_i.
pub fn adversary_rate(policy: &SitePolicy, strategy: &AdversaryStrategy) -> Result<f64, PolicyError> {
    if strategy.fractions.len() != policy.seeds.len() {
        return Err(PolicyError::DimensionMismatch);
    }
    let mut raw = 0.0;
    for (i, seed) in policy.seeds.iter().enumerate() {
        let seeds_bought = strategy.fractions[i] * strategy.budget / strategy.true_costs[i];
        raw += seeds_bought * seed.rate_per_interval * policy.weights[i];
    }
    let direct = strategy.budget / policy.identity_cost * policy.baseline_rate;
    Ok(raw / direct)
}

/// Result of sweeping the whole strategy simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundSweep {
    pub max_rate: f64,
    pub bound: f64,
    pub holds: bool,
    pub strategies_checked: u64,
}

/// Exhaustive grid over two-seed strategies, checking that the normalized
/// rate never exceeds `epsilon * max(1, k)` where `k` is the true cost ratio
/// of the two seeds (first seed anchored at the identity cost).
pub fn verify_theta_bound(
    policy: &SitePolicy,
    cost_ratio: f64,
    resolution: usize,
) -> Result<BoundSweep, PolicyError> {
    if policy.seeds.len() != 2 {
        return Err(PolicyError::DimensionMismatch);
    }
    if cost_ratio <= 0.0 {
        return Err(PolicyError::NonPositiveParameter);
    }
    if resolution < 100 {
        return Err(PolicyError::GridTooCoarse { resolution });
    }
    let true_costs = alloc::vec![policy.identity_cost, policy.identity_cost / cost_ratio];
    let mut max_rate = 0.0f64;
    for step in 0..=resolution {
        let a0 = step as f64 / resolution as f64;
        let strategy =
            AdversaryStrategy::new(alloc::vec![a0, 1.0 - a0], policy.identity_cost, true_costs.clone())?;
        let rate = adversary_rate(policy, &strategy)?;
        if rate > max_rate {
            max_rate = rate;
        }
    }
    let bound = policy.epsilon * cost_ratio.max(1.0);
    Ok(BoundSweep {
        max_rate,
        bound,
        holds: max_rate <= bound * (1.0 + 1e-9),
        strategies_checked: resolution as u64 + 1,
    })
}

/// Fraction of maximal entropy left to an observer when `upgraded` of
/// `total` clients participate: `log2(upgraded) / log2(total)`.
pub fn anonymity_degree(upgraded: u64, total: u64) -> Result<f64, PolicyError> {
    if total < 2 {
        return Err(PolicyError::AnonymitySetTooSmall { total });
    }
    if upgraded < 1 || upgraded > total {
        return Err(PolicyError::UpgradedOutOfRange { upgraded, total });
    }
    Ok(libm::log2(upgraded as f64) / libm::log2(total as f64))
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum PolicyError {
    NonPositiveParameter,
    NoSeedClasses,
    DimensionMismatch,
    NotOnSimplex { sum: f64 },
    GridTooCoarse { resolution: usize },
    AnonymitySetTooSmall { total: u64 },
    UpgradedOutOfRange { upgraded: u64, total: u64 },
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyError::NonPositiveParameter => write!(f, "policy parameters must be positive"),
            PolicyError::NoSeedClasses => write!(f, "at least one seed class is required"),
            PolicyError::DimensionMismatch => write!(f, "strategy and policy dimensions differ"),
            PolicyError::NotOnSimplex { sum } => {
                write!(f, "strategy fractions must sum to 1 (got {sum})")
            }
            PolicyError::GridTooCoarse { resolution } => {
                write!(f, "grid resolution {resolution} is below the 100-point minimum")
            }
            PolicyError::AnonymitySetTooSmall { total } => {
                write!(f, "anonymity set of {total} is too small")
            }
            PolicyError::UpgradedOutOfRange { upgraded, total } => {
                write!(f, "upgraded count {upgraded} outside [1, {total}]")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PolicyError {}
