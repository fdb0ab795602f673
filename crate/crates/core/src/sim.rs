//! Monte Carlo replay of the repeated game.
//!
//! Each simulated relationship runs period by period: the user pays the
//! posted price, the agent pays the wholesale fee and its effort cost, and a
//! hallucination occurs with probability `h(m, e)`. A hallucinated period
//! costs the user `alpha` and ends the relationship; otherwise the user
//! collects `v` and the relationship continues. Discounting is by `delta`
//! per period and the infinite horizon is truncated at the first `T` with
//! `delta^T < 1e-8`.
//!
//! Every relationship draws from its own ChaCha stream keyed by the master
//! seed and the relationship index, and per-relationship outcomes are reduced
//! in index order, so results are bit-identical for any thread count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{hallucination_prob, Contract, CostFunction, MarketParams, UserPopulation, UserType};

/// Horizon truncation target: `delta^T` below this.
pub const TRUNCATION: f64 = 1e-8;

const STREAM_HIGH: u64 = 1 << 56;
const STREAM_LOW: u64 = 2 << 56;
const STREAM_DEVIATION: u64 = 3 << 56;
const STREAM_POPULATION: u64 = 4 << 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Simulated lifetimes per user type.
    pub cohort_size: usize,
    pub seed: u64,
    /// Periods simulated; `None` derives it from `delta`.
    pub horizon: Option<usize>,
    /// Period at which the agent secretly plays zero effort once.
    pub deviation_period: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cohort_size: 100_000,
            seed: 0x5eed_2026,
            horizon: None,
            deviation_period: None,
        }
    }
}

impl SimConfig {
    /// Smallest `T >= 1` with `delta^T < 1e-8`, or the configured horizon.
    pub fn horizon_for(&self, delta: f64) -> usize {
        self.horizon.unwrap_or_else(|| default_horizon(delta))
    }

    pub fn validate(&self, delta: f64) -> Result<()> {
        if self.cohort_size == 0 {
            return Err(ModelError::invalid("sim.cohort_size", "must be >= 1"));
        }
        let horizon = self.horizon_for(delta);
        if horizon == 0 {
            return Err(ModelError::invalid("sim.horizon", "must be >= 1"));
        }
        if let Some(d) = self.deviation_period {
            if d >= horizon {
                return Err(ModelError::invalid(
                    "sim.deviation_period",
                    format!("must be below the horizon {horizon}, got {d}"),
                ));
            }
        }
        Ok(())
    }
}

pub fn default_horizon(delta: f64) -> usize {
    if delta <= 0.0 {
        return 1;
    }
    let mut t = (TRUNCATION.ln() / delta.ln()).floor().max(1.0) as usize;
    while delta.powi(t as i32) >= TRUNCATION {
        t += 1;
    }
    while t > 1 && delta.powi(t as i32 - 1) < TRUNCATION {
        t -= 1;
    }
    t
}

/// A sample mean with its standard error (`None` below two observations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: Option<f64>,
    pub n: usize,
}

impl Estimate {
    fn from_samples(xs: impl Iterator<Item = f64> + Clone) -> Estimate {
        let mut n = 0usize;
        let mut sum = 0.0;
        for x in xs.clone() {
            sum += x;
            n += 1;
        }
        let mean = if n > 0 { sum / n as f64 } else { f64::NAN };
        let se = (n >= 2).then(|| {
            let ss: f64 = xs.map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64 / n as f64).sqrt()
        });
        Estimate { mean, se, n }
    }

    /// `|mean - target| / se`; infinite when the error is nonzero and the
    /// standard error is zero or missing.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        match self.se {
            Some(se) if se > 0.0 => diff / se,
            _ if diff == 0.0 => 0.0,
            _ => f64::INFINITY,
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub value_high_hat: Estimate,
    pub value_low_hat: Estimate,
    /// Discounted agent profit per relationship, pooled over both types.
    pub agent_value_hat: Estimate,
    pub halluc_rate_hat: f64,
    pub mean_relationship_length: Estimate,
    pub deviation_gain_hat: Option<Estimate>,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy)]
struct Lifetime {
    user: f64,
    agent: f64,
    periods: u32,
    hallucinated: bool,
}

struct Terms {
    h: f64,
    price: f64,
    margin: f64,
    delta: f64,
    horizon: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn live(user: &UserType, terms: &Terms, rng: &mut ChaCha8Rng) -> Lifetime {
    let (mut u, mut a, mut disc) = (0.0, 0.0, 1.0);
    for t in 0..terms.horizon {
        a += disc * terms.margin;
        if rng.random::<f64>() < terms.h {
            u += disc * (-user.alpha - terms.price);
            return Lifetime {
                user: u,
                agent: a,
                periods: t as u32 + 1,
                hallucinated: true,
            };
        }
        u += disc * (user.v - terms.price);
        disc *= terms.delta;
    }
    Lifetime {
        user: u,
        agent: a,
        periods: terms.horizon as u32,
        hallucinated: false,
    }
}

/// Honest and deviating agent profit along one relationship, driven by the
/// same uniform draws.
fn deviation_pair(terms: &Terms, h0: f64, effort_cost: f64, deviation: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (mut honest, mut deviant) = (0.0, 0.0);
    let (mut honest_alive, mut deviant_alive) = (true, true);
    let mut disc = 1.0;
    for t in 0..terms.horizon {
        if !honest_alive && !deviant_alive {
            break;
        }
        let u = rng.random::<f64>();
        if honest_alive {
            honest += disc * terms.margin;
            honest_alive = u >= terms.h;
        }
        if deviant_alive {
            if t == deviation {
                deviant += disc * (terms.margin + effort_cost);
                deviant_alive = u >= h0;
            } else {
                deviant += disc * terms.margin;
                deviant_alive = u >= terms.h;
            }
        }
        disc *= terms.delta;
    }
    deviant - honest
}

fn terms_for(contract: &Contract, cost: &CostFunction, params: &MarketParams, horizon: usize) -> Result<Terms> {
    let h = hallucination_prob(&contract.model, contract.effort, params.beta)?;
    Ok(Terms {
        h,
        price: contract.price,
        margin: contract.price - contract.model.wholesale_fee - cost.value(contract.effort),
        delta: params.delta,
        horizon,
    })
}

fn validate_inputs(contract: &Contract, params: &MarketParams, cfg: &SimConfig) -> Result<()> {
    params.validate()?;
    if !(contract.effort.is_finite() && contract.effort >= 0.0) {
        return Err(ModelError::domain("effort", contract.effort));
    }
    cfg.validate(params.delta)
}

/// Simulates `cohort_size` lifetimes of each user type under `contract`.
pub fn simulate_relationships(
    contract: &Contract,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SimConfig,
) -> Result<SimResult> {
    validate_inputs(contract, params, cfg)?;
    let horizon = cfg.horizon_for(params.delta);
    let terms = terms_for(contract, cost, params, horizon)?;
    let n = cfg.cohort_size;

    let run = |user: &UserType, base: u64| -> Vec<Lifetime> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| live(user, &terms, &mut rng_for(cfg.seed, base | i)))
            .collect()
    };
    let high = run(&pop.high, STREAM_HIGH);
    let low = run(&pop.low, STREAM_LOW);
    let all = || high.iter().chain(low.iter());

    let periods: u64 = all().map(|l| l.periods as u64).sum();
    let events = all().filter(|l| l.hallucinated).count();

    let deviation_gain_hat = match cfg.deviation_period {
        Some(_) => Some(deviation_experiment(contract, pop, cost, params, cfg)?.gain),
        None => None,
    };

    Ok(SimResult {
        value_high_hat: Estimate::from_samples(high.iter().map(|l| l.user)),
        value_low_hat: Estimate::from_samples(low.iter().map(|l| l.user)),
        agent_value_hat: Estimate::from_samples(all().map(|l| l.agent)),
        halluc_rate_hat: events as f64 / periods as f64,
        mean_relationship_length: Estimate::from_samples(all().map(|l| l.periods as f64)),
        deviation_gain_hat,
        horizon,
    })
}

/// Sign of an estimated gain at a given number of standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    Positive,
    Null,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Present-value gain of shirking once, per relationship.
    pub gain: Estimate,
    pub significance: Significance,
    /// True when the gain does not exceed three standard errors.
    pub no_profitable_deviation: bool,
}

/// Compares discounted agent profit with and without one secret zero-effort
/// period, using common random numbers for the two arms.
pub fn deviation_experiment(
    contract: &Contract,
    _pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SimConfig,
) -> Result<DeviationReport> {
    let Some(deviation) = cfg.deviation_period else {
        return Err(ModelError::Config("deviation experiment needs a deviation_period".into()));
    };
    validate_inputs(contract, params, cfg)?;
    let horizon = cfg.horizon_for(params.delta);
    let terms = terms_for(contract, cost, params, horizon)?;
    let h0 = contract.model.baseline_hallucination;
    let c = cost.value(contract.effort);

    let gains: Vec<f64> = (0..cfg.cohort_size as u64)
        .into_par_iter()
        .map(|i| deviation_pair(&terms, h0, c, deviation, &mut rng_for(cfg.seed, STREAM_DEVIATION | i)))
        .collect();
    let gain = Estimate::from_samples(gains.iter().copied());
    let significance = classify(&gain, 3.0);
    Ok(DeviationReport {
        no_profitable_deviation: significance != Significance::Positive,
        gain,
        significance,
    })
}

/// Classifies an estimate against zero at `k` standard errors.
pub fn classify(est: &Estimate, k: f64) -> Significance {
    let se = est.se.unwrap_or(0.0);
    if est.mean > k * se && est.mean > 0.0 {
        Significance::Positive
    } else if est.mean < -k * se && est.mean < 0.0 {
        Significance::Negative
    } else {
        Significance::Null
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    /// Active mass at the start of every period equalled the initial mass.
    pub constant: bool,
    pub mass: usize,
    /// Exits in each period, replaced at the start of the next.
    pub flows: Vec<usize>,
    /// Per-period exit share, averaged over periods.
    pub replacement_rate: Estimate,
    /// High-type share of the active population, averaged over periods.
    pub high_share: f64,
}

/// Overlapping-cohorts market of `cohort_size` user slots run for `horizon`
/// periods; every exit is replaced by a fresh user the next period.
pub fn stationary_population_check(
    contract: &Contract,
    pop: &UserPopulation,
    params: &MarketParams,
    cfg: &SimConfig,
) -> Result<StationaryReport> {
    validate_inputs(contract, params, cfg)?;
    let h = hallucination_prob(&contract.model, contract.effort, params.beta)?;
    let horizon = cfg.horizon_for(params.delta);
    let mass = cfg.cohort_size;

    let mut rngs: Vec<ChaCha8Rng> = (0..mass as u64).map(|i| rng_for(cfg.seed, STREAM_POPULATION | i)).collect();
    // slot -> Some(is_high) when occupied
    let mut slots: Vec<Option<bool>> = rngs.iter_mut().map(|r| Some(r.random::<f64>() < pop.mu)).collect();
    let mut flows = Vec::with_capacity(horizon);
    let mut constant = true;
    let mut high_total = 0usize;
    let mut pending = 0usize;

    for _ in 0..horizon {
        let mut entered = 0usize;
        for (slot, rng) in slots.iter_mut().zip(rngs.iter_mut()) {
            if slot.is_none() {
                *slot = Some(rng.random::<f64>() < pop.mu);
                entered += 1;
            }
        }
        let active = slots.iter().filter(|s| s.is_some()).count();
        if active != mass || entered != pending {
            constant = false;
        }
        high_total += slots.iter().filter(|s| **s == Some(true)).count();

        let mut exits = 0usize;
        for (slot, rng) in slots.iter_mut().zip(rngs.iter_mut()) {
            if rng.random::<f64>() < h {
                *slot = None;
                exits += 1;
            }
        }
        flows.push(exits);
        pending = exits;
    }

    Ok(StationaryReport {
        constant,
        mass,
        replacement_rate: Estimate::from_samples(flows.iter().map(|&f| f as f64 / mass as f64)),
        flows,
        high_share: high_total as f64 / (mass * horizon) as f64,
    })
}
