//! Domain types and closed-form quantities of the repeated hallucination game.
//!
//! An agent resells answers from an upstream model `m` (wholesale fee `k_m`,
//! baseline hallucination probability `h0(m)`) and spends verification effort
//! `e` that lowers the per-period hallucination probability to
//! `h(m, e) = h0(m) * exp(-beta * e)`. A hallucination ends the relationship,
//! so every per-period quantity is discounted by the effective factor
//! `delta * (1 - h)`.
//!
//! All functions here are pure; none of them clamp probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Tolerance used by [`binding_type`] to report a tie between the two
/// participation constraints.
pub const BINDING_TIE_TOL: f64 = 1e-12;

/// Absolute tolerance on the incentive-compatibility slack.
pub const IC_TOL: f64 = 1e-10;

/// A user segment: payoff from a correct answer and loss from a hallucinated one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserType {
    pub v: f64,
    pub alpha: f64,
}

impl UserType {
    pub fn new(v: f64, alpha: f64) -> Result<Self> {
        let user = UserType { v, alpha };
        user.validate("user")?;
        Ok(user)
    }

    pub(crate) fn validate(&self, field: &str) -> Result<()> {
        if !(self.v.is_finite() && self.v > 0.0) {
            return Err(ModelError::invalid(format!("{field}.v"), format!("must be > 0, got {}", self.v)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(ModelError::invalid(
                format!("{field}.alpha"),
                format!("must be > 0, got {}", self.alpha),
            ));
        }
        Ok(())
    }
}

/// Two-segment user population with high-type share `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserPopulation {
    pub high: UserType,
    pub low: UserType,
    pub mu: f64,
}

impl UserPopulation {
    pub fn new(high: UserType, low: UserType, mu: f64) -> Result<Self> {
        let pop = UserPopulation { high, low, mu };
        pop.validate()?;
        Ok(pop)
    }

    /// Checks the ordering invariants. `mu` may sit on the closed unit interval
    /// so that sweeps can probe the limits.
    pub fn validate(&self) -> Result<()> {
        self.high.validate("high")?;
        self.low.validate("low")?;
        if self.high.v <= self.low.v {
            return Err(ModelError::invalid(
                "high.v",
                format!("v_high ({}) must exceed v_low ({})", self.high.v, self.low.v),
            ));
        }
        if self.high.alpha <= self.low.alpha {
            return Err(ModelError::invalid(
                "high.alpha",
                format!(
                    "alpha_high ({}) must exceed alpha_low ({})",
                    self.high.alpha, self.low.alpha
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(ModelError::invalid("mu", format!("must lie in [0, 1], got {}", self.mu)));
        }
        Ok(())
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        UserPopulation { mu, ..*self }
    }

    pub fn v_avg(&self) -> f64 {
        self.mu * self.high.v + (1.0 - self.mu) * self.low.v
    }

    pub fn alpha_avg(&self) -> f64 {
        self.mu * self.high.alpha + (1.0 - self.mu) * self.low.alpha
    }

    /// Sensitivity ratio `(alpha_H - alpha_L) / (v_H - v_L)`.
    pub fn kappa(&self) -> f64 {
        (self.high.alpha - self.low.alpha) / (self.high.v - self.low.v)
    }

    /// Hallucination probability `1 / (1 + kappa)` at which both types are
    /// equally well off.
    pub fn binding_threshold(&self) -> f64 {
        1.0 / (1.0 + self.kappa())
    }
}

/// An upstream generative model on the wholesale menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamModel {
    pub id: String,
    pub wholesale_fee: f64,
    pub baseline_hallucination: f64,
}

impl UpstreamModel {
    pub fn new(id: impl Into<String>, wholesale_fee: f64, baseline_hallucination: f64) -> Result<Self> {
        let m = UpstreamModel {
            id: id.into(),
            wholesale_fee,
            baseline_hallucination,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wholesale_fee.is_finite() && self.wholesale_fee > 0.0) {
            return Err(ModelError::invalid(
                "wholesale_fee",
                format!("model {}: must be > 0, got {}", self.id, self.wholesale_fee),
            ));
        }
        let h0 = self.baseline_hallucination;
        if !(h0 > 0.0 && h0 < 1.0) {
            return Err(ModelError::invalid(
                "baseline_hallucination",
                format!("model {}: must lie in (0, 1), got {h0}", self.id),
            ));
        }
        Ok(())
    }
}

/// The finite, publicly known menu of upstream models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCatalog {
    pub models: Vec<UpstreamModel>,
}

impl ModelCatalog {
    pub fn new(models: Vec<UpstreamModel>) -> Result<Self> {
        let catalog = ModelCatalog { models };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(ModelError::Config("model catalog is empty".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            m.validate()?;
            for other in &self.models[..i] {
                if other.id == m.id {
                    return Err(ModelError::invalid("catalog", format!("duplicate model id {:?}", m.id)));
                }
                if other.wholesale_fee == m.wholesale_fee {
                    return Err(ModelError::invalid(
                        "catalog",
                        format!("models {} and {} share wholesale_fee {}", other.id, m.id, m.wholesale_fee),
                    ));
                }
                if other.baseline_hallucination == m.baseline_hallucination {
                    return Err(ModelError::invalid(
                        "catalog",
                        format!(
                            "models {} and {} share baseline_hallucination {}",
                            other.id, m.id, m.baseline_hallucination
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&UpstreamModel> {
        self.models.iter().find(|m| m.id == id)
    }

    /// Sub-catalog containing only the listed ids, in the listed order.
    pub fn restrict<S: AsRef<str>>(&self, ids: &[S]) -> Result<ModelCatalog> {
        let models = ids
            .iter()
            .map(|id| {
                self.get(id.as_ref())
                    .cloned()
                    .ok_or_else(|| ModelError::Config(format!("unknown model id {:?}", id.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        ModelCatalog::new(models)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Power-law effort cost `c(e) = coefficient * e^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostFunction {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Default for CostFunction {
    fn default() -> Self {
        CostFunction {
            coefficient: 0.125,
            exponent: 2.0,
        }
    }
}

impl CostFunction {
    pub fn new(coefficient: f64, exponent: f64) -> Result<Self> {
        let cost = CostFunction { coefficient, exponent };
        cost.validate()?;
        if exponent != 2.0 {
            log::warn!(
                "cost exponent {exponent} != 2: uniqueness of the optimal effort is not guaranteed, \
                 check the second-order diagnostics"
            );
        }
        Ok(cost)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient.is_finite() && self.coefficient > 0.0) {
            return Err(ModelError::invalid(
                "cost.coefficient",
                format!("must be > 0, got {}", self.coefficient),
            ));
        }
        if !(self.exponent.is_finite() && self.exponent >= 2.0) {
            return Err(ModelError::invalid(
                "cost.exponent",
                format!("must be >= 2, got {}", self.exponent),
            ));
        }
        Ok(())
    }

    pub(crate) fn value(&self, e: f64) -> f64 {
        if e == 0.0 {
            0.0
        } else if self.exponent == 2.0 {
            self.coefficient * e * e
        } else {
            self.coefficient * e.powf(self.exponent)
        }
    }

    pub(crate) fn marginal(&self, e: f64) -> f64 {
        if e == 0.0 {
            0.0
        } else if self.exponent == 2.0 {
            2.0 * self.coefficient * e
        } else {
            self.coefficient * self.exponent * e.powf(self.exponent - 1.0)
        }
    }
}

/// Discount factor and verification efficacy shared by all agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub delta: f64,
    pub beta: f64,
}

impl MarketParams {
    pub fn new(delta: f64, beta: f64) -> Result<Self> {
        let params = MarketParams { delta, beta };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) {
            return Err(ModelError::invalid("delta", format!("must lie in [0, 1), got {}", self.delta)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(ModelError::invalid("beta", format!("must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// A posted relational contract: model, per-period price and the effort the
/// agent is meant to exert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub model: UpstreamModel,
    pub price: f64,
    pub effort: f64,
}

impl Contract {
    pub fn new(model: UpstreamModel, price: f64, effort: f64) -> Result<Self> {
        if !(effort.is_finite() && effort >= 0.0) {
            return Err(ModelError::domain("effort", effort));
        }
        if !price.is_finite() {
            return Err(ModelError::domain("price", price));
        }
        Ok(Contract { model, price, effort })
    }

    /// The contract at the minimum price that sustains `effort`.
    pub fn enforced(model: UpstreamModel, effort: f64, cost: &CostFunction, params: &MarketParams) -> Result<Self> {
        let price = enforcement_price(&model, effort, cost, params)?;
        Contract::new(model, price, effort)
    }
}

/// Which participation constraint binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Binding {
    High,
    Low,
    Both,
}

impl std::fmt::Display for Binding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Binding::High => "High",
            Binding::Low => "Low",
            Binding::Both => "Both",
        })
    }
}

impl std::str::FromStr for Binding {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "High" => Ok(Binding::High),
            "Low" => Ok(Binding::Low),
            "Both" => Ok(Binding::Both),
            other => Err(ModelError::Config(format!("unknown binding type {other:?}"))),
        }
    }
}

/// Minimum patience required for an active market at a given `(m, e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActivityThreshold {
    /// Any `delta >= threshold` sustains the market.
    Patience(f64),
    /// No `delta < 1` sustains it; carries the offending bracket value.
    Unattainable { bracket: f64 },
}

impl ActivityThreshold {
    /// The threshold as a number, `+inf` when unattainable.
    pub fn as_f64(&self) -> f64 {
        match *self {
            ActivityThreshold::Patience(d) => d,
            ActivityThreshold::Unattainable { .. } => f64::INFINITY,
        }
    }

    pub fn admits(&self, delta: f64) -> bool {
        match *self {
            ActivityThreshold::Patience(d) => delta >= d,
            ActivityThreshold::Unattainable { .. } => false,
        }
    }
}

/// Outcome of the incentive-compatibility test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcCheck {
    pub holds: bool,
    /// `delta * (h0 - h) * V_C - c(e)`; non-negative when the constraint holds.
    pub slack: f64,
}

fn check_effort(effort: f64) -> Result<()> {
    if effort.is_finite() && effort >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::domain("effort", effort))
    }
}

fn check_prob(h: f64) -> Result<()> {
    if (0.0..=1.0).contains(&h) {
        Ok(())
    } else {
        Err(ModelError::domain("hallucination probability", h))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if (0.0..1.0).contains(&delta) {
        Ok(())
    } else {
        Err(ModelError::domain("delta", delta))
    }
}

/// `h0 - h(m, e)` without cancellation for small efforts.
pub(crate) fn hallucination_gap(h0: f64, beta: f64, effort: f64) -> f64 {
    -h0 * (-beta * effort).exp_m1()
}

/// `1 - delta * (1 - h)`, the effective per-period discount complement.
pub(crate) fn survival_denominator(delta: f64, h: f64) -> f64 {
    (1.0 - delta) + delta * h
}

/// Per-period hallucination probability `h0(m) * exp(-beta * e)`.
pub fn hallucination_prob(model: &UpstreamModel, effort: f64, beta: f64) -> Result<f64> {
    check_effort(effort)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(ModelError::domain("beta", beta));
    }
    Ok(model.baseline_hallucination * (-beta * effort).exp())
}

pub fn effort_cost(cost: &CostFunction, effort: f64) -> Result<f64> {
    check_effort(effort)?;
    Ok(cost.value(effort))
}

/// Expected one-period utility `(1 - h) v - h alpha - p`.
pub fn per_period_utility(user: &UserType, h: f64, price: f64) -> Result<f64> {
    check_prob(h)?;
    Ok((1.0 - h) * user.v - h * user.alpha - price)
}

/// Discounted lifetime value of entering a relationship that ends at the
/// first hallucination.
pub fn lifetime_value(user: &UserType, h: f64, price: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let u = per_period_utility(user, h, price)?;
    Ok(u / survival_denominator(delta, h))
}

/// Markup multiplier `R(m, e) = (1 - delta (1 - h)) / (delta (h0 - h))`.
///
/// Singular at zero effort and at `delta = 0`; use [`rent_term`] when the
/// zero-effort limit is wanted.
pub fn rent_factor(model: &UpstreamModel, effort: f64, params: &MarketParams) -> Result<f64> {
    check_effort(effort)?;
    if effort == 0.0 {
        return Err(ModelError::Singular("rent factor is undefined at zero effort"));
    }
    if params.delta == 0.0 {
        return Err(ModelError::Singular("rent factor is undefined at delta = 0"));
    }
    let h = hallucination_prob(model, effort, params.beta)?;
    let gap = hallucination_gap(model.baseline_hallucination, params.beta, effort);
    Ok(survival_denominator(params.delta, h) / (params.delta * gap))
}

/// Discounted rent `c(e) R / (1 - delta (1 - h)) = c(e) / (delta (h0 - h))`,
/// taken as its limit 0 at zero effort.
pub fn rent_term(model: &UpstreamModel, effort: f64, cost: &CostFunction, params: &MarketParams) -> Result<f64> {
    check_effort(effort)?;
    if effort == 0.0 {
        return Ok(0.0);
    }
    if params.delta == 0.0 {
        return Err(ModelError::InfeasibleEnforcement);
    }
    let gap = hallucination_gap(model.baseline_hallucination, params.beta, effort);
    Ok(cost.value(effort) / (params.delta * gap))
}

/// Minimum price at which the incentive constraint binds:
/// `k_m + c(e) (1 + R(m, e))`, equal to `k_m` at zero effort.
pub fn enforcement_price(model: &UpstreamModel, effort: f64, cost: &CostFunction, params: &MarketParams) -> Result<f64> {
    check_effort(effort)?;
    if effort == 0.0 {
        return Ok(model.wholesale_fee);
    }
    if params.delta == 0.0 {
        return Err(ModelError::InfeasibleEnforcement);
    }
    let r = rent_factor(model, effort, params)?;
    Ok(model.wholesale_fee + cost.value(effort) * (1.0 + r))
}

/// Agent's present value of the relationship, `(p - k_m - c(e)) / (1 - delta (1 - h))`.
pub fn continuation_value(contract: &Contract, cost: &CostFunction, params: &MarketParams) -> Result<f64> {
    check_delta(params.delta)?;
    let h = hallucination_prob(&contract.model, contract.effort, params.beta)?;
    let margin = contract.price - contract.model.wholesale_fee - cost.value(contract.effort);
    Ok(margin / survival_denominator(params.delta, h))
}

/// Tests `c(e) <= delta [h(m,0) - h(m,e)] V_C`.
pub fn ic_holds(contract: &Contract, cost: &CostFunction, params: &MarketParams) -> Result<IcCheck> {
    let vc = continuation_value(contract, cost, params)?;
    let gap = hallucination_gap(contract.model.baseline_hallucination, params.beta, contract.effort);
    let slack = params.delta * gap * vc - cost.value(contract.effort);
    Ok(IcCheck {
        holds: slack >= -IC_TOL,
        slack,
    })
}

/// Average user lifetime value net of the agent's incentive rent at the
/// enforcement price; the planner's objective.
pub fn welfare(
    model: &UpstreamModel,
    effort: f64,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
) -> Result<f64> {
    check_delta(params.delta)?;
    let h = hallucination_prob(model, effort, params.beta)?;
    let c = cost.value(effort);
    let surplus = (1.0 - h) * pop.v_avg() - h * pop.alpha_avg() - model.wholesale_fee - c;
    let rent = rent_term(model, effort, cost, params)?;
    Ok(surplus / survival_denominator(params.delta, h) - rent)
}

/// Lifetime value of `user` when the agent charges the enforcement price for
/// `effort`.
pub fn enforced_value(
    user: &UserType,
    model: &UpstreamModel,
    effort: f64,
    cost: &CostFunction,
    params: &MarketParams,
) -> Result<f64> {
    let h = hallucination_prob(model, effort, params.beta)?;
    let p = enforcement_price(model, effort, cost, params)?;
    lifetime_value(user, h, p, params.delta)
}

/// Smallest discount factor at which the low type still participates at the
/// enforcement price for `(m, e)`.
pub fn delta_lower(
    model: &UpstreamModel,
    effort: f64,
    low: &UserType,
    cost: &CostFunction,
    beta: f64,
) -> Result<ActivityThreshold> {
    check_effort(effort)?;
    if effort == 0.0 {
        return Err(ModelError::Singular("activity threshold is undefined at zero effort"));
    }
    let h = hallucination_prob(model, effort, beta)?;
    let c = cost.value(effort);
    if c <= 0.0 {
        return Err(ModelError::Singular("activity threshold needs c(e) > 0"));
    }
    let gap = hallucination_gap(model.baseline_hallucination, beta, effort);
    let surplus = (1.0 - h) * low.v - h * low.alpha - model.wholesale_fee - c;
    let bracket = (1.0 - h) + gap * surplus / c;
    if bracket <= 1.0 {
        Ok(ActivityThreshold::Unattainable { bracket })
    } else {
        Ok(ActivityThreshold::Patience(1.0 / bracket))
    }
}

/// Which participation constraint binds at hallucination probability `h`.
pub fn binding_type(pop: &UserPopulation, h: f64) -> Result<Binding> {
    check_prob(h)?;
    let threshold = pop.binding_threshold();
    Ok(if (h - threshold).abs() <= BINDING_TIE_TOL {
        Binding::Both
    } else if h > threshold {
        Binding::High
    } else {
        Binding::Low
    })
}

/// The two user types and model pair used throughout the documentation and tests.
pub mod baseline {
    use super::*;

    pub fn population(mu: f64) -> UserPopulation {
        UserPopulation {
            high: UserType { v: 3.0, alpha: 10.0 },
            low: UserType { v: 1.0, alpha: 1.5 },
            mu,
        }
    }

    pub fn model_a() -> UpstreamModel {
        UpstreamModel {
            id: "A".into(),
            wholesale_fee: 0.05,
            baseline_hallucination: 0.20,
        }
    }

    pub fn model_b() -> UpstreamModel {
        UpstreamModel {
            id: "B".into(),
            wholesale_fee: 0.30,
            baseline_hallucination: 0.13,
        }
    }

    pub fn catalog() -> ModelCatalog {
        ModelCatalog {
            models: vec![model_a(), model_b()],
        }
    }

    pub fn cost() -> CostFunction {
        CostFunction::default()
    }

    pub fn params(delta: f64) -> MarketParams {
        MarketParams { delta, beta: 0.70 }
    }
}
