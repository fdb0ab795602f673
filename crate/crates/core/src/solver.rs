//! Equilibrium computation: the zero-patience spot benchmark, the relational
//! equilibrium `(m*, e*)` under participation constraints, and numeric
//! certificates for its first-order condition and comparative statics.
//!
//! For each upstream model the planner's objective `W(m, e)` is maximized over
//! `e ∈ [0, e_max]`, where `e_max = ln(h0 / h_floor) / beta`. The search is a
//! dense grid scan followed by golden-section refinement of the winning
//! bracket and a bisection on the closed-form `dW/de`. When the unconstrained
//! maximizer leaves either user type with a negative lifetime value, the
//! feasible sub-intervals are located by bisection and the objective is
//! maximized on each of them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{
    binding_type, continuation_value, delta_lower, enforced_value, hallucination_gap,
    per_period_utility, rent_factor, survival_denominator, welfare, ActivityThreshold, Binding, Contract,
    CostFunction, MarketParams, ModelCatalog, UpstreamModel, UserPopulation,
};
use crate::numeric::{bisect_boundary, linspace, maximize_on, Edge};

/// Slack allowed when comparing `delta` against the activity threshold and
/// when reading participation values back from a bisected boundary.
pub const ACTIVITY_TOL: f64 = 1e-10;

/// How exact welfare ties between models are broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    #[default]
    LowerFee,
    FirstInCatalog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub effort_grid_points: usize,
    pub refine_tolerance: f64,
    /// Smallest hallucination probability searched; fixes `e_max`.
    pub h_floor: f64,
    /// Relative finite-difference step used by [`foc_residual`].
    pub fd_step: f64,
    pub model_tiebreak: TieBreak,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            effort_grid_points: 2048,
            refine_tolerance: 1e-9,
            h_floor: 1e-6,
            fd_step: 1e-6,
            model_tiebreak: TieBreak::LowerFee,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, catalog: Option<&ModelCatalog>) -> Result<()> {
        if self.effort_grid_points < 16 {
            return Err(ModelError::invalid("solver.effort_grid_points", "must be >= 16"));
        }
        if !(self.refine_tolerance > 0.0 && self.refine_tolerance < 1.0) {
            return Err(ModelError::invalid("solver.refine_tolerance", "must lie in (0, 1)"));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1.0) {
            return Err(ModelError::invalid("solver.fd_step", "must lie in (0, 1)"));
        }
        if !(self.h_floor.is_finite() && self.h_floor > 0.0) {
            return Err(ModelError::invalid("solver.h_floor", "must be > 0"));
        }
        if let Some(catalog) = catalog {
            let min_h0 = catalog
                .models
                .iter()
                .map(|m| m.baseline_hallucination)
                .fold(f64::INFINITY, f64::min);
            if self.h_floor >= min_h0 {
                return Err(ModelError::invalid(
                    "solver.h_floor",
                    format!("must be below the smallest baseline hallucination {min_h0}"),
                ));
            }
        }
        Ok(())
    }
}

/// Where on `[0, e_max]` the chosen effort sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffortRegime {
    /// Zero effort.
    Corner,
    /// Stationary point of `W`, certified by the first-order condition.
    Interior,
    /// Pinned by a participation constraint `V_theta = 0`.
    ParticipationBound,
    /// Pinned by the search cap `e_max`.
    EffortCap,
}

/// Both sides of the first-order condition at a given effort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocReport {
    pub effort: f64,
    /// Marginal discounted user surplus.
    pub lhs_derivative: f64,
    /// Marginal discounted agent rent.
    pub rhs_derivative: f64,
    pub residual: f64,
    pub second_order_ok: bool,
    pub regime: EffortRegime,
}

/// A solved market: the contract plus every derived quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub active: bool,
    pub contract: Contract,
    pub delta: f64,
    pub hallucination_rate: f64,
    pub welfare: f64,
    pub value_high: f64,
    pub value_low: f64,
    pub agent_value: f64,
    /// `None` at zero effort, where the factor is singular.
    pub rent_factor: Option<f64>,
    /// `None` at zero effort, where no patience is needed.
    pub delta_lower: Option<ActivityThreshold>,
    pub binding_type: Binding,
    pub kappa: f64,
    pub regime: EffortRegime,
    pub participation: bool,
    /// The relational market degenerated to a zero-effort contract at `delta > 0`.
    pub spot_fallback: bool,
    pub foc: Option<FocReport>,
}

impl EquilibriumResult {
    pub fn model_id(&self) -> &str {
        &self.contract.model.id
    }

    pub fn effort(&self) -> f64 {
        self.contract.effort
    }

    pub fn price(&self) -> f64 {
        self.contract.price
    }
}

/// Upper end of the effort search for `model`.
pub fn effort_cap(model: &UpstreamModel, params: &MarketParams, cfg: &SolverConfig) -> f64 {
    (model.baseline_hallucination / cfg.h_floor).ln() / params.beta
}

fn surplus_term(model: &UpstreamModel, e: f64, pop: &UserPopulation, cost: &CostFunction, params: &MarketParams) -> f64 {
    let h = model.baseline_hallucination * (-params.beta * e).exp();
    let n = (1.0 - h) * pop.v_avg() - h * pop.alpha_avg() - model.wholesale_fee - cost.value(e);
    n / survival_denominator(params.delta, h)
}

fn rent_value(model: &UpstreamModel, e: f64, cost: &CostFunction, params: &MarketParams) -> f64 {
    if e == 0.0 {
        return 0.0;
    }
    cost.value(e) / (params.delta * hallucination_gap(model.baseline_hallucination, params.beta, e))
}

fn objective(model: &UpstreamModel, e: f64, pop: &UserPopulation, cost: &CostFunction, params: &MarketParams) -> f64 {
    surplus_term(model, e, pop, cost, params) - rent_value(model, e, cost, params)
}

/// Closed-form derivatives `(d surplus / de, d rent / de)` of the two terms of
/// `W(m, e)`. At `e = 0` the rent slope is its right limit.
pub fn welfare_slopes(
    model: &UpstreamModel,
    effort: f64,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
) -> (f64, f64) {
    let (delta, beta, h0) = (params.delta, params.beta, model.baseline_hallucination);
    let h = h0 * (-beta * effort).exp();
    let c = cost.value(effort);
    let dc = cost.marginal(effort);
    let n = (1.0 - h) * pop.v_avg() - h * pop.alpha_avg() - model.wholesale_fee - c;
    let dn = beta * h * (pop.v_avg() + pop.alpha_avg()) - dc;
    let d = survival_denominator(delta, h);
    let dd = -delta * beta * h;
    let surplus_slope = (dn * d - n * dd) / (d * d);

    let rent_slope = if effort == 0.0 {
        if cost.exponent == 2.0 {
            cost.coefficient / (delta * h0 * beta)
        } else {
            0.0
        }
    } else {
        let gap = hallucination_gap(h0, beta, effort);
        (dc * gap - c * beta * h) / (delta * gap * gap)
    };
    (surplus_slope, rent_slope)
}

fn check_positive_delta(params: &MarketParams) -> Result<()> {
    params.validate()?;
    if params.delta == 0.0 {
        return Err(ModelError::Config(
            "delta = 0 admits no enforceable effort; use spot_equilibrium".into(),
        ));
    }
    Ok(())
}

/// First-order condition at `effort > 0` by central finite differences of the
/// surplus and rent terms.
pub fn foc_residual(
    model: &UpstreamModel,
    effort: f64,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<FocReport> {
    if !(effort.is_finite() && effort > 0.0) {
        return Err(ModelError::domain("effort", effort));
    }
    check_positive_delta(params)?;
    let step = (cfg.fd_step * effort.max(1.0)).min(0.5 * effort);
    let central = |g: &dyn Fn(f64) -> f64| (g(effort + step) - g(effort - step)) / (2.0 * step);
    let lhs = central(&|e| surplus_term(model, e, pop, cost, params));
    let rhs = central(&|e| rent_value(model, e, cost, params));
    Ok(FocReport {
        effort,
        lhs_derivative: lhs,
        rhs_derivative: rhs,
        residual: lhs - rhs,
        second_order_ok: second_order_ok(model, effort, pop, cost, params),
        regime: EffortRegime::Interior,
    })
}

fn second_order_ok(model: &UpstreamModel, e: f64, pop: &UserPopulation, cost: &CostFunction, params: &MarketParams) -> bool {
    let s = (1e-4 * e.max(1.0)).min(0.5 * e);
    let w = |x| objective(model, x, pop, cost, params);
    w(e + s) - 2.0 * w(e) + w(e - s) < 0.0
}

fn report_for(
    model: &UpstreamModel,
    effort: f64,
    regime: EffortRegime,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<FocReport> {
    if effort > 0.0 && regime == EffortRegime::Interior {
        return foc_residual(model, effort, pop, cost, params, cfg);
    }
    let (lhs, rhs) = welfare_slopes(model, effort, pop, cost, params);
    Ok(FocReport {
        effort,
        lhs_derivative: lhs,
        rhs_derivative: rhs,
        residual: lhs - rhs,
        second_order_ok: effort > 0.0 && second_order_ok(model, effort, pop, cost, params),
        regime,
    })
}

/// `∂²W / ∂e ∂mu = beta h [(v_H - v_L) + (1 - delta)(alpha_H - alpha_L)] / (1 - delta (1 - h))²`.
pub fn cross_partial(model: &UpstreamModel, effort: f64, pop: &UserPopulation, params: &MarketParams) -> Result<f64> {
    if !(effort.is_finite() && effort > 0.0) {
        return Err(ModelError::domain("effort", effort));
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(ModelError::domain("delta", params.delta));
    }
    let h = model.baseline_hallucination * (-params.beta * effort).exp();
    let dv = pop.high.v - pop.low.v;
    let da = pop.high.alpha - pop.low.alpha;
    let d = survival_denominator(params.delta, h);
    Ok(params.beta * h * (dv + (1.0 - params.delta) * da) / (d * d))
}

/// Unconstrained maximizer of `W(m, ·)` on `[0, e_max]`.
pub fn optimal_effort(
    model: &UpstreamModel,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<(f64, FocReport)> {
    check_positive_delta(params)?;
    cfg.validate(None)?;
    let e_max = effort_cap(model, params, cfg);
    let best = maximize_on(
        |e| objective(model, e, pop, cost, params),
        |e| {
            let (s, r) = welfare_slopes(model, e, pop, cost, params);
            s - r
        },
        0.0,
        e_max,
        cfg.effort_grid_points,
        cfg.refine_tolerance,
    );
    let regime = match best.edge {
        Edge::Lower => EffortRegime::Corner,
        Edge::Upper => EffortRegime::EffortCap,
        Edge::Interior => EffortRegime::Interior,
    };
    let report = report_for(model, best.x, regime, pop, cost, params, cfg)?;
    Ok((best.x, report))
}

/// Optimal effort for one model subject to both participation constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffortChoice {
    pub effort: f64,
    pub welfare: f64,
    pub regime: EffortRegime,
}

fn participates(model: &UpstreamModel, e: f64, pop: &UserPopulation, cost: &CostFunction, params: &MarketParams) -> bool {
    let vh = enforced_value(&pop.high, model, e, cost, params).unwrap_or(f64::NEG_INFINITY);
    let vl = enforced_value(&pop.low, model, e, cost, params).unwrap_or(f64::NEG_INFINITY);
    vh >= 0.0 && vl >= 0.0
}

/// Maximizes `W(m, ·)` over the efforts at which both user types accept the
/// enforcement price. `None` when no effort in `[0, e_max]` is acceptable.
pub fn constrained_effort(
    model: &UpstreamModel,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<Option<EffortChoice>> {
    let (e_free, report) = optimal_effort(model, pop, cost, params, cfg)?;
    if participates(model, e_free, pop, cost, params) {
        return Ok(Some(EffortChoice {
            effort: e_free,
            welfare: objective(model, e_free, pop, cost, params),
            regime: report.regime,
        }));
    }

    let e_max = effort_cap(model, params, cfg);
    let n = cfg.effort_grid_points;
    let xs: Vec<f64> = linspace(0.0, e_max, n).collect();
    let ok: Vec<bool> = xs.iter().map(|&e| participates(model, e, pop, cost, params)).collect();
    let feasible = |e: f64| participates(model, e, pop, cost, params);

    let mut best: Option<EffortChoice> = None;
    let mut i = 0;
    while i < n {
        if !ok[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < n && ok[j + 1] {
            j += 1;
        }
        let (lo, lo_bound) = if i == 0 { (0.0, false) } else { (bisect_boundary(feasible, xs[i], xs[i - 1]), true) };
        let (hi, hi_bound) = if j == n - 1 { (e_max, false) } else { (bisect_boundary(feasible, xs[j], xs[j + 1]), true) };

        let m = maximize_on(
            |e| objective(model, e, pop, cost, params),
            |e| {
                let (s, r) = welfare_slopes(model, e, pop, cost, params);
                s - r
            },
            lo,
            hi,
            n,
            cfg.refine_tolerance,
        );
        let regime = match m.edge {
            Edge::Interior => EffortRegime::Interior,
            Edge::Lower if lo_bound => EffortRegime::ParticipationBound,
            Edge::Lower => EffortRegime::Corner,
            Edge::Upper if hi_bound => EffortRegime::ParticipationBound,
            Edge::Upper => EffortRegime::EffortCap,
        };
        let choice = EffortChoice {
            effort: m.x,
            welfare: m.fx,
            regime,
        };
        if best.is_none_or(|b| choice.welfare > b.welfare) {
            best = Some(choice);
        }
        i = j + 1;
    }
    Ok(best)
}

fn prefer(a: (&UpstreamModel, f64, usize), b: (&UpstreamModel, f64, usize), tiebreak: TieBreak) -> bool {
    // true when `a` beats `b`
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    match tiebreak {
        TieBreak::LowerFee if a.0.wholesale_fee != b.0.wholesale_fee => a.0.wholesale_fee < b.0.wholesale_fee,
        _ => a.2 < b.2,
    }
}

/// Zero-patience benchmark: zero effort, price equal to the wholesale fee, and
/// the model maximizing the population-weighted per-period utility.
pub fn spot_equilibrium(catalog: &ModelCatalog, pop: &UserPopulation) -> Result<EquilibriumResult> {
    catalog.validate()?;
    pop.validate()?;
    let score = |m: &UpstreamModel| -> Result<f64> {
        let h = m.baseline_hallucination;
        Ok(pop.mu * per_period_utility(&pop.high, h, m.wholesale_fee)?
            + (1.0 - pop.mu) * per_period_utility(&pop.low, h, m.wholesale_fee)?)
    };
    let mut best = 0;
    let mut best_score = score(&catalog.models[0])?;
    for (i, m) in catalog.models.iter().enumerate().skip(1) {
        let s = score(m)?;
        if prefer((m, s, i), (&catalog.models[best], best_score, best), TieBreak::LowerFee) {
            best = i;
            best_score = s;
        }
    }
    let model = catalog.models[best].clone();
    let h = model.baseline_hallucination;
    let price = model.wholesale_fee;
    let value_high = per_period_utility(&pop.high, h, price)?;
    let value_low = per_period_utility(&pop.low, h, price)?;
    let participation = value_high >= 0.0 && value_low >= 0.0;
    Ok(EquilibriumResult {
        active: participation,
        contract: Contract::new(model, price, 0.0)?,
        delta: 0.0,
        hallucination_rate: h,
        welfare: best_score,
        value_high,
        value_low,
        agent_value: 0.0,
        rent_factor: None,
        delta_lower: None,
        binding_type: binding_type(pop, h)?,
        kappa: pop.kappa(),
        regime: EffortRegime::Corner,
        participation,
        spot_fallback: false,
        foc: None,
    })
}

fn assemble(
    model: &UpstreamModel,
    effort: f64,
    regime: EffortRegime,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    let contract = Contract::enforced(model.clone(), effort, cost, params)?;
    let h = model.baseline_hallucination * (-params.beta * effort).exp();
    let value_high = enforced_value(&pop.high, model, effort, cost, params)?;
    let value_low = enforced_value(&pop.low, model, effort, cost, params)?;
    let participation = value_high >= -ACTIVITY_TOL && value_low >= -ACTIVITY_TOL;
    let (rent, threshold) = if effort > 0.0 {
        (
            Some(rent_factor(model, effort, params)?),
            Some(delta_lower(model, effort, &pop.low, cost, params.beta)?),
        )
    } else {
        (None, None)
    };
    let patient = match threshold {
        None => true,
        Some(ActivityThreshold::Patience(d)) => params.delta >= d - ACTIVITY_TOL,
        Some(ActivityThreshold::Unattainable { .. }) => false,
    };
    let foc = Some(report_for(model, effort, regime, pop, cost, params, cfg)?);
    Ok(EquilibriumResult {
        active: participation && patient,
        agent_value: continuation_value(&contract, cost, params)?,
        contract,
        delta: params.delta,
        hallucination_rate: h,
        welfare: welfare(model, effort, pop, cost, params)?,
        value_high,
        value_low,
        rent_factor: rent,
        delta_lower: threshold,
        binding_type: binding_type(pop, h)?,
        kappa: pop.kappa(),
        regime,
        participation,
        spot_fallback: effort == 0.0,
        foc,
    })
}

/// Relational equilibrium for `delta > 0`: the welfare-maximizing model and
/// effort among contracts both user types accept at the enforcement price.
///
/// When no model admits an acceptable contract the result is inactive and
/// describes the unconstrained welfare maximizer.
pub fn solve_equilibrium(
    catalog: &ModelCatalog,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    catalog.validate()?;
    pop.validate()?;
    cost.validate()?;
    check_positive_delta(params)?;
    cfg.validate(Some(catalog))?;

    let mut best: Option<(usize, EffortChoice)> = None;
    for (i, model) in catalog.models.iter().enumerate() {
        let Some(choice) = constrained_effort(model, pop, cost, params, cfg)? else {
            continue;
        };
        let better = match best {
            None => true,
            Some((j, b)) => prefer(
                (model, choice.welfare, i),
                (&catalog.models[j], b.welfare, j),
                cfg.model_tiebreak,
            ),
        };
        if better {
            best = Some((i, choice));
        }
    }

    match best {
        Some((i, choice)) => assemble(&catalog.models[i], choice.effort, choice.regime, pop, cost, params, cfg),
        None => {
            let mut fallback: Option<(usize, f64, f64, EffortRegime)> = None;
            for (i, model) in catalog.models.iter().enumerate() {
                let (e, report) = optimal_effort(model, pop, cost, params, cfg)?;
                let w = objective(model, e, pop, cost, params);
                let better = match fallback {
                    None => true,
                    Some((j, _, wb, _)) => prefer((model, w, i), (&catalog.models[j], wb, j), cfg.model_tiebreak),
                };
                if better {
                    fallback = Some((i, e, w, report.regime));
                }
            }
            let (i, e, _, regime) = fallback.expect("catalog is non-empty");
            let mut result = assemble(&catalog.models[i], e, regime, pop, cost, params, cfg)?;
            result.active = false;
            Ok(result)
        }
    }
}

/// Dispatches `delta = 0` to [`spot_equilibrium`] and everything else to
/// [`solve_equilibrium`].
pub fn solve(
    catalog: &ModelCatalog,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    params.validate()?;
    if params.delta == 0.0 {
        spot_equilibrium(catalog, pop)
    } else {
        solve_equilibrium(catalog, pop, cost, params, cfg)
    }
}

/// One point of an equilibrium schedule over the high-type share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuPoint {
    pub mu: f64,
    pub result: EquilibriumResult,
}

pub(crate) fn check_grid(grid: &[f64], lo_open: f64, hi_open: f64, what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(ModelError::Config(format!("{what} grid is empty")));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(ModelError::Config(format!("{what} grid must be strictly increasing")));
        }
    }
    if let Some(bad) = grid.iter().find(|&&x| !(x > lo_open && x < hi_open)) {
        return Err(ModelError::Config(format!(
            "{what} grid value {bad} outside ({lo_open}, {hi_open})"
        )));
    }
    Ok(())
}

/// Solves the equilibrium at every `mu` of a strictly increasing grid inside
/// `(0, 1)`. Points are evaluated in parallel; the output follows grid order.
pub fn comparative_static_mu(
    catalog: &ModelCatalog,
    pop: &UserPopulation,
    cost: &CostFunction,
    params: &MarketParams,
    mu_grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<MuPoint>> {
    check_grid(mu_grid, 0.0, 1.0, "mu")?;
    mu_grid
        .par_iter()
        .map(|&mu| {
            let result = solve(catalog, &pop.with_mu(mu), cost, params, cfg)?;
            Ok(MuPoint { mu, result })
        })
        .collect()
}

/// Indices `i` where an active interior point `i` does not strictly exceed
/// the active interior point `i - 1` on the same model, plus any point
/// whose effort falls below its predecessor on the same model.
pub fn monotonicity_violations(schedule: &[MuPoint]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..schedule.len() {
        let (prev, cur) = (&schedule[i - 1].result, &schedule[i].result);
        if !(prev.active && cur.active) || prev.model_id() != cur.model_id() {
            continue;
        }
        let both_interior = prev.regime == EffortRegime::Interior && cur.regime == EffortRegime::Interior;
        let weak_fail = cur.effort() < prev.effort() - 1e-9;
        let strict_fail = both_interior && cur.effort() <= prev.effort();
        if weak_fail || strict_fail {
            out.push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::baseline::*;
    use crate::model::{ModelCatalog, UserType};
    use approx::assert_relative_eq;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn spot_examples() {
        let r = spot_equilibrium(&catalog(), &population(0.5)).unwrap();
        assert_eq!(r.model_id(), "B");
        assert_eq!(r.price(), 0.30);
        assert_eq!(r.effort(), 0.0);
        assert_relative_eq!(r.welfare, 0.6925, epsilon = 1e-12);
        assert!(r.active);

        let only_a = ModelCatalog::new(vec![model_a()]).unwrap();
        let r = spot_equilibrium(&only_a, &population(0.5)).unwrap();
        assert_eq!(r.model_id(), "A");
        assert_eq!(r.price(), 0.05);
        assert_relative_eq!(r.welfare, 0.40, epsilon = 1e-12);
        assert_relative_eq!(r.value_high, 0.35, epsilon = 1e-12);
        assert_relative_eq!(r.value_low, 0.45, epsilon = 1e-12);
        assert!(r.active);

        let mut pop = population(0.5);
        pop.low = UserType { v: 0.1, alpha: 1.5 };
        let r = spot_equilibrium(&only_a, &pop).unwrap();
        assert!(!r.active);
        assert!(r.value_low < 0.0);

        assert!(spot_equilibrium(&ModelCatalog { models: vec![] }, &population(0.5)).is_err());
    }

    #[test]
    fn optimal_effort_is_certified_interior() {
        let (e, report) = optimal_effort(&model_a(), &population(0.9), &cost(), &params(0.95), &cfg()).unwrap();
        assert_eq!(report.regime, EffortRegime::Interior);
        assert!(e > 1.0 && e < 3.0, "e* = {e}");
        assert!(report.residual.abs() < 1e-8, "residual {}", report.residual);
        assert!(report.second_order_ok);
    }

    #[test]
    fn optimal_effort_matches_brute_force() {
        let (a, pop, c, p) = (model_a(), population(0.5), cost(), params(0.95));
        let (e, _) = optimal_effort(&a, &pop, &c, &p, &cfg()).unwrap();
        let e_max = effort_cap(&a, &p, &cfg());
        // independent brute force over 10^6 points of a hand-written objective
        let n = 1_000_000;
        let w = |e: f64| {
            let h = 0.20 * (-0.7 * e).exp();
            let cst = e * e / 8.0;
            ((1.0 - h) * 2.0 - h * 5.75 - 0.05 - cst) / (1.0 - 0.95 * (1.0 - h))
                - if e > 0.0 { cst / (0.95 * (0.20 - h)) } else { 0.0 }
        };
        let (mut be, mut bw) = (0.0, f64::NEG_INFINITY);
        for i in 0..n {
            let x = e_max * i as f64 / (n - 1) as f64;
            let v = w(x);
            if v > bw {
                bw = v;
                be = x;
            }
        }
        assert!((e - be).abs() < 1e-4, "{e} vs {be}");
    }

    #[test]
    fn tiny_delta_gives_corner() {
        let (e, report) = optimal_effort(&model_a(), &population(0.5), &cost(), &params(1e-6), &cfg()).unwrap();
        assert!(e < 1e-3);
        assert!(matches!(report.regime, EffortRegime::Corner | EffortRegime::Interior));
        assert!(optimal_effort(&model_a(), &population(0.5), &cost(), &params(0.0), &cfg()).is_err());
    }

    #[test]
    fn foc_examples() {
        let (a, pop, c, p) = (model_a(), population(0.5), cost(), params(0.95));
        let (e, _) = optimal_effort(&a, &pop, &c, &p, &cfg()).unwrap();
        let at = foc_residual(&a, e, &pop, &c, &p, &cfg()).unwrap();
        assert!(at.residual.abs() < 1e-8);
        let left = foc_residual(&a, 0.2 * e, &pop, &c, &p, &cfg()).unwrap();
        assert!(left.residual > 0.0);
        assert!(foc_residual(&a, 0.0, &pop, &c, &p, &cfg()).is_err());

        // analytic derivative of h is -beta h
        let hp = |e: f64| 0.20 * (-0.7f64 * e).exp();
        let s = 1e-6;
        let fd = (hp(1.0 + s) - hp(1.0 - s)) / (2.0 * s);
        assert_relative_eq!(fd, -0.7 * hp(1.0), max_relative = 1e-6);
    }

    #[test]
    fn analytic_slopes_match_finite_differences() {
        let (a, pop, c, p) = (model_a(), population(0.3), cost(), params(0.9));
        for e in [0.05, 0.5, 1.3, 3.0] {
            let (s, r) = welfare_slopes(&a, e, &pop, &c, &p);
            let rep = foc_residual(&a, e, &pop, &c, &p, &cfg()).unwrap();
            assert_relative_eq!(s, rep.lhs_derivative, max_relative = 1e-6);
            assert_relative_eq!(r, rep.rhs_derivative, max_relative = 1e-6);
        }
    }

    #[test]
    fn cross_partial_example() {
        let v = cross_partial(&model_a(), 1.0, &population(0.5), &params(0.95)).unwrap();
        assert_relative_eq!(v, 8.090_824_813_819_573, max_relative = 1e-10);
        assert!(cross_partial(&model_a(), 0.0, &population(0.5), &params(0.95)).is_err());
    }

    #[test]
    fn model_switch_examples() {
        let (c, p) = (cost(), params(0.95));
        let low = solve_equilibrium(&catalog(), &population(0.1), &c, &p, &cfg()).unwrap();
        assert_eq!(low.model_id(), "A");
        assert!(low.active);
        let high = solve_equilibrium(&catalog(), &population(0.5), &c, &p, &cfg()).unwrap();
        assert_eq!(high.model_id(), "B");
        assert!(high.active);
        assert!(high.value_high >= 0.0 && high.value_low >= 0.0);
    }

    #[test]
    fn participation_bound_plateau() {
        let only_a = ModelCatalog::new(vec![model_a()]).unwrap();
        let r = solve_equilibrium(&only_a, &population(0.9), &cost(), &params(0.95), &cfg()).unwrap();
        assert_eq!(r.regime, EffortRegime::ParticipationBound);
        assert!(r.value_low >= 0.0 && r.value_low < 1e-9);
        assert!((r.effort() - 1.979).abs() < 1e-3, "{}", r.effort());
        assert!(r.active);
    }

    #[test]
    fn inactive_when_nothing_participates() {
        let mut pop = population(0.5);
        pop.low = UserType { v: 0.1, alpha: 1.5 };
        let only_a = ModelCatalog::new(vec![model_a()]).unwrap();
        let r = solve_equilibrium(&only_a, &pop, &cost(), &params(0.5), &cfg()).unwrap();
        assert!(!r.active);
        assert!(!r.participation);
    }

    #[test]
    fn delta_zero_is_rejected_and_routed() {
        assert!(matches!(
            solve_equilibrium(&catalog(), &population(0.5), &cost(), &params(0.0), &cfg()),
            Err(ModelError::Config(_))
        ));
        let r = solve(&catalog(), &population(0.5), &cost(), &params(0.0), &cfg()).unwrap();
        assert_eq!(r.effort(), 0.0);
        assert_eq!(r.price(), 0.30);
    }

    #[test]
    fn near_zero_patience_agrees_with_spot() {
        for mu in [0.1, 0.5, 0.9] {
            let pop = population(mu);
            let spot = spot_equilibrium(&catalog(), &pop).unwrap();
            let r = solve_equilibrium(&catalog(), &pop, &cost(), &params(1e-9), &cfg()).unwrap();
            assert_eq!(r.model_id(), spot.model_id());
            assert!(r.effort() < 1e-3);
        }
    }

    #[test]
    fn tiebreak_prefers_lower_fee() {
        let cheap = UpstreamModel::new("cheap", 0.1, 0.2).unwrap();
        let dear = UpstreamModel::new("dear", 0.2, 0.1).unwrap();
        assert!(prefer((&cheap, 1.0, 1), (&dear, 1.0, 0), TieBreak::LowerFee));
        assert!(!prefer((&cheap, 1.0, 1), (&dear, 1.0, 0), TieBreak::FirstInCatalog));
        assert!(prefer((&dear, 1.5, 1), (&cheap, 1.0, 0), TieBreak::LowerFee));
    }

    #[test]
    fn schedule_is_monotone() {
        let grid: Vec<f64> = (1..50).map(|i| i as f64 * 0.02).collect();
        let s = comparative_static_mu(&catalog(), &population(0.5), &cost(), &params(0.95), &grid, &cfg()).unwrap();
        assert_eq!(s.len(), grid.len());
        assert!(s.iter().zip(&grid).all(|(p, &mu)| p.mu == mu));
        assert!(monotonicity_violations(&s).is_empty());
        assert!(comparative_static_mu(&catalog(), &population(0.5), &cost(), &params(0.95), &[0.5, 0.4], &cfg()).is_err());
        assert!(comparative_static_mu(&catalog(), &population(0.5), &cost(), &params(0.95), &[0.0, 0.4], &cfg()).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.effort_grid_points = 8;
        assert!(c.validate(None).is_err());
        let mut c = cfg();
        c.h_floor = 0.5;
        assert!(c.validate(Some(&catalog())).is_err());
    }
}
