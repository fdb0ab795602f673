//! Solver against an exhaustive grid search written from scratch.

use halluc_market::model::{
    delta_lower, ActivityThreshold, CostFunction, MarketParams, ModelCatalog, UpstreamModel, UserPopulation, UserType,
};
use halluc_market::solver::{self, solve_equilibrium, spot_equilibrium, EffortRegime, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Draw {
    pop: UserPopulation,
    catalog: ModelCatalog,
    cost: CostFunction,
    params: MarketParams,
}

fn draw(rng: &mut ChaCha8Rng) -> Draw {
    let v_low = rng.random_range(0.5..1.5);
    let v_high = v_low + rng.random_range(0.5..3.0);
    let alpha_low = rng.random_range(0.5..3.0);
    let alpha_high = alpha_low + rng.random_range(0.0..10.0);
    let pop = UserPopulation::new(
        UserType::new(v_high, alpha_high).unwrap(),
        UserType::new(v_low, alpha_low).unwrap(),
        rng.random_range(0.05..0.95),
    )
    .unwrap();
    let k1 = rng.random_range(0.01..0.2);
    let k2 = k1 + rng.random_range(0.05..0.3);
    let h1 = rng.random_range(0.15..0.35);
    let h2 = h1 - rng.random_range(0.03..0.12);
    let catalog = ModelCatalog::new(vec![
        UpstreamModel::new("cheap", k1, h1).unwrap(),
        UpstreamModel::new("safe", k2, h2).unwrap(),
    ])
    .unwrap();
    Draw {
        pop,
        catalog,
        cost: CostFunction::default(),
        params: MarketParams::new(rng.random_range(0.7..0.99), rng.random_range(0.4..1.2)).unwrap(),
    }
}

/// Welfare and the two lifetime values at `e`, from the closed forms.
fn evaluate(d: &Draw, k: f64, h0: f64, e: f64) -> (f64, f64, f64) {
    let (delta, beta) = (d.params.delta, d.params.beta);
    let h = h0 * (-beta * e).exp();
    let c = 0.125 * e * e;
    let denom = 1.0 - delta * (1.0 - h);
    let rent = if e == 0.0 { 0.0 } else { c / (delta * (h0 - h)) };
    let price = k + c + rent * denom;
    let value = |v: f64, a: f64| ((1.0 - h) * v - h * a - price) / denom;
    let mu = d.pop.mu;
    let v_bar = mu * d.pop.high.v + (1.0 - mu) * d.pop.low.v;
    let a_bar = mu * d.pop.high.alpha + (1.0 - mu) * d.pop.low.alpha;
    let w = ((1.0 - h) * v_bar - h * a_bar - k - c) / denom - rent;
    (w, value(d.pop.high.v, d.pop.high.alpha), value(d.pop.low.v, d.pop.low.alpha))
}

/// Best feasible (model index, effort, welfare) on a grid of spacing `step`.
fn brute_force(d: &Draw, step: f64) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, m) in d.catalog.models.iter().enumerate() {
        let e_max = (m.baseline_hallucination / 1e-6).ln() / d.params.beta;
        let n = (e_max / step).ceil() as usize;
        for j in 0..=n {
            let e = (j as f64 * step).min(e_max);
            let (w, vh, vl) = evaluate(d, m.wholesale_fee, m.baseline_hallucination, e);
            if vh >= 0.0 && vl >= 0.0 && best.is_none_or(|(_, _, bw)| w > bw) {
                best = Some((i, e, w));
            }
        }
    }
    best
}

#[test]
fn matches_exhaustive_search_on_random_markets() {
    let mut rng = ChaCha8Rng::seed_from_u64(20261016);
    let cfg = SolverConfig::default();
    let mut compared = 0;
    for _ in 0..50 {
        let d = draw(&mut rng);
        let r = solve_equilibrium(&d.catalog, &d.pop, &d.cost, &d.params, &cfg).unwrap();
        match brute_force(&d, 5e-5) {
            None => assert!(!r.active, "solver active where no contract is feasible"),
            Some((i, e, w)) => {
                assert!(r.active);
                assert_eq!(r.model_id(), d.catalog.models[i].id, "e_bf={e} w_bf={w} got {r:?}");
                assert!((r.effort() - e).abs() < 1e-4, "effort {} vs brute force {e}", r.effort());
                assert!(r.welfare >= w - 1e-9);
                compared += 1;
            }
        }
    }
    assert!(compared >= 40, "only {compared} active draws");
}

#[test]
fn interior_solutions_are_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = SolverConfig::default();
    let mut interior = 0;
    for _ in 0..100 {
        let d = draw(&mut rng);
        let r = solve_equilibrium(&d.catalog, &d.pop, &d.cost, &d.params, &cfg).unwrap();
        if r.regime == EffortRegime::Interior {
            let foc = r.foc.expect("interior result carries a report");
            assert!(foc.residual.abs() < 1e-8, "residual {}", foc.residual);
            assert!(foc.second_order_ok);
            interior += 1;
        }
    }
    assert!(interior > 20, "only {interior} interior solutions");
}

#[test]
fn vanishing_patience_approaches_spot() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SolverConfig::default();
    for _ in 0..20 {
        let mut d = draw(&mut rng);
        d.params.delta = 1e-9;
        let spot = spot_equilibrium(&d.catalog, &d.pop).unwrap();
        let r = solve_equilibrium(&d.catalog, &d.pop, &d.cost, &d.params, &cfg).unwrap();
        assert_eq!(r.model_id(), spot.model_id());
        assert!(r.effort() < 1e-3);
    }
}

#[test]
fn activity_threshold_is_coherent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = SolverConfig::default();
    let mut checked = 0;
    for _ in 0..60 {
        let d = draw(&mut rng);
        let r = solve_equilibrium(&d.catalog, &d.pop, &d.cost, &d.params, &cfg).unwrap();
        if !r.active || r.effort() == 0.0 {
            continue;
        }
        let threshold = delta_lower(&r.contract.model, r.effort(), &d.pop.low, &d.cost, d.params.beta).unwrap();
        let ActivityThreshold::Patience(dl) = threshold else {
            panic!("active contract with unattainable threshold: {r:?}");
        };
        assert!(d.params.delta >= dl - 1e-10);
        if dl - 0.01 <= 0.0 {
            continue;
        }
        let lower = MarketParams::new(dl - 0.01, d.params.beta).unwrap();
        let r2 = solver::solve(&d.catalog, &d.pop, &d.cost, &lower, &cfg).unwrap();
        assert!(
            !r2.active || r2.effort() < r.effort(),
            "effort {} at delta {} vs {} at {}",
            r2.effort(),
            lower.delta,
            r.effort(),
            d.params.delta
        );
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn active_results_respect_participation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = SolverConfig::default();
    for _ in 0..100 {
        let d = draw(&mut rng);
        let r = solve_equilibrium(&d.catalog, &d.pop, &d.cost, &d.params, &cfg).unwrap();
        if r.active {
            assert!(r.value_high >= -1e-10 && r.value_low >= -1e-10, "{r:?}");
        }
    }
}

#[test]
fn spot_choice_maximizes_average_utility() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let d = draw(&mut rng);
        let spot = spot_equilibrium(&d.catalog, &d.pop).unwrap();
        let mu = d.pop.mu;
        let utility = |m: &UpstreamModel| {
            let h = m.baseline_hallucination;
            let u = |t: &UserType| (1.0 - h) * t.v - h * t.alpha - m.wholesale_fee;
            mu * u(&d.pop.high) + (1.0 - mu) * u(&d.pop.low)
        };
        let best = d
            .catalog
            .models
            .iter()
            .max_by(|a, b| utility(a).total_cmp(&utility(b)))
            .unwrap();
        assert_eq!(spot.model_id(), best.id);
        assert_eq!(spot.effort(), 0.0);
        assert_eq!(spot.price(), best.wholesale_fee);
    }
}
