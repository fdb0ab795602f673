//! Scenario files: a sectioned key/value text format (TOML syntax) describing
//! the population, the model catalog, market parameters, the cost function
//! and optional solver, simulation and figure settings.
//!
//! ```toml
//! [population]
//! v_high = 3.0
//! alpha_high = 10.0
//! v_low = 1.0
//! alpha_low = 1.5
//! mu = 0.5                # or a list, or { start, stop, step }
//!
//! [[catalog]]
//! id = "A"
//! wholesale_fee = 0.05
//! baseline_hallucination = 0.20
//!
//! [market]
//! delta = 0.95            # scalar or list
//! beta = 0.70             # scalar or list
//!
//! [cost]
//! coefficient = 0.125
//! exponent = 2.0
//! ```
//!
//! Unknown keys are rejected. Every validation error names the offending
//! field.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{CostFunction, MarketParams, ModelCatalog, UpstreamModel, UserPopulation, UserType};
use crate::sim::SimConfig;
use crate::solver::{SolverConfig, TieBreak};

/// The bundled baseline scenario.
pub const BASELINE: &str = include_str!("../../../presets/baseline.scenario");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// A scalar, an explicit list, or an inclusive `{ start, stop, step }` range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    One(f64),
    Many(Vec<f64>),
    Range(RangeSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

/// Rounds away floating-point residue from range arithmetic.
pub(crate) fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

impl Values {
    pub fn expand(&self, field: &str) -> Result<Vec<f64>, ScenarioError> {
        let out = match self {
            Values::One(x) => vec![*x],
            Values::Many(xs) => xs.clone(),
            Values::Range(r) => expand_range(r.start, r.stop, r.step).map_err(|m| ScenarioError::invalid(field, m))?,
        };
        if out.is_empty() {
            return Err(ScenarioError::invalid(field, "needs at least one value"));
        }
        if out.iter().any(|x| !x.is_finite()) {
            return Err(ScenarioError::invalid(field, "values must be finite"));
        }
        Ok(out)
    }

    fn from_list(xs: &[f64]) -> Values {
        match xs {
            [x] => Values::One(*x),
            _ => Values::Many(xs.to_vec()),
        }
    }
}

/// Inclusive range `start, start + step, ..., stop`.
pub fn expand_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, String> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(format!("range step must be > 0, got {step}"));
    }
    if stop < start {
        return Err(format!("range stop {stop} is below start {start}"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 1_000_000 {
        return Err(format!("range has {n} points, limit is 1000000"));
    }
    Ok((0..n).map(|i| snap(start + step * i as f64)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationSection {
    v_high: f64,
    alpha_high: f64,
    v_low: f64,
    alpha_low: f64,
    mu: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    id: String,
    wholesale_fee: f64,
    baseline_hallucination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketSection {
    delta: Values,
    beta: Values,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    coefficient: f64,
    #[serde(default = "two")]
    exponent: f64,
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    effort_grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    refine_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_floor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fd_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_tiebreak: Option<TieBreak>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    cohort_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deviation_period: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FiguresSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    mu_grid: Option<Values>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effort_models: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    population: PopulationSection,
    catalog: Vec<ModelEntry>,
    market: MarketSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    cost: Option<CostSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<SolverSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sim: Option<SimSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    figures: Option<FiguresSection>,
}

/// Settings for the three standard charts.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub mu_grid: Vec<f64>,
    pub delta_levels: Vec<f64>,
    pub beta_levels: Vec<f64>,
    /// Models the effort-vs-share charts are restricted to.
    pub effort_models: Vec<String>,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Population with `mu` set to the first entry of `mu_values`.
    pub population: UserPopulation,
    pub mu_values: Vec<f64>,
    pub catalog: ModelCatalog,
    pub delta_values: Vec<f64>,
    pub beta_values: Vec<f64>,
    pub cost: CostFunction,
    pub solver: SolverConfig,
    pub sim: SimConfig,
    pub figures: FigureSpec,
}

fn model_err(prefix: &str, e: ModelError) -> ScenarioError {
    match e {
        ModelError::Invalid { field, message } => ScenarioError::invalid(format!("{prefix}{field}"), message),
        other => ScenarioError::invalid(prefix.trim_end_matches('.'), other.to_string()),
    }
}

fn default_mu_grid() -> Vec<f64> {
    expand_range(0.02, 0.98, 0.02).expect("static range")
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Scenario::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::parse(&text)
    }

    pub fn baseline() -> Scenario {
        Scenario::parse(BASELINE).expect("bundled scenario is valid")
    }

    fn from_file(f: ScenarioFile) -> Result<Scenario, ScenarioError> {
        let p = &f.population;
        for (name, x) in [
            ("v_high", p.v_high),
            ("alpha_high", p.alpha_high),
            ("v_low", p.v_low),
            ("alpha_low", p.alpha_low),
        ] {
            if !(x.is_finite() && x > 0.0) {
                return Err(ScenarioError::invalid(format!("population.{name}"), format!("must be > 0, got {x}")));
            }
        }
        if p.v_high <= p.v_low {
            return Err(ScenarioError::invalid(
                "population.v_high",
                format!("v_high ({}) must exceed v_low ({})", p.v_high, p.v_low),
            ));
        }
        if p.alpha_high <= p.alpha_low {
            return Err(ScenarioError::invalid(
                "population.alpha_high",
                format!("alpha_high ({}) must exceed alpha_low ({})", p.alpha_high, p.alpha_low),
            ));
        }
        let mu_values = p.mu.expand("population.mu")?;
        if let Some(bad) = mu_values.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(ScenarioError::invalid("population.mu", format!("must lie in [0, 1], got {bad}")));
        }
        let population = UserPopulation {
            high: UserType { v: p.v_high, alpha: p.alpha_high },
            low: UserType { v: p.v_low, alpha: p.alpha_low },
            mu: mu_values[0],
        };

        let models = f
            .catalog
            .iter()
            .enumerate()
            .map(|(i, m)| {
                UpstreamModel::new(m.id.clone(), m.wholesale_fee, m.baseline_hallucination)
                    .map_err(|e| model_err(&format!("catalog[{i}]."), e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let catalog = ModelCatalog::new(models).map_err(|e| model_err("", e))?;

        let delta_values = f.market.delta.expand("market.delta")?;
        if let Some(bad) = delta_values.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(ScenarioError::invalid("market.delta", format!("must lie in [0, 1), got {bad}")));
        }
        let beta_values = f.market.beta.expand("market.beta")?;
        if let Some(bad) = beta_values.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(ScenarioError::invalid("market.beta", format!("must be > 0, got {bad}")));
        }
        let cost = match &f.cost {
            Some(c) => CostFunction::new(c.coefficient, c.exponent).map_err(|e| model_err("", e))?,
            None => CostFunction::default(),
        };

        let mut solver = SolverConfig::default();
        if let Some(s) = &f.solver {
            if let Some(v) = s.effort_grid_points {
                solver.effort_grid_points = v;
            }
            if let Some(v) = s.refine_tolerance {
                solver.refine_tolerance = v;
            }
            if let Some(v) = s.h_floor {
                solver.h_floor = v;
            }
            if let Some(v) = s.fd_step {
                solver.fd_step = v;
            }
            if let Some(v) = s.model_tiebreak {
                solver.model_tiebreak = v;
            }
        }
        solver.validate(Some(&catalog)).map_err(|e| model_err("", e))?;

        let mut sim = SimConfig::default();
        if let Some(s) = &f.sim {
            if let Some(v) = s.cohort_size {
                sim.cohort_size = v;
            }
            if let Some(v) = s.seed {
                sim.seed = v;
            }
            sim.horizon = s.horizon;
            sim.deviation_period = s.deviation_period;
        }
        for &d in &delta_values {
            sim.validate(d).map_err(|e| model_err("", e))?;
        }

        let fig = f.figures.clone().unwrap_or_default();
        let mu_grid = match &fig.mu_grid {
            Some(v) => v.expand("figures.mu_grid")?,
            None if mu_values.len() > 1 => mu_values.clone(),
            None => default_mu_grid(),
        };
        crate::solver::check_grid(&mu_grid, 0.0, 1.0, "figures.mu_grid")
            .map_err(|e| ScenarioError::invalid("figures.mu_grid", e.to_string()))?;
        let delta_levels = fig.delta_levels.clone().unwrap_or_else(|| delta_values.clone());
        if let Some(bad) = delta_levels.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(ScenarioError::invalid("figures.delta_levels", format!("must lie in [0, 1), got {bad}")));
        }
        let beta_levels = fig.beta_levels.clone().unwrap_or_else(|| beta_values.clone());
        if let Some(bad) = beta_levels.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(ScenarioError::invalid("figures.beta_levels", format!("must be > 0, got {bad}")));
        }
        let effort_models = fig
            .effort_models
            .clone()
            .unwrap_or_else(|| catalog.models.iter().map(|m| m.id.clone()).collect());
        catalog
            .restrict(&effort_models)
            .map_err(|e| ScenarioError::invalid("figures.effort_models", e.to_string()))?;

        Ok(Scenario {
            population,
            mu_values,
            catalog,
            delta_values,
            beta_values,
            cost,
            solver,
            sim,
            figures: FigureSpec {
                mu_grid,
                delta_levels,
                beta_levels,
                effort_models,
            },
        })
    }

    /// Re-emits the scenario in the file format, with ranges expanded.
    pub fn to_text(&self) -> String {
        let d = SolverConfig::default();
        let s = &self.solver;
        let file = ScenarioFile {
            population: PopulationSection {
                v_high: self.population.high.v,
                alpha_high: self.population.high.alpha,
                v_low: self.population.low.v,
                alpha_low: self.population.low.alpha,
                mu: Values::from_list(&self.mu_values),
            },
            catalog: self
                .catalog
                .models
                .iter()
                .map(|m| ModelEntry {
                    id: m.id.clone(),
                    wholesale_fee: m.wholesale_fee,
                    baseline_hallucination: m.baseline_hallucination,
                })
                .collect(),
            market: MarketSection {
                delta: Values::from_list(&self.delta_values),
                beta: Values::from_list(&self.beta_values),
            },
            cost: Some(CostSection {
                coefficient: self.cost.coefficient,
                exponent: self.cost.exponent,
            }),
            solver: Some(SolverSection {
                effort_grid_points: (s.effort_grid_points != d.effort_grid_points).then_some(s.effort_grid_points),
                refine_tolerance: (s.refine_tolerance != d.refine_tolerance).then_some(s.refine_tolerance),
                h_floor: (s.h_floor != d.h_floor).then_some(s.h_floor),
                fd_step: (s.fd_step != d.fd_step).then_some(s.fd_step),
                model_tiebreak: (s.model_tiebreak != d.model_tiebreak).then_some(s.model_tiebreak),
            })
            .filter(|x| *x != SolverSection::default()),
            sim: Some(SimSection {
                cohort_size: Some(self.sim.cohort_size),
                seed: Some(self.sim.seed),
                horizon: self.sim.horizon,
                deviation_period: self.sim.deviation_period,
            }),
            figures: Some(FiguresSection {
                mu_grid: Some(Values::Many(self.figures.mu_grid.clone())),
                delta_levels: Some(self.figures.delta_levels.clone()),
                beta_levels: Some(self.figures.beta_levels.clone()),
                effort_models: Some(self.figures.effort_models.clone()),
            }),
        };
        toml::to_string(&file).expect("scenario serializes")
    }

    /// Market parameters from the first `delta` and `beta` values.
    pub fn params(&self) -> MarketParams {
        MarketParams {
            delta: self.delta_values[0],
            beta: self.beta_values[0],
        }
    }

    pub fn population_at(&self, mu: f64) -> UserPopulation {
        self.population.with_mu(mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_matches_reference_values() {
        let s = Scenario::baseline();
        assert_eq!(s.population.low, UserType { v: 1.0, alpha: 1.5 });
        assert_eq!(s.population.high, UserType { v: 3.0, alpha: 10.0 });
        assert_eq!(s.beta_values, vec![0.70]);
        assert_eq!(s.delta_values, vec![0.95]);
        assert_eq!(s.cost.coefficient, 1.0 / 8.0);
        assert_eq!(s.cost.exponent, 2.0);
        let a = s.catalog.get("A").unwrap();
        assert_eq!((a.baseline_hallucination, a.wholesale_fee), (0.20, 0.05));
        let b = s.catalog.get("B").unwrap();
        assert_eq!((b.baseline_hallucination, b.wholesale_fee), (0.13, 0.30));
        assert_eq!(s.figures.mu_grid.len(), 49);
        assert_eq!(s.figures.mu_grid[0], 0.02);
        assert_eq!(s.figures.mu_grid[48], 0.98);
        assert_eq!(s.figures.effort_models, vec!["A".to_string()]);
    }

    #[test]
    fn round_trip_preserves_domain_values() {
        let s = Scenario::baseline();
        let again = Scenario::parse(&s.to_text()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let text = BASELINE.replace("v_low = 1.0", "v_low = 1.0\nv_lo = 2.0");
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("v_lo"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn ordering_violation_names_field() {
        let text = BASELINE.replace("v_high = 3.0", "v_high = 0.5");
        match Scenario::parse(&text).unwrap_err() {
            ScenarioError::Invalid { field, message } => {
                assert_eq!(field, "population.v_high");
                assert!(message.contains("must exceed v_low"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn catalog_errors_are_addressed() {
        let text = BASELINE.replace("baseline_hallucination = 0.13", "baseline_hallucination = 1.3");
        match Scenario::parse(&text).unwrap_err() {
            ScenarioError::Invalid { field, .. } => assert_eq!(field, "catalog[1].baseline_hallucination"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn lists_and_ranges() {
        let text = BASELINE
            .replace("delta = 0.95", "delta = [0.75, 0.85, 0.95]")
            .replace("mu = 0.5", "mu = { start = 0.1, stop = 0.3, step = 0.1 }");
        let s = Scenario::parse(&text).unwrap();
        assert_eq!(s.delta_values, vec![0.75, 0.85, 0.95]);
        assert_eq!(s.mu_values, vec![0.1, 0.2, 0.3]);
        assert_eq!(s.population.mu, 0.1);
        assert!(Scenario::parse(&BASELINE.replace("delta = 0.95", "delta = 1.0")).is_err());
        assert!(Scenario::parse(&BASELINE.replace("beta = 0.70", "beta = []")).is_err());
    }

    #[test]
    fn range_expansion() {
        assert_eq!(expand_range(0.05, 0.95, 0.05).unwrap().len(), 19);
        assert_eq!(expand_range(0.1, 0.3, 0.1).unwrap(), vec![0.1, 0.2, 0.3]);
        assert!(expand_range(0.0, 1.0, 0.0).is_err());
        assert!(expand_range(1.0, 0.0, 0.1).is_err());
    }
}
