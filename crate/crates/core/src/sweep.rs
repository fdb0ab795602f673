//! Parameter sweeps and their CSV form.
//!
//! A sweep varies one axis (`mu`, `delta` or `beta`) over a strictly
//! increasing grid and solves the equilibrium at every grid point for every
//! combination of the scenario's values on the two other axes. Rows come out
//! in a fixed order: forced model, then `delta`, then `beta`, then `mu`, with
//! the swept axis taking its grid values. Points are solved in parallel.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{ModelError, Result};
use crate::model::{Binding, MarketParams};
use crate::scenario::{expand_range, Scenario};
use crate::solver::{self, EquilibriumResult};

pub const CSV_HEADER: [&str; 13] = [
    "mu",
    "delta",
    "beta",
    "model",
    "effort",
    "price",
    "hallucination",
    "welfare",
    "v_high",
    "v_low",
    "delta_lower",
    "binding",
    "active",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    Mu,
    Delta,
    Beta,
}

impl FromStr for SweepAxis {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepAxis::Mu),
            "delta" => Ok(SweepAxis::Delta),
            "beta" => Ok(SweepAxis::Beta),
            other => Err(ModelError::Config(format!(
                "unknown sweep axis {other:?} (expected mu, delta or beta)"
            ))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Mu => "mu",
            SweepAxis::Delta => "delta",
            SweepAxis::Beta => "beta",
        })
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| ModelError::Config(format!("bad grid {spec:?}: {what}"));
    if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        expand_range(start, stop, step).map_err(|m| bad(&m))
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect()
    }
}

/// Checks that `grid` is strictly increasing and admissible for `axis`.
pub fn validate_grid(axis: SweepAxis, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(ModelError::Config("grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModelError::Config("grid must be strictly increasing".into()));
    }
    let ok = |x: f64| match axis {
        SweepAxis::Mu => (0.0..=1.0).contains(&x),
        SweepAxis::Delta => (0.0..1.0).contains(&x),
        SweepAxis::Beta => x > 0.0 && x.is_finite(),
    };
    if let Some(bad) = grid.iter().find(|&&x| !ok(x)) {
        let range = match axis {
            SweepAxis::Mu => "[0, 1]",
            SweepAxis::Delta => "[0, 1)",
            SweepAxis::Beta => "(0, inf)",
        };
        return Err(ModelError::Config(format!("{axis} grid value {bad} outside {range}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Solve each listed model on its own instead of choosing among the catalog.
    pub forced_models: Option<Vec<String>>,
}

/// One solved grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub delta: f64,
    pub beta: f64,
    pub model: String,
    pub effort: f64,
    pub price: f64,
    pub hallucination: f64,
    pub welfare: f64,
    pub v_high: f64,
    pub v_low: f64,
    /// Empty at zero effort; `inf` when no `delta < 1` suffices.
    pub delta_lower: Option<f64>,
    pub binding: Binding,
    pub active: bool,
}

impl SweepRow {
    pub fn from_result(mu: f64, params: &MarketParams, r: &EquilibriumResult) -> SweepRow {
        SweepRow {
            mu,
            delta: params.delta,
            beta: params.beta,
            model: r.model_id().to_string(),
            effort: r.effort(),
            price: r.price(),
            hallucination: r.hallucination_rate,
            welfare: r.welfare,
            v_high: r.value_high,
            v_low: r.value_low,
            delta_lower: r.delta_lower.map(|t| t.as_f64()),
            binding: r.binding_type,
            active: r.active,
        }
    }
}

#[derive(Clone)]
struct Point {
    model: Option<String>,
    mu: f64,
    delta: f64,
    beta: f64,
}

/// Runs a sweep over `spec.axis`, holding the other two axes at every
/// combination of the scenario's values.
pub fn run_sweep(scenario: &Scenario, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    validate_grid(spec.axis, &spec.grid)?;
    let pick = |axis: SweepAxis, own: &[f64]| -> Vec<f64> {
        if spec.axis == axis {
            spec.grid.clone()
        } else {
            own.to_vec()
        }
    };
    let mus = pick(SweepAxis::Mu, &scenario.mu_values);
    let deltas = pick(SweepAxis::Delta, &scenario.delta_values);
    let betas = pick(SweepAxis::Beta, &scenario.beta_values);

    let models: Vec<Option<String>> = match &spec.forced_models {
        Some(ids) => {
            scenario.catalog.restrict(ids)?;
            ids.iter().cloned().map(Some).collect()
        }
        None => vec![None],
    };

    // grid axis innermost, the rest in model/delta/beta/mu order
    let mut points = Vec::new();
    for model in &models {
        let outer: Vec<(f64, f64, f64)> = match spec.axis {
            SweepAxis::Mu => deltas.iter().flat_map(|&d| betas.iter().map(move |&b| (d, b, f64::NAN))).collect(),
            SweepAxis::Delta => betas.iter().flat_map(|&b| mus.iter().map(move |&m| (f64::NAN, b, m))).collect(),
            SweepAxis::Beta => deltas.iter().flat_map(|&d| mus.iter().map(move |&m| (d, f64::NAN, m))).collect(),
        };
        for &(d, b, m) in &outer {
            for &g in &spec.grid {
                let (mu, delta, beta) = match spec.axis {
                    SweepAxis::Mu => (g, d, b),
                    SweepAxis::Delta => (m, g, b),
                    SweepAxis::Beta => (m, d, g),
                };
                points.push(Point {
                    model: model.clone(),
                    mu,
                    delta,
                    beta,
                });
            }
        }
    }

    points
        .par_iter()
        .map(|p| {
            let catalog = match &p.model {
                Some(id) => scenario.catalog.restrict(&[id])?,
                None => scenario.catalog.clone(),
            };
            let params = MarketParams {
                delta: p.delta,
                beta: p.beta,
            };
            let pop = scenario.population_at(p.mu);
            let r = solver::solve(&catalog, &pop, &scenario.cost, &params, &scenario.solver)?;
            Ok(SweepRow::from_result(p.mu, &params, &r))
        })
        .collect()
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros trimmed.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..12).contains(&exp) {
        let s = format!("{x:.11e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let mantissa = trim_zeros(mantissa);
        let e: i32 = e.parse().expect("exponent");
        return format!("{mantissa}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs());
    }
    let decimals = (11 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn parse_num(s: &str) -> std::result::Result<f64, String> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")),
    }
}

/// Writes rows as CSV (UTF-8, LF line endings, fixed header).
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_num(r.mu),
            fmt_num(r.delta),
            fmt_num(r.beta),
            r.model.clone(),
            fmt_num(r.effort),
            fmt_num(r.price),
            fmt_num(r.hallucination),
            fmt_num(r.welfare),
            fmt_num(r.v_high),
            fmt_num(r.v_low),
            r.delta_lower.map(fmt_num).unwrap_or_default(),
            r.binding.to_string(),
            r.active.to_string(),
        ])?;
    }
    w.flush()
}

pub fn to_csv_string(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Reads rows written by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> std::result::Result<Vec<SweepRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = i + 2;
        let num = |k: usize| parse_num(&rec[k]).map_err(|m| format!("line {line}, {}: {m}", CSV_HEADER[k]));
        rows.push(SweepRow {
            mu: num(0)?,
            delta: num(1)?,
            beta: num(2)?,
            model: rec[3].to_string(),
            effort: num(4)?,
            price: num(5)?,
            hallucination: num(6)?,
            welfare: num(7)?,
            v_high: num(8)?,
            v_low: num(9)?,
            delta_lower: if rec[10].is_empty() { None } else { Some(num(10)?) },
            binding: rec[11].parse().map_err(|e: ModelError| format!("line {line}: {e}"))?,
            active: rec[12].parse().map_err(|_| format!("line {line}: bad active flag"))?,
        });
    }
    Ok(rows)
}

/// A point where the welfare-maximizing model changes along `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSwitch {
    pub mu: f64,
    pub welfare: f64,
    pub from: String,
    pub to: String,
}

/// Welfare of each catalog model solved on its own at `mu`; `None` where the
/// single-model market is inactive.
pub fn welfare_by_model(scenario: &Scenario, params: &MarketParams, mu: f64) -> Result<Vec<Option<f64>>> {
    let pop = scenario.population_at(mu);
    scenario
        .catalog
        .models
        .iter()
        .map(|m| {
            let catalog = scenario.catalog.restrict(&[&m.id])?;
            let r = solver::solve(&catalog, &pop, &scenario.cost, params, &scenario.solver)?;
            Ok(r.active.then_some(r.welfare))
        })
        .collect()
}

fn leader(ws: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in ws.iter().enumerate() {
        if let Some(w) = *w {
            if best.is_none_or(|(_, b)| w > b) {
                best = Some((i, w));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Every switch of the welfare-leading model along `grid`, located by
/// bisection on the welfare difference to `tol` in `mu`.
pub fn model_switches(scenario: &Scenario, params: &MarketParams, grid: &[f64], tol: f64) -> Result<Vec<ModelSwitch>> {
    validate_grid(SweepAxis::Mu, grid)?;
    let values: Vec<Vec<Option<f64>>> = grid
        .par_iter()
        .map(|&mu| welfare_by_model(scenario, params, mu))
        .collect::<Result<_>>()?;
    let ids: Vec<&str> = scenario.catalog.models.iter().map(|m| m.id.as_str()).collect();

    let mut out = Vec::new();
    for k in 1..grid.len() {
        let (Some(i), Some(j)) = (leader(&values[k - 1]), leader(&values[k])) else {
            continue;
        };
        if i == j {
            continue;
        }
        // bisect on W_j - W_i, negative on the left
        let diff = |mu: f64| -> Result<Option<f64>> {
            let ws = welfare_by_model(scenario, params, mu)?;
            Ok(match (ws[i], ws[j]) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            })
        };
        let (mut lo, mut hi) = (grid[k - 1], grid[k]);
        let mut resolved = true;
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            match diff(mid)? {
                Some(d) if d < 0.0 => lo = mid,
                Some(_) => hi = mid,
                None => {
                    resolved = false;
                    break;
                }
            }
        }
        let mu = 0.5 * (lo + hi);
        let ws = welfare_by_model(scenario, params, mu)?;
        let welfare = ws[j].or(ws[i]).unwrap_or(f64::NAN);
        if !resolved {
            log::warn!("model switch between mu = {lo} and {hi} crosses an inactive region");
        }
        out.push(ModelSwitch {
            mu,
            welfare,
            from: ids[i].to_string(),
            to: ids[j].to_string(),
        });
    }
    Ok(out)
}

/// Sweep rows behind the three standard charts.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub effort_by_delta: Vec<SweepRow>,
    pub effort_by_beta: Vec<SweepRow>,
    pub welfare_by_model: Vec<SweepRow>,
}

pub fn figure_data(scenario: &Scenario) -> Result<FigureData> {
    let fig = &scenario.figures;
    let effort_catalog = scenario.catalog.restrict(&fig.effort_models)?;
    let mu_spec = |forced: Option<Vec<String>>| SweepSpec {
        axis: SweepAxis::Mu,
        grid: fig.mu_grid.clone(),
        forced_models: forced,
    };

    let mut by_delta = scenario.clone();
    by_delta.catalog = effort_catalog.clone();
    by_delta.delta_values = fig.delta_levels.clone();
    by_delta.beta_values = vec![scenario.beta_values[0]];

    let mut by_beta = scenario.clone();
    by_beta.catalog = effort_catalog;
    by_beta.delta_values = vec![scenario.delta_values[0]];
    by_beta.beta_values = fig.beta_levels.clone();

    let mut by_model = scenario.clone();
    by_model.delta_values = vec![scenario.delta_values[0]];
    by_model.beta_values = vec![scenario.beta_values[0]];
    let ids = scenario.catalog.models.iter().map(|m| m.id.clone()).collect();

    Ok(FigureData {
        effort_by_delta: run_sweep(&by_delta, &mu_spec(None))?,
        effort_by_beta: run_sweep(&by_beta, &mu_spec(None))?,
        welfare_by_model: run_sweep(&by_model, &mu_spec(Some(ids)))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(0.95), "0.95");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(6.003_727_579_815_888), "6.00372757982");
        assert_eq!(fmt_num(1.5e-7), "1.5e-07");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1,0.2, 0.3").unwrap(), vec![0.1, 0.2, 0.3]);
        assert_eq!(parse_grid("0.05:0.95:0.05").unwrap().len(), 19);
        assert!(parse_grid("0.1:0.2").is_err());
        assert!(parse_grid("x").is_err());
        assert!(validate_grid(SweepAxis::Delta, &[0.5, 1.0]).is_err());
        assert!(validate_grid(SweepAxis::Mu, &[0.5, 0.4]).is_err());
        assert!(validate_grid(SweepAxis::Beta, &[0.0]).is_err());
        assert!("gamma".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn sweep_row_count_and_order() {
        let mut s = Scenario::baseline();
        s.delta_values = vec![0.75, 0.95];
        let spec = SweepSpec {
            axis: SweepAxis::Mu,
            grid: vec![0.2, 0.4, 0.6],
            forced_models: None,
        };
        let rows = run_sweep(&s, &spec).unwrap();
        assert_eq!(rows.len(), 6);
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.delta, r.mu)).collect();
        assert_eq!(keys, vec![(0.75, 0.2), (0.75, 0.4), (0.75, 0.6), (0.95, 0.2), (0.95, 0.4), (0.95, 0.6)]);
    }

    #[test]
    fn zero_delta_rows_are_spot() {
        let s = Scenario::baseline();
        let spec = SweepSpec {
            axis: SweepAxis::Delta,
            grid: vec![0.0, 0.5],
            forced_models: None,
        };
        let rows = run_sweep(&s, &spec).unwrap();
        assert_eq!(rows[0].effort, 0.0);
        assert_eq!(rows[0].price, s.catalog.get(&rows[0].model).unwrap().wholesale_fee);
        assert_eq!(rows[0].delta_lower, None);
    }

    #[test]
    fn csv_round_trip() {
        let s = Scenario::baseline();
        let spec = SweepSpec {
            axis: SweepAxis::Mu,
            grid: vec![0.1, 0.5, 0.9],
            forced_models: Some(vec!["A".into(), "B".into()]),
        };
        let rows = run_sweep(&s, &spec).unwrap();
        let text = to_csv_string(&rows);
        assert!(text.starts_with("mu,delta,beta,model,effort,price,hallucination,welfare,v_high,v_low,delta_lower,binding,active\n"));
        assert!(!text.contains('\r'));
        let back = read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(to_csv_string(&back), text);
    }

    #[test]
    fn single_switch_near_a_quarter() {
        let s = Scenario::baseline();
        let grid: Vec<f64> = (1..20).map(|i| i as f64 * 0.05).collect();
        let switches = model_switches(&s, &s.params(), &grid, 1e-6).unwrap();
        assert_eq!(switches.len(), 1, "{switches:?}");
        assert_eq!((switches[0].from.as_str(), switches[0].to.as_str()), ("A", "B"));
        assert!((switches[0].mu - 0.26).abs() < 0.05, "{}", switches[0].mu);
    }
}
