//! `hmarket`: solve, sweep, chart and simulate the agent market from a
//! scenario file.
//!
//! Exit status: 0 success (active market), 2 inactive market, 3 invalid
//! input, 4 I/O failure, 5 degenerate simulation statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use halluc_market::chart::{effort_chart, welfare_chart, EffortSeries};
use halluc_market::error::ModelError;
use halluc_market::model::{
    continuation_value, enforcement_price, hallucination_prob, ic_holds, lifetime_value, ActivityThreshold,
    Contract, MarketParams,
};
use halluc_market::scenario::{Scenario, ScenarioError};
use halluc_market::sim::{deviation_experiment, simulate_relationships, Estimate, SimConfig};
use halluc_market::solver::{self, EquilibriumResult};
use halluc_market::sweep::{self, fmt_num, SweepAxis, SweepSpec};

#[derive(Parser)]
#[command(name = "hmarket", version, about = "Equilibrium verification effort in agent markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file; the bundled baseline when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (simulation only).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the equilibrium at one point.
    Solve {
        #[command(flatten)]
        common: Common,
        /// High-type share; the scenario's first value when omitted.
        #[arg(long)]
        mu: Option<f64>,
        /// Print the JSON record instead of the text report.
        #[arg(long)]
        json: bool,
    },
    /// Solve over a grid on one axis and emit CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// mu, delta or beta.
        #[arg(long)]
        axis: String,
        /// start:stop:step (inclusive) or a comma-separated list.
        #[arg(long)]
        grid: String,
        /// Solve each listed model on its own (repeatable).
        #[arg(long = "model")]
        models: Vec<String>,
        /// Override the scenario's mu values.
        #[arg(long, value_delimiter = ',')]
        mu: Vec<f64>,
        /// Override the scenario's delta values.
        #[arg(long, value_delimiter = ',')]
        delta: Vec<f64>,
        /// Override the scenario's beta values.
        #[arg(long, value_delimiter = ',')]
        beta: Vec<f64>,
    },
    /// Write the effort and welfare charts with their CSV sources.
    Figures {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate relationships under the solved (or given) contract.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        cohort_size: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Period of a one-shot zero-effort deviation to test.
        #[arg(long)]
        deviation_period: Option<usize>,
        /// Contract override: model id.
        #[arg(long)]
        model: Option<String>,
        /// Contract override: effort.
        #[arg(long)]
        effort: Option<f64>,
        /// Contract override: price (defaults to the enforcement price).
        #[arg(long)]
        price: Option<f64>,
        #[arg(long)]
        json: bool,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Solve { common, .. }
            | Command::Sweep { common, .. }
            | Command::Figures { common }
            | Command::Simulate { common, .. } => common,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Inactive(String),
    Invalid(String),
    Io(String),
    Degenerate(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Inactive(_) => 2,
            Failure::Invalid(_) => 3,
            Failure::Io(_) => 4,
            Failure::Degenerate(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Inactive(m) | Failure::Invalid(m) | Failure::Io(m) | Failure::Degenerate(m) => m,
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    Ok(match &common.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::baseline(),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.command.common().threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(3);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(4);
        }
    };

    match pool.install(|| run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Solve { common, mu, json } => cmd_solve(common, *mu, *json),
        Command::Sweep {
            common,
            axis,
            grid,
            models,
            mu,
            delta,
            beta,
        } => cmd_sweep(common, axis, grid, models, [mu, delta, beta]),
        Command::Figures { common } => cmd_figures(common),
        Command::Simulate {
            common,
            mu,
            cohort_size,
            horizon,
            deviation_period,
            model,
            effort,
            price,
            json,
        } => {
            let mut scenario = load(common)?;
            if let Some(n) = cohort_size {
                scenario.sim.cohort_size = *n;
            }
            if let Some(seed) = common.seed {
                scenario.sim.seed = seed;
            }
            if horizon.is_some() {
                scenario.sim.horizon = *horizon;
            }
            if deviation_period.is_some() {
                scenario.sim.deviation_period = *deviation_period;
            }
            let overrides = Overrides {
                model: model.clone(),
                effort: *effort,
                price: *price,
            };
            cmd_simulate(common, &scenario, *mu, &overrides, *json)
        }
    }
}

fn threshold_text(t: Option<ActivityThreshold>) -> String {
    match t {
        None => "none (zero effort)".into(),
        Some(ActivityThreshold::Patience(d)) => fmt_num(d),
        Some(ActivityThreshold::Unattainable { .. }) => "unattainable".into(),
    }
}

fn inactive_reason(r: &EquilibriumResult) -> String {
    match r.delta_lower {
        Some(ActivityThreshold::Unattainable { .. }) => format!(
            "market inactive: no discount factor below 1 keeps low-type users at effort {} with model {}",
            fmt_num(r.effort()),
            r.model_id()
        ),
        Some(ActivityThreshold::Patience(d)) if r.delta < d => format!(
            "market inactive: delta {} is below the activity threshold {} for model {}",
            fmt_num(r.delta),
            fmt_num(d),
            r.model_id()
        ),
        _ => format!(
            "market inactive: no enforceable contract gives low-type users a non-negative value (best: model {}, V_L = {})",
            r.model_id(),
            fmt_num(r.value_low)
        ),
    }
}

fn solve_report(mu: f64, r: &EquilibriumResult) -> String {
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k:<16}{v}");
    };
    line("mu", fmt_num(mu));
    line("delta", fmt_num(r.delta));
    line("active", r.active.to_string());
    line("model", r.model_id().to_string());
    line("effort", fmt_num(r.effort()));
    line("price", fmt_num(r.price()));
    line("hallucination", fmt_num(r.hallucination_rate));
    line("welfare", fmt_num(r.welfare));
    line("v_high", fmt_num(r.value_high));
    line("v_low", fmt_num(r.value_low));
    line("agent_value", fmt_num(r.agent_value));
    line("rent_factor", r.rent_factor.map(fmt_num).unwrap_or_else(|| "none".into()));
    line("delta_lower", threshold_text(r.delta_lower));
    line("binding", r.binding_type.to_string());
    line("kappa", fmt_num(r.kappa));
    line("regime", format!("{:?}", r.regime));
    line("participation", r.participation.to_string());
    line("spot", r.spot_fallback.to_string());
    if let Some(foc) = &r.foc {
        line(
            "foc",
            format!(
                "lhs {} rhs {} residual {:.3e} second-order {}",
                fmt_num(foc.lhs_derivative),
                fmt_num(foc.rhs_derivative),
                foc.residual,
                if foc.second_order_ok { "ok" } else { "fails" }
            ),
        );
    }
    s
}

fn cmd_solve(common: &Common, mu: Option<f64>, as_json: bool) -> Result<(), Failure> {
    let scenario = load(common)?;
    let mu = mu.unwrap_or(scenario.mu_values[0]);
    let pop = scenario.population_at(mu);
    pop.validate()?;
    let params = scenario.params();
    let r = solver::solve(&scenario.catalog, &pop, &scenario.cost, &params, &scenario.solver)?;
    let record = json!({ "mu": mu, "beta": params.beta, "result": r });
    let record = serde_json::to_string_pretty(&record).expect("serializable") + "\n";

    if as_json {
        print!("{record}");
    } else {
        print!("{}", solve_report(mu, &r));
    }
    if let Some(dir) = &common.out {
        out_dir(dir)?;
        write_file(&dir.join("solve.json"), &record)?;
    }
    if r.active {
        Ok(())
    } else {
        Err(Failure::Inactive(inactive_reason(&r)))
    }
}

fn cmd_sweep(common: &Common, axis: &str, grid: &str, models: &[String], lists: [&Vec<f64>; 3]) -> Result<(), Failure> {
    let mut scenario = load(common)?;
    let axis: SweepAxis = axis.parse()?;
    let grid = sweep::parse_grid(grid)?;
    let [mu, delta, beta] = lists;
    let checked = |a: SweepAxis, v: &Vec<f64>| -> Result<Vec<f64>, Failure> {
        if v.is_empty() {
            return Err(Failure::Invalid(format!("--{a} needs at least one value")));
        }
        v.iter().try_for_each(|&x| sweep::validate_grid(a, &[x]))?;
        Ok(v.clone())
    };
    if !mu.is_empty() {
        scenario.mu_values = checked(SweepAxis::Mu, mu)?;
    }
    if !delta.is_empty() {
        scenario.delta_values = checked(SweepAxis::Delta, delta)?;
    }
    if !beta.is_empty() {
        scenario.beta_values = checked(SweepAxis::Beta, beta)?;
    }
    let spec = SweepSpec {
        axis,
        grid,
        forced_models: (!models.is_empty()).then(|| models.to_vec()),
    };
    let rows = sweep::run_sweep(&scenario, &spec)?;
    let csv = sweep::to_csv_string(&rows);
    match &common.out {
        Some(dir) => {
            out_dir(dir)?;
            let path = dir.join(format!("sweep_{axis}.csv"));
            write_file(&path, &csv)?;
            println!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    let inactive = rows.iter().filter(|r| !r.active).count();
    if inactive > 0 {
        log::info!("{inactive} of {} grid points are inactive", rows.len());
    }
    Ok(())
}

fn cmd_figures(common: &Common) -> Result<(), Failure> {
    let scenario = load(common)?;
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("figures"));
    out_dir(&dir)?;
    let data = sweep::figure_data(&scenario)?;

    let sets = [
        ("effort_by_delta", &data.effort_by_delta),
        ("effort_by_beta", &data.effort_by_beta),
        ("welfare_by_model", &data.welfare_by_model),
    ];
    for (name, rows) in sets {
        let path = dir.join(format!("{name}.csv"));
        write_file(&path, &sweep::to_csv_string(rows))?;
        println!("wrote {}", path.display());
    }

    // charts are drawn from the files just written, not from memory
    for name in ["effort_by_delta", "effort_by_beta", "welfare_by_model"] {
        let csv_path = dir.join(format!("{name}.csv"));
        let file = fs::File::open(&csv_path).map_err(|e| io_err(&csv_path, e))?;
        let rows = sweep::read_csv(file).map_err(|m| Failure::Io(format!("{}: {m}", csv_path.display())))?;
        let chart = match name {
            "effort_by_delta" => effort_chart(&rows, EffortSeries::Delta),
            "effort_by_beta" => effort_chart(&rows, EffortSeries::Beta),
            _ => welfare_chart(&rows),
        };
        let svg_path = dir.join(format!("{name}.svg"));
        write_file(&svg_path, &chart.to_svg())?;
        println!("wrote {}", svg_path.display());
    }

    let switches = sweep::model_switches(&scenario, &scenario.params(), &scenario.figures.mu_grid, 1e-6)?;
    if switches.is_empty() {
        log::warn!("no change of welfare-maximizing model on the mu grid");
    }
    for s in &switches {
        println!(
            "welfare switch {} -> {} at mu = {:.6} (W = {})",
            s.from,
            s.to,
            s.mu,
            fmt_num(s.welfare)
        );
    }
    Ok(())
}

struct Overrides {
    model: Option<String>,
    effort: Option<f64>,
    price: Option<f64>,
}

impl Overrides {
    fn any(&self) -> bool {
        self.model.is_some() || self.effort.is_some() || self.price.is_some()
    }
}

struct Check {
    name: &'static str,
    analytic: f64,
    estimate: Estimate,
}

impl Check {
    fn z(&self) -> Option<f64> {
        self.estimate.se.filter(|&se| se > 0.0).map(|_| self.estimate.z_score(self.analytic))
    }

    fn verdict(&self) -> &'static str {
        match self.estimate.se {
            None => "n/a",
            Some(_) if self.estimate.within(self.analytic, 3.0) => "pass",
            Some(_) => "FAIL",
        }
    }
}

fn cmd_simulate(
    common: &Common,
    scenario: &Scenario,
    mu: Option<f64>,
    ov: &Overrides,
    as_json: bool,
) -> Result<(), Failure> {
    let mu = mu.unwrap_or(scenario.mu_values[0]);
    let pop = scenario.population_at(mu);
    pop.validate()?;
    let params: MarketParams = scenario.params();
    let solved = solver::solve(&scenario.catalog, &pop, &scenario.cost, &params, &scenario.solver)?;
    if !solved.active && !ov.any() {
        return Err(Failure::Inactive(format!(
            "{}; nothing to simulate (pass --model/--effort/--price to simulate a contract anyway)",
            inactive_reason(&solved)
        )));
    }
    let model = match &ov.model {
        Some(id) => scenario
            .catalog
            .get(id)
            .cloned()
            .ok_or_else(|| Failure::Invalid(format!("unknown model id {id:?}")))?,
        None => solved.contract.model.clone(),
    };
    let effort = ov.effort.unwrap_or(solved.effort());
    let price = match ov.price {
        Some(p) => p,
        None if effort > 0.0 && params.delta > 0.0 => enforcement_price(&model, effort, &scenario.cost, &params)?,
        None if ov.model.is_none() && ov.effort.is_none() => solved.price(),
        None => model.wholesale_fee,
    };
    let contract = Contract::new(model, price, effort)?;
    let cfg: SimConfig = scenario.sim;
    let sim = simulate_relationships(&contract, &pop, &scenario.cost, &params, &cfg)?;

    let h = hallucination_prob(&contract.model, effort, params.beta)?;
    let t = sim.horizon as i32;
    let length = if h > 0.0 { (1.0 - (1.0 - h).powi(t)) / h } else { t as f64 };
    let mut checks = vec![
        Check {
            name: "v_high",
            analytic: lifetime_value(&pop.high, h, price, params.delta)?,
            estimate: sim.value_high_hat,
        },
        Check {
            name: "v_low",
            analytic: lifetime_value(&pop.low, h, price, params.delta)?,
            estimate: sim.value_low_hat,
        },
        Check {
            name: "agent_value",
            analytic: continuation_value(&contract, &scenario.cost, &params)?,
            estimate: sim.agent_value_hat,
        },
        Check {
            name: "relationship_length",
            analytic: length,
            estimate: sim.mean_relationship_length,
        },
    ];
    let mut verdict = None;
    if let Some(d) = cfg.deviation_period {
        let report = deviation_experiment(&contract, &pop, &scenario.cost, &params, &cfg)?;
        let slack = ic_holds(&contract, &scenario.cost, &params)?.slack;
        checks.push(Check {
            name: "deviation_gain",
            analytic: -(params.delta * (1.0 - h)).powi(d as i32) * slack,
            estimate: report.gain,
        });
        verdict = Some(if report.no_profitable_deviation {
            "no profitable deviation"
        } else {
            "profitable deviation"
        });
    }

    let se_text = |e: &Estimate| e.se.map(fmt_num).unwrap_or_else(|| "n/a".into());
    let mut csv = String::from("quantity,analytic,estimate,se,n,within_3se\n");
    for c in &checks {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.name,
            fmt_num(c.analytic),
            fmt_num(c.estimate.mean),
            c.estimate.se.map(fmt_num).unwrap_or_default(),
            c.estimate.n,
            match c.verdict() {
                "pass" => "true",
                "FAIL" => "false",
                _ => "",
            }
        );
    }
    let _ = writeln!(csv, "hallucination_rate,{},{},,,", fmt_num(h), fmt_num(sim.halluc_rate_hat));

    if as_json {
        let rows: Vec<_> = checks
            .iter()
            .map(|c| {
                json!({
                    "quantity": c.name,
                    "analytic": c.analytic,
                    "estimate": c.estimate,
                    "within_3se": c.estimate.se.map(|_| c.verdict() == "pass"),
                })
            })
            .collect();
        let record = json!({
            "mu": mu,
            "contract": contract,
            "seed": cfg.seed,
            "cohort_size": cfg.cohort_size,
            "horizon": sim.horizon,
            "hallucination": { "analytic": h, "estimate": sim.halluc_rate_hat },
            "checks": rows,
            "deviation_verdict": verdict,
        });
        println!("{}", serde_json::to_string_pretty(&record).expect("serializable"));
    } else {
        println!(
            "contract: model {} effort {} price {} (mu {}, delta {}, beta {})",
            contract.model.id,
            fmt_num(effort),
            fmt_num(price),
            fmt_num(mu),
            fmt_num(params.delta),
            fmt_num(params.beta)
        );
        println!(
            "cohort {} per type, horizon {}, seed {}",
            cfg.cohort_size, sim.horizon, cfg.seed
        );
        println!("{:<20}  {:>20}  {:>20}  {:>18}  {:>7}  3-SE", "quantity", "analytic", "estimate", "se", "z");
        for c in &checks {
            println!(
                "{:<20}  {:>20}  {:>20}  {:>18}  {:>7}  {}",
                c.name,
                fmt_num(c.analytic),
                fmt_num(c.estimate.mean),
                se_text(&c.estimate),
                c.z().map(|z| format!("{z:.2}")).unwrap_or_else(|| "n/a".into()),
                c.verdict()
            );
        }
        println!(
            "{:<20}  {:>20}  {:>20}",
            "hallucination_rate",
            fmt_num(h),
            fmt_num(sim.halluc_rate_hat)
        );
        if let Some(v) = verdict {
            println!("deviation: {v}");
        }
    }

    if let Some(dir) = &common.out {
        out_dir(dir)?;
        write_file(&dir.join("simulate.csv"), &csv)?;
    }
    if cfg.cohort_size < 2 {
        return Err(Failure::Degenerate(format!(
            "cohort size {} leaves per-type estimates without standard errors; their 3-SE checks were skipped",
            cfg.cohort_size
        )));
    }
    Ok(())
}
