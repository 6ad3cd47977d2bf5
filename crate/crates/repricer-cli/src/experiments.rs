//! Experiment runners: one per `kind`, each reading its sections from the
//! config, writing CSV outputs, and reporting the file names for the
//! manifest.
//!
//! Config layout shared by all kinds:
//!
//! ```text
//! [experiment]
//! kind = table2            # one of the nine catalog entries
//! seed = 7                 # required everywhere; no implicit entropy
//! scenario_count = 1000    # only for kinds that fan out over scenarios
//! ```
//!
//! Remaining sections (`[demand]`, `[solver]`, `[market]`, `[grid]`,
//! `[scenario]`, plus a section named after the experiment) are optional;
//! absent keys fall back to the reference retail setting: the five-feature
//! logistic demand model with coefficients (−3.89, −0.56, −0.01, 0.07,
//! −0.05), arrival rate 10, unit cost 3, holding cost 0.01 per period,
//! discount 0.9995, and the 0.01-spaced price grid up to 20. Unknown keys
//! anywhere are rejected.
//!
//! Scenario fan-out derives per-task seeds as `seed + task_index`
//! (wrapping), so results are independent of thread count and collected in
//! task order; identical config and seed reproduce every output byte for
//! byte.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use repricer::calibration::{
    fit_arrival_rate, fit_logistic, generate_synthetic_log, load_observations,
    write_coefficients_csv, write_fit_text, write_observation_csvs, ObservationLog,
};
use repricer::config::{
    parse_config, sha256_hex, ConfigDoc, FloatList, Manifest, Section,
};
use repricer::demand::{sample_poisson, DemandModel, FeatureSpec, MarketSituation};
use repricer::duopoly::{reaction_time_study, ReactionStudy, ResponseFunction};
use repricer::hjb_solver::{
    export_adjusted_tables_csv, export_tables_csv, solve_value, solve_with_adjustment_cost,
    PriceGrid, SolverParams,
};
use repricer::market_sim::{
    gen_trajectories, self_play, simulate_heuristic_run, write_runs_csv, ScenarioConfig,
    ScenarioFamily, SimulationRun,
};
use repricer::oracle_eval::{
    aggregate_reports, compare_strategies, write_strategy_table_csv, StrategyReport,
    StrategyTableRow, Trajectory as FieldTrajectory,
};

/// The experiment catalog: `kind` strings and one-line blurbs for
/// `list-experiments`.
pub const CATALOG: [(&str, &str); 9] = [
    (
        "demand_curve",
        "sale probability and expected profit per price over the grid, argmax flagged",
    ),
    (
        "solve_policy",
        "inventory/time value and policy tables for a frozen market snapshot",
    ),
    (
        "simulate",
        "re-solving heuristic episodes inside generated competitor scenarios",
    ),
    (
        "table1",
        "five-strategy comparison aggregated over seeded scenario batches",
    ),
    (
        "table2",
        "duopoly optimal-response values and heuristic ratios at fixed reaction delays",
    ),
    (
        "table3",
        "reaction-time study: profit ratios versus the delay-0.5 optimum",
    ),
    (
        "self_play",
        "every firm plays the heuristic; episode logs and tail price summary",
    ),
    (
        "calibrate",
        "logistic demand fit from observation logs (loaded or synthetic)",
    ),
    (
        "adjustment_cost_study",
        "price-change-fee sweep: values and price stickiness along sample paths",
    ),
];

/// Reference coefficient vector of the five standard features.
const REFERENCE_BETA: [f64; 5] = [-3.89, -0.56, -0.01, 0.07, -0.05];

/// Ten-firm price ladder used as the default frozen market snapshot.
const LADDER: [f64; 10] = [
    5.18, 5.96, 6.31, 8.28, 9.48, 9.88, 10.33, 10.98, 11.67, 13.52,
];

/// An experiment produced a non-finite or otherwise unusable number; mapped
/// to exit code 2 by `main`.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for NumericalFailure {}

fn ensure_finite<I>(what: &str, values: I) -> Result<()>
where
    I: IntoIterator<Item = f64>,
{
    for v in values {
        if !v.is_finite() {
            return Err(NumericalFailure(format!("{what} produced {v}")).into());
        }
    }
    Ok(())
}

/// Flags resolved by `main` for one `run` invocation.
#[derive(Debug)]
pub struct RunContext {
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub jobs: Option<usize>,
}

/// The `[experiment]` header shared by every kind.
struct Header {
    kind: String,
    seed: u64,
    scenario_count: Option<usize>,
}

impl Header {
    fn count_or(&self, default: usize) -> usize {
        self.scenario_count.unwrap_or(default)
    }

    /// Kinds without scenario fan-out refuse the key instead of ignoring it.
    fn no_scenarios(&self) -> Result<()> {
        if self.scenario_count.is_some() {
            bail!("scenario_count is not used by kind `{}`", self.kind);
        }
        Ok(())
    }
}

/// Run the experiment described by `ctx.config_path` and write its outputs
/// plus `manifest.txt` into `ctx.out_dir`.
pub fn run(ctx: &RunContext) -> Result<()> {
    let text = fs::read_to_string(&ctx.config_path)
        .with_context(|| format!("reading config {}", ctx.config_path.display()))?;
    let doc = parse_config(&text)?;

    let experiment = doc.require_section("experiment")?;
    let mut reader = experiment.reader();
    let kind: String = reader.required("kind")?;
    let config_seed: u64 = reader.required("seed")?;
    let scenario_count: Option<usize> = reader.optional("scenario_count")?;
    reader.finish()?;
    let seed = ctx.seed_override.unwrap_or(config_seed);
    let header = Header {
        kind: kind.clone(),
        seed,
        scenario_count,
    };

    fs::create_dir_all(&ctx.out_dir)
        .with_context(|| format!("creating output dir {}", ctx.out_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    let out = ctx.out_dir.clone();
    let outputs: Vec<String> = pool.install(|| -> Result<Vec<String>> {
        match kind.as_str() {
            "demand_curve" => run_demand_curve(&doc, &header, &out),
            "solve_policy" => run_solve_policy(&doc, &header, &out),
            "simulate" => run_simulate(&doc, &header, &out),
            "table1" => run_table1(&doc, &header, &out),
            "table2" => run_table2(&doc, &header, &out),
            "table3" => run_table3(&doc, &header, &out),
            "self_play" => run_self_play(&doc, &header, &out),
            "calibrate" => run_calibrate(&doc, &header, &out),
            "adjustment_cost_study" => run_adjustment_cost_study(&doc, &header, &out),
            other => {
                let known: Vec<&str> = CATALOG.iter().map(|(k, _)| *k).collect();
                bail!(
                    "unknown experiment kind `{other}` (expected one of: {})",
                    known.join(", ")
                )
            }
        }
    })?;

    let mut manifest = Manifest::new(vec![
        ("kind".to_string(), kind.clone()),
        ("seed".to_string(), seed.to_string()),
        ("config_sha256".to_string(), sha256_hex(text.as_bytes())),
        (
            "tool_version".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        ),
    ]);
    for name in &outputs {
        manifest.record_file(&ctx.out_dir, name)?;
    }
    let manifest_path = manifest.write_to(&ctx.out_dir)?;

    for name in &outputs {
        println!("wrote {}", ctx.out_dir.join(name).display());
    }
    println!(
        "run complete: {kind}, seed {seed}, {} file(s), manifest {}",
        outputs.len(),
        manifest_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared section readers
// ---------------------------------------------------------------------------

fn section_or_empty(doc: &ConfigDoc, name: &str) -> Section {
    doc.section(name)
        .cloned()
        .unwrap_or_else(|| Section::empty(name))
}

/// `[demand]`: coefficient vector and arrival rate.
fn demand_model(doc: &ConfigDoc, default_rate: f64) -> Result<DemandModel> {
    let section = section_or_empty(doc, "demand");
    let mut reader = section.reader();
    let beta = reader
        .optional::<FloatList>("beta")?
        .map(|l| l.0)
        .unwrap_or_else(|| REFERENCE_BETA.to_vec());
    let rate: f64 = reader.or_default("arrival_rate", default_rate)?;
    reader.finish()?;
    Ok(DemandModel::new(FeatureSpec::standard(), beta, rate)?)
}

/// Per-kind defaults for the `[solver]` section.
struct SolverDefaults {
    horizon: usize,
    initial_stock: usize,
    grid_step: f64,
    grid_count: usize,
}

/// Retail setting: fine grid up to 20.
const RETAIL: SolverDefaults = SolverDefaults {
    horizon: 100,
    initial_stock: 10,
    grid_step: 0.01,
    grid_count: 2000,
};

/// Duopoly setting: integer grid up to 120.
const DUOPOLY: SolverDefaults = SolverDefaults {
    horizon: 100,
    initial_stock: 10,
    grid_step: 1.0,
    grid_count: 120,
};

/// Self-play setting: integer grid up to 100.
const SELF_PLAY: SolverDefaults = SolverDefaults {
    horizon: 100,
    initial_stock: 10,
    grid_step: 1.0,
    grid_count: 100,
};

/// `[solver]`: dynamic-program dimensions, costs, and the action grid.
/// Returns the params plus the planning-belief duration (`pmf_duration`,
/// default one full period).
fn solver_params(doc: &ConfigDoc, defaults: &SolverDefaults) -> Result<(SolverParams, f64)> {
    let section = section_or_empty(doc, "solver");
    let mut reader = section.reader();
    let horizon: usize = reader.or_default("horizon", defaults.horizon)?;
    let stock: usize = reader.or_default("initial_stock", defaults.initial_stock)?;
    let unit_cost: f64 = reader.or_default("unit_cost", 3.0)?;
    let holding_cost: f64 = reader.or_default("holding_cost", 0.01)?;
    let discount: f64 = reader.or_default("discount", 0.9995)?;
    let grid_step: f64 = reader.or_default("grid_step", defaults.grid_step)?;
    let grid_count: usize = reader.or_default("grid_count", defaults.grid_count)?;
    let grid_prices = reader.optional::<FloatList>("grid_prices")?;
    let pmf_duration: f64 = reader.or_default("pmf_duration", 1.0)?;
    reader.finish()?;
    let grid = match grid_prices {
        Some(list) => PriceGrid::new(list.0)?,
        None => PriceGrid::with_step(grid_step, grid_count)?,
    };
    let params = SolverParams::new(horizon, stock, unit_cost, holding_cost, discount, grid)?;
    Ok((params, pmf_duration))
}

/// `[market]`: the frozen snapshot used by the single-situation experiments.
/// `unit_cost` is only meaningful to `demand_curve` (profit column); other
/// kinds take their cost from `[solver]` and reject it here.
fn market_situation(doc: &ConfigDoc) -> Result<(MarketSituation, Option<f64>)> {
    let section = section_or_empty(doc, "market");
    let mut reader = section.reader();
    let prices = reader
        .optional::<FloatList>("competitor_prices")?
        .map(|l| l.0)
        .unwrap_or_else(|| LADDER.to_vec());
    let time: f64 = reader.or_default("time", 0.0)?;
    let unit_cost = reader.optional::<f64>("unit_cost")?;
    reader.finish()?;
    Ok((MarketSituation::new(time, prices), unit_cost))
}

fn parse_family(name: &str) -> Result<ScenarioFamily> {
    Ok(match name {
        "no_trend" => ScenarioFamily::NoTrend,
        "positive_trend" => ScenarioFamily::PositiveTrend,
        "negative_trend" => ScenarioFamily::NegativeTrend,
        "strategic_undercutter" => ScenarioFamily::StrategicUndercutter,
        "self_play" => ScenarioFamily::SelfPlay,
        other => bail!(
            "unknown scenario family `{other}` (expected no_trend, positive_trend, \
             negative_trend, strategic_undercutter, or self_play)"
        ),
    })
}

fn family_label(family: ScenarioFamily) -> &'static str {
    match family {
        ScenarioFamily::NoTrend => "no_trend",
        ScenarioFamily::PositiveTrend => "positive_trend",
        ScenarioFamily::NegativeTrend => "negative_trend",
        ScenarioFamily::StrategicUndercutter => "strategic_undercutter",
        ScenarioFamily::SelfPlay => "self_play",
    }
}

/// Convert a float list key into stock levels (positive integers).
fn stock_levels(list: FloatList, key: &str) -> Result<Vec<usize>> {
    list.0
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (1.0..=1e9).contains(&v) {
                Ok(v as usize)
            } else {
                bail!("{key}: `{v}` is not a positive integer stock level")
            }
        })
        .collect()
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    let file =
        File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

// ---------------------------------------------------------------------------
// demand_curve
// ---------------------------------------------------------------------------

fn run_demand_curve(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    header.no_scenarios()?;
    let model = demand_model(doc, 10.0)?;
    let (situation, unit_cost) = market_situation(doc)?;
    let unit_cost = unit_cost.unwrap_or(3.0);

    let grid_section = section_or_empty(doc, "grid");
    let mut reader = grid_section.reader();
    let step: f64 = reader.or_default("step", 0.01)?;
    let count: usize = reader.or_default("count", 2000)?;
    let explicit = reader.optional::<FloatList>("prices")?;
    reader.finish()?;
    let grid = match explicit {
        Some(list) => PriceGrid::new(list.0)?,
        None => PriceGrid::with_step(step, count)?,
    };

    let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(grid.len());
    for &a in grid.as_slice() {
        let p = model.sale_probability(a, &situation)?;
        rows.push((a, p, (a - unit_cost) * p));
    }
    ensure_finite("demand curve", rows.iter().map(|r| r.2))?;
    let best = rows
        .iter()
        .map(|r| r.2)
        .fold(f64::NEG_INFINITY, f64::max);

    let mut w = create(out, "demand_curve.csv")?;
    writeln!(w, "price,sale_probability,expected_profit,argmax")?;
    for (a, p, profit) in &rows {
        writeln!(
            w,
            "{a:.4},{p:.8},{profit:.8},{}",
            u8::from(*profit == best)
        )?;
    }
    Ok(vec!["demand_curve.csv".to_string()])
}

// ---------------------------------------------------------------------------
// solve_policy
// ---------------------------------------------------------------------------

fn run_solve_policy(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    header.no_scenarios()?;
    let model = demand_model(doc, 10.0)?;
    let (situation, market_cost) = market_situation(doc)?;
    if market_cost.is_some() {
        bail!("unit_cost belongs to [solver] for kind `solve_policy`");
    }
    let (params, pmf_duration) = solver_params(doc, &RETAIL)?;

    let (values, policy) = solve_value(&situation, &params, &model, pmf_duration)?;
    ensure_finite(
        "value table",
        (0..=params.initial_stock).map(|n| values.value(0, n)),
    )?;

    let mut w = create(out, "policy_tables.csv")?;
    export_tables_csv(&values, &policy, &mut w)?;
    Ok(vec!["policy_tables.csv".to_string()])
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn run_simulate(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    let model = demand_model(doc, 10.0)?;
    let (params, _) = solver_params(doc, &RETAIL)?;

    let section = section_or_empty(doc, "scenario");
    let mut reader = section.reader();
    let family = parse_family(reader.required_str("family")?)?;
    if family == ScenarioFamily::SelfPlay {
        bail!("family self_play has its own kind: `self_play`");
    }
    let preset: String = reader.or_default("preset", "study".to_string())?;
    let adjust_prob: Option<f64> = reader.optional("adjust_prob")?;
    let competitor_count: Option<usize> = reader.optional("competitor_count")?;
    let undercutter_eps: Option<f64> = reader.optional("undercutter_eps")?;
    reader.finish()?;

    let runs_wanted = header.count_or(1);
    let configs: Vec<ScenarioConfig> = (0..runs_wanted)
        .map(|i| {
            let seed = header.seed.wrapping_add(i as u64);
            let mut cfg = match preset.as_str() {
                "study" => ScenarioConfig::simulated_market(family, seed),
                "benchmark" => ScenarioConfig::benchmark_scenario(
                    family,
                    adjust_prob.unwrap_or(0.03),
                    seed,
                ),
                other => bail!("unknown preset `{other}` (expected study or benchmark)"),
            };
            if let Some(p) = adjust_prob {
                cfg.adjust_prob = p;
            }
            if let Some(k) = competitor_count {
                cfg.competitor_count = k;
            }
            if let Some(eps) = undercutter_eps {
                cfg.undercutter_eps = eps;
            }
            cfg.horizon = params.horizon;
            Ok(cfg)
        })
        .collect::<Result<_>>()?;

    let runs: Vec<SimulationRun> = configs
        .par_iter()
        .map(|cfg| simulate_heuristic_run(cfg, &params, &model))
        .collect::<repricer::Result<_>>()?;
    ensure_finite("episode profits", runs.iter().map(|r| r.discounted_profit))?;

    let mut w = create(out, "runs.csv")?;
    write_runs_csv(&runs, &mut w)?;
    let mut s = create(out, "summary.csv")?;
    writeln!(s, "run,seed,discounted_profit,units_sold")?;
    for (i, run) in runs.iter().enumerate() {
        writeln!(
            s,
            "{i},{},{:.6},{}",
            header.seed.wrapping_add(i as u64),
            run.discounted_profit,
            run.units_sold()
        )?;
    }
    Ok(vec!["runs.csv".to_string(), "summary.csv".to_string()])
}

// ---------------------------------------------------------------------------
// table1
// ---------------------------------------------------------------------------

fn run_table1(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    let model = demand_model(doc, 10.0)?;
    let (params, _) = solver_params(doc, &RETAIL)?;

    let section = section_or_empty(doc, "table1");
    let mut reader = section.reader();
    let families: Vec<ScenarioFamily> = match reader.optional_str("families") {
        Some(raw) => raw
            .split(',')
            .map(|name| parse_family(name.trim()))
            .collect::<Result<_>>()?,
        None => vec![
            ScenarioFamily::NoTrend,
            ScenarioFamily::PositiveTrend,
            ScenarioFamily::NegativeTrend,
        ],
    };
    let adjust_probs = reader
        .optional::<FloatList>("adjust_probs")?
        .map(|l| l.0)
        .unwrap_or_else(|| vec![0.01, 0.03, 0.1, 0.3]);
    reader.finish()?;

    let count = header.count_or(1000);
    if count == 0 {
        bail!("scenario_count must be at least 1");
    }

    let mut rows: Vec<StrategyTableRow> = Vec::new();
    let cells: Vec<(ScenarioFamily, f64)> = families
        .iter()
        .flat_map(|&f| adjust_probs.iter().map(move |&p| (f, p)))
        .collect();
    for (cell_index, &(family, adjust_prob)) in cells.iter().enumerate() {
        let reports: Vec<StrategyReport> = (0..count)
            .into_par_iter()
            .map(|i| -> Result<StrategyReport> {
                let seed = header
                    .seed
                    .wrapping_add((cell_index * count + i) as u64);
                let mut cfg = ScenarioConfig::benchmark_scenario(family, adjust_prob, seed);
                cfg.horizon = params.horizon;
                let traj = gen_trajectories(&cfg)?;
                let field = FieldTrajectory::try_from(&traj)?;
                Ok(compare_strategies(&field, &params, &model)?)
            })
            .collect::<Result<_>>()?;
        let aggregate = aggregate_reports(&reports)?;
        ensure_finite(
            "strategy aggregate",
            [
                aggregate.mean_ofl_h,
                aggregate.mean_ratio_ofl_1,
                aggregate.mean_ratio_nah_h,
                aggregate.mean_ratio_nah_1,
                aggregate.mean_ratio_fixed,
            ],
        )?;
        eprintln!(
            "table1: {} pi={adjust_prob}: {count} scenarios done ({}/{} cells)",
            family_label(family),
            cell_index + 1,
            cells.len()
        );
        rows.push(StrategyTableRow {
            family: family_label(family).to_string(),
            adjust_prob,
            aggregate,
        });
    }

    let mut w = create(out, "table1.csv")?;
    write_strategy_table_csv(&rows, &mut w)?;
    Ok(vec!["table1.csv".to_string()])
}

// ---------------------------------------------------------------------------
// table2 / table3 (duopoly studies)
// ---------------------------------------------------------------------------

struct DuopolyStudyKeys {
    delays: Vec<f64>,
    stocks: Vec<usize>,
    anchor_price: f64,
}

fn duopoly_study_keys(
    doc: &ConfigDoc,
    section_name: &str,
    default_delays: &[f64],
    default_stocks: &[usize],
) -> Result<DuopolyStudyKeys> {
    let section = section_or_empty(doc, section_name);
    let mut reader = section.reader();
    let delays = reader
        .optional::<FloatList>("delays")?
        .map(|l| l.0)
        .unwrap_or_else(|| default_delays.to_vec());
    let stocks = match reader.optional::<FloatList>("stocks")? {
        Some(list) => stock_levels(list, "stocks")?,
        None => default_stocks.to_vec(),
    };
    let anchor_price: f64 = reader.or_default("anchor_price", 50.0)?;
    reader.finish()?;
    Ok(DuopolyStudyKeys {
        delays,
        stocks,
        anchor_price,
    })
}

/// `[response]`: the rival's reaction rule (undercut by `eps`, floored).
fn response_rule(doc: &ConfigDoc, default_floor: f64) -> Result<ResponseFunction> {
    let section = section_or_empty(doc, "response");
    let mut reader = section.reader();
    let eps: f64 = reader.or_default("eps", 1.0)?;
    let floor: f64 = reader.or_default("floor", default_floor)?;
    reader.finish()?;
    Ok(ResponseFunction::undercut(eps, floor))
}

fn duopoly_study(
    doc: &ConfigDoc,
    section_name: &str,
    default_delays: &[f64],
    default_stocks: &[usize],
) -> Result<(ReactionStudy, DuopolyStudyKeys)> {
    let model = demand_model(doc, 10.0)?;
    let (params, _) = solver_params(doc, &DUOPOLY)?;
    let rule = response_rule(doc, params.unit_cost)?;
    let keys = duopoly_study_keys(doc, section_name, default_delays, default_stocks)?;
    let study = reaction_time_study(
        &rule,
        &params,
        &model,
        &keys.delays,
        &keys.stocks,
        keys.anchor_price,
    )?;
    for cell in &study.cells {
        ensure_finite("duopoly values", cell.optimal.iter().copied())?;
        ensure_finite("duopoly values", cell.naive.iter().copied())?;
        ensure_finite("duopoly values", cell.accurate.iter().copied())?;
    }
    Ok((study, keys))
}

fn run_table2(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    header.no_scenarios()?;
    let (study, keys) = duopoly_study(doc, "table2", &[0.1, 0.9], &[1, 2, 3, 5, 7, 10])?;

    let mut w = create(out, "table2.csv")?;
    write!(w, "n")?;
    for cell in &study.cells {
        let d = cell.reaction_delay;
        write!(
            w,
            ",v_opt_d{d},ratio_naive_d{d},ratio_accurate_d{d}"
        )?;
    }
    writeln!(w)?;
    for (i, n) in keys.stocks.iter().enumerate() {
        write!(w, "{n}")?;
        for cell in &study.cells {
            write!(
                w,
                ",{:.4},{:.4},{:.4}",
                cell.optimal[i],
                cell.naive[i] / cell.optimal[i],
                cell.accurate[i] / cell.optimal[i]
            )?;
        }
        writeln!(w)?;
    }
    Ok(vec!["table2.csv".to_string()])
}

fn run_table3(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    header.no_scenarios()?;
    let (study, _) = duopoly_study(
        doc,
        "table3",
        &[0.1, 0.3, 0.5, 0.55, 0.7, 0.9],
        &[1, 5, 10],
    )?;
    let mut w = create(out, "table3.csv")?;
    study.write_csv(&mut w)?;
    Ok(vec!["table3.csv".to_string()])
}

// ---------------------------------------------------------------------------
// self_play
// ---------------------------------------------------------------------------

fn run_self_play(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    // The self-play setting plans with a thinned belief over a coarse grid
    // and a higher arrival rate shared by the field.
    let model = demand_model(doc, 40.0)?;
    let (params, _) = solver_params(doc, &SELF_PLAY)?;

    let section = section_or_empty(doc, "self_play");
    let mut reader = section.reader();
    let tail_periods: usize = reader.or_default("tail_periods", 50)?;
    let players: Option<usize> = reader.optional("players")?;
    let adjust_prob: Option<f64> = reader.optional("adjust_prob")?;
    reader.finish()?;

    let seeds = header.count_or(20);
    if seeds == 0 {
        bail!("scenario_count must be at least 1");
    }

    let configs: Vec<ScenarioConfig> = (0..seeds)
        .map(|i| {
            let mut cfg = ScenarioConfig::self_play_market(header.seed.wrapping_add(i as u64));
            if let Some(k) = players {
                cfg.competitor_count = k;
            }
            if let Some(p) = adjust_prob {
                cfg.adjust_prob = p;
            }
            cfg.horizon = params.horizon;
            cfg
        })
        .collect();
    let episodes: Vec<Vec<SimulationRun>> = configs
        .par_iter()
        .map(|cfg| self_play(cfg, &params, &model))
        .collect::<repricer::Result<_>>()?;

    let mut summary = create(out, "self_play_summary.csv")?;
    writeln!(
        summary,
        "run,seed,tail_mean_price,mean_profit,total_units"
    )?;
    for (i, runs) in episodes.iter().enumerate() {
        let cfg = &configs[i];
        let steps = cfg.horizon * cfg.steps_per_period;
        let tail_start = steps.saturating_sub(tail_periods * cfg.steps_per_period);
        let mut price_sum = 0.0;
        let mut price_count = 0usize;
        for run in runs {
            for j in tail_start..steps {
                if let Some(p) = run.price_at_step(j) {
                    price_sum += p;
                    price_count += 1;
                }
            }
        }
        let tail_mean = if price_count > 0 {
            price_sum / price_count as f64
        } else {
            f64::NAN
        };
        let mean_profit =
            runs.iter().map(|r| r.discounted_profit).sum::<f64>() / runs.len() as f64;
        let total_units: usize = runs.iter().map(|r| r.units_sold()).sum();
        ensure_finite("self-play summary", [mean_profit])?;
        writeln!(
            summary,
            "{i},{},{tail_mean:.4},{mean_profit:.6},{total_units}",
            configs[i].seed
        )?;
    }

    let mut w = create(out, "self_play_runs.csv")?;
    write_runs_csv(&episodes[0], &mut w)?;
    Ok(vec![
        "self_play_summary.csv".to_string(),
        "self_play_runs.csv".to_string(),
    ])
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

fn run_calibrate(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    header.no_scenarios()?;
    let model = demand_model(doc, 10.0)?;

    let section = section_or_empty(doc, "calibrate");
    let mut reader = section.reader();
    let source: String = reader.or_default("source", "synthetic".to_string())?;
    let l2: f64 = reader.or_default("l2", 0.0)?;

    let mut outputs: Vec<String> = Vec::new();
    let log: ObservationLog = match source.as_str() {
        "synthetic" => {
            let n_obs: usize = reader.or_default("n_obs", 100_000)?;
            let family = parse_family(&reader.or_default("family", "no_trend".to_string())?)?;
            if family == ScenarioFamily::SelfPlay {
                bail!("family self_play cannot generate observation logs");
            }
            let write_observations: bool = reader.or_default("write_observations", false)?;
            reader.finish()?;
            // The study preset keeps entry and exit on, so the field size
            // varies across observations; with a frozen field the
            // competitor-count feature is collinear with the intercept and
            // the fit is rank deficient.
            let cfg = ScenarioConfig::simulated_market(family, header.seed);
            let log = generate_synthetic_log(&model, &cfg, n_obs, header.seed)?;
            if write_observations {
                let mut m = create(out, "observations_market.csv")?;
                let mut c = create(out, "observations_competitors.csv")?;
                let mut s = create(out, "observations_sales.csv")?;
                write_observation_csvs(&log, &mut m, &mut c, &mut s)?;
                outputs.extend(
                    [
                        "observations_market.csv",
                        "observations_competitors.csv",
                        "observations_sales.csv",
                    ]
                    .map(str::to_string),
                );
            }
            log
        }
        "files" => {
            let market: String = reader.required("market_csv")?;
            let competitors: String = reader.required("competitors_csv")?;
            let sales: String = reader.required("sales_csv")?;
            reader.finish()?;
            load_observations(
                Path::new(&market),
                Path::new(&competitors),
                Path::new(&sales),
            )?
        }
        other => bail!("unknown source `{other}` (expected synthetic or files)"),
    };

    let fit = fit_logistic(&log, model.spec(), l2)?;
    ensure_finite("fitted coefficients", fit.beta_hat.iter().copied())?;
    let fitted = DemandModel::new(model.spec().clone(), fit.beta_hat.clone(), 1.0)?;
    let arrival_rate = fit_arrival_rate(&log, &fitted)?;
    ensure_finite("arrival rate", [arrival_rate])?;

    let mut coef = create(out, "coefficients.csv")?;
    write_coefficients_csv(&fit, model.spec(), &mut coef)?;
    let mut txt = create(out, "fit.txt")?;
    write_fit_text(&fit, &mut txt)?;
    writeln!(txt, "arrival_rate = {arrival_rate}")?;
    writeln!(txt, "observations = {}", log.len())?;

    outputs.extend(["coefficients.csv".to_string(), "fit.txt".to_string()]);
    Ok(outputs)
}

// ---------------------------------------------------------------------------
// adjustment_cost_study
// ---------------------------------------------------------------------------

fn run_adjustment_cost_study(doc: &ConfigDoc, header: &Header, out: &Path) -> Result<Vec<String>> {
    header.no_scenarios()?;
    let model = demand_model(doc, 10.0)?;
    let (situation, market_cost) = market_situation(doc)?;
    if market_cost.is_some() {
        bail!("unit_cost belongs to [solver] for kind `adjustment_cost_study`");
    }
    let (base_params, _) = solver_params(doc, &RETAIL)?;

    let section = section_or_empty(doc, "adjustment");
    let mut reader = section.reader();
    let fees = reader
        .optional::<FloatList>("fees")?
        .map(|l| l.0)
        .unwrap_or_else(|| {
            let prohibitive =
                10.0 * base_params.grid.max_price() * base_params.initial_stock as f64;
            vec![0.0, 0.1, 1.0, prohibitive]
        });
    let export_tables: bool = reader.or_default("export_tables", false)?;
    reader.finish()?;

    let mut outputs: Vec<String> = Vec::new();
    let mut summary = create(out, "adjustment_summary.csv")?;
    writeln!(
        summary,
        "fee,value_full_stock,path_distinct_prices,path_price_changes"
    )?;
    for (i, &fee) in fees.iter().enumerate() {
        let params = base_params.clone().with_adjust_cost(fee)?;
        let (values, policy) = solve_with_adjustment_cost(&situation, &params, &model)?;
        let top = values.value(0, params.initial_stock, None);
        ensure_finite("adjusted value", [top])?;

        // Walk one seeded inventory path under the policy and count how
        // often the posted price actually moves.
        let mut rng = ChaCha8Rng::seed_from_u64(header.seed);
        rng.set_stream(i as u64);
        let mut n = params.initial_stock;
        let mut prev: Option<usize> = None;
        let mut posted: Vec<f64> = Vec::with_capacity(params.horizon);
        for t in 0..params.horizon {
            if n == 0 {
                break;
            }
            let price = policy
                .price_at(t, n, prev)
                .ok_or_else(|| anyhow!("policy has no price at t={t}, n={n}"))?;
            posted.push(price);
            prev = params.grid.position_of(price);
            let mean = model.sales_intensity(price, &situation, 1.0)?;
            let units = sample_poisson(&mut rng, mean).min(n as u64) as usize;
            n -= units;
        }
        let changes = posted.windows(2).filter(|w| w[0] != w[1]).count();
        let distinct = posted
            .iter()
            .map(|p| p.to_bits())
            .collect::<BTreeSet<u64>>()
            .len();
        writeln!(summary, "{fee},{top:.6},{distinct},{changes}")?;

        if export_tables {
            let name = format!("adjusted_tables_fee{i}.csv");
            let mut w = create(out, &name)?;
            export_adjusted_tables_csv(&values, &policy, &mut w)?;
            outputs.push(name);
        }
    }
    outputs.insert(0, "adjustment_summary.csv".to_string());
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for name in [
            "no_trend",
            "positive_trend",
            "negative_trend",
            "strategic_undercutter",
            "self_play",
        ] {
            assert_eq!(family_label(parse_family(name).unwrap()), name);
        }
        assert!(parse_family("sideways").is_err());
    }

    #[test]
    fn stock_levels_require_positive_integers() {
        let ok = stock_levels(FloatList(vec![1.0, 5.0, 10.0]), "stocks").unwrap();
        assert_eq!(ok, vec![1, 5, 10]);
        assert!(stock_levels(FloatList(vec![1.5]), "stocks").is_err());
        assert!(stock_levels(FloatList(vec![0.0]), "stocks").is_err());
    }

    #[test]
    fn headers_gate_scenario_counts() {
        let with = Header {
            kind: "table2".into(),
            seed: 1,
            scenario_count: Some(5),
        };
        assert!(with.no_scenarios().is_err());
        let without = Header {
            kind: "table1".into(),
            seed: 1,
            scenario_count: None,
        };
        assert!(without.no_scenarios().is_ok());
        assert_eq!(without.count_or(1000), 1000);
        assert_eq!(with.count_or(1000), 5);
    }

    #[test]
    fn catalog_covers_every_kind_once() {
        let mut kinds: Vec<&str> = CATALOG.iter().map(|(k, _)| *k).collect();
        kinds.sort_unstable();
        kinds.dedup();
        assert_eq!(kinds.len(), CATALOG.len());
    }

    #[test]
    fn numerical_failures_surface_non_finite_values() {
        assert!(ensure_finite("test", [1.0, 2.0]).is_ok());
        let err = ensure_finite("test", [f64::NAN]).unwrap_err();
        assert!(err.downcast_ref::<NumericalFailure>().is_some());
    }
}
