//! Demand-model calibration from observation logs.
//!
//! The logistic layer is fit by damped Newton iteration (iteratively
//! reweighted least squares with step halving), maximizing the weighted
//! binary log-likelihood of the sold/not-sold flag per exposure window. The
//! request arrival rate is fit separately by moment matching: total units
//! over total probability-weighted exposure.
//!
//! Input plumbing mirrors a marketplace data feed: one CSV of our own offer
//! snapshots, a companion long-format CSV of competitor offers keyed by
//! observation id, and a sparse sales CSV listing only the windows with at
//! least one sale. [`generate_synthetic_log`] produces the same shape from
//! simulated trajectories so the whole pipeline can be exercised end to end
//! without real data.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::{build_features, DemandModel, FeatureSpec, MarketSituation};
use crate::error::{Error, Result};
use crate::hjb_solver::PriceGrid;
use crate::market_sim::{gen_trajectories, ScenarioConfig};

/// Gradient max-norm below which the fit is declared converged. When the
/// objective stalls at its f64 optimum before reaching this bound (the
/// rounding floor of a large score sum), the same tolerance is applied per
/// unit of total observation weight instead.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Newton-step cap per fit.
pub const MAX_ITERATIONS: usize = 100;

/// Extra offer columns carried by the competitor CSV, in file order.
const EXTRA_COLUMNS: [&str; 5] = ["quality", "rating", "feedback", "ship_days", "ship_cost"];

/// One exposure window: our offer, the market snapshot it faced, and the
/// realized sales.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub obs_id: u64,
    pub time: f64,
    /// Price we had posted during the window.
    pub offered_price: f64,
    pub situation: MarketSituation,
    /// Window length in periods.
    pub duration: f64,
    /// Units sold in the window; the logit sees `units > 0`.
    pub units: u64,
    /// Likelihood weight (recency schemes supply it; default 1).
    pub weight: f64,
}

impl Observation {
    /// Binary outcome for the logistic layer.
    pub fn sold(&self) -> bool {
        self.units > 0
    }
}

/// Validated collection of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLog {
    rows: Vec<Observation>,
}

impl ObservationLog {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if !(row.duration > 0.0) || !row.duration.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "observation {} (row {i}) has non-positive duration {}",
                    row.obs_id, row.duration
                )));
            }
            if !(row.weight >= 0.0) || !row.weight.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "observation {} (row {i}) has invalid weight {}",
                    row.obs_id, row.weight
                )));
            }
            if !row.offered_price.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "observation {} (row {i}) has a non-finite offered price",
                    row.obs_id
                )));
            }
        }
        Ok(ObservationLog { rows })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Output of [`fit_logistic`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Asymptotic standard errors from the (ridge-adjusted) observed
    /// information at the optimum.
    pub standard_errors: Vec<f64>,
    /// Unpenalized weighted log-likelihood at `beta_hat`.
    pub log_likelihood: f64,
    /// Newton steps taken.
    pub iterations: usize,
    /// True iff the gradient max-norm reached [`GRADIENT_TOLERANCE`]
    /// (absolute, or per unit weight once the objective is pinned at its
    /// f64 optimum).
    pub converged: bool,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Cholesky factorization with an explicit conditioning guard. nalgebra
/// accepts pivots that round to a hair above zero on exactly collinear
/// designs, which would silently yield garbage Newton steps and standard
/// errors; a pivot-ratio floor turns that into the documented error.
fn guarded_cholesky(
    mat: DMatrix<f64>,
    message: &str,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = mat
        .cholesky()
        .ok_or_else(|| Error::Calibration(message.into()))?;
    let l = chol.l_dirty();
    let mut min_piv = f64::INFINITY;
    let mut max_piv = 0.0f64;
    for j in 0..l.nrows() {
        min_piv = min_piv.min(l[(j, j)]);
        max_piv = max_piv.max(l[(j, j)]);
    }
    if !(min_piv > 0.0) || (min_piv / max_piv).powi(2) < 1e-12 {
        return Err(Error::Calibration(message.into()));
    }
    Ok(chol)
}

/// `Xᵀ diag(c) X` accumulated row by row — never materializes the n×n
/// diagonal.
fn weighted_cross(x: &DMatrix<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut out = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        for j in 0..p {
            let scaled = c[i] * x[(i, j)];
            for k in j..p {
                out[(j, k)] += scaled * x[(i, k)];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            out[(j, k)] = out[(k, j)];
        }
    }
    out
}

/// Weighted log-likelihood of the logistic model at linear predictor `eta`,
/// minus the ridge penalty.
fn penalized_ll(eta: &DVector<f64>, y: &[f64], w: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += w[i] * (y[i] * eta[i] - softplus(eta[i]));
    }
    ll - 0.5 * l2 * beta.norm_squared()
}

/// Fit the logistic sale-probability layer by weighted maximum likelihood
/// with an optional ridge penalty `l2 ≥ 0` (applied to every coefficient).
///
/// Damped Newton: each step solves the reweighted least-squares system and
/// halves the step until the penalized likelihood does not decrease, so the
/// objective ascends monotonically. Convergence means gradient max-norm at
/// most [`GRADIENT_TOLERANCE`]; the iteration cap is [`MAX_ITERATIONS`].
/// Once two consecutive steps leave the objective bit-identical the
/// likelihood has hit its floating-point ceiling, and the fit stops there,
/// reporting convergence iff the gradient is within tolerance per unit of
/// total weight (on large logs the rounding floor of the score sum sits
/// above the absolute bound).
///
/// Degenerate inputs fail loudly: single-class outcomes make the likelihood
/// unbounded, and with `l2 = 0` a rank-deficient design or coefficients
/// diverging toward perfect separation return an error suggesting `l2 > 0`.
pub fn fit_logistic(log: &ObservationLog, spec: &FeatureSpec, l2: f64) -> Result<FitResult> {
    if !(l2 >= 0.0) || !l2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge weight must be finite and non-negative, got {l2}"
        )));
    }
    if spec.is_empty() {
        return Err(Error::Calibration("feature spec is empty".into()));
    }
    if log.is_empty() {
        return Err(Error::Calibration("observation log is empty".into()));
    }
    let n = log.len();
    let p = spec.len();

    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut y = vec![0.0; n];
    let mut w = vec![0.0; n];
    let (mut pos, mut neg) = (0usize, 0usize);
    for (i, obs) in log.rows().iter().enumerate() {
        let feats = build_features(obs.offered_price, &obs.situation, spec)?;
        for (j, v) in feats.iter().enumerate() {
            x[(i, j)] = *v;
        }
        y[i] = if obs.sold() { 1.0 } else { 0.0 };
        w[i] = obs.weight;
        if obs.weight > 0.0 {
            if obs.sold() {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Calibration(
            "all weighted observations share one outcome; the likelihood is unbounded".into(),
        ));
    }

    let mut beta = DVector::<f64>::zeros(p);
    let mut eta = &x * &beta;
    let mut obj = penalized_ll(&eta, &y, &w, &beta, l2);
    let total_weight: f64 = w.iter().sum();
    let mut iterations = 0;
    let mut converged = false;
    let mut flat_steps = 0usize;

    loop {
        // Gradient and curvature at the current iterate.
        let mut resid = DVector::<f64>::zeros(n);
        let mut curv = DVector::<f64>::zeros(n);
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            resid[i] = w[i] * (y[i] - mu);
            curv[i] = w[i] * mu * (1.0 - mu);
        }
        let grad = x.transpose() * &resid - l2 * &beta;
        if grad.amax() <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        // Two consecutive accepted steps without any movement in the
        // objective mean the likelihood is pinned at its f64 optimum:
        // further iterations cannot make progress. On large logs the
        // rounding floor of the score sum sits above the absolute
        // tolerance, so the stall is judged per unit of total weight.
        if flat_steps >= 2 {
            converged = grad.amax() <= GRADIENT_TOLERANCE * total_weight.max(1.0);
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }

        let mut hess = weighted_cross(&x, &curv);
        for j in 0..p {
            hess[(j, j)] += l2;
        }
        let chol = guarded_cholesky(
            hess,
            "design matrix is rank deficient at the current iterate; supply l2 > 0",
        )?;
        let direction = chol.solve(&grad);

        // Step halving: accept the first step that does not decrease the
        // penalized objective.
        let prev_obj = obj;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta + step * &direction;
            let cand_eta = &x * &cand;
            let cand_obj = penalized_ll(&cand_eta, &y, &w, &cand, l2);
            if cand_obj.is_finite() && cand_obj >= obj {
                beta = cand;
                eta = cand_eta;
                obj = cand_obj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::FitDiverged(
                "step halving found no ascent direction".into(),
            ));
        }
        flat_steps = if obj == prev_obj { flat_steps + 1 } else { 0 };
        iterations += 1;
        if l2 == 0.0 && beta.amax() > 30.0 {
            return Err(Error::Calibration(
                "coefficients are diverging (perfect separation suspected); supply l2 > 0".into(),
            ));
        }
    }

    // Observed information at the optimum, ridge included.
    let mut curv = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mu = sigmoid(eta[i]);
        curv[i] = w[i] * mu * (1.0 - mu);
    }
    let mut info = weighted_cross(&x, &curv);
    for j in 0..p {
        info[(j, j)] += l2;
    }
    let cov = guarded_cholesky(
        info,
        "information matrix is singular at the optimum; supply l2 > 0",
    )?
    .inverse();
    let standard_errors: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    let log_likelihood = penalized_ll(&eta, &y, &w, &beta, 0.0);

    Ok(FitResult {
        beta_hat: beta.iter().copied().collect(),
        standard_errors,
        log_likelihood,
        iterations,
        converged,
    })
}

/// Moment-matching estimate of the request arrival rate `d`: total units
/// sold over total probability-weighted exposure, using `model`'s fitted
/// sale probabilities. Under Poisson sales with intensity `d · duration ·
/// P̂` this is the maximum-likelihood estimator.
pub fn fit_arrival_rate(log: &ObservationLog, model: &DemandModel) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Calibration("observation log is empty".into()));
    }
    let mut units = 0.0;
    let mut exposure = 0.0;
    for obs in log.rows() {
        let phat = model.sale_probability(obs.offered_price, &obs.situation)?;
        units += obs.weight * obs.units as f64;
        exposure += obs.weight * obs.duration * phat;
    }
    if !(exposure > 0.0) {
        return Err(Error::Calibration(
            "total probability-weighted exposure is zero; arrival rate is unidentified".into(),
        ));
    }
    Ok(units / exposure)
}

/// Generate a synthetic observation log from simulated competitor
/// trajectories: one observation per subperiod row, offered price drawn
/// uniformly from the standard experiment price set (0.01 to 20.00 in 0.01
/// steps), outcome Bernoulli at the model's sale probability.
///
/// Trajectories are produced from `cfg` with seeds `cfg.seed`, `cfg.seed +
/// 1`, … until `n_obs` rows are collected; snapshot rows without rivals are
/// skipped (rank features are undefined there). Sampling uses its own RNG
/// stream, so the draws are independent of the simulator's even when the two
/// seeds coincide.
pub fn generate_synthetic_log(
    model: &DemandModel,
    cfg: &ScenarioConfig,
    n_obs: usize,
    seed: u64,
) -> Result<ObservationLog> {
    if n_obs == 0 {
        return Err(Error::InvalidParameter(
            "synthetic log needs at least one observation".into(),
        ));
    }
    let grid = PriceGrid::with_step(0.01, 2000).expect("static grid is valid");
    let prices = grid.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(101);

    let h = cfg.step_len();
    let mut rows = Vec::with_capacity(n_obs);
    let mut next_id: u64 = 1;
    let traj_cap = 8 + 10 * (n_obs / cfg.total_steps().max(1) + 1);
    for t_idx in 0..traj_cap {
        let mut cfg_i = cfg.clone();
        cfg_i.seed = cfg.seed.wrapping_add(t_idx as u64);
        let traj = gen_trajectories(&cfg_i)?;
        for (j, field) in traj.prices.iter().enumerate() {
            if rows.len() == n_obs {
                break;
            }
            if field.is_empty() {
                continue;
            }
            let offered = prices[rng.gen_range(0..prices.len())];
            let situation = MarketSituation::new(j as f64 * h, field.clone());
            let phat = model.sale_probability(offered, &situation)?;
            let sold = rng.gen::<f64>() < phat;
            rows.push(Observation {
                obs_id: next_id,
                time: j as f64 * h,
                offered_price: offered,
                situation,
                duration: h,
                units: sold as u64,
                weight: 1.0,
            });
            next_id += 1;
        }
        if rows.len() == n_obs {
            break;
        }
    }
    if rows.len() < n_obs {
        return Err(Error::Calibration(format!(
            "scenario produced only {} usable snapshots of the {n_obs} requested",
            rows.len()
        )));
    }
    ObservationLog::new(rows)
}

fn parse_field<T: FromStr>(path: &str, line: usize, name: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.trim().parse::<T>().map_err(|e| Error::CsvParse {
        path: path.into(),
        line,
        msg: format!("field `{name}`: {e}"),
    })
}

fn check_header(path: &str, got: &str, want: &[&str], optional_tail: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = got.split(',').map(str::trim).collect();
    let full: Vec<&str> = want.iter().chain(optional_tail).copied().collect();
    if cols == want {
        return Ok(want.len());
    }
    if !optional_tail.is_empty() && cols == full {
        return Ok(full.len());
    }
    Err(Error::CsvParse {
        path: path.into(),
        line: 1,
        msg: format!("expected header `{}`, got `{got}`", want.join(",")),
    })
}

fn open_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    BufReader::new(file)
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn expect_width(path: &str, line: usize, fields: &[&str], want: usize) -> Result<()> {
    if fields.len() != want {
        return Err(Error::CsvParse {
            path: path.into(),
            line,
            msg: format!("expected {want} fields, got {}", fields.len()),
        });
    }
    Ok(())
}

/// Load and join the three observation files.
///
/// `market_path` holds our offer snapshots (`obs_id,t,own_price,duration,
/// k_count[,weight]`), `competitors_path` the rival offers in long format
/// (`obs_id,k,price,quality,rating,feedback,ship_days,ship_cost`), and
/// `sales_path` the sparse outcomes (`obs_id,units`) — windows without a
/// sales row sold zero units. Malformed rows and duplicate keys report their
/// file and line; sales or competitor rows referencing unknown observations
/// are collected into one error rather than dropped.
pub fn load_observations(
    market_path: &Path,
    competitors_path: &Path,
    sales_path: &Path,
) -> Result<ObservationLog> {
    // Market snapshots.
    let mpath = market_path.display().to_string();
    let mlines = open_lines(market_path)?;
    if mlines.is_empty() {
        return Err(Error::CsvParse {
            path: mpath,
            line: 1,
            msg: "file is empty (header expected)".into(),
        });
    }
    let mwidth = check_header(
        &mpath,
        &mlines[0],
        &["obs_id", "t", "own_price", "duration", "k_count"],
        &["weight"],
    )?;
    struct MarketRow {
        time: f64,
        own_price: f64,
        duration: f64,
        k_count: usize,
        weight: f64,
    }
    let mut market: BTreeMap<u64, MarketRow> = BTreeMap::new();
    for (i, raw) in mlines.iter().enumerate().skip(1) {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        expect_width(&mpath, line, &fields, mwidth)?;
        let obs_id: u64 = parse_field(&mpath, line, "obs_id", fields[0])?;
        let row = MarketRow {
            time: parse_field(&mpath, line, "t", fields[1])?,
            own_price: parse_field(&mpath, line, "own_price", fields[2])?,
            duration: parse_field(&mpath, line, "duration", fields[3])?,
            k_count: parse_field(&mpath, line, "k_count", fields[4])?,
            weight: if mwidth == 6 {
                parse_field(&mpath, line, "weight", fields[5])?
            } else {
                1.0
            },
        };
        if market.insert(obs_id, row).is_some() {
            return Err(Error::CsvParse {
                path: mpath,
                line,
                msg: format!("duplicate obs_id {obs_id}"),
            });
        }
    }

    // Competitor offers.
    let cpath = competitors_path.display().to_string();
    let clines = open_lines(competitors_path)?;
    if clines.is_empty() {
        return Err(Error::CsvParse {
            path: cpath,
            line: 1,
            msg: "file is empty (header expected)".into(),
        });
    }
    check_header(
        &cpath,
        &clines[0],
        &[
            "obs_id",
            "k",
            "price",
            "quality",
            "rating",
            "feedback",
            "ship_days",
            "ship_cost",
        ],
        &[],
    )?;
    // Per observation: rank-keyed offer row (price + extras).
    let mut rivals: BTreeMap<u64, BTreeMap<usize, [f64; 6]>> = BTreeMap::new();
    let mut orphan_rivals: Vec<u64> = Vec::new();
    for (i, raw) in clines.iter().enumerate().skip(1) {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        expect_width(&cpath, line, &fields, 8)?;
        let obs_id: u64 = parse_field(&cpath, line, "obs_id", fields[0])?;
        let k: usize = parse_field(&cpath, line, "k", fields[1])?;
        let mut values = [0.0; 6];
        for (slot, (name, field)) in ["price"]
            .iter()
            .chain(EXTRA_COLUMNS.iter())
            .zip(&fields[2..8])
            .enumerate()
        {
            values[slot] = parse_field(&cpath, line, name, field)?;
        }
        if !market.contains_key(&obs_id) {
            orphan_rivals.push(obs_id);
            continue;
        }
        if rivals.entry(obs_id).or_default().insert(k, values).is_some() {
            return Err(Error::CsvParse {
                path: cpath,
                line,
                msg: format!("duplicate competitor rank {k} for obs_id {obs_id}"),
            });
        }
    }
    if !orphan_rivals.is_empty() {
        orphan_rivals.sort_unstable();
        orphan_rivals.dedup();
        return Err(Error::Calibration(format!(
            "competitor rows reference unknown observations: {orphan_rivals:?}"
        )));
    }

    // Sales.
    let spath = sales_path.display().to_string();
    let slines = open_lines(sales_path)?;
    if slines.is_empty() {
        return Err(Error::CsvParse {
            path: spath,
            line: 1,
            msg: "file is empty (header expected)".into(),
        });
    }
    check_header(&spath, &slines[0], &["obs_id", "units"], &[])?;
    let mut sales: BTreeMap<u64, u64> = BTreeMap::new();
    let mut orphan_sales: Vec<u64> = Vec::new();
    for (i, raw) in slines.iter().enumerate().skip(1) {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        expect_width(&spath, line, &fields, 2)?;
        let obs_id: u64 = parse_field(&spath, line, "obs_id", fields[0])?;
        let units: u64 = parse_field(&spath, line, "units", fields[1])?;
        if !market.contains_key(&obs_id) {
            orphan_sales.push(obs_id);
            continue;
        }
        if sales.insert(obs_id, units).is_some() {
            return Err(Error::CsvParse {
                path: spath,
                line,
                msg: format!("duplicate obs_id {obs_id}"),
            });
        }
    }
    if !orphan_sales.is_empty() {
        orphan_sales.sort_unstable();
        orphan_sales.dedup();
        return Err(Error::Calibration(format!(
            "sales rows reference unknown observations: {orphan_sales:?}"
        )));
    }

    // Join.
    let mut rows = Vec::with_capacity(market.len());
    for (obs_id, m) in market {
        let offers = rivals.remove(&obs_id).unwrap_or_default();
        let count = offers.len();
        if count != m.k_count {
            return Err(Error::Calibration(format!(
                "obs_id {obs_id} declares {} competitors but {count} offer rows were found",
                m.k_count
            )));
        }
        let mut expected = 1;
        for k in offers.keys() {
            if *k != expected {
                return Err(Error::Calibration(format!(
                    "obs_id {obs_id} competitor ranks are not contiguous from 1 (missing {expected})"
                )));
            }
            expected += 1;
        }
        let mut prices = Vec::with_capacity(count);
        let mut extras: [Vec<f64>; 5] = Default::default();
        for values in offers.values() {
            prices.push(values[0]);
            for (slot, column) in extras.iter_mut().enumerate() {
                column.push(values[slot + 1]);
            }
        }
        let mut situation = MarketSituation::new(m.time, prices);
        for (name, column) in EXTRA_COLUMNS.iter().zip(extras) {
            situation = situation.with_extra(*name, column);
        }
        rows.push(Observation {
            obs_id,
            time: m.time,
            offered_price: m.own_price,
            situation,
            duration: m.duration,
            units: sales.get(&obs_id).copied().unwrap_or(0),
            weight: m.weight,
        });
    }
    ObservationLog::new(rows)
}

/// Write a log back out in the three-file shape [`load_observations`] reads.
/// Extras columns missing from a situation are written as zeros; the sales
/// file lists only windows with at least one unit sold.
pub fn write_observation_csvs<M: Write, C: Write, S: Write>(
    log: &ObservationLog,
    market_w: &mut M,
    competitors_w: &mut C,
    sales_w: &mut S,
) -> io::Result<()> {
    writeln!(market_w, "obs_id,t,own_price,duration,k_count,weight")?;
    writeln!(
        competitors_w,
        "obs_id,k,price,quality,rating,feedback,ship_days,ship_cost"
    )?;
    writeln!(sales_w, "obs_id,units")?;
    for obs in log.rows() {
        writeln!(
            market_w,
            "{},{},{},{},{},{}",
            obs.obs_id,
            obs.time,
            obs.offered_price,
            obs.duration,
            obs.situation.competitor_count(),
            obs.weight
        )?;
        for (idx, price) in obs.situation.competitor_prices.iter().enumerate() {
            write!(competitors_w, "{},{},{price}", obs.obs_id, idx + 1)?;
            for name in EXTRA_COLUMNS {
                let v = obs
                    .situation
                    .extras
                    .get(name)
                    .and_then(|col| col.get(idx))
                    .copied()
                    .unwrap_or(0.0);
                write!(competitors_w, ",{v}")?;
            }
            writeln!(competitors_w)?;
        }
        if obs.units > 0 {
            writeln!(sales_w, "{},{}", obs.obs_id, obs.units)?;
        }
    }
    Ok(())
}

/// Key-value text rendering of a [`FitResult`].
pub fn write_fit_text<W: Write>(fit: &FitResult, w: &mut W) -> io::Result<()> {
    writeln!(w, "converged = {}", fit.converged)?;
    writeln!(w, "iterations = {}", fit.iterations)?;
    writeln!(w, "log_likelihood = {}", fit.log_likelihood)?;
    writeln!(w, "gradient_tolerance = {GRADIENT_TOLERANCE}")?;
    Ok(())
}

/// Coefficient table (`feature,estimate,std_error`) for a fit under `spec`.
pub fn write_coefficients_csv<W: Write>(
    fit: &FitResult,
    spec: &FeatureSpec,
    w: &mut W,
) -> io::Result<()> {
    writeln!(w, "feature,estimate,std_error")?;
    for ((feature, est), se) in spec
        .features
        .iter()
        .zip(&fit.beta_hat)
        .zip(&fit.standard_errors)
    {
        writeln!(w, "{},{est},{se}", feature.name())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{sample_poisson, FeatureId};
    use crate::market_sim::ScenarioFamily;
    use std::fs;

    fn reference_model() -> DemandModel {
        DemandModel::new(
            FeatureSpec::standard(),
            vec![-3.89, -0.56, -0.01, 0.07, -0.05],
            10.0,
        )
        .unwrap()
    }

    /// Log with two design rows: (intercept, rivals present) — group A has
    /// no rival, group B one. Saturated two-parameter logit.
    fn two_group_log(group_a: (usize, usize), group_b: (usize, usize)) -> ObservationLog {
        let mut rows = Vec::new();
        let mut id = 0;
        let mut push = |rivals: Vec<f64>, count: usize, sold: usize, rows: &mut Vec<Observation>| {
            for i in 0..count {
                id += 1;
                rows.push(Observation {
                    obs_id: id,
                    time: 0.0,
                    offered_price: 10.0,
                    situation: MarketSituation::new(0.0, rivals.clone()),
                    duration: 1.0,
                    units: (i < sold) as u64,
                    weight: 1.0,
                });
            }
        };
        push(vec![], group_a.0, group_a.1, &mut rows);
        push(vec![7.0], group_b.0, group_b.1, &mut rows);
        ObservationLog::new(rows).unwrap()
    }

    #[test]
    fn intercept_only_fit_is_the_logit_of_the_sale_fraction() {
        let log = two_group_log((10, 4), (0, 0));
        let spec = FeatureSpec::new(vec![FeatureId::Intercept]);
        let fit = fit_logistic(&log, &spec, 0.0).unwrap();
        assert!(fit.converged);
        let want = (0.4f64 / 0.6).ln();
        assert!((fit.beta_hat[0] - want).abs() < 1e-8, "{}", fit.beta_hat[0]);
        // Binomial standard error of the logit: 1/sqrt(n p (1-p)).
        let se_want = 1.0 / (10.0 * 0.4 * 0.6f64).sqrt();
        assert!((fit.standard_errors[0] - se_want).abs() < 1e-8);
    }

    #[test]
    fn saturated_two_group_fit_matches_the_closed_form() {
        let log = two_group_log((50, 20), (50, 30));
        let spec = FeatureSpec::new(vec![FeatureId::Intercept, FeatureId::CompetitorCount]);
        let fit = fit_logistic(&log, &spec, 0.0).unwrap();
        assert!(fit.converged);
        let b0 = (0.4f64 / 0.6).ln();
        let b1 = (0.6f64 / 0.4).ln() - b0;
        assert!((fit.beta_hat[0] - b0).abs() < 1e-8);
        assert!((fit.beta_hat[1] - b1).abs() < 1e-8);
        // Log-likelihood at the saturated optimum, computed directly.
        let want_ll = 20.0 * 0.4f64.ln()
            + 30.0 * 0.6f64.ln()
            + 30.0 * 0.6f64.ln()
            + 20.0 * 0.4f64.ln();
        assert!((fit.log_likelihood - want_ll).abs() < 1e-8);
    }

    #[test]
    fn degenerate_outcomes_error() {
        let log = two_group_log((10, 10), (10, 10)); // every window sold
        let spec = FeatureSpec::new(vec![FeatureId::Intercept]);
        assert!(matches!(
            fit_logistic(&log, &spec, 0.0),
            Err(Error::Calibration(_))
        ));
        let log = two_group_log((10, 0), (10, 0)); // nothing sold
        assert!(fit_logistic(&log, &spec, 0.0).is_err());
    }

    #[test]
    fn separation_errors_without_ridge_and_fits_with_it() {
        // Rival presence perfectly predicts the outcome.
        let log = two_group_log((30, 0), (30, 30));
        let spec = FeatureSpec::new(vec![FeatureId::Intercept, FeatureId::CompetitorCount]);
        let err = fit_logistic(&log, &spec, 0.0).unwrap_err();
        assert!(err.to_string().contains("l2 > 0"), "{err}");
        let fit = fit_logistic(&log, &spec, 0.5).unwrap();
        assert!(fit.converged);
        assert!(fit.beta_hat[1] > 0.0);
    }

    #[test]
    fn rank_deficient_design_errors_without_ridge() {
        // Intercept listed twice: exactly collinear. Unbalanced outcomes so
        // the first Newton step (not just the standard-error pass) needs the
        // singular curvature matrix.
        let log = two_group_log((20, 5), (20, 12));
        let spec = FeatureSpec::new(vec![FeatureId::Intercept, FeatureId::Intercept]);
        let err = fit_logistic(&log, &spec, 0.0).unwrap_err();
        assert!(err.to_string().contains("l2 > 0"), "{err}");
        assert!(fit_logistic(&log, &spec, 0.1).unwrap().converged);
    }

    #[test]
    fn gradient_at_the_reported_optimum_is_small() {
        let model = reference_model();
        let cfg = ScenarioConfig::simulated_market(ScenarioFamily::NoTrend, 404);
        let log = generate_synthetic_log(&model, &cfg, 4000, 77).unwrap();
        let fit = fit_logistic(&log, model.spec(), 0.0).unwrap();
        assert!(fit.converged);
        // Recompute the score independently of the solver loop.
        let mut grad = vec![0.0; fit.beta_hat.len()];
        for obs in log.rows() {
            let feats = build_features(obs.offered_price, &obs.situation, model.spec()).unwrap();
            let eta: f64 = feats
                .iter()
                .zip(&fit.beta_hat)
                .map(|(f, b)| f * b)
                .sum();
            let resid = (obs.sold() as u64 as f64) - sigmoid(eta);
            for (g, f) in grad.iter_mut().zip(&feats) {
                *g += resid * f;
            }
        }
        let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        // Converged promises the score is within tolerance, judged per unit
        // of weight once the objective saturates; factor 2 covers the
        // different summation order of this recomputation.
        let bound = 2.0 * GRADIENT_TOLERANCE * log.len() as f64;
        assert!(max <= bound, "score max-norm {max} exceeds {bound}");
    }

    #[test]
    fn synthetic_generation_is_deterministic_and_rate_consistent() {
        let model = reference_model();
        let cfg = ScenarioConfig::simulated_market(ScenarioFamily::NegativeTrend, 11);
        let a = generate_synthetic_log(&model, &cfg, 3000, 5).unwrap();
        let b = generate_synthetic_log(&model, &cfg, 3000, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3000);
        assert!(a.rows().iter().all(|o| o.duration == cfg.step_len()));

        // Empirical sale rate within 3 binomial sigmas of the model mean.
        let mut mean_p = 0.0;
        let mut var = 0.0;
        let mut sold = 0.0;
        for obs in a.rows() {
            let p = model
                .sale_probability(obs.offered_price, &obs.situation)
                .unwrap();
            mean_p += p;
            var += p * (1.0 - p);
            sold += (obs.units > 0) as u64 as f64;
        }
        assert!((sold - mean_p).abs() <= 3.0 * var.sqrt(), "{sold} vs {mean_p}");

        let c = generate_synthetic_log(&model, &cfg, 3000, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reference_coefficients_are_recovered_within_three_standard_errors() {
        let model = reference_model();
        let cfg = ScenarioConfig::simulated_market(ScenarioFamily::NoTrend, 2024);
        let log = generate_synthetic_log(&model, &cfg, 25_000, 9).unwrap();
        let fit = fit_logistic(&log, model.spec(), 0.0).unwrap();
        assert!(fit.converged);
        for ((est, se), truth) in fit
            .beta_hat
            .iter()
            .zip(&fit.standard_errors)
            .zip(model.beta())
        {
            assert!(
                (est - truth).abs() <= 3.0 * se,
                "estimate {est} truth {truth} se {se}"
            );
        }
    }

    #[test]
    fn refit_on_regenerated_data_stays_within_three_standard_errors() {
        let model = reference_model();
        let cfg = ScenarioConfig::simulated_market(ScenarioFamily::PositiveTrend, 31);
        let log = generate_synthetic_log(&model, &cfg, 12_000, 1).unwrap();
        let first = fit_logistic(&log, model.spec(), 0.0).unwrap();
        let refit_model = DemandModel::new(
            FeatureSpec::standard(),
            first.beta_hat.clone(),
            model.arrival_rate(),
        )
        .unwrap();
        let log2 = generate_synthetic_log(&refit_model, &cfg, 12_000, 2).unwrap();
        let second = fit_logistic(&log2, refit_model.spec(), 0.0).unwrap();
        for ((a, b), se) in first
            .beta_hat
            .iter()
            .zip(&second.beta_hat)
            .zip(&second.standard_errors)
        {
            assert!((a - b).abs() <= 3.0 * se, "{a} vs {b} (se {se})");
        }
    }

    #[test]
    fn arrival_rate_moment_matching_recovers_the_truth() {
        let model = reference_model();
        let ladder = vec![5.18, 5.96, 6.31, 8.28, 9.48];
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let d_true = 10.0;
        let h = 0.1;
        let mut rows = Vec::new();
        for i in 0..30_000u64 {
            let situation = MarketSituation::new(0.0, ladder.clone());
            let offered = 4.0 + (i % 120) as f64 * 0.1;
            let phat = model.sale_probability(offered, &situation).unwrap();
            let units = sample_poisson(&mut rng, d_true * h * phat);
            rows.push(Observation {
                obs_id: i + 1,
                time: 0.0,
                offered_price: offered,
                situation,
                duration: h,
                units,
                weight: 1.0,
            });
        }
        let log = ObservationLog::new(rows).unwrap();
        let d_hat = fit_arrival_rate(&log, &model).unwrap();
        // Poisson MLE standard error: sqrt(d / total weighted exposure).
        let exposure: f64 = log
            .rows()
            .iter()
            .map(|o| {
                o.duration
                    * model
                        .sale_probability(o.offered_price, &o.situation)
                        .unwrap()
            })
            .sum();
        let se = (d_true / exposure).sqrt();
        assert!((d_hat - d_true).abs() <= 3.0 * se, "{d_hat} vs {d_true} (se {se})");
    }

    #[test]
    fn log_validation_rejects_bad_rows() {
        let mut obs = Observation {
            obs_id: 1,
            time: 0.0,
            offered_price: 5.0,
            situation: MarketSituation::new(0.0, vec![6.0]),
            duration: 0.0,
            units: 0,
            weight: 1.0,
        };
        assert!(ObservationLog::new(vec![obs.clone()]).is_err()); // duration 0
        obs.duration = 1.0;
        obs.weight = -1.0;
        assert!(ObservationLog::new(vec![obs.clone()]).is_err());
        obs.weight = 1.0;
        assert!(ObservationLog::new(vec![obs]).is_ok());
    }

    struct TempDir(std::path::PathBuf);

    impl TempDir {
        fn new(tag: &str) -> Self {
            let dir = std::env::temp_dir().join(format!(
                "repricer_calibration_{tag}_{}",
                std::process::id()
            ));
            fs::create_dir_all(&dir).unwrap();
            TempDir(dir)
        }

        fn file(&self, name: &str, contents: &str) -> std::path::PathBuf {
            let path = self.0.join(name);
            fs::write(&path, contents).unwrap();
            path
        }

        fn path(&self, name: &str) -> std::path::PathBuf {
            self.0.join(name)
        }
    }

    impl Drop for TempDir {
        fn drop(&mut self) {
            let _ = fs::remove_dir_all(&self.0);
        }
    }

    #[test]
    fn loader_joins_the_three_files() {
        let dir = TempDir::new("join");
        let market = dir.file(
            "market.csv",
            "obs_id,t,own_price,duration,k_count\n\
             1,0.0,9.99,0.1,2\n\
             2,0.1,12.50,0.1,0\n",
        );
        let rivals = dir.file(
            "competitors.csv",
            "obs_id,k,price,quality,rating,feedback,ship_days,ship_cost\n\
             1,1,8.40,2,4.5,120,3,0.0\n\
             1,2,11.00,1,4.9,87,1,2.5\n",
        );
        let sales = dir.file("sales.csv", "obs_id,units\n1,2\n");
        let log = load_observations(&market, &rivals, &sales).unwrap();
        assert_eq!(log.len(), 2);
        let first = &log.rows()[0];
        assert_eq!(first.obs_id, 1);
        assert_eq!(first.situation.competitor_prices, vec![8.40, 11.00]);
        assert_eq!(first.situation.extras["rating"], vec![4.5, 4.9]);
        assert_eq!(first.units, 2);
        assert!(first.sold());
        assert_eq!(first.weight, 1.0);
        let second = &log.rows()[1];
        assert_eq!(second.units, 0);
        assert!(!second.sold());
        assert_eq!(second.situation.competitor_count(), 0);
    }

    #[test]
    fn loader_reports_line_numbers_duplicates_and_orphans() {
        let dir = TempDir::new("errors");
        let rivals_ok = dir.file(
            "competitors.csv",
            "obs_id,k,price,quality,rating,feedback,ship_days,ship_cost\n",
        );
        let sales_ok = dir.file("sales.csv", "obs_id,units\n");

        // Malformed numeric field points at its line.
        let market = dir.file(
            "market.csv",
            "obs_id,t,own_price,duration,k_count\n1,0.0,oops,0.1,0\n",
        );
        match load_observations(&market, &rivals_ok, &sales_ok) {
            Err(Error::CsvParse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("own_price"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        // Duplicate market key.
        let market = dir.file(
            "market.csv",
            "obs_id,t,own_price,duration,k_count\n1,0,9,0.1,0\n1,0,9,0.1,0\n",
        );
        match load_observations(&market, &rivals_ok, &sales_ok) {
            Err(Error::CsvParse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }

        // Sales for unknown observations are listed, not dropped.
        let market = dir.file(
            "market3.csv",
            "obs_id,t,own_price,duration,k_count\n1,0,9,0.1,0\n",
        );
        let sales = dir.file("sales_orphan.csv", "obs_id,units\n7,1\n9,2\n");
        let err = load_observations(&market, &rivals_ok, &sales).unwrap_err();
        let text = err.to_string();
        assert!(text.contains('7') && text.contains('9'), "{text}");

        // Wrong header.
        let bad_header = dir.file("market_bad_header.csv", "obs,t\n");
        assert!(load_observations(&bad_header, &rivals_ok, &sales_ok).is_err());

        // Declared competitor count must match the offer rows.
        let market = dir.file(
            "market4.csv",
            "obs_id,t,own_price,duration,k_count\n1,0,9,0.1,2\n",
        );
        let rivals = dir.file(
            "competitors_short.csv",
            "obs_id,k,price,quality,rating,feedback,ship_days,ship_cost\n\
             1,1,8.4,0,0,0,0,0\n",
        );
        let err = load_observations(&market, &rivals, &sales_ok).unwrap_err();
        assert!(err.to_string().contains("declares 2"), "{err}");
    }

    #[test]
    fn written_logs_load_back_identically_where_the_format_is_lossless() {
        let model = reference_model();
        let cfg = ScenarioConfig::benchmark_scenario(ScenarioFamily::NoTrend, 0.3, 500);
        let log = generate_synthetic_log(&model, &cfg, 200, 42).unwrap();

        let dir = TempDir::new("roundtrip");
        let mut market = Vec::new();
        let mut rivals = Vec::new();
        let mut sales = Vec::new();
        write_observation_csvs(&log, &mut market, &mut rivals, &mut sales).unwrap();
        let mpath = dir.file("market.csv", &String::from_utf8(market).unwrap());
        let cpath = dir.file("competitors.csv", &String::from_utf8(rivals).unwrap());
        let spath = dir.file("sales.csv", &String::from_utf8(sales).unwrap());

        let loaded = load_observations(&mpath, &cpath, &spath).unwrap();
        assert_eq!(loaded.len(), log.len());
        for (a, b) in log.rows().iter().zip(loaded.rows()) {
            assert_eq!(a.obs_id, b.obs_id);
            assert_eq!(a.time, b.time);
            assert_eq!(a.offered_price, b.offered_price);
            assert_eq!(a.duration, b.duration);
            assert_eq!(a.units, b.units);
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.situation.competitor_prices, b.situation.competitor_prices);
            // The writer pads absent extras with zeros; the loaded situation
            // must still produce the same demand value.
            assert_eq!(
                model.sale_probability(a.offered_price, &a.situation).unwrap(),
                model.sale_probability(b.offered_price, &b.situation).unwrap()
            );
        }
        fs::remove_file(dir.path("market.csv")).unwrap();
    }

    #[test]
    fn fit_writers_emit_the_documented_shapes() {
        let log = two_group_log((50, 20), (50, 30));
        let spec = FeatureSpec::new(vec![FeatureId::Intercept, FeatureId::CompetitorCount]);
        let fit = fit_logistic(&log, &spec, 0.0).unwrap();
        let mut text = Vec::new();
        write_fit_text(&fit, &mut text).unwrap();
        let text = String::from_utf8(text).unwrap();
        assert!(text.contains("converged = true"));
        assert!(text.contains("iterations = "));
        let mut csv = Vec::new();
        write_coefficients_csv(&fit, &spec, &mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("feature,estimate,std_error\n"));
        assert!(csv.contains("intercept,"));
        assert!(csv.contains("competitor_count,"));
    }

    #[test]
    fn estimation_error_shrinks_with_sample_size() {
        // Three-point consistency sweep at unit-test scale; the full-size
        // sweep runs in the acceptance suite.
        let model = reference_model();
        let mut med_err = Vec::new();
        // Sale probabilities sit near 2%, so the smallest size still needs
        // on the order of a hundred positive outcomes to avoid
        // quasi-separation.
        for (i, n) in [4_000usize, 16_000, 64_000].into_iter().enumerate() {
            let mut errs: Vec<f64> = Vec::new();
            for seed in 0..5u64 {
                let cfg = ScenarioConfig::simulated_market(
                    ScenarioFamily::NoTrend,
                    900 + 10 * seed + i as u64,
                );
                let log = generate_synthetic_log(&model, &cfg, n, 70 + seed).unwrap();
                let fit = fit_logistic(&log, model.spec(), 0.0).unwrap();
                let err = fit
                    .beta_hat
                    .iter()
                    .zip(model.beta())
                    .map(|(e, t)| (e - t).abs())
                    .fold(0.0f64, f64::max);
                errs.push(err);
            }
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            med_err.push(errs[errs.len() / 2]);
        }
        assert!(
            med_err[0] > med_err[1] && med_err[1] > med_err[2],
            "median max-coordinate errors not shrinking: {med_err:?}"
        );
    }
}
