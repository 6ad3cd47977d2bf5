//! Benchmark evaluation of pricing strategies along a fully known competitor
//! price path.
//!
//! Given a complete realization of rival prices over the horizon (a step
//! function on the subperiod grid), this module computes, analytically:
//!
//! * `solve_ofl_h` — the optimal forward-looking (OFL) policy that may
//!   reprice every subperiod and anticipates the whole path: the upper bound.
//! * `solve_ofl_1` — the optimal forward-looking policy restricted to
//!   repricing at integer periods only; between adjustments the most recent
//!   price is carried as part of the state.
//! * `heuristic_prices_on_grid` + `evaluate_nah` — the non-anticipating
//!   heuristic (NAH): reprice against a frozen snapshot as if it would last,
//!   then evaluate those prices exactly under the true path, on either the
//!   period or the subperiod update grid.
//! * `best_fixed_price` — the best single price held for the whole horizon.
//!
//! All five are exact expectations via backward induction — no Monte Carlo.
//! Action sets use the undercut acceleration: candidate prices are one tick
//! below each live rival price, which preserves optima for rank-driven
//! demand while keeping the state space small. The frequent-adjustment
//! solver's candidate set is widened with the integer-time undercuts and the
//! best fixed price so that every action available to the restricted
//! strategies is available to it — making the dominance orderings
//! structural, not numerical accidents.
//!
//! Solvers record, at every state, the value of the action they actually
//! chose (ties broken toward the larger price), so replaying a returned
//! policy through [`evaluate_nah`] reproduces the solver's table bit for bit.

use std::io::{self, Write};

use crate::demand::{DemandModel, MarketSituation};
use crate::error::{Error, Result};
use crate::hjb_solver::{action_value, argmax_largest, max_value, ActionDist, SolverParams};
use crate::market_sim;

/// Competitor prices as a step function on the subperiod grid: row `j` holds
/// the rival price vector over `[j·h, (j+1)·h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: usize,
    steps_per_period: usize,
    prices: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(horizon: usize, steps_per_period: usize, prices: Vec<Vec<f64>>) -> Result<Self> {
        if horizon == 0 || steps_per_period == 0 {
            return Err(Error::InvalidParameter(
                "horizon and steps per period must be positive".into(),
            ));
        }
        let want = horizon * steps_per_period;
        if prices.len() != want {
            return Err(Error::TrajectoryTooShort {
                got: prices.len(),
                want,
            });
        }
        for (j, row) in prices.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "trajectory row {j} has no competitor prices"
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "trajectory row {j} contains a non-finite or non-positive price"
                )));
            }
        }
        Ok(Trajectory {
            horizon,
            steps_per_period,
            prices,
        })
    }

    /// A constant competitor field over `horizon` periods.
    pub fn constant(field: Vec<f64>, horizon: usize, steps_per_period: usize) -> Result<Self> {
        let rows = vec![field; horizon * steps_per_period];
        Trajectory::new(horizon, steps_per_period, rows)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }

    /// Subperiod length `h`.
    pub fn step_len(&self) -> f64 {
        1.0 / self.steps_per_period as f64
    }

    /// Total subperiod count.
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.prices[j]
    }

    /// Maximal `[j0, j1)` spans of subperiods with an unchanged field.
    fn sub_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for j in 1..self.prices.len() {
            if self.prices[j] != self.prices[j - 1] {
                runs.push((start, j));
                start = j;
            }
        }
        runs.push((start, self.prices.len()));
        runs
    }

    /// Maximal `[t0, t1)` spans of periods whose integer-time rows match.
    fn int_runs(&self) -> Vec<(usize, usize)> {
        let h = self.steps_per_period;
        let mut runs = Vec::new();
        let mut start = 0;
        for t in 1..self.horizon {
            if self.prices[t * h] != self.prices[(t - 1) * h] {
                runs.push((start, t));
                start = t;
            }
        }
        runs.push((start, self.horizon));
        runs
    }
}

impl TryFrom<&market_sim::Trajectory> for Trajectory {
    type Error = Error;

    fn try_from(t: &market_sim::Trajectory) -> Result<Self> {
        if t.steps_per_period == 0 || t.prices.len() % t.steps_per_period != 0 {
            return Err(Error::InvalidParameter(format!(
                "trajectory length {} is not a whole number of {}-step periods",
                t.prices.len(),
                t.steps_per_period
            )));
        }
        Trajectory::new(
            t.prices.len() / t.steps_per_period,
            t.steps_per_period,
            t.prices.clone(),
        )
    }
}

/// Which time grid prices may change on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateGrid {
    /// Integer periods only.
    Period,
    /// Every subperiod.
    Subperiod,
}

/// Candidate-price policy for the forward-looking solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSets {
    /// Undercuts of the live rival prices (default acceleration).
    Undercuts,
    /// The full solver grid (fidelity runs; much slower).
    FullGrid,
}

/// Price per (update step, inventory). Row 0 of the inventory axis has no
/// entry — nothing is priced when nothing is in stock.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMap {
    grid: UpdateGrid,
    steps: usize,
    stock: usize,
    prices: Vec<f64>,
}

impl PriceMap {
    /// An empty map; entries start missing and are filled with `set`.
    pub fn new(grid: UpdateGrid, steps: usize, stock: usize) -> Self {
        PriceMap {
            grid,
            steps,
            stock,
            prices: vec![f64::NAN; steps * (stock + 1)],
        }
    }

    pub fn grid(&self) -> UpdateGrid {
        self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stock(&self) -> usize {
        self.stock
    }

    pub fn set(&mut self, step: usize, n: usize, price: f64) {
        assert!(step < self.steps && n >= 1 && n <= self.stock);
        self.prices[step * (self.stock + 1) + n] = price;
    }

    /// Price at (step, n); `None` for n = 0, out-of-range, or unset entries.
    pub fn price(&self, step: usize, n: usize) -> Option<f64> {
        if step >= self.steps || n == 0 || n > self.stock {
            return None;
        }
        let p = self.prices[step * (self.stock + 1) + n];
        if p.is_nan() {
            None
        } else {
            Some(p)
        }
    }
}

/// Value table on an update grid: `steps + 1` rows (terminal row included) by
/// `stock + 1` inventory levels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    grid: UpdateGrid,
    steps: usize,
    stock: usize,
    data: Vec<f64>,
}

impl GridValues {
    fn zeros(grid: UpdateGrid, steps: usize, stock: usize) -> Self {
        GridValues {
            grid,
            steps,
            stock,
            data: vec![0.0; (steps + 1) * (stock + 1)],
        }
    }

    pub fn grid(&self) -> UpdateGrid {
        self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn stock(&self) -> usize {
        self.stock
    }

    pub fn value(&self, step: usize, n: usize) -> f64 {
        self.data[step * (self.stock + 1) + n]
    }

    /// Raw row-major data, for exact-equality comparisons.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Solution of the frequent-adjustment forward-looking problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AnticipatingSolution {
    pub values: GridValues,
    pub prices: PriceMap,
}

/// Solution of the period-locked forward-looking problem. Between integer
/// times the carried price is part of the state: `locked_value` exposes the
/// value of being committed to a given candidate for the rest of the period.
#[derive(Debug, Clone, PartialEq)]
pub struct LockedSolution {
    pub period_values: GridValues,
    pub period_prices: PriceMap,
    /// Candidate lock set of each period (ascending).
    lock_sets: Vec<Vec<f64>>,
    /// Per subperiod `j`: `lock_sets[j / H].len()` rows by `stock + 1`
    /// columns of values given the locked price.
    sub_values: Vec<Vec<f64>>,
    stock: usize,
}

impl LockedSolution {
    pub fn lock_set(&self, t: usize) -> &[f64] {
        &self.lock_sets[t]
    }

    /// Value at subperiod `j` with `n` units, committed to
    /// `lock_set(j / H)[lock]` until the period ends.
    pub fn locked_value(&self, j: usize, lock: usize, n: usize) -> f64 {
        self.sub_values[j][lock * (self.stock + 1) + n]
    }

    pub fn value(&self, t: usize, n: usize) -> f64 {
        self.period_values.value(t, n)
    }
}

/// Undercut candidates: one tick below each rival price, deduplicated,
/// ascending, zero or negative candidates dropped.
fn undercut_set(prices: &[f64], eps: f64) -> Vec<f64> {
    let mut set: Vec<f64> = prices
        .iter()
        .map(|p| p - eps)
        .filter(|a| *a > 0.0)
        .collect();
    set.sort_by(|a, b| a.partial_cmp(b).expect("prices are finite"));
    set.dedup();
    set
}

/// Sorted union of several candidate lists.
fn merge_actions(lists: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(|a, b| a.partial_cmp(b).expect("actions are finite"));
    all.dedup();
    all
}

fn check_same_horizon(traj: &Trajectory, params: &SolverParams) -> Result<()> {
    params.validate()?;
    if traj.horizon != params.horizon {
        return Err(Error::InvalidParameter(format!(
            "trajectory covers {} periods but the solver expects {}",
            traj.horizon, params.horizon
        )));
    }
    Ok(())
}

fn dists_for(
    acts: &[f64],
    traj: &Trajectory,
    j: usize,
    model: &DemandModel,
    duration: f64,
    stock: usize,
) -> Result<Vec<ActionDist>> {
    let s = MarketSituation::new(j as f64 * traj.step_len(), traj.prices[j].clone());
    acts.iter()
        .map(|&a| ActionDist::build(model, a, &s, duration, stock))
        .collect()
}

/// Optimal forward-looking policy with subperiod adjustments: the
/// full-anticipation upper bound. `extra` prices (for example the best fixed
/// price) are merged into every candidate set so that coarser strategies'
/// actions are always available here.
pub fn solve_ofl_h(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
    sets: ActionSets,
    extra: &[f64],
) -> Result<AnticipatingSolution> {
    check_same_horizon(traj, params)?;
    if extra.iter().any(|a| !a.is_finite() || *a <= 0.0) {
        return Err(Error::InvalidParameter(
            "extra candidate prices must be positive and finite".into(),
        ));
    }
    let stock = params.initial_stock;
    let jt = traj.len();
    let h = traj.step_len();
    let disc = params.discount.powf(h);
    let lh = params.holding_cost * h;
    let width = stock + 1;

    let mut values = GridValues::zeros(UpdateGrid::Subperiod, jt, stock);
    let mut prices = PriceMap::new(UpdateGrid::Subperiod, jt, stock);
    let mut q: Vec<f64> = Vec::new();

    for j in (0..jt).rev() {
        let acts = match sets {
            ActionSets::Undercuts => {
                let own = undercut_set(&traj.prices[j], params.undercut_step);
                let int_row = &traj.prices[(j / traj.steps_per_period) * traj.steps_per_period];
                let anchored = undercut_set(int_row, params.undercut_step);
                merge_actions(&[&own, &anchored, extra])
            }
            ActionSets::FullGrid => params.grid.as_slice().to_vec(),
        };
        if acts.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        let dists = dists_for(&acts, traj, j, model, h, stock)?;
        let (head, tail) = values.data.split_at_mut((j + 1) * width);
        let row = &mut head[j * width..];
        let next = &tail[..width];
        q.resize(acts.len(), 0.0);
        for n in 1..=stock {
            for (m, dist) in dists.iter().enumerate() {
                q[m] = action_value(dist, n, params.unit_cost, lh, disc, |k| next[k]);
            }
            let best = argmax_largest(&q);
            row[n] = q[best];
            prices.set(j, n, acts[best]);
        }
    }
    Ok(AnticipatingSolution { values, prices })
}

/// Optimal forward-looking policy with integer-period adjustments. The
/// price chosen at integer `t` is locked for the period's subperiods; the
/// candidate set is the undercut set of the integer-time field (or the full
/// grid under [`ActionSets::FullGrid`]).
pub fn solve_ofl_1(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
    sets: ActionSets,
) -> Result<LockedSolution> {
    check_same_horizon(traj, params)?;
    let stock = params.initial_stock;
    let sp = traj.steps_per_period;
    let h = traj.step_len();
    let disc = params.discount.powf(h);
    let lh = params.holding_cost * h;
    let width = stock + 1;

    let mut period_values = GridValues::zeros(UpdateGrid::Period, traj.horizon, stock);
    let mut period_prices = PriceMap::new(UpdateGrid::Period, traj.horizon, stock);
    let mut lock_sets: Vec<Vec<f64>> = vec![Vec::new(); traj.horizon];
    let mut sub_values: Vec<Vec<f64>> = vec![Vec::new(); traj.len()];

    for t in (0..traj.horizon).rev() {
        let acts = match sets {
            ActionSets::Undercuts => undercut_set(&traj.prices[t * sp], params.undercut_step),
            ActionSets::FullGrid => params.grid.as_slice().to_vec(),
        };
        if acts.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        // One value row per locked candidate, entered at the next period's
        // (choice-free) values.
        let next_row: Vec<f64> = (0..width).map(|n| period_values.value(t + 1, n)).collect();
        let mut w: Vec<Vec<f64>> = vec![next_row; acts.len()];
        for s in (0..sp).rev() {
            let j = t * sp + s;
            let dists = dists_for(&acts, traj, j, model, h, stock)?;
            for (m, dist) in dists.iter().enumerate() {
                let prev = &w[m];
                let mut cur = vec![0.0; width];
                for n in 1..=stock {
                    cur[n] = action_value(dist, n, params.unit_cost, lh, disc, |k| prev[k]);
                }
                w[m] = cur;
            }
            sub_values[j] = w.iter().flat_map(|r| r.iter().copied()).collect();
        }
        for n in 1..=stock {
            let q: Vec<f64> = w.iter().map(|row| row[n]).collect();
            let best = argmax_largest(&q);
            let slot = t * width + n;
            period_values.data[slot] = q[best];
            period_prices.set(t, n, acts[best]);
        }
        lock_sets[t] = acts;
    }
    Ok(LockedSolution {
        period_values,
        period_prices,
        lock_sets,
        sub_values,
        stock,
    })
}

/// Non-anticipating heuristic price maps: at each update step the field is
/// frozen as if it would last, the sticky problem is solved to the horizon,
/// and the resulting policy row is read off. `belief_duration` must match
/// the update grid (1 for period updates, `h` for subperiod updates) — it is
/// the interval the solver's sales distribution is built over.
///
/// Computed once per maximal constant-field run: one backward pass from the
/// horizon serves every update step in the run.
pub fn heuristic_prices_on_grid(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
    update_grid: UpdateGrid,
    belief_duration: f64,
) -> Result<PriceMap> {
    check_same_horizon(traj, params)?;
    let expected = match update_grid {
        UpdateGrid::Period => 1.0,
        UpdateGrid::Subperiod => traj.step_len(),
    };
    if belief_duration != expected {
        return Err(Error::InvalidParameter(format!(
            "belief duration {belief_duration} does not match the update grid (expected {expected})"
        )));
    }
    let stock = params.initial_stock;
    let (runs, steps, stride) = match update_grid {
        UpdateGrid::Subperiod => (traj.sub_runs(), traj.len(), 1),
        UpdateGrid::Period => (traj.int_runs(), traj.horizon, traj.steps_per_period),
    };
    let disc = params.discount.powf(belief_duration);
    let l_eff = params.holding_cost * belief_duration;

    let mut map = PriceMap::new(update_grid, steps, stock);
    let mut q: Vec<f64> = Vec::new();
    let mut v = vec![0.0; stock + 1];
    let mut cur = vec![0.0; stock + 1];
    for (j0, j1) in runs {
        let row = &traj.prices[j0 * stride];
        let acts = undercut_set(row, params.undercut_step);
        if acts.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        let s = MarketSituation::new(j0 as f64 * expected, row.clone());
        let dists: Vec<ActionDist> = acts
            .iter()
            .map(|&a| ActionDist::build(model, a, &s, belief_duration, stock))
            .collect::<Result<_>>()?;
        q.resize(acts.len(), 0.0);
        v.fill(0.0);
        for j in (j0..steps).rev() {
            for n in 1..=stock {
                for (m, dist) in dists.iter().enumerate() {
                    q[m] = action_value(dist, n, params.unit_cost, l_eff, disc, |k| v[k]);
                }
                cur[n] = max_value(&q);
                if j < j1 {
                    map.set(j, n, acts[argmax_largest(&q)]);
                }
            }
            std::mem::swap(&mut v, &mut cur);
        }
    }
    Ok(map)
}

/// Exact expected value of a given price map under the true trajectory — no
/// maximization, singleton actions. With `UpdateGrid::Subperiod` the map is
/// read every subperiod at the current inventory; with `UpdateGrid::Period`
/// the price looked up at the period start is locked for all its subperiods.
pub fn evaluate_nah(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
    map: &PriceMap,
    update_grid: UpdateGrid,
) -> Result<GridValues> {
    check_same_horizon(traj, params)?;
    if map.grid() != update_grid {
        return Err(Error::InvalidParameter(
            "price map was built for a different update grid".into(),
        ));
    }
    let stock = params.initial_stock;
    if map.stock() < stock {
        return Err(Error::InvalidParameter(format!(
            "price map covers {} units but {stock} are evaluated",
            map.stock()
        )));
    }
    let h = traj.step_len();
    let disc = params.discount.powf(h);
    let lh = params.holding_cost * h;
    let width = stock + 1;
    let missing = |step: usize, n: usize| {
        Error::InvalidParameter(format!("price map has no entry at step {step}, inventory {n}"))
    };

    match update_grid {
        UpdateGrid::Subperiod => {
            let jt = traj.len();
            if map.steps() != jt {
                return Err(Error::InvalidParameter(format!(
                    "price map has {} steps but the trajectory has {jt}",
                    map.steps()
                )));
            }
            let mut values = GridValues::zeros(UpdateGrid::Subperiod, jt, stock);
            for j in (0..jt).rev() {
                let s = MarketSituation::new(j as f64 * h, traj.prices[j].clone());
                let (head, tail) = values.data.split_at_mut((j + 1) * width);
                let row = &mut head[j * width..];
                let next = &tail[..width];
                for n in 1..=stock {
                    let a = map.price(j, n).ok_or_else(|| missing(j, n))?;
                    let dist = ActionDist::build(model, a, &s, h, stock)?;
                    row[n] = action_value(&dist, n, params.unit_cost, lh, disc, |k| next[k]);
                }
            }
            Ok(values)
        }
        UpdateGrid::Period => {
            let sp = traj.steps_per_period;
            if map.steps() != traj.horizon {
                return Err(Error::InvalidParameter(format!(
                    "price map has {} steps but the horizon is {}",
                    map.steps(),
                    traj.horizon
                )));
            }
            let mut values = GridValues::zeros(UpdateGrid::Period, traj.horizon, stock);
            for t in (0..traj.horizon).rev() {
                let next_row: Vec<f64> =
                    (0..width).map(|n| values.value(t + 1, n)).collect();
                for n0 in 1..=stock {
                    let a = map.price(t, n0).ok_or_else(|| missing(t, n0))?;
                    let mut w = next_row.clone();
                    for s in (0..sp).rev() {
                        let j = t * sp + s;
                        let sit =
                            MarketSituation::new(j as f64 * h, traj.prices[j].clone());
                        let dist = ActionDist::build(model, a, &sit, h, stock)?;
                        let mut cur = vec![0.0; width];
                        for m in 1..=stock {
                            cur[m] =
                                action_value(&dist, m, params.unit_cost, lh, disc, |k| w[k]);
                        }
                        w = cur;
                    }
                    values.data[t * width + n0] = w[n0];
                }
            }
            Ok(values)
        }
    }
}

/// Value of holding one fixed price for the whole horizon, from full stock.
fn fixed_price_value(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
    price: f64,
    runs: &[(usize, usize)],
) -> Result<f64> {
    let stock = params.initial_stock;
    let h = traj.step_len();
    let disc = params.discount.powf(h);
    let lh = params.holding_cost * h;
    let mut v = vec![0.0; stock + 1];
    let mut cur = vec![0.0; stock + 1];
    for (j0, j1) in runs.iter().rev() {
        let s = MarketSituation::new(*j0 as f64 * h, traj.prices[*j0].clone());
        let dist = ActionDist::build(model, price, &s, h, stock)?;
        for _ in *j0..*j1 {
            for n in 1..=stock {
                cur[n] = action_value(&dist, n, params.unit_cost, lh, disc, |k| v[k]);
            }
            std::mem::swap(&mut v, &mut cur);
        }
    }
    Ok(v[stock])
}

/// Best fixed price over the solver grid: the whole-horizon value of every
/// candidate, searched under an exact upper-bound prune. The bound sells
/// every arriving unit uncapped with no holding charge, so no candidate is
/// skipped wrongly; ties go to the larger price. Returns `(price, value)`.
pub fn best_fixed_price(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
) -> Result<(f64, f64)> {
    check_same_horizon(traj, params)?;
    let grid = params.grid.as_slice();
    let h = traj.step_len();
    let disc = params.discount.powf(h);
    let d = model.arrival_rate();
    let runs = traj.sub_runs();

    // Discounted arrival mass per candidate, accumulated run by run.
    let discs: Vec<f64> = (0..traj.len()).map(|j| disc.powi(j as i32)).collect();
    let mut mu_sum = vec![0.0; grid.len()];
    for (j0, j1) in &runs {
        let s = MarketSituation::new(*j0 as f64 * h, traj.prices[*j0].clone());
        let weight: f64 = discs[*j0..*j1].iter().sum();
        for (g, &a) in grid.iter().enumerate() {
            mu_sum[g] += h * d * model.sale_probability(a, &s)? * weight;
        }
    }
    // Each unit sells at most once and the discount never exceeds one, so
    // the discounted sale count is also bounded by the initial stock.
    let cap = params.initial_stock as f64;
    let ub: Vec<f64> = grid
        .iter()
        .zip(&mu_sum)
        .map(|(&a, &m)| {
            if a > params.unit_cost {
                (a - params.unit_cost) * m.min(cap)
            } else {
                // Sub-cost prices have non-positive value; zero is a valid
                // upper bound and keeps the prune exact.
                0.0
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| ub[b].partial_cmp(&ub[a]).expect("bounds are finite"));

    let mut best_v = f64::NEG_INFINITY;
    let mut best_a = f64::NAN;
    let mut evals = 0usize;
    for idx in order {
        if ub[idx] <= best_v {
            break;
        }
        evals += 1;
        let v = fixed_price_value(traj, params, model, grid[idx], &runs)?;
        let better = v > best_v + 1e-12;
        let tied_larger = (v - best_v).abs() <= 1e-12 && grid[idx] > best_a;
        if better || best_a.is_nan() || tied_larger {
            best_v = v;
            best_a = grid[idx];
        }
    }
    if std::env::var("FIXED_DIAG").is_ok() {
        eprintln!("best_fixed_price: {evals} candidates evaluated");
    }
    Ok((best_a, best_v))
}

/// Whole-horizon values of the five benchmark strategies on one trajectory,
/// from full stock at time zero, with ratios against the frequent
/// forward-looking upper bound.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    /// Forward-looking, repricing every subperiod (the upper bound).
    pub value_ofl_h: f64,
    /// Forward-looking, repricing at integer periods.
    pub value_ofl_1: f64,
    /// Non-anticipating heuristic, repricing every subperiod.
    pub value_nah_h: f64,
    /// Non-anticipating heuristic, repricing at integer periods.
    pub value_nah_1: f64,
    /// Best single price held throughout.
    pub value_fixed: f64,
    pub fixed_price: f64,
    pub ratio_ofl_1: f64,
    pub ratio_nah_h: f64,
    pub ratio_nah_1: f64,
    pub ratio_fixed: f64,
    /// Structural orderings (upper bound dominates everything, locked
    /// forward-looking dominates locked heuristic), within 1e-9.
    pub hard_order_holds: bool,
    /// Frequent heuristic at least as good as locked heuristic, within 1e-9
    /// — expected but not structural; tracked separately.
    pub heuristic_order_holds: bool,
}

/// Run all five strategies on one trajectory.
pub fn compare_strategies(
    traj: &Trajectory,
    params: &SolverParams,
    model: &DemandModel,
) -> Result<StrategyReport> {
    let stock = params.initial_stock;
    let (fixed_price, value_fixed) = best_fixed_price(traj, params, model)?;
    let upper = solve_ofl_h(traj, params, model, ActionSets::Undercuts, &[fixed_price])?;
    let value_ofl_h = upper.values.value(0, stock);
    let locked = solve_ofl_1(traj, params, model, ActionSets::Undercuts)?;
    let value_ofl_1 = locked.value(0, stock);

    let h = traj.step_len();
    let map_h = heuristic_prices_on_grid(traj, params, model, UpdateGrid::Subperiod, h)?;
    let value_nah_h = evaluate_nah(traj, params, model, &map_h, UpdateGrid::Subperiod)?
        .value(0, stock);
    let map_1 = heuristic_prices_on_grid(traj, params, model, UpdateGrid::Period, 1.0)?;
    let value_nah_1 =
        evaluate_nah(traj, params, model, &map_1, UpdateGrid::Period)?.value(0, stock);

    let tol = 1e-9;
    let hard_order_holds = value_ofl_h >= value_ofl_1 - tol
        && value_ofl_1 >= value_nah_1 - tol
        && value_ofl_h >= value_nah_h - tol
        && value_ofl_h >= value_fixed - tol;
    let heuristic_order_holds = value_nah_h >= value_nah_1 - tol;

    Ok(StrategyReport {
        value_ofl_h,
        value_ofl_1,
        value_nah_h,
        value_nah_1,
        value_fixed,
        fixed_price,
        ratio_ofl_1: value_ofl_1 / value_ofl_h,
        ratio_nah_h: value_nah_h / value_ofl_h,
        ratio_nah_1: value_nah_1 / value_ofl_h,
        ratio_fixed: value_fixed / value_ofl_h,
        hard_order_holds,
        heuristic_order_holds,
    })
}

/// Scenario-mean summary of many [`StrategyReport`]s: mean upper-bound value
/// and means of the per-scenario ratios (not ratios of means).
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyAggregate {
    pub scenarios: usize,
    pub mean_ofl_h: f64,
    pub mean_ratio_ofl_1: f64,
    pub mean_ratio_nah_h: f64,
    pub mean_ratio_nah_1: f64,
    pub mean_ratio_fixed: f64,
    pub hard_order_violations: usize,
    pub heuristic_order_violations: usize,
}

pub fn aggregate_reports(reports: &[StrategyReport]) -> Result<StrategyAggregate> {
    if reports.is_empty() {
        return Err(Error::InvalidParameter("no strategy reports to aggregate".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&StrategyReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(StrategyAggregate {
        scenarios: reports.len(),
        mean_ofl_h: mean(|r| r.value_ofl_h),
        mean_ratio_ofl_1: mean(|r| r.ratio_ofl_1),
        mean_ratio_nah_h: mean(|r| r.ratio_nah_h),
        mean_ratio_nah_1: mean(|r| r.ratio_nah_1),
        mean_ratio_fixed: mean(|r| r.ratio_fixed),
        hard_order_violations: reports.iter().filter(|r| !r.hard_order_holds).count(),
        heuristic_order_violations: reports.iter().filter(|r| !r.heuristic_order_holds).count(),
    })
}

/// One row of the strategy-comparison summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTableRow {
    pub family: String,
    pub adjust_prob: f64,
    pub aggregate: StrategyAggregate,
}

/// CSV emitter for the aggregated strategy comparison.
pub fn write_strategy_table_csv<W: Write>(rows: &[StrategyTableRow], w: &mut W) -> io::Result<()> {
    writeln!(
        w,
        "family,adjust_prob,mean_ofl_h,ratio_ofl_1,ratio_nah_h,ratio_nah_1,ratio_fixed,\
         scenarios,hard_order_violations,heuristic_order_violations"
    )?;
    for r in rows {
        let a = &r.aggregate;
        writeln!(
            w,
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{}",
            r.family,
            r.adjust_prob,
            a.mean_ofl_h,
            a.mean_ratio_ofl_1,
            a.mean_ratio_nah_h,
            a.mean_ratio_nah_1,
            a.mean_ratio_fixed,
            a.scenarios,
            a.hard_order_violations,
            a.heuristic_order_violations
        )?;
    }
    Ok(())
}
