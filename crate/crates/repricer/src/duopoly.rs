//! Optimal response against a single competitor with a known response rule.
//!
//! The competitor holds its price for the first `Δ` fraction of each period,
//! then reacts to our posted price through a deterministic rule `F`. A period
//! therefore splits into two Poisson sales phases — before and after the
//! reaction — which collapse into one Poisson with the summed means. The
//! optimal-response solver uses that collapse as the production path; tests
//! keep it honest against the literal two-phase convolution.
//!
//! Besides the exact solver, the module builds two practical variants that
//! do not know `F`: a naive one that assumes the rival price simply persists,
//! and an informed one that uses the true two-phase sales mean but still
//! treats the rival price as persistent state. Both are evaluated under the
//! true dynamics, which is how the reaction-time study compares information
//! levels.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demand::{sample_poisson, DemandModel, MarketSituation};
use crate::error::{Error, Result};
use crate::hjb_solver::{
    action_value, argmax_largest, max_value, ActionDist, SolverParams,
};

/// Deterministic competitor response: our price and the rival's current price
/// map to the rival's next price.
pub struct ResponseFunction(Box<dyn Fn(f64, f64) -> f64 + Send + Sync>);

impl ResponseFunction {
    pub fn new(rule: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ResponseFunction(Box::new(rule))
    }

    /// The canonical rule: undercut our price by `eps`, never below `floor`.
    pub fn undercut(eps: f64, floor: f64) -> Self {
        ResponseFunction::new(move |a, _p| (a - eps).max(floor))
    }

    /// A rival that never moves.
    pub fn inert() -> Self {
        ResponseFunction::new(|_a, p| p)
    }

    pub fn apply(&self, our_price: f64, rival_price: f64) -> f64 {
        (self.0)(our_price, rival_price)
    }
}

impl std::fmt::Debug for ResponseFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ResponseFunction(..)")
    }
}

/// Inputs of the duopoly problem: the shared price grid and economic
/// parameters plus the rival's reaction delay.
#[derive(Debug, Clone)]
pub struct DuopolyParams {
    /// Fraction of each period before the rival reacts, strictly in (0, 1).
    pub reaction_delay: f64,
    /// Horizon, stock, costs, discount, and the price grid (shared by our
    /// actions and the rival price state).
    pub params: SolverParams,
}

impl DuopolyParams {
    pub fn new(reaction_delay: f64, params: SolverParams) -> Result<Self> {
        let dp = DuopolyParams {
            reaction_delay,
            params,
        };
        dp.validate()?;
        Ok(dp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reaction_delay > 0.0 && self.reaction_delay < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "reaction delay must lie strictly in (0, 1), got {}",
                self.reaction_delay
            )));
        }
        self.params.validate()
    }
}

/// Expected discounted profit per `(t, n, rival price)` state.
#[derive(Debug, Clone)]
pub struct DuopolyValueTable {
    horizon: usize,
    stock: usize,
    grid: Vec<f64>,
    data: Vec<f64>,
}

impl DuopolyValueTable {
    fn idx(&self, t: usize, n: usize, p_idx: usize) -> usize {
        assert!(
            t <= self.horizon && n <= self.stock && p_idx < self.grid.len(),
            "state ({t},{n},{p_idx}) out of range"
        );
        (t * (self.stock + 1) + n) * self.grid.len() + p_idx
    }

    /// Value by rival-price grid index.
    pub fn value_at(&self, t: usize, n: usize, p_idx: usize) -> f64 {
        self.data[self.idx(t, n, p_idx)]
    }

    /// Value at an exact grid price.
    pub fn value(&self, t: usize, n: usize, rival_price: f64) -> f64 {
        let p_idx = position(&self.grid, rival_price)
            .unwrap_or_else(|| panic!("price {rival_price} is not on the grid"));
        self.value_at(t, n, p_idx)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn stock(&self) -> usize {
        self.stock
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// Chosen price per `(t, n, rival price)` state with positive inventory.
#[derive(Debug, Clone)]
pub struct DuopolyPolicy {
    horizon: usize,
    stock: usize,
    grid: Vec<f64>,
    choice: Vec<u32>,
}

impl DuopolyPolicy {
    fn idx(&self, t: usize, n: usize, p_idx: usize) -> usize {
        assert!(
            t < self.horizon && n <= self.stock && p_idx < self.grid.len(),
            "state ({t},{n},{p_idx}) out of range"
        );
        (t * (self.stock + 1) + n) * self.grid.len() + p_idx
    }

    pub fn price_idx(&self, t: usize, n: usize, p_idx: usize) -> Option<usize> {
        match self.choice[self.idx(t, n, p_idx)] {
            u32::MAX => None,
            k => Some(k as usize),
        }
    }

    pub fn price_at(&self, t: usize, n: usize, p_idx: usize) -> Option<f64> {
        self.price_idx(t, n, p_idx).map(|k| self.grid[k])
    }

    pub fn price(&self, t: usize, n: usize, rival_price: f64) -> Option<f64> {
        let p_idx = position(&self.grid, rival_price)
            .unwrap_or_else(|| panic!("price {rival_price} is not on the grid"));
        self.price_at(t, n, p_idx)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn stock(&self) -> usize {
        self.stock
    }
}

fn position(grid: &[f64], price: f64) -> Option<usize> {
    grid.binary_search_by(|g| g.partial_cmp(&price).expect("grid prices are ordered"))
        .ok()
}

/// Nearest grid index to `x` (ties toward the larger point), then raised to
/// the cheapest grid point at or above `floor` if the nearest lies below it.
fn clamp_to_grid(grid: &[f64], x: f64, floor: f64) -> usize {
    let hi = grid.partition_point(|&g| g < x);
    let nearest = if hi == 0 {
        0
    } else if hi == grid.len() {
        grid.len() - 1
    } else if x - grid[hi - 1] < grid[hi] - x {
        hi - 1
    } else {
        hi
    };
    if grid[nearest] >= floor {
        nearest
    } else {
        let raised = grid.partition_point(|&g| g < floor);
        raised.min(grid.len() - 1)
    }
}

/// Per-period sales mean for every (our price, rival price) pair, plus the
/// successor rival-price index. This is the exact two-phase dynamics under a
/// known response rule, collapsed by Poisson additivity.
struct TwoPhase {
    acts: usize,
    states: usize,
    /// `mean[a*states + p]`.
    mean: Vec<f64>,
    /// `succ[a*states + p]`: rival-price index after the reaction.
    succ: Vec<u32>,
}

impl TwoPhase {
    fn build(rule: &ResponseFunction, dp: &DuopolyParams, model: &DemandModel) -> Result<Self> {
        let grid = dp.params.grid.as_slice();
        let (acts, states) = (grid.len(), grid.len());
        let delay = dp.reaction_delay;
        let d = model.arrival_rate();
        // Sale probability for every (a, p) pair; the situation has exactly
        // one rival offer.
        let mut prob = vec![0.0; acts * states];
        for (pi, &p) in grid.iter().enumerate() {
            let s = MarketSituation::new(0.0, vec![p]);
            for (ai, &a) in grid.iter().enumerate() {
                prob[ai * states + pi] = model.sale_probability(a, &s)?;
            }
        }
        let mut mean = vec![0.0; acts * states];
        let mut succ = vec![0u32; acts * states];
        for (ai, &a) in grid.iter().enumerate() {
            for (pi, &p) in grid.iter().enumerate() {
                let reacted = clamp_to_grid(grid, rule.apply(a, p), dp.params.unit_cost);
                let k = ai * states + pi;
                succ[k] = reacted as u32;
                mean[k] = delay * d * prob[k] + (1.0 - delay) * d * prob[ai * states + reacted];
            }
        }
        Ok(TwoPhase {
            acts,
            states,
            mean,
            succ,
        })
    }

    fn dists(&self, grid: &[f64], stock: usize) -> Result<Vec<ActionDist>> {
        (0..self.acts * self.states)
            .map(|k| ActionDist::from_mean(grid[k / self.states], self.mean[k], stock))
            .collect()
    }
}

/// Per-period conditional sales distributions used by the practical solvers:
/// a Poisson mean for every (our price, rival price) pair, with the rival
/// price treated as persistent state.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSales {
    acts: usize,
    states: usize,
    mean: Vec<f64>,
}

impl ConditionalSales {
    /// Sales mean for (our price index, rival price index).
    pub fn mean_at(&self, a_idx: usize, p_idx: usize) -> f64 {
        self.mean[a_idx * self.states + p_idx]
    }
}

/// Variant that ignores the reaction entirely: a full-period Poisson at the
/// current rival price. Independent of the reaction delay.
pub fn build_conditional_naive(dp: &DuopolyParams, model: &DemandModel) -> Result<ConditionalSales> {
    dp.validate()?;
    let grid = dp.params.grid.as_slice();
    let (acts, states) = (grid.len(), grid.len());
    let d = model.arrival_rate();
    let mut mean = vec![0.0; acts * states];
    for (pi, &p) in grid.iter().enumerate() {
        let s = MarketSituation::new(0.0, vec![p]);
        for (ai, &a) in grid.iter().enumerate() {
            mean[ai * states + pi] = d * model.sale_probability(a, &s)?;
        }
    }
    Ok(ConditionalSales { acts, states, mean })
}

/// Variant that knows the response rule: the exact two-phase mean (reaction
/// after the delay), collapsed into one Poisson by additivity. Must agree
/// with the explicit phase convolution — see the tests.
pub fn build_conditional_accurate(
    rule: &ResponseFunction,
    dp: &DuopolyParams,
    model: &DemandModel,
) -> Result<ConditionalSales> {
    dp.validate()?;
    let tp = TwoPhase::build(rule, dp, model)?;
    Ok(ConditionalSales {
        acts: tp.acts,
        states: tp.states,
        mean: tp.mean,
    })
}

/// Exact optimal response under a known rule: backward induction over
/// `(t, n, rival price)` where posting `a` against rival price `p` sells at
/// the collapsed two-phase rate and moves the rival to its reacted price.
pub fn solve_optimal_response(
    rule: &ResponseFunction,
    dp: &DuopolyParams,
    model: &DemandModel,
) -> Result<(DuopolyValueTable, DuopolyPolicy)> {
    dp.validate()?;
    let tp = TwoPhase::build(rule, dp, model)?;
    let dists = tp.dists(dp.params.grid.as_slice(), dp.params.initial_stock)?;
    backward_induction(dp, &dists, |k| tp.succ[k] as usize)
}

/// Practical solver: the rival price is carried over unchanged (persistent
/// state), sales follow the supplied conditional distributions.
pub fn solve_duopoly_heuristic(
    cond: &ConditionalSales,
    dp: &DuopolyParams,
) -> Result<(DuopolyValueTable, DuopolyPolicy)> {
    dp.validate()?;
    let grid = dp.params.grid.as_slice();
    if cond.acts != grid.len() || cond.states != grid.len() {
        return Err(Error::InvalidParameter(
            "conditional sales table does not match the price grid".into(),
        ));
    }
    let dists: Vec<ActionDist> = (0..cond.acts * cond.states)
        .map(|k| {
            ActionDist::from_mean(grid[k / cond.states], cond.mean[k], dp.params.initial_stock)
        })
        .collect::<Result<_>>()?;
    backward_induction(dp, &dists, |k| k % cond.states)
}

fn backward_induction(
    dp: &DuopolyParams,
    dists: &[ActionDist],
    succ: impl Fn(usize) -> usize,
) -> Result<(DuopolyValueTable, DuopolyPolicy)> {
    let p = &dp.params;
    let (horizon, stock, states) = (p.horizon, p.initial_stock, p.grid.len());
    let row_len = (stock + 1) * states;
    let mut values = vec![0.0; (horizon + 1) * row_len];
    let mut choice = vec![u32::MAX; horizon * row_len];
    let mut q = vec![0.0; states];

    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut((t + 1) * row_len);
        let cur = &mut head[t * row_len..];
        let next = &tail[..row_len];
        for pi in 0..states {
            for n in 1..=stock {
                for (ai, slot) in q.iter_mut().enumerate() {
                    let k = ai * states + pi;
                    let pn = succ(k);
                    *slot = action_value(
                        &dists[k],
                        n,
                        p.unit_cost,
                        p.holding_cost,
                        p.discount,
                        |m| next[m * states + pn],
                    );
                }
                cur[n * states + pi] = max_value(&q);
                choice[t * row_len + n * states + pi] = argmax_largest(&q) as u32;
            }
        }
    }

    let grid = p.grid.as_slice().to_vec();
    Ok((
        DuopolyValueTable {
            horizon,
            stock,
            grid: grid.clone(),
            data: values,
        },
        DuopolyPolicy {
            horizon,
            stock,
            grid,
            choice,
        },
    ))
}

/// Analytic value of following `policy` under the **true** two-phase
/// dynamics: singleton action per state, rival price moves per the rule.
pub fn evaluate_duopoly_policy(
    policy: &DuopolyPolicy,
    rule: &ResponseFunction,
    dp: &DuopolyParams,
    model: &DemandModel,
) -> Result<DuopolyValueTable> {
    dp.validate()?;
    let p = &dp.params;
    let (horizon, stock, states) = (p.horizon, p.initial_stock, p.grid.len());
    if policy.horizon != horizon || policy.stock != stock || policy.grid != p.grid.as_slice() {
        return Err(Error::InvalidParameter(
            "policy shape does not match the duopoly parameters".into(),
        ));
    }
    let tp = TwoPhase::build(rule, dp, model)?;
    let dists = tp.dists(p.grid.as_slice(), stock)?;

    let row_len = (stock + 1) * states;
    let mut values = vec![0.0; (horizon + 1) * row_len];
    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut((t + 1) * row_len);
        let cur = &mut head[t * row_len..];
        let next = &tail[..row_len];
        for pi in 0..states {
            for n in 1..=stock {
                let ai = policy.price_idx(t, n, pi).ok_or_else(|| {
                    Error::InvalidParameter(format!("policy has no entry at ({t},{n},{pi})"))
                })?;
                let k = ai * states + pi;
                let pn = tp.succ[k] as usize;
                cur[n * states + pi] = action_value(
                    &dists[k],
                    n,
                    p.unit_cost,
                    p.holding_cost,
                    p.discount,
                    |m| next[m * states + pn],
                );
            }
        }
    }
    Ok(DuopolyValueTable {
        horizon,
        stock,
        grid: p.grid.as_slice().to_vec(),
        data: values,
    })
}

/// One simulated sales path under a policy and the true reaction dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct DuopolyPath {
    /// Period index of each step.
    pub times: Vec<usize>,
    /// Price we posted at the start of each period.
    pub our_prices: Vec<f64>,
    /// Rival price at the start of each period (before its reaction).
    pub rival_prices: Vec<f64>,
    /// Inventory at the start of each period.
    pub inventory: Vec<usize>,
    /// Units sold during each period (both phases).
    pub sales: Vec<usize>,
}

/// Simulate inventory and prices period by period: we post per `policy`, the
/// rival reacts after the delay, sales arrive as two Poisson phases capped by
/// the remaining stock. Deterministic for a fixed seed.
pub fn simulate_duopoly_path(
    policy: &DuopolyPolicy,
    rule: &ResponseFunction,
    dp: &DuopolyParams,
    model: &DemandModel,
    seed: u64,
    initial_rival_price: f64,
) -> Result<DuopolyPath> {
    dp.validate()?;
    let p = &dp.params;
    let grid = p.grid.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pi = position(grid, initial_rival_price).ok_or_else(|| {
        Error::InvalidParameter(format!("rival price {initial_rival_price} is not on the grid"))
    })?;
    let d = model.arrival_rate();
    let delay = dp.reaction_delay;

    let mut path = DuopolyPath {
        times: Vec::new(),
        our_prices: Vec::new(),
        rival_prices: Vec::new(),
        inventory: Vec::new(),
        sales: Vec::new(),
    };
    let mut n = p.initial_stock;
    for t in 0..p.horizon {
        if n == 0 {
            break;
        }
        let ai = policy
            .price_idx(t, n, pi)
            .ok_or_else(|| Error::InvalidParameter(format!("policy has no entry at ({t},{n},{pi})")))?;
        let a = grid[ai];
        path.times.push(t);
        path.our_prices.push(a);
        path.rival_prices.push(grid[pi]);
        path.inventory.push(n);

        let s1 = MarketSituation::new(t as f64, vec![grid[pi]]);
        let mu1 = delay * d * model.sale_probability(a, &s1)?;
        let sold1 = (sample_poisson(&mut rng, mu1) as usize).min(n);
        n -= sold1;

        let reacted = clamp_to_grid(grid, rule.apply(a, grid[pi]), p.unit_cost);
        let s2 = MarketSituation::new(t as f64 + delay, vec![grid[reacted]]);
        let mu2 = (1.0 - delay) * d * model.sale_probability(a, &s2)?;
        let sold2 = (sample_poisson(&mut rng, mu2) as usize).min(n);
        n -= sold2;

        path.sales.push(sold1 + sold2);
        pi = reacted;
    }
    Ok(path)
}

/// One cell of the reaction-time study: values at the anchor rival price for
/// each stock level.
#[derive(Debug, Clone)]
pub struct ReactionCell {
    pub reaction_delay: f64,
    /// Exact optimal-response value per stock level.
    pub optimal: Vec<f64>,
    /// Naive variant (persistence belief) evaluated under true dynamics.
    pub naive: Vec<f64>,
    /// Informed variant (two-phase mean) evaluated under true dynamics.
    pub accurate: Vec<f64>,
}

/// Reaction-time study: how information about the rival's reaction speed
/// translates into profits, normalized by the optimal value at delay 0.5.
#[derive(Debug, Clone)]
pub struct ReactionStudy {
    pub stocks: Vec<usize>,
    pub anchor_price: f64,
    pub cells: Vec<ReactionCell>,
    /// Optimal value at delay 0.5 per stock level (the normalizer).
    pub baseline: Vec<f64>,
}

impl ReactionStudy {
    /// Ratio of a cell column to the delay-0.5 optimal baseline.
    pub fn ratios(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.baseline)
            .map(|(v, b)| v / b)
            .collect()
    }

    /// CSV rows: one line per (strategy, stock) pair, ratio columns per delay.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write!(w, "strategy,n")?;
        for cell in &self.cells {
            write!(w, ",delay_{}", cell.reaction_delay)?;
        }
        writeln!(w)?;
        let columns: [(&str, fn(&ReactionCell) -> &Vec<f64>); 3] = [
            ("optimal", |c| &c.optimal),
            ("naive", |c| &c.naive),
            ("accurate", |c| &c.accurate),
        ];
        for (name, pick) in columns {
            for (i, n) in self.stocks.iter().enumerate() {
                write!(w, "{name},{n}")?;
                for cell in &self.cells {
                    write!(w, ",{:.4}", pick(cell)[i] / self.baseline[i])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Run the full study: for each reaction delay, solve the exact response and
/// both practical variants, evaluate the variants under true dynamics, and
/// record values at `anchor_price` for each stock level in `stocks`.
pub fn reaction_time_study(
    rule: &ResponseFunction,
    params: &SolverParams,
    model: &DemandModel,
    delays: &[f64],
    stocks: &[usize],
    anchor_price: f64,
) -> Result<ReactionStudy> {
    let grid_anchor = position(params.grid.as_slice(), anchor_price).ok_or_else(|| {
        Error::InvalidParameter(format!("anchor price {anchor_price} is not on the grid"))
    })?;
    for &n in stocks {
        if n == 0 || n > params.initial_stock {
            return Err(Error::InvalidParameter(format!(
                "stock level {n} outside 1..={}",
                params.initial_stock
            )));
        }
    }

    let mut cells = Vec::with_capacity(delays.len());
    let collect = |table: &DuopolyValueTable| -> Vec<f64> {
        stocks
            .iter()
            .map(|&n| table.value_at(0, n, grid_anchor))
            .collect()
    };
    for &delay in delays {
        let dp = DuopolyParams::new(delay, params.clone())?;
        let (v_star, _) = solve_optimal_response(rule, &dp, model)?;
        let naive_policy = solve_duopoly_heuristic(&build_conditional_naive(&dp, model)?, &dp)?.1;
        let accurate_policy =
            solve_duopoly_heuristic(&build_conditional_accurate(rule, &dp, model)?, &dp)?.1;
        let v_naive = evaluate_duopoly_policy(&naive_policy, rule, &dp, model)?;
        let v_accurate = evaluate_duopoly_policy(&accurate_policy, rule, &dp, model)?;
        cells.push(ReactionCell {
            reaction_delay: delay,
            optimal: collect(&v_star),
            naive: collect(&v_naive),
            accurate: collect(&v_accurate),
        });
    }

    let baseline_dp = DuopolyParams::new(0.5, params.clone())?;
    let (v_half, _) = solve_optimal_response(rule, &baseline_dp, model)?;
    Ok(ReactionStudy {
        stocks: stocks.to_vec(),
        anchor_price,
        cells,
        baseline: collect(&v_half),
    })
}
