//! Finite-horizon pricing dynamic programs over a frozen market snapshot.
//!
//! The core solver holds the observed situation fixed for the rest of the
//! horizon ("sticky" competitor prices) and runs backward induction over
//! (time, inventory) on an explicit price grid. Stickiness is what makes the
//! state space independent of the number of competitors; the intended use is
//! to re-solve every period from the freshly observed snapshot and keep only
//! the first price — [`heuristic_price`] packages exactly that step.
//!
//! An extension charges a fixed fee per price change by widening the state
//! with the previously posted price; [`solve_with_adjustment_cost`] solves it
//! with the identical inner accumulation so the fee-free case reproduces the
//! base tables exactly.

use std::io::{self, Write};

use crate::demand::{DemandModel, MarketSituation, SalesPmf};
use crate::error::{Error, Result};

/// Absolute tolerance under which two action values count as tied; ties go
/// to the larger price.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Sorted, strictly increasing set of admissible prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid(Vec<f64>);

impl PriceGrid {
    /// Validate and wrap an explicit price list.
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        if prices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("price grid has non-finite entry".into()));
        }
        if prices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "price grid must be strictly increasing".into(),
            ));
        }
        Ok(PriceGrid(prices))
    }

    /// Equidistant grid `{step, 2·step, …, count·step}`.
    pub fn with_step(step: f64, count: usize) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid step must be positive and finite, got {step}"
            )));
        }
        PriceGrid::new((1..=count).map(|i| i as f64 * step).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_price(&self) -> f64 {
        *self.0.last().expect("grid is nonempty")
    }

    /// Index of an exact grid member.
    pub fn position_of(&self, price: f64) -> Option<usize> {
        self.0
            .binary_search_by(|p| p.partial_cmp(&price).expect("grid prices are ordered"))
            .ok()
    }
}

/// Static inputs of one pricing problem.
#[derive(Debug, Clone)]
pub struct SolverParams {
    /// Number of periods `T`; decisions happen at `t = 0..T`.
    pub horizon: usize,
    /// Starting inventory `N`.
    pub initial_stock: usize,
    /// Marginal cost per unit sold.
    pub unit_cost: f64,
    /// Holding cost per unsold unit per period.
    pub holding_cost: f64,
    /// Per-period discount factor in `(0, 1]`.
    pub discount: f64,
    /// Admissible prices.
    pub grid: PriceGrid,
    /// Fee per price change (0 disables the extension).
    pub adjust_cost: f64,
    /// Step used when undercutting a competitor price.
    pub undercut_step: f64,
}

impl SolverParams {
    pub fn new(
        horizon: usize,
        initial_stock: usize,
        unit_cost: f64,
        holding_cost: f64,
        discount: f64,
        grid: PriceGrid,
    ) -> Result<Self> {
        let params = SolverParams {
            horizon,
            initial_stock,
            unit_cost,
            holding_cost,
            discount,
            grid,
            adjust_cost: 0.0,
            undercut_step: 0.01,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_adjust_cost(mut self, z: f64) -> Result<Self> {
        self.adjust_cost = z;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.initial_stock < 1 {
            return Err(Error::InvalidParameter("initial stock must be at least 1".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "discount must lie in (0, 1], got {}",
                self.discount
            )));
        }
        if !self.holding_cost.is_finite() || self.holding_cost < 0.0 {
            return Err(Error::InvalidParameter("holding cost must be non-negative".into()));
        }
        if !self.adjust_cost.is_finite() || self.adjust_cost < 0.0 {
            return Err(Error::InvalidParameter("adjustment cost must be non-negative".into()));
        }
        if !(self.undercut_step > 0.0) {
            return Err(Error::InvalidParameter("undercut step must be positive".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::EmptyActionSet);
        }
        Ok(())
    }
}

/// Expected discounted profit per `(t, n)` state.
#[derive(Debug, Clone)]
pub struct ValueTable {
    horizon: usize,
    stock: usize,
    data: Vec<f64>,
}

impl ValueTable {
    fn idx(&self, t: usize, n: usize) -> usize {
        assert!(t <= self.horizon && n <= self.stock, "state ({t},{n}) out of range");
        t * (self.stock + 1) + n
    }

    pub fn value(&self, t: usize, n: usize) -> f64 {
        self.data[self.idx(t, n)]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn stock(&self) -> usize {
        self.stock
    }
}

/// Chosen grid price per `(t, n)` state with positive inventory.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    horizon: usize,
    stock: usize,
    grid: Vec<f64>,
    choice: Vec<u32>,
}

const NO_CHOICE: u32 = u32::MAX;

impl PolicyTable {
    fn idx(&self, t: usize, n: usize) -> usize {
        assert!(t < self.horizon && n <= self.stock, "state ({t},{n}) out of range");
        t * (self.stock + 1) + n
    }

    /// Price posted in state `(t, n)`; `None` when there is nothing to sell.
    pub fn price(&self, t: usize, n: usize) -> Option<f64> {
        match self.choice[self.idx(t, n)] {
            NO_CHOICE => None,
            k => Some(self.grid[k as usize]),
        }
    }

    /// All `(t, n, price)` entries with positive inventory.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let stock = self.stock;
        self.choice.iter().enumerate().filter_map(move |(i, &k)| {
            if k == NO_CHOICE {
                None
            } else {
                Some((i / (stock + 1), i % (stock + 1), self.grid[k as usize]))
            }
        })
    }
}

/// Per-action sales distribution cache for one frozen situation.
pub(crate) struct ActionDist {
    pub(crate) price: f64,
    /// `mass[i]`: probability of exactly `i` sales, `i < stock`.
    mass: Vec<f64>,
    /// `sellout[n]`: probability of `n` or more sales.
    sellout: Vec<f64>,
}

impl ActionDist {
    /// Distribution of sales over `duration` periods at `price`, truncated at
    /// `stock`.
    pub(crate) fn build(
        model: &DemandModel,
        price: f64,
        s: &MarketSituation,
        duration: f64,
        stock: usize,
    ) -> Result<Self> {
        Self::from_mean(price, model.sales_intensity(price, s, duration)?, stock)
    }

    /// Same, from a precomputed Poisson mean.
    pub(crate) fn from_mean(price: f64, mean: f64, stock: usize) -> Result<Self> {
        let pmf = SalesPmf::from_mean(mean, stock)?;
        let mass = pmf.mass().to_vec();
        let mut sellout = Vec::with_capacity(stock + 1);
        let mut cdf = 0.0;
        sellout.push(1.0);
        for &m in &mass {
            cdf += m;
            sellout.push((1.0 - cdf).max(0.0));
        }
        Ok(ActionDist {
            price,
            mass,
            sellout,
        })
    }
}

/// One-step expected value of posting `dist.price` with `n` units on hand,
/// where `next(m)` is the discounted-continuation lookup for `m` remaining
/// units. Mass at or above `n` sales is routed to the sell-out branch, so the
/// truncation is exact rather than an approximation. The holding charge
/// applies to pre-sale inventory.
#[inline]
pub(crate) fn action_value<F: Fn(usize) -> f64>(
    dist: &ActionDist,
    n: usize,
    unit_cost: f64,
    holding_cost: f64,
    discount: f64,
    next: F,
) -> f64 {
    let margin = dist.price - unit_cost;
    let hold = n as f64 * holding_cost;
    let mut q = 0.0;
    for (i, &p) in dist.mass.iter().take(n).enumerate() {
        q += p * (margin * i as f64 - hold + discount * next(n - i));
    }
    q + dist.sellout[n] * (margin * n as f64 - hold + discount * next(0))
}

/// Largest value in `values` (assumed nonempty).
#[inline]
pub(crate) fn max_value(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the maximal entry, with ties within [`TIE_TOLERANCE`] resolved to
/// the largest index (= largest price on an ascending grid).
pub(crate) fn argmax_largest(values: &[f64]) -> usize {
    let vmax = max_value(values);
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v >= vmax - TIE_TOLERANCE {
            best = i;
        }
    }
    best
}

pub(crate) fn build_action_dists(
    model: &DemandModel,
    s: &MarketSituation,
    grid: &PriceGrid,
    duration: f64,
    stock: usize,
) -> Result<Vec<ActionDist>> {
    grid.as_slice()
        .iter()
        .map(|&a| ActionDist::build(model, a, s, duration, stock))
        .collect()
}

/// Backward induction over `(t, n)` holding situation `s` fixed.
///
/// `period_pmf_duration` is the interval length used to form the per-period
/// sales distribution (1 for the base model; a subperiod length when a caller
/// builds higher-frequency variants). Terminal and zero-inventory rows are
/// exactly zero.
pub fn solve_value(
    s: &MarketSituation,
    params: &SolverParams,
    model: &DemandModel,
    period_pmf_duration: f64,
) -> Result<(ValueTable, PolicyTable)> {
    params.validate()?;
    if !(period_pmf_duration > 0.0) || !period_pmf_duration.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pmf duration must be positive and finite, got {period_pmf_duration}"
        )));
    }
    let horizon = params.horizon;
    let stock = params.initial_stock;
    let dists = build_action_dists(model, s, &params.grid, period_pmf_duration, stock)?;

    let mut values = vec![0.0; (horizon + 1) * (stock + 1)];
    let mut choice = vec![NO_CHOICE; horizon * (stock + 1)];
    let mut q = vec![0.0; dists.len()];

    for t in (0..horizon).rev() {
        // Row t is written while row t+1 is read.
        let (head, tail) = values.split_at_mut((t + 1) * (stock + 1));
        let row = &mut head[t * (stock + 1)..];
        let v_next = &tail[..stock + 1];
        for n in 1..=stock {
            for (k, dist) in dists.iter().enumerate() {
                q[k] = action_value(
                    dist,
                    n,
                    params.unit_cost,
                    params.holding_cost,
                    params.discount,
                    |m| v_next[m],
                );
            }
            row[n] = max_value(&q);
            choice[t * (stock + 1) + n] = argmax_largest(&q) as u32;
        }
    }

    Ok((
        ValueTable {
            horizon,
            stock,
            data: values,
        },
        PolicyTable {
            horizon,
            stock,
            grid: params.grid.as_slice().to_vec(),
            choice,
        },
    ))
}

/// First price of a fresh solve for the observed state: truncate the horizon
/// to the remaining periods, run the backward induction for inventories up to
/// `n` only, and return the price chosen at the top. Cost is independent of
/// how many competitors the snapshot contains.
pub fn heuristic_price(
    s: &MarketSituation,
    n: usize,
    t: usize,
    params: &SolverParams,
    model: &DemandModel,
) -> Result<f64> {
    if t >= params.horizon {
        return Err(Error::HorizonExhausted {
            t: t as f64,
            horizon: params.horizon,
        });
    }
    if n == 0 {
        return Err(Error::InvalidParameter(
            "no price decision with zero inventory".into(),
        ));
    }
    if n > params.initial_stock {
        return Err(Error::InvalidParameter(format!(
            "inventory {n} exceeds initial stock {}",
            params.initial_stock
        )));
    }
    let mut reduced = params.clone();
    reduced.horizon = params.horizon - t;
    reduced.initial_stock = n;
    let (_, policy) = solve_value(s, &reduced, model, 1.0)?;
    Ok(policy.price(0, n).expect("positive inventory has a price"))
}

/// Expected discounted profit per `(t, n, previously posted price)` state.
/// The "no previous price" state is encoded as `None` (exported as 0).
#[derive(Debug, Clone)]
pub struct AdjustedValueTable {
    horizon: usize,
    stock: usize,
    grid: Vec<f64>,
    data: Vec<f64>,
}

impl AdjustedValueTable {
    fn idx(&self, t: usize, prev: usize, n: usize) -> usize {
        (t * (self.grid.len() + 1) + prev) * (self.stock + 1) + n
    }

    /// Value by previous-price grid index (`None` = no price posted yet).
    pub fn value_at(&self, t: usize, n: usize, prev_idx: Option<usize>) -> f64 {
        assert!(t <= self.horizon && n <= self.stock, "state ({t},{n}) out of range");
        let prev = prev_idx.map_or(0, |k| {
            assert!(k < self.grid.len(), "previous-price index out of range");
            k + 1
        });
        self.data[self.idx(t, prev, n)]
    }

    /// Value by previous price, which must be an exact grid member.
    pub fn value(&self, t: usize, n: usize, prev_price: Option<f64>) -> f64 {
        self.value_at(t, n, prev_price.map(|p| self.require_member(p)))
    }

    fn require_member(&self, price: f64) -> usize {
        self.grid
            .binary_search_by(|g| g.partial_cmp(&price).expect("grid prices are ordered"))
            .unwrap_or_else(|_| panic!("price {price} is not on the action grid"))
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

/// Chosen price per `(t, n, previously posted price)` state.
#[derive(Debug, Clone)]
pub struct AdjustedPolicyTable {
    horizon: usize,
    stock: usize,
    grid: Vec<f64>,
    choice: Vec<u32>,
}

impl AdjustedPolicyTable {
    fn idx(&self, t: usize, prev: usize, n: usize) -> usize {
        (t * (self.grid.len() + 1) + prev) * (self.stock + 1) + n
    }

    pub fn price_at(&self, t: usize, n: usize, prev_idx: Option<usize>) -> Option<f64> {
        assert!(t < self.horizon && n <= self.stock, "state ({t},{n}) out of range");
        let prev = prev_idx.map_or(0, |k| {
            assert!(k < self.grid.len(), "previous-price index out of range");
            k + 1
        });
        match self.choice[self.idx(t, prev, n)] {
            NO_CHOICE => None,
            k => Some(self.grid[k as usize]),
        }
    }

    pub fn price(&self, t: usize, n: usize, prev_price: Option<f64>) -> Option<f64> {
        let prev_idx = prev_price.map(|p| {
            self.grid
                .binary_search_by(|g| g.partial_cmp(&p).expect("grid prices are ordered"))
                .unwrap_or_else(|_| panic!("price {p} is not on the action grid"))
        });
        self.price_at(t, n, prev_idx)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// Backward induction with a fixed fee per price change.
///
/// The state carries the previously posted price; changing it costs
/// `params.adjust_cost` (the very first posting is free). With a zero fee the
/// value tables collapse to the base model exactly — the inner accumulation
/// is shared with [`solve_value`], so the equality is bitwise, not just
/// approximate.
pub fn solve_with_adjustment_cost(
    s: &MarketSituation,
    params: &SolverParams,
    model: &DemandModel,
) -> Result<(AdjustedValueTable, AdjustedPolicyTable)> {
    params.validate()?;
    let horizon = params.horizon;
    let stock = params.initial_stock;
    let z = params.adjust_cost;
    let acts = params.grid.len();
    let dists = build_action_dists(model, s, &params.grid, 1.0, stock)?;

    // Layout: (t, prev, n) with prev 0 = "no previous price", prev k = grid
    // index k−1. Row t reads only row t+1, so one flat buffer suffices.
    let row_len = (acts + 1) * (stock + 1);
    let mut values = vec![0.0; (horizon + 1) * row_len];
    let mut choice = vec![NO_CHOICE; horizon * row_len];
    let mut q = vec![0.0; acts];

    for t in (0..horizon).rev() {
        let (head, tail) = values.split_at_mut((t + 1) * row_len);
        let cur = &mut head[t * row_len..];
        let next = &tail[..row_len];
        for n in 1..=stock {
            // Continuation value after posting action k depends on k (it
            // becomes the next previous-price), hence the per-action lookup.
            for (k, dist) in dists.iter().enumerate() {
                let col = (k + 1) * (stock + 1);
                q[k] = action_value(
                    dist,
                    n,
                    params.unit_cost,
                    params.holding_cost,
                    params.discount,
                    |m| next[col + m],
                );
            }

            // Exact maxima: vmax1 = best raw action value, vmax2 = best over
            // the rest, n1 = how many actions share vmax1 exactly.
            let vmax1 = max_value(&q);
            let mut vmax2 = f64::NEG_INFINITY;
            let mut n1 = 0usize;
            for &v in &q {
                if v == vmax1 {
                    n1 += 1;
                } else if v > vmax2 {
                    vmax2 = v;
                }
            }
            // Tie-broken switch targets: the globally preferred action, plus
            // the preferred action when the global one is excluded.
            let j1 = argmax_largest(&q);
            let mut alt_max = f64::NEG_INFINITY;
            for (k, &v) in q.iter().enumerate() {
                if k != j1 && v > alt_max {
                    alt_max = v;
                }
            }
            let mut jalt = usize::MAX;
            for (k, &v) in q.iter().enumerate() {
                if k != j1 && v >= alt_max - TIE_TOLERANCE {
                    jalt = k;
                }
            }

            // No previous price: first posting is free.
            cur[n] = vmax1;
            choice[t * row_len + n] = j1 as u32;

            for b in 0..acts {
                let stay = q[b];
                // Best achievable by switching away from b.
                let switch_raw = if q[b] == vmax1 && n1 == 1 { vmax2 } else { vmax1 };
                let switch = switch_raw - z;
                let target = if b == j1 { jalt } else { j1 };
                let slot = (b + 1) * (stock + 1) + n;
                cur[slot] = stay.max(switch);
                choice[t * row_len + slot] = if switch > stay + TIE_TOLERANCE {
                    target as u32
                } else if stay > switch + TIE_TOLERANCE {
                    b as u32
                } else if target != usize::MAX
                    && params.grid.as_slice()[target] > params.grid.as_slice()[b]
                {
                    target as u32
                } else {
                    b as u32
                };
            }
        }
    }

    let grid = params.grid.as_slice().to_vec();
    Ok((
        AdjustedValueTable {
            horizon,
            stock,
            grid: grid.clone(),
            data: values,
        },
        AdjustedPolicyTable {
            horizon,
            stock,
            grid,
            choice,
        },
    ))
}

/// Candidate prices that undercut each competitor by `eps`, clamped at zero,
/// deduplicated, ascending. Empty input gives an empty set; callers fall back
/// to the full grid.
pub fn restricted_action_set(prices: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "undercut step must be positive and finite, got {eps}"
        )));
    }
    let mut set: Vec<f64> = prices.iter().map(|p| (p - eps).max(0.0)).collect();
    set.sort_by(|a, b| a.partial_cmp(b).expect("prices are finite"));
    set.dedup();
    Ok(set)
}

/// Write value and policy tables as CSV with header `t,n,a_prev,value,price`.
/// Base-model rows leave `a_prev` empty; rows without a decision (terminal
/// time, empty inventory) leave `price` empty.
pub fn export_tables_csv<W: Write>(
    values: &ValueTable,
    policy: &PolicyTable,
    w: &mut W,
) -> io::Result<()> {
    writeln!(w, "t,n,a_prev,value,price")?;
    for t in 0..=values.horizon() {
        for n in 0..=values.stock() {
            let price = if t < values.horizon() && n > 0 {
                policy
                    .price(t, n)
                    .map(|p| p.to_string())
                    .unwrap_or_default()
            } else {
                String::new()
            };
            writeln!(w, "{t},{n},,{},{price}", values.value(t, n))?;
        }
    }
    Ok(())
}

/// CSV export of the price-change-fee tables; `a_prev` is 0 for "no previous
/// price", otherwise the held price.
pub fn export_adjusted_tables_csv<W: Write>(
    values: &AdjustedValueTable,
    policy: &AdjustedPolicyTable,
    w: &mut W,
) -> io::Result<()> {
    writeln!(w, "t,n,a_prev,value,price")?;
    let grid = values.grid().to_vec();
    for t in 0..=values.horizon() {
        for prev in 0..=grid.len() {
            let prev_idx = if prev == 0 { None } else { Some(prev - 1) };
            let a_prev = prev_idx.map(|k| grid[k].to_string()).unwrap_or_else(|| "0".into());
            for n in 0..=values.stock() {
                let price = if t < values.horizon() && n > 0 {
                    policy
                        .price_at(t, n, prev_idx)
                        .map(|p| p.to_string())
                        .unwrap_or_default()
                } else {
                    String::new()
                };
                writeln!(
                    w,
                    "{t},{n},{a_prev},{},{price}",
                    values.value_at(t, n, prev_idx)
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::FeatureSpec;

    fn ladder() -> Vec<f64> {
        vec![
            5.18, 5.96, 6.31, 8.28, 9.48, 9.88, 10.33, 10.98, 11.67, 13.52,
        ]
    }

    fn retail_model() -> DemandModel {
        DemandModel::new(
            FeatureSpec::standard(),
            vec![-3.89, -0.56, -0.01, 0.07, -0.05],
            10.0,
        )
        .unwrap()
    }

    fn reference_params(stock: usize) -> SolverParams {
        SolverParams::new(
            100,
            stock,
            3.0,
            0.01,
            0.9995,
            PriceGrid::with_step(0.01, 2000).unwrap(),
        )
        .unwrap()
    }

    fn small_params() -> SolverParams {
        SolverParams::new(
            30,
            6,
            3.0,
            0.01,
            0.9995,
            PriceGrid::with_step(0.25, 60).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(PriceGrid::new(vec![]), Err(Error::EmptyActionSet)));
        assert!(PriceGrid::new(vec![1.0, 1.0]).is_err());
        assert!(PriceGrid::new(vec![2.0, 1.0]).is_err());
        let g = PriceGrid::with_step(0.01, 2000).unwrap();
        assert_eq!(g.len(), 2000);
        assert_eq!(g.as_slice()[516], 5.17);
        assert_eq!(g.max_price(), 20.0);
        assert_eq!(g.position_of(5.17), Some(516));
        assert_eq!(g.position_of(5.171), None);
    }

    #[test]
    fn boundary_rows_are_exactly_zero() {
        let s = MarketSituation::new(0.0, ladder());
        let params = small_params();
        let (v, _) = solve_value(&s, &params, &retail_model(), 1.0).unwrap();
        for n in 0..=params.initial_stock {
            assert_eq!(v.value(params.horizon, n), 0.0);
        }
        for t in 0..=params.horizon {
            assert_eq!(v.value(t, 0), 0.0);
        }
    }

    #[test]
    fn reference_value_and_policy_segments() {
        let s = MarketSituation::new(0.0, ladder());
        let params = reference_params(25);
        let (v, policy) = solve_value(&s, &params, &retail_model(), 1.0).unwrap();

        assert!(
            (v.value(0, 25) - 14.329789388875637).abs() < 1e-9,
            "top value {}",
            v.value(0, 25)
        );

        let segments: [(usize, &[(usize, usize, f64)]); 3] = [
            (1, &[(0, 52, 9.47), (52, 88, 8.27), (88, 95, 5.95), (95, 100, 5.17)]),
            (2, &[(0, 67, 8.27), (67, 86, 5.95), (86, 100, 5.17)]),
            (3, &[(0, 38, 8.27), (38, 75, 5.95), (75, 100, 5.17)]),
        ];
        for (n, runs) in segments {
            for &(from, to, price) in runs {
                for t in from..to {
                    assert_eq!(
                        policy.price(t, n),
                        Some(price),
                        "policy at t={t}, n={n}"
                    );
                }
            }
        }

        // One rung of the competitor ladder is never worth matching.
        for (_, _, price) in policy.iter() {
            assert!((price - 6.30).abs() > 1e-9);
        }
    }

    #[test]
    fn heuristic_price_matches_full_policy() {
        let s = MarketSituation::new(0.0, ladder());
        let params = small_params();
        let model = retail_model();
        let (_, policy) = solve_value(&s, &params, &model, 1.0).unwrap();
        for (t, n) in [(0usize, 6usize), (7, 3), (29, 1), (15, 5)] {
            let p = heuristic_price(&s, n, t, &params, &model).unwrap();
            assert_eq!(Some(p), policy.price(t, n), "state ({t},{n})");
        }
    }

    #[test]
    fn heuristic_price_rejects_bad_states() {
        let s = MarketSituation::new(0.0, ladder());
        let params = small_params();
        let model = retail_model();
        assert!(matches!(
            heuristic_price(&s, 1, 30, &params, &model),
            Err(Error::HorizonExhausted { .. })
        ));
        assert!(heuristic_price(&s, 0, 5, &params, &model).is_err());
        assert!(heuristic_price(&s, 7, 5, &params, &model).is_err());
    }

    #[test]
    fn heuristic_price_ignores_irrelevant_extras() {
        let params = small_params();
        let model = retail_model();
        let bare = MarketSituation::new(0.0, ladder());
        let decorated = bare.clone().with_extra("rating", vec![0.9; 10]);
        let a = heuristic_price(&bare, 4, 3, &params, &model).unwrap();
        let b = heuristic_price(&decorated, 4, 3, &params, &model).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_fee_reproduces_base_tables_exactly() {
        let s = MarketSituation::new(0.0, ladder());
        let params = small_params();
        let model = retail_model();
        let (base_v, _) = solve_value(&s, &params, &model, 1.0).unwrap();
        let (adj_v, _) = solve_with_adjustment_cost(&s, &params, &model).unwrap();
        for t in 0..=params.horizon {
            for n in 0..=params.initial_stock {
                let want = base_v.value(t, n);
                assert_eq!(adj_v.value_at(t, n, None), want, "none at ({t},{n})");
                for k in 0..params.grid.len() {
                    assert_eq!(
                        adj_v.value_at(t, n, Some(k)),
                        want,
                        "prev {k} at ({t},{n})"
                    );
                }
            }
        }
    }

    #[test]
    fn prohibitive_fee_freezes_the_first_price() {
        let s = MarketSituation::new(0.0, ladder());
        let params = small_params()
            .with_adjust_cost(10.0 * 15.0 * 6.0)
            .unwrap();
        let model = retail_model();
        let (_, policy) = solve_with_adjustment_cost(&s, &params, &model).unwrap();
        // Whatever price is held, holding it is optimal at every later state.
        for t in 0..params.horizon {
            for n in 1..=params.initial_stock {
                for b in 0..params.grid.len() {
                    assert_eq!(
                        policy.price_at(t, n, Some(b)),
                        Some(params.grid.as_slice()[b]),
                        "state ({t},{n},{b})"
                    );
                }
            }
        }
    }

    #[test]
    fn first_posting_is_free() {
        let s = MarketSituation::new(0.0, ladder());
        let params = small_params().with_adjust_cost(2.0).unwrap();
        let model = retail_model();
        let (adj_v, _) = solve_with_adjustment_cost(&s, &params, &model).unwrap();
        let (base_v, _) = solve_value(&s, &params, &model, 1.0).unwrap();
        // With no held price the fee never applies at the first decision, so
        // the value can only differ through future change fees.
        let top = adj_v.value_at(0, params.initial_stock, None);
        assert!(top <= base_v.value(0, params.initial_stock) + 1e-12);
        let held = adj_v.value_at(0, params.initial_stock, Some(0));
        assert!(held <= top + 1e-12);
    }

    #[test]
    fn longer_horizon_never_hurts_without_carrying_costs() {
        let s = MarketSituation::new(0.0, ladder());
        let mut params = small_params();
        params.holding_cost = 0.0;
        params.discount = 1.0;
        let (v, _) = solve_value(&s, &params, &retail_model(), 1.0).unwrap();
        for n in 0..=params.initial_stock {
            for t in 0..params.horizon {
                assert!(v.value(t, n) >= v.value(t + 1, n) - 1e-12);
            }
        }
    }

    #[test]
    fn undercut_candidates() {
        let set = restricted_action_set(&[5.18, 5.96], 0.01).unwrap();
        assert_eq!(set, vec![5.17, 5.95]);

        let clamped = restricted_action_set(&[0.01, 5.0], 0.01).unwrap();
        assert_eq!(clamped, vec![0.0, 4.99]);

        let ladder_set = restricted_action_set(&ladder(), 0.01).unwrap();
        assert_eq!(ladder_set.len(), 10);
        assert!(ladder_set.contains(&5.17) && ladder_set.contains(&9.47));

        let dup = restricted_action_set(&[5.0, 5.0], 0.01).unwrap();
        assert_eq!(dup, vec![4.99]);

        assert!(restricted_action_set(&[], 0.01).unwrap().is_empty());
        assert!(restricted_action_set(&[5.0], 0.0).is_err());
    }

    #[test]
    fn csv_export_shapes() {
        let s = MarketSituation::new(0.0, ladder());
        let mut params = small_params();
        params.horizon = 3;
        params.initial_stock = 2;
        let model = retail_model();
        let (v, p) = solve_value(&s, &params, &model, 1.0).unwrap();
        let mut buf = Vec::new();
        export_tables_csv(&v, &p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,n,a_prev,value,price"));
        assert_eq!(text.lines().count(), 1 + 4 * 3);
        // Terminal rows carry no price.
        assert!(text.lines().last().unwrap().ends_with(','));

        let (av, ap) = solve_with_adjustment_cost(&s, &params, &model).unwrap();
        let mut buf = Vec::new();
        export_adjusted_tables_csv(&av, &ap, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().count(),
            1 + 4 * (params.grid.len() + 1) * 3
        );
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,0,"));
    }

    #[test]
    fn tie_break_prefers_larger_price() {
        assert_eq!(argmax_largest(&[1.0, 2.0, 2.0 - 5e-13, 1.5]), 2);
        assert_eq!(argmax_largest(&[1.0, 2.0, 2.0 - 5e-12, 1.5]), 1);
        assert_eq!(argmax_largest(&[f64::NEG_INFINITY, -1.0]), 1);
    }
}
