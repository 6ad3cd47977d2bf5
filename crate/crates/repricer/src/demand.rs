//! Demand side of the engine: market features, sale probability, and
//! sales-count distributions.
//!
//! A market snapshot with `K` competitor offers is collapsed into a short
//! feature vector (rank of our price, gap to the cheapest rival, market size,
//! a shared average price, optionally a time trend and user-defined extras).
//! A logistic regression over those features gives the probability that a
//! single buying request ends in a sale at our price; scaling by the request
//! arrival rate and an interval length gives a Poisson sales intensity, which
//! the solvers consume as a truncated probability mass function.
//!
//! The collapse is what keeps every downstream dynamic program small: state
//! dimension no longer grows with the number of competitors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One market snapshot as seen when choosing our price.
///
/// `extras` carries optional named per-competitor attribute columns
/// (quality tiers, ratings, shipping terms, …). The engine never interprets
/// them; they only enter through [`FeatureId::ExtraReduce`] features.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSituation {
    /// Time the snapshot was taken, in periods.
    pub time: f64,
    /// Current competitor prices, one per active rival offer.
    pub competitor_prices: Vec<f64>,
    /// Optional named per-competitor attribute columns. Each column, when
    /// present, must have one value per competitor price.
    pub extras: BTreeMap<String, Vec<f64>>,
}

impl MarketSituation {
    /// Snapshot with prices only.
    pub fn new(time: f64, competitor_prices: Vec<f64>) -> Self {
        MarketSituation {
            time,
            competitor_prices,
            extras: BTreeMap::new(),
        }
    }

    /// Attach a named extra column (one value per competitor).
    pub fn with_extra(mut self, name: impl Into<String>, values: Vec<f64>) -> Self {
        self.extras.insert(name.into(), values);
        self
    }

    /// Number of competitor offers in the snapshot.
    pub fn competitor_count(&self) -> usize {
        self.competitor_prices.len()
    }
}

/// Reduction applied to an extra offer column to form one regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Min,
    Max,
    Sum,
}

/// One regressor in the demand model.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureId {
    /// Constant 1.
    Intercept,
    /// Rank of our price among all offers: `1 + #{cheaper rivals} + 0.5 ·
    /// #{equal-priced rivals}`. An empty market gives rank 1.
    PriceRank,
    /// Our price minus the cheapest rival price. Undefined without rivals.
    GapToCheapest,
    /// Number of rival offers.
    CompetitorCount,
    /// Average over all offers including ours: `(a + Σ rival prices) / (1 + K)`.
    SharedAverage,
    /// Deterministic time trend `scale · t^exponent`.
    TimePower { scale: f64, exponent: f64 },
    /// User-defined regressor: a reduction over a named extra column.
    /// `Sum` of an empty column is 0; the other reductions need at least one
    /// competitor.
    ExtraReduce { column: String, reduce: Reduce },
}

impl FeatureId {
    /// Stable short name, used in exported coefficient tables.
    pub fn name(&self) -> String {
        match self {
            FeatureId::Intercept => "intercept".into(),
            FeatureId::PriceRank => "price_rank".into(),
            FeatureId::GapToCheapest => "gap_to_cheapest".into(),
            FeatureId::CompetitorCount => "competitor_count".into(),
            FeatureId::SharedAverage => "shared_average".into(),
            FeatureId::TimePower { .. } => "time_power".into(),
            FeatureId::ExtraReduce { column, .. } => format!("extra:{column}"),
        }
    }
}

/// Ordered list of enabled regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub features: Vec<FeatureId>,
}

impl FeatureSpec {
    pub fn new(features: Vec<FeatureId>) -> Self {
        FeatureSpec { features }
    }

    /// The standard five-feature set: intercept, price rank, gap to cheapest,
    /// competitor count, shared average price.
    pub fn standard() -> Self {
        FeatureSpec::new(vec![
            FeatureId::Intercept,
            FeatureId::PriceRank,
            FeatureId::GapToCheapest,
            FeatureId::CompetitorCount,
            FeatureId::SharedAverage,
        ])
    }

    /// Standard set plus a `scale · t^exponent` time trend.
    pub fn with_time_trend(scale: f64, exponent: f64) -> Self {
        let mut spec = FeatureSpec::standard();
        spec.features.push(FeatureId::TimePower { scale, exponent });
        spec
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Rank of price `a` among rival `prices`: 1 plus the number of strictly
/// cheaper rivals plus half the number of equal-priced rivals. With no rivals
/// the rank is 1.
pub fn price_rank(a: f64, prices: &[f64]) -> f64 {
    let cheaper = prices.iter().filter(|&&p| p < a).count() as f64;
    let tied = prices.iter().filter(|&&p| p == a).count() as f64;
    1.0 + cheaper + 0.5 * tied
}

/// Evaluate the enabled regressors for our candidate price `a` in situation
/// `s`.
pub fn build_features(a: f64, s: &MarketSituation, spec: &FeatureSpec) -> Result<Vec<f64>> {
    let prices = &s.competitor_prices;
    let k = prices.len();
    spec.features
        .iter()
        .map(|f| -> Result<f64> {
            Ok(match f {
                FeatureId::Intercept => 1.0,
                FeatureId::PriceRank => price_rank(a, prices),
                FeatureId::GapToCheapest => {
                    let min = prices
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min);
                    if k == 0 {
                        return Err(Error::EmptyMarketFeature(f.name()));
                    }
                    a - min
                }
                FeatureId::CompetitorCount => k as f64,
                FeatureId::SharedAverage => {
                    let sum: f64 = prices.iter().sum();
                    (a + sum) / (1.0 + k as f64)
                }
                FeatureId::TimePower { scale, exponent } => scale * s.time.powf(*exponent),
                FeatureId::ExtraReduce { column, reduce } => {
                    let values = s
                        .extras
                        .get(column)
                        .ok_or_else(|| Error::MissingExtraColumn(column.clone()))?;
                    match reduce {
                        Reduce::Sum => values.iter().sum(),
                        _ if values.is_empty() => {
                            return Err(Error::EmptyMarketFeature(f.name()));
                        }
                        Reduce::Mean => values.iter().sum::<f64>() / values.len() as f64,
                        Reduce::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
                        Reduce::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    }
                }
            })
        })
        .collect()
}

/// Logistic demand model: sale probability per buying request plus the
/// request arrival rate per period.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    spec: FeatureSpec,
    beta: Vec<f64>,
    arrival_rate: f64,
}

impl DemandModel {
    /// Build a model, checking that `beta` matches the feature list and the
    /// arrival rate is a finite non-negative number.
    pub fn new(spec: FeatureSpec, beta: Vec<f64>, arrival_rate: f64) -> Result<Self> {
        if beta.len() != spec.len() {
            return Err(Error::CoefficientMismatch {
                got: beta.len(),
                want: spec.len(),
            });
        }
        if !arrival_rate.is_finite() || arrival_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "arrival rate must be finite and non-negative, got {arrival_rate}"
            )));
        }
        Ok(DemandModel {
            spec,
            beta,
            arrival_rate,
        })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    /// Probability that one buying request converts at our price `a`.
    ///
    /// Computed on the numerically stable branch of the logistic function and
    /// clamped to the open unit interval so downstream logs and odds never hit
    /// exact 0 or 1.
    pub fn sale_probability(&self, a: f64, s: &MarketSituation) -> Result<f64> {
        let x = build_features(a, s, &self.spec)?;
        let z: f64 = x.iter().zip(&self.beta).map(|(xi, bi)| xi * bi).sum();
        Ok(stable_logistic(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
    }

    /// Expected number of sales over an interval of `duration` periods at a
    /// constant price `a` in a frozen situation `s`.
    pub fn sales_intensity(&self, a: f64, s: &MarketSituation, duration: f64) -> Result<f64> {
        Ok(duration * self.arrival_rate * self.sale_probability(a, s)?)
    }
}

/// Logistic sale probability under `model` for price `a` in situation `s`.
pub fn logit_probability(model: &DemandModel, a: f64, s: &MarketSituation) -> Result<f64> {
    model.sale_probability(a, s)
}

/// Expected profit of a single buying request: `(a − unit_cost) · P(sale)`.
pub fn single_period_profit(
    model: &DemandModel,
    a: f64,
    s: &MarketSituation,
    unit_cost: f64,
) -> Result<f64> {
    Ok((a - unit_cost) * model.sale_probability(a, s)?)
}

/// Stable logistic: never forms `exp` of a large positive argument.
fn stable_logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Truncated Poisson sales distribution.
///
/// `mass[i]` is the probability of exactly `i` sales for `i < cap`; `tail`
/// is the probability of `cap` or more. By construction `mass.sum() + tail`
/// is 1 up to rounding, so inventory-capped expectations stay exact: the tail
/// is precisely the probability routed to the sell-out branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesPmf {
    mass: Vec<f64>,
    tail: f64,
}

impl SalesPmf {
    /// Distribution of a Poisson count with the given mean, truncated at
    /// `cap`.
    ///
    /// Large means are handled gracefully: the head underflows toward zero
    /// and the tail absorbs the rest, which is the exact limit behaviour.
    pub fn from_mean(mean: f64, cap: usize) -> Result<Self> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "poisson mean must be finite and non-negative, got {mean}"
            )));
        }
        let mut mass = Vec::with_capacity(cap);
        let mut p = (-mean).exp();
        let mut cdf = 0.0;
        for i in 0..cap {
            mass.push(p);
            cdf += p;
            p *= mean / (i + 1) as f64;
        }
        let tail = (1.0 - cdf).max(0.0);
        Ok(SalesPmf { mass, tail })
    }

    /// Probability of exactly `i` sales (`i < cap`).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Probability of `cap` or more sales.
    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Truncation point.
    pub fn cap(&self) -> usize {
        self.mass.len()
    }

    /// Expected value of `min(count, cap)`.
    pub fn expected_capped(&self) -> f64 {
        let head: f64 = self
            .mass
            .iter()
            .enumerate()
            .map(|(i, p)| i as f64 * p)
            .sum();
        head + self.tail * self.mass.len() as f64
    }
}

/// Draw one Poisson sales count by walking the CDF (exact inversion).
///
/// Means in this engine are small (a handful of expected sales per period),
/// where the walk is both exact and fast. A defensive step limit far out in
/// the tail keeps pathological means from looping unboundedly.
pub fn sample_poisson<R: rand::Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    assert!(mean.is_finite() && mean >= 0.0, "poisson mean must be non-negative");
    if mean == 0.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0u64;
    let limit = (mean + 20.0 * mean.sqrt() + 20.0) as u64;
    while u > cdf && k < limit {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

/// Sales distribution at price `a` over `duration` periods, truncated at
/// `cap` (typically the remaining inventory).
pub fn sales_pmf(
    model: &DemandModel,
    a: f64,
    s: &MarketSituation,
    duration: f64,
    cap: usize,
) -> Result<SalesPmf> {
    SalesPmf::from_mean(model.sales_intensity(a, s, duration)?, cap)
}
