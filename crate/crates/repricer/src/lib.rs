//! Competition-aware dynamic pricing engine.
//!
//! The crate is organized around a single idea: collapse a high-dimensional
//! market snapshot into a handful of regression features, turn those features
//! into a sales-count distribution, and drive finite-horizon dynamic programs
//! with it. Everything else — benchmark strategies with perfect trajectory
//! knowledge, duopoly response solvers, market simulation, demand calibration —
//! is built on that spine.
//!
//! Module map:
//! - [`demand`]: feature construction, logistic sale probability, truncated
//!   Poisson sales distributions.
//! - [`hjb_solver`]: sticky-situation backward induction, the observe-solve-price
//!   heuristic, and the price-adjustment-cost extension.
//! - [`oracle_eval`]: analytic evaluation of informed upper-bound strategies and
//!   non-anticipating heuristics along known competitor trajectories.
//! - [`duopoly`]: optimal response against a reacting competitor with a known
//!   response rule and a fixed reaction delay.
//! - [`market_sim`]: stochastic competitor trajectory generation, heuristic
//!   simulation runs, and heuristic-vs-heuristic self-play.
//! - [`calibration`]: logistic demand fitting from observation logs.
//! - [`config`]: flat sectioned key-value configs, CSV helpers, run manifests.

pub mod calibration;
pub mod config;
pub mod demand;
pub mod duopoly;
pub mod error;
pub mod hjb_solver;
pub mod market_sim;
pub mod oracle_eval;

pub use error::{Error, Result};
