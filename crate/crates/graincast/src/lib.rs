//! Bayesian hierarchical modeling of crop-yield growth under a changing
//! climate.
//!
//! The library fits an autoregressive growth model with exogenous
//! temperature regressors to panels of annual yield log-returns, using a
//! likelihood-annealed sequential Monte Carlo sampler. On top of the fitted
//! posterior it provides marginal-likelihood model comparison, forward
//! country selection, one-step probabilistic forecasting with
//! Value-at-Risk / Expected-Shortfall tail metrics, leave-future-out
//! cross-validation scoring, prediction-interval calibration, and
//! multi-decade climate-scenario projection with uncertainty decomposition.
//!
//! Module map:
//! - [`panel`]: data ingestion, derived regressors, volatility screening,
//!   panel alignment.
//! - [`model`]: model variants, priors, likelihoods, prior sampling, and
//!   forward simulation.
//! - [`smc`]: the annealed SMC engine and its diagnostics.
//! - [`selection`]: Bayes factors and forward country selection.
//! - [`forecast`]: posterior predictive ensembles, intervals, calibration,
//!   LFO-CV, VaR/ES, and backtesting.
//! - [`scenario`]: climate-scenario projection and uncertainty bands.
//! - [`oracle`]: closed-form ground truths used by the verification suite.
//! - [`config`] / [`cli`]: reproducible batch runs behind the `graincast`
//!   binary.
//!
//! Determinism: every random quantity derives from one master seed via
//! [`seedtree`]; results are bit-identical across runs and thread counts.

pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod forecast;
pub mod mat;
pub mod model;
pub mod oracle;
pub mod panel;
pub mod scenario;
pub mod seedtree;
pub mod selection;
pub mod smc;

pub use error::{Error, Result};
