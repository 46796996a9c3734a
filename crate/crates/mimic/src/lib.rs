//! MIMIC (multiple indicators, multiple causes) latent-variable models.
//!
//! A MIMIC model measures a single latent variable through `p` observed
//! indicators and simultaneously regresses it on `k` observed causes:
//!
//! ```text
//! y = lambda * eta + eps,        eps ~ N(0, Theta^2)     (measurement)
//! eta = beta' x + zeta,          zeta ~ N(0, sigma^2)    (structural)
//! ```
//!
//! Substituting the structural part into the measurement part gives the
//! reduced form `y = Pi' x + v` with `Pi = beta lambda'` and
//! `v = lambda zeta + eps`, so the indicators are jointly normal given the
//! causes with covariance `Omega = sigma^2 lambda lambda' + Theta^2`.
//!
//! The crate covers the full workflow:
//!
//! - [`model`]: model wiring, parameter sets and the implied moment structure;
//! - [`estimate`]: maximum-likelihood fitting with an analytic gradient and a
//!   BFGS optimizer ([`optim`]);
//! - [`robust`]: naive, MLM-scaled and MLR-sandwich standard errors;
//! - [`diagnostics`]: AIC/BIC/CFI/RMSEA/SRMR fit indices and Mardia's
//!   multivariate normality test;
//! - [`score`]: per-unit latent scores, a scaled index, rankings and
//!   cross-period comparisons;
//! - [`ekc`]: local polynomial regression with pointwise confidence bands and
//!   the model-implied cubic income trend;
//! - [`sim`]: a synthetic-data generator and Monte Carlo recovery harness;
//! - [`ingest`], [`config`], [`pipeline`], [`report`]: CSV ingestion, TOML
//!   configuration and the artifact-producing pipeline behind the `mimic`
//!   command-line tool.
//!
//! Each major capability has a runnable example under `examples/`; start with
//! `cargo run --example fit_simulated`.

pub mod config;
pub mod diagnostics;
pub mod ekc;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod robust;
pub mod score;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use model::{implied_moments, standardize_loadings, Dataset, ImpliedMoments, ModelSpec, ParameterSet};
pub use estimate::{fit_ml, log_likelihood, residual_cross_product, significance_stars, FitConfig, FitResult, Stars};
pub use robust::{robust_se, SeMethod};
pub use diagnostics::{fit_indices, mardia_test, FitIndices, MardiaResult};
pub use score::{compare_periods, factor_scores, rank_units, scale_index, IndexTable, PeriodComparison};
pub use ekc::{cubic_trend, loess_fit, CurveEstimate, LoessConfig};
pub use sim::{recovery_study, simulate, NoiseDistribution, RecoveryReport, SimConfig};
