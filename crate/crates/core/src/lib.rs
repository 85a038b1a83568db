//! Batch toolkit for turning e-commerce review dumps and market data into
//! firm-week panels and running panel regressions on them.
//!
//! The pipeline stages mirror how the data flows:
//!
//! 1. [`ingest`]: parse raw dump files, validate rows, deduplicate, and write
//!    a per-firm clean store.
//! 2. [`sentiment`]: count tendentious words against a two-sided lexicon and
//!    classify each review.
//! 3. [`panel`]: aggregate classified reviews into firm-week rows and compute
//!    week-over-week disagreement and star-dispersion features.
//! 4. [`characteristics`]: weekly market controls (beta, idiosyncratic
//!    volatility, illiquidity, ...) and quarterly fundamentals (surprises,
//!    earnings quality, profitability shocks) expanded to week frequency.
//! 5. [`econometrics`]: static fixed-effects and dynamic first-difference GMM
//!    estimators with firm-clustered inference, plus table runners.
//! 6. [`synth`]: seeded synthetic data generators and Monte Carlo harnesses
//!    used to validate the estimators end to end.

pub mod characteristics;
pub mod date;
pub mod econometrics;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod panel;
pub mod sentiment;
pub mod synth;

pub use error::{Error, Result};
