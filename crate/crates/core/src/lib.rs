//! Post-matching difference-in-differences for staggered-adoption panels.
//!
//! The crate covers the full pipeline: nearest-neighbor matching of treated
//! cohorts to comparison units, the pooled and pairwise matched two-way
//! fixed-effects estimators together with their exact 2x2 decompositions,
//! matching-aware variance estimation, the large-sample weight and bias
//! calculators, a seeded Monte Carlo harness and the NSW/CPS replication
//! pipeline.
//!
//! Numerical code is generic over the scalar type (see [`Scalar`]); the
//! aliases below fix the common `f64` instantiations. The probability-limit
//! weight calculator additionally accepts exact rational arithmetic through
//! [`Field`].

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decomposition;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod integration;
pub mod io;
pub mod matcher;
pub mod panel;
pub mod replication;
pub mod scalar;
pub mod simulation;
mod summation;

pub use error::{Error, Result};
pub use panel::{CohortLabel, CohortShares, CovariateKind, PanelDataset, PeriodSelector};
pub use scalar::{Field, Scalar};

/// Panel with `f64` outcomes and covariates.
pub type Panel = panel::PanelDataset<f64>;
/// Panel with `f32` outcomes and covariates.
pub type Panel32 = panel::PanelDataset<f32>;
/// Match bookkeeping for `f64` panels.
pub type MatchResult = matcher::MatchResult<f64>;
/// Exact-cell matching result for `f64` panels.
pub type CellMatchResult = matcher::CellMatchResult<f64>;
/// Unit weights for `f64` panels.
pub type WeightVector = estimators::WeightVector<f64>;
/// Point estimate and inference summary in `f64`.
pub type EstimateReport = estimators::EstimateReport<f64>;
/// One 2x2 difference-in-differences building block in `f64`.
pub type TwoByTwoComponent = estimators::TwoByTwoComponent<f64>;
/// Matching-aware variance components in `f64`.
pub type VarianceReport = inference::VarianceReport<f64>;
/// Cohort shares in `f64`.
pub type Shares = panel::CohortShares<f64>;
/// Large-sample 2WFE weights in `f64`.
pub type PlimWeights = decomposition::PlimWeights<f64>;
