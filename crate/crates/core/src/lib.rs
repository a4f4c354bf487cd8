//! Variance estimation for sums of panel scores under two-way dependence.
//!
//! The crate covers the panel index and its concentration measures, the
//! cluster and kernel estimators (including the conservative
//! heterogeneous-means estimator `HM`), population estimands for a
//! component model, OLS with sandwich inference and a deterministic Monte
//! Carlo harness.

pub mod diagnostics;
pub mod estimators;
pub mod kernel;
pub mod numerics;
pub mod oracle;
pub mod panel;
pub mod regression;
pub mod simulation;

pub use estimators::{EstimatorChoice, Method, ScoreMatrix, VarianceEstimate};
pub use kernel::{KernelKind, KernelSpec};
pub use numerics::SymMatrix;
pub use panel::PanelIndex;
