//! Covariance estimation for high-dimensional return panels under a latent
//! factor model with a block-diagonal idiosyncratic part.
//!
//! The pipeline is: [`factor::fit_factors`] for the common component and the
//! orthogonal complement, then either thresholding ([`threshold`]) or
//! clustering ([`cluster`]) followed by block shrinkage ([`shrinkage`]).
//! [`estimator`] ties the steps together; [`simulation`] and [`evaluation`]
//! provide synthetic data and performance measures.

pub mod cluster;
pub mod cv;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod factor;
pub mod linalg;
pub mod panel;
pub mod report;
pub mod seed;
pub mod shrinkage;
pub mod simulation;
pub mod threshold;

pub use error::{Error, Result};
pub use estimator::{compare, estimate, estimate_with_fit, Comparison, CovarianceEstimate, EstimatorConfig, Method};
pub use factor::{fit_factors, FactorConfig, FactorFit, KPolicy};
pub use linalg::{Matrix, Vector};
pub use panel::{ClassificationMap, MarketCapPanel, ReturnPanel};
pub use report::Report;
