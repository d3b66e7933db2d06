//! Mahalanobis metric learning by maximizing Lipschitz margin ratios.
//!
//! The learned object is a PSD matrix `M` defining the squared distance
//! `(x - y)^T M (x - y)`. It is fitted with a consensus ADMM scheme
//! ([`admm`]) and used for 1-NN or Lipschitz-extension prediction
//! ([`classifier`]). [`metric`] holds the margin/diameter diagnostics and
//! [`bounds`] evaluates the fat-shattering generalization bound.

pub mod admm;
pub mod bounds;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod json;
pub mod linalg;
pub mod metric;
pub mod oracle;

pub use dataset::{LabeledDataset, SplitPlan};
pub use error::{Error, Result};
pub use metric::{DistanceForm, MarginReport, MetricMatrix};
