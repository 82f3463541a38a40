//! Tree-guided sparse MLP for tabular data.
//!
//! A boosted tree ensemble is fitted first; how often each feature sits on
//! a sample's decision paths becomes a per-sample gate on the feature tokens
//! of a gated-MLP network whose hidden and input widths are pruned during
//! training.

pub mod data;
pub mod ensemble;
pub mod gbdt;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod synthetic;
pub mod tensorize;
