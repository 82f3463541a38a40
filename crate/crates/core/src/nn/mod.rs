//! Minimal dense numeric kernel: matrices, primitive forward/backward rules,
//! the AdamW optimizer and seeded random streams.

pub mod matrix;
pub mod ops;
pub mod optim;
pub mod rng;

pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix, Scalar};
pub use optim::AdamW;
pub use rng::RngStream;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}
