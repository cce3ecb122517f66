//! Rank-R multilinear convolution filters with separable and
//! reconstruct-then-convolve evaluation, standard and low-rank convolution
//! baselines, CP-ALS kernel factorization, a small deterministic CPU training
//! engine, dataset ingestion, and an exact parameter/MAC cost analyzer.

pub mod matmul;
pub mod oracles;
pub mod scalar;
pub mod tensor;

pub use scalar::Scalar;
pub use tensor::{cp_als, khatri_rao, CpAlsOptions, CpAlsReport, KruskalFactors, ShapeError, Tensor};
