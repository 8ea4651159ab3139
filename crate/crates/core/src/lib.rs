//! Spatially varying motion blur as a low-rank basis of kernels, with
//! Richardson-Lucy deblurring, synthetic dataset generation and evaluation
//! metrics.
//!
//! A [`BlurField`] stores `B` basis kernels and `B` per-pixel mixing maps;
//! the blur applied at pixel `i` is the convex combination
//! `Σ_b m^b_i k^b`. The operator and its adjoint are evaluated with one FFT
//! convolution per basis element (see [`operator`]).

pub mod conv;
pub mod error;
pub mod io;
pub mod metrics;
pub mod operator;
pub mod response;
pub mod rl;
pub mod synth;
pub mod testing;
pub mod types;

pub use error::{Error, Result};
pub use operator::{apply, apply_adjoint, assemble_kernel_at, dense_apply, densify, BlurOperator, DenseKernelField};
pub use types::{
    validate, BlurField, Image, Kernel, KernelBasis, MixingField, RLConfig, ResponseParams,
    SegmentLabels, ValidationReport, Violation,
};
