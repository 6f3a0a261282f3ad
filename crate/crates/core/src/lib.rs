//! Binarized weights with low-bit activations.
//!
//! A dense weight matrix `W` is rotated by a learned Kronecker-structured
//! orthogonal `R = R1 ⊗ R2` and corrected by a low-rank residual `M = A·B`
//! so that the rows of `(W − M)·R` become symmetric and bimodal. The rotated
//! weights are then binarized to one bit with per-channel scale and offset,
//! and inference computes
//!
//! ```text
//! W·x ≈ binary(W − M)R · (Rᵀx) + A·(B·x)
//! ```
//!
//! with a packed 1-bit kernel, optionally on per-token quantized
//! activations.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: dense matrices, Jacobi SVD, polar factors.
//! - [`kronecker`]: `R1 ⊗ R2` rotations and their fast application.
//! - [`gmm`]: the symmetric two-mode mixture loss, EM and gradients.
//! - [`okt`]: EM/majorize-minimize optimization of the rotation.
//! - [`psp`]: proximal low-rank refinement of the residual.
//! - [`binarize`]: sign binarization, packing and error analysis.
//! - [`actquant`]: per-token activation quantization and tail metrics.
//! - [`kernel`]: packed GEMV, end-to-end inference and the benchmark.
//! - [`synth`]: seeded synthetic instances and brute-force oracles.
//! - [`pipeline`]: configuration, file formats, reports and `run_bwla`.

pub mod acceptance;
pub mod actquant;
pub mod binarize;
pub mod error;
pub mod gmm;
pub mod kernel;
pub mod kronecker;
pub mod numerics;
pub mod okt;
pub mod pipeline;
pub mod psp;
pub mod synth;

pub use error::{BwlaError, Result};
pub use numerics::Matrix;
pub use pipeline::{run_bwla, BwlaConfig, RunReport};
