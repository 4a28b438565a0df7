//! Compiler passes and a deterministic execution model for GPU dynamic
//! parallelism: thresholding, coarsening and launch aggregation over a
//! small CUDA-like kernel language.

pub mod lang;
pub mod analysis;
pub mod sim;
pub mod passes;
pub mod pipeline;
pub mod bench;
