//! Vision-aware paragraph reweighting for group-relative policy optimization.
//!
//! The crate is organized as the pipeline runs:
//!
//! - [`numerics`]: eigen-decomposition, softmax, cosine, seeded RNG, KTEN tensors
//! - [`geometry`]: raster -> L* -> smoothed gradients -> per-patch structure tensors
//! - [`sguf`]: dual-threshold Union-Find regions, energy gating, hybrid token sampling
//! - [`alignment`]: GQA key expansion and per-token Q-K saliency over critical heads
//! - [`credit`]: paragraph segmentation, pooled saliency, mixed-softmax weights
//! - [`grpo`]: group advantages, clipped surrogate, objective and its gradient
//! - [`harness`]: synthetic tasks, a toy policy, the weighted train step and experiments

pub mod alignment;
pub mod credit;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod grpo;
pub mod harness;
pub mod numerics;
pub mod sguf;

pub use error::{KawhiError, Result};
pub use exec::Execution;
