//! Two-stage semi-supervised distillation of a compact inpainting control
//! module, end to end on a procedural shapes benchmark.
//!
//! A frozen toy denoiser backbone is steered by control modules: a larger
//! teacher (trained supervised) and a compact student distilled from it in
//! two stages — a supervised stage combining task, output-distillation, and
//! asymmetric feature losses, then a self-supervised stage driven purely by
//! the teacher. The crate also ships the data generator, flow-matching
//! sampler, evaluation metrics, and the training orchestration for the
//! baseline and ablation variants.

pub mod alignment;
pub mod error;
pub mod flowmatch;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod nn;
pub mod rng;
pub mod synthdata;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
