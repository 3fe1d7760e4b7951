//! asymdistil: a toolkit for asymmetric self-supervised distillation between
//! information-dense and information-sparse views of the same sample.
//!
//! A two-branch joint-embedding model is trained so that the embedding of a
//! degraded ("sparse") view of an image agrees with the embedding of the
//! original ("dense") view. Agreement is scored by either a VICReg or an
//! NT-Xent (SimCLR) objective on top of per-branch MLP expanders. The sparse
//! branch thereby inherits structure it could not easily discover on its own.
//!
//! The crate is organised as:
//!
//! * [`data`] — paired-view datasets: manifest IO, degradations, stochastic
//!   augmentation, a procedural tile generator, and deterministic batching.
//! * [`model`] — small CNN encoders, MLP expanders, the two-branch joint
//!   model, linear probes, and a checksummed checkpoint container.
//! * [`loss`] — VICReg and NT-Xent objectives with analytic gradients.
//! * [`train`] — warmup-cosine schedule, Adam, self-supervised / probe /
//!   supervised training loops, evaluation, and per-run metrics files.
//! * [`analysis`] — layer activation extraction, linear CKA, Grad-CAM, and
//!   a static report renderer.
//! * [`cli`] — the `asymdistil` command-line interface.
//!
//! Everything is CPU-only, f32 in the training path, and deterministic given
//! a seed: reruns of the same config produce byte-identical artifacts.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod loss;
pub mod model;
pub mod rng;
pub mod train;
