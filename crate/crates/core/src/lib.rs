//! Ordered sparse autoencoder laboratory.
//!
//! * [`synthgen`]: ground-truth dictionaries, Zipf-ordered sparse codes, identifiability certificates
//! * [`sae`]: forward pass, prefix objectives (vanilla, Matryoshka, nested dropout), gradients
//! * [`trainer`]: Adam training with k-warmup and unit sweeping
//! * [`checkpoint`], [`matfile`]: binary persistence
//! * [`metrics`]: Hungarian matching, stability, orderedness, FIFR error
//! * [`stitching`]: latent stitching between dictionary sizes
//! * [`harness`]: presets, multi-seed experiments, prefix curves, reports

pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod matfile;
pub mod metrics;
pub mod rng;
pub mod sae;
pub mod stitching;
pub mod synthgen;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SweepState};
pub use error::{OsaeError, Result};
pub use metrics::{hungarian, ord, stab, Assignment, MetricsReport};
pub use sae::{Activation, LossKind, LossSpec, PrefixDistribution, SaeModel};
pub use synthgen::{CodeMatrix, Dictionary, SupportPrior};
pub use trainer::{train, TrainConfig, TrainOutcome};
