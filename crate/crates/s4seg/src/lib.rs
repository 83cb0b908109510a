//! Semi-supervised adversarial segmentation at desk scale.
//!
//! The crate trains a segmentation generator against a convolutional
//! discriminator on image/mask pairs, combining four generator loss terms
//! (cross-entropy, Dice, feature matching, confidence-gated self-training)
//! with the usual real/fake discriminator objective. A synthetic phantom
//! generator stands in for clinical data so full experiments run on a CPU
//! in minutes, and an experiment harness sweeps labeled/unlabeled ratios
//! and reports IoU/Dice/recall/precision.
//!
//! Module map:
//! - [`datagen`]: phantom synthesis, PNG dataset loading, ratio splits
//! - [`nn`]: minimal deterministic tensor layers (conv, pool, dropout, optimizers)
//! - [`nets`]: the generator backbone interface + reference encoder-decoder,
//!   the discriminator, and checkpoint serialization
//! - [`losses`]: the loss functions and their analytic gradients
//! - [`trainer`]: the alternating adversarial training loop
//! - [`eval`]: segmentation metrics, ratio sweeps, CSV/plot reports
//! - [`cli`]: command-line entry points (`gen-data`, `train`, `eval`, `sweep`)

pub mod cli;
pub mod datagen;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod nn;
pub mod trainer;

pub use datagen::{DatasetSplit, ImageSlice, MaskLabel, PhantomSpec};
pub use losses::{LossWeights, PseudoLabel, SoftPrediction};
pub use trainer::TrainConfig;
