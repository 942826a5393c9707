//! Desk-scale laboratory for influence-guided unlearning.
//!
//! The pieces fit together as a pipeline:
//!
//! 1. [`synth`] generates labeled Gaussian mixtures and Markov-chain corpora
//!    with deterministic seeds, and carves forget/retain/test splits.
//! 2. [`model`] owns the frozen feature extractor and the convex softmax
//!    classifier head, with closed-form gradients, Hessians, and a
//!    deterministic full-batch trainer.
//! 3. [`influence`] scores forget samples by inverse-Hessian influence and
//!    turns the scores into sampling weights; a leave-one-out retraining
//!    oracle validates the scores.
//! 4. [`unlearn`] runs the unlearning methods (influence-weighted ascent,
//!    gradient ascent, random labeling, preference-style reweighting, a
//!    one-step Newton removal, and the retrain-from-scratch reference).
//! 5. [`metrics`] evaluates accuracy, membership inference, output-distribution
//!    distance, and KL against analytic references.
//! 6. [`divergence`] replays single-sample logistic updates and checks the
//!    weighted-norm decomposition with eigenvalue sandwich bounds.
//! 7. [`markov`] is the end-to-end sequence case study with an analytic
//!    retrained reference.
//!
//! Everything is `f64`, full-batch, and keyed by explicit RNG seeds; repeated
//! runs with the same inputs produce identical bytes on disk.

pub mod divergence;
pub mod error;
pub mod influence;
pub mod linalg;
pub mod markov;
pub mod metrics;
pub mod model;
pub mod stats;
pub mod synth;
pub mod unlearn;

pub use error::{Error, Result};
