//! Possibilistic classifier combination.
//!
//! This crate aggregates the label predictions of an ensemble of pre-trained
//! classifiers using possibility theory. Conditional label distributions are
//! estimated on a validation table, converted to possibility distributions
//! with the Dubois-Prade transform, and fused elementwise with Aczel-Alsina
//! t-norms. The adaptive variant clusters classifiers by statistical
//! dependence and tunes one t-norm parameter per dendrogram node plus a
//! global discounting exponent.
//!
//! The crate also ships the usual comparison aggregators (selection, weighted
//! and exponentially weighted vote, naive Bayes, full Bayes, stacking), a 2-D
//! Gaussian-quadrant benchmark generator with adversary/fault/clone
//! perturbations, and an experiment harness with exact Clopper-Pearson
//! stopping and bootstrap confidence intervals.
//!
//! Data-parallel inner loops (experiment replicates, dissimilarity pairs,
//! grid sweeps) run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential iteration without it; results are identical
//! either way.

pub mod baselines;
pub mod dendrogram;
pub mod ensemble;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod io;
pub mod optim;
pub mod possibility;
pub mod stats;
pub mod synth;

mod par;

pub use error::{Result, SpoccError};
pub use possibility::{LabelSpace, PossibilityDistribution, ProbabilityDistribution, TNormParam};
