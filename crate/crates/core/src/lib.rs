//! Adaptive structural learning of Deep Belief Networks.
//!
//! Restricted Boltzmann machines that add hidden neurons while their
//! parameters keep moving (Walking Distance) and drop neurons whose output
//! never changes, stacked into a DBN that appends layers while the stack as a
//! whole has not settled. The crate also carries the crack-image data
//! pipeline, checkpoints and the misclassification export used by the `adbn`
//! command-line tool.

pub mod audit;
pub mod dataset;
pub mod dbn;
pub mod error;
pub mod io;
pub mod rbm;
pub mod run;
pub mod structure;

pub use dataset::{LabeledDataset, LabeledSample, PreprocessDescriptor, Structure, SyntheticSpec, TaskShape};
pub use dbn::{DbnModel, EvalReport, HeadConfig, LayerStats, TrainConfig};
pub use error::{Error, Result};
pub use rbm::{CdConfig, CdStats, GradientTriple, RbmParameters};
pub use run::{Checkpoint, RunConfig};
pub use structure::{StructureConfig, WdSnapshot, WdTrace};
