//! Wake-word detection engine and evaluation toolkit.
//!
//! The crate covers the full desk-scale pipeline: synthetic corpus generation
//! with exact alignments, log-Mel features and augmentation, HMM topologies
//! and unit graphs, the sequence-discriminative objective with exact
//! gradients, factorized TDNN acoustic models with transfer and
//! teacher-student pretraining, a streaming detector, and operating-point
//! evaluation at a fixed false-positive rate.

pub mod audio;
pub mod augment;
pub mod decoder;
pub mod error;
pub mod features;
pub mod grammar;
pub mod graph;
pub mod lfmmi;
pub mod net;
pub mod manifest;
pub mod numerator;
pub mod eval;
pub mod pipeline;
pub mod pretrain;
pub mod seeds;
pub mod streamnet;
pub mod synth;
pub mod topology;

pub use audio::AudioBuffer;
pub use augment::AugmentSpec;
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use graph::Graph;
pub use lfmmi::{LogProbMatrix, LossResult};
pub use numerator::{AlignmentSpec, NumeratorLattice};
pub use synth::{CorpusSpec, SynthUtterance};
pub use topology::{DatasetKind, HmmTopology};
