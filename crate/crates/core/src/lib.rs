//! Single-image morphing attack detection (S-MAD).
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`dataset`] loads a CSV manifest, normalises faces to the canonical
//!   180×240 grayscale raster and produces stratified train/test splits.
//! * [`features`] implements the fourteen feature methods (intensity, DFT,
//!   DCT2, ELA, SRM, SVD, uniform LBP variants, BSIF variants, HOG). Each
//!   returns a visualisable [`FeatureMap`] and/or a flat [`FeatureVector`].
//! * [`classifier`] is a seeded random forest over feature vectors.
//! * [`metrics`] computes APCER, BPCER, DET curves, EER and BPCER10/20.
//! * [`protocol`] runs the leave-one-morph-tool-out experiment.
//! * [`synth`] generates the synthetic face-like corpus used by tests,
//!   benchmarks and smoke runs.

pub mod classifier;
pub mod dataset;
mod error;
pub mod features;
pub mod metrics;
pub mod protocol;
pub mod synth;

pub use classifier::{ForestModel, ForestParams, Score, TrainingSet};
pub use dataset::{AlignedFace, DatasetManifest, Label, SampleRecord, SplitPair};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureMap, FeatureMethodId, FeatureVector};
pub use metrics::{DetCurve, MetricsReport, ScoreSet};
pub use protocol::{LooPlan, LooReport, RunConfig};

/// Canonical face width in pixels.
pub const FACE_WIDTH: u32 = 180;
/// Canonical face height in pixels.
pub const FACE_HEIGHT: u32 = 240;
