//! Pseudo strong labels for weakly labeled audio tagging.
//!
//! A machine annotator is trained on clip-level (weak) labels, then used to
//! relabel every clip with soft labels on a finer fixed time grid. A student
//! trained on those segment-level soft labels replaces the original labels.
//!
//! ```text
//! datagen -> dsp (log-mel) -> labelspace (segments, samplers, augmentation)
//!         -> model (tagger, Adam, checkpoints) -> pipeline (annotate, relabel, distill)
//!         -> metrics (mAP, d', lwlrap, coverage)
//! ```
//!
//! The crate is desk-scale: the tagger is a small MLP over mean-pooled log-mel
//! frames and the corpus is synthetic with known strong ground truth.

pub mod config;
pub mod datagen;
pub mod dsp;
pub mod error;
pub mod labelspace;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;

pub use config::RunConfig;
pub use datagen::{ClassSchema, ClipRecord, CorruptionSpec, EventClass, Manifest, Split, StrongEvent};
pub use dsp::{FeatureSegment, MelConfig, Waveform};
pub use error::{Error, Result};
pub use labelspace::{SegmentRecord, SegmentationConfig, SoftLabelStore};
pub use metrics::{CoverageReport, EvalBatch, LabelCountHistogram, MetricsReport};
pub use model::{AdamState, MicroTagger, ModelCheckpoint};
pub use pipeline::{AnnotatorRun, DistillConfig, StudentRun};
