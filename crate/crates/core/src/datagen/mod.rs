//! Synthetic labeled audio corpora with known strong ground truth.
//!
//! Every clip is a mix of class-specific synthetic events over a low-level
//! noise floor. The manifest keeps the exact event timing for analysis only;
//! training code sees clip-level labels, optionally corrupted.

mod corpus;
mod corrupt;
mod manifest;
mod schema;
mod subsample;

pub use corpus::{generate_clips, generate_corpus, synthesize_clip, CorpusSpec, GeneratedClip};
pub use corrupt::{corrupt_labels, CorruptionSpec};
pub use manifest::{ClipRecord, LabelSet, Manifest, Split, StrongEvent};
pub use schema::{ClassSchema, EventClass, SynthKind};
pub use subsample::{imbalance_subsample, SubsampleReport};
