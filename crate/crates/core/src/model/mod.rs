//! A small multi-label tagger with hand-written backpropagation.
//!
//! Architecture: time-mean of the log-mel frames, two ReLU layers and a
//! linear head with elementwise sigmoid. Everything is `f64`.

mod adam;
mod checkpoint;
mod loss;
mod tagger;

pub use adam::{adam_step, poly_decay_lr, AdamState};
pub use checkpoint::{average_checkpoints, ModelCheckpoint, RngState, TopK, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{bce_loss, bce_with_logits, distill_loss, BceOutput};
pub use tagger::{freeze_backbone_reinit_head, sigmoid, ForwardCache, MicroTagger, TaggerShape};
