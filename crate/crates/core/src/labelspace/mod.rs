//! Data-side half of pseudo strong labeling: fixed-length segmentation,
//! weak-label propagation, the soft-label store, samplers and augmentations.

mod augment;
mod sampler;
mod segment;
mod store;

pub use augment::{
    apply_masks, apply_wave_aug, augment_wave, mixup, mixup_with_lambda, spec_augment, time_shift, SpecAugSpec, WaveAugDraw, WaveAugSpec,
};
pub use sampler::{PseudoBalancedSampler, RandomSampler};
pub use segment::{
    propagate_weak, segment_clip, segment_count, segment_wave, LastChunkPolicy, SegmentLabel, SegmentRecord,
    SegmentSpan, SegmentationConfig,
};
pub(crate) use segment::spans_for;
pub use store::{SoftLabelStore, SoftRow, StoreHeader, STORE_VERSION};
