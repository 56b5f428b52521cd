//! End-to-end pseudo strong labeling: annotator training, fixed-resolution
//! relabeling, student training and clip-level inference.

mod annotator;
mod audio;
mod features;
mod matrix;
mod relabel;
mod student;
mod train;
mod transfer;

pub use annotator::{train_annotator, AnnotatorConfig, AnnotatorRun, TrainOutcome};
pub use audio::{AudioSet, ClipError};
pub use features::{clip_segments, infer_clip, infer_pooled, mean_probs, PooledBank, PowerBank};
pub use matrix::{
    median_map, plan_matrix, read_results_csv, results_csv, run_cell, run_experiment_matrix, write_results_csv,
    CellFailure, CellResult, MatrixCell, MatrixInputs, MatrixOutcome, Method, ResultRow,
};
pub use relabel::{relabel, relabel_pooled};
pub use student::{train_student, DistillConfig, StudentConfig, StudentRun};
pub use train::{eval_batch, evaluate_model, score_clips, write_log, LabelSource, LogEvent};
pub use transfer::{transfer, TransferRun};
