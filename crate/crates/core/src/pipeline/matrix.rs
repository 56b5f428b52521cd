use std::path::Path;

use serde::{Deserialize, Serialize};

use super::features::PooledBank;
use super::student::{train_student, DistillConfig, StudentConfig, StudentRun};
use super::train::{evaluate_model, LabelSource, LogEvent};
use crate::datagen::{imbalance_subsample, Manifest};
use crate::error::{Error, Result};
use crate::labelspace::{SegmentationConfig, SoftLabelStore};
use crate::model::ModelCheckpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Student on the clip-level weak labels only.
    Weak,
    /// Student on annotator soft labels at a fixed resolution.
    Psl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Weak => "weak",
            Method::Psl => "psl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub method: Method,
    pub alpha: f64,
    pub segment_seconds: f64,
    pub seed: u64,
}

impl std::fmt::Display for MatrixCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} n={}s alpha={} seed={}",
            self.method.as_str(),
            self.segment_seconds,
            self.alpha,
            self.seed
        )
    }
}

/// One weak-baseline cell per seed, then every resolution x alpha x seed.
pub fn plan_matrix(clip_seconds: f64, resolutions: &[f64], alphas: &[f64], seeds: &[u64]) -> Vec<MatrixCell> {
    let mut cells: Vec<MatrixCell> = seeds
        .iter()
        .map(|&seed| MatrixCell {
            method: Method::Weak,
            alpha: 0.0,
            segment_seconds: clip_seconds,
            seed,
        })
        .collect();
    for &n in resolutions {
        for &alpha in alphas {
            for &seed in seeds {
                cells.push(MatrixCell {
                    method: Method::Psl,
                    alpha,
                    segment_seconds: n,
                    seed,
                });
            }
        }
    }
    cells
}

/// A row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub alpha: f64,
    pub segment_seconds: f64,
    pub seed: u64,
    pub map: f64,
    pub dprime: f64,
    pub map_at_3: f64,
    pub lwlrap: f64,
}

#[derive(Debug, Clone)]
pub struct MatrixInputs<'a> {
    /// Full (corrupted) train split; each seed draws its own student subset.
    pub train: &'a Manifest,
    pub valid: &'a Manifest,
    /// Scored against the original labels.
    pub eval: &'a Manifest,
    /// One store per PSL resolution.
    pub stores: &'a [SoftLabelStore],
    /// One bank per resolution in use, covering train, valid and eval clips.
    pub features: &'a [PooledBank],
    pub student: StudentConfig,
    /// Per-class cap for the student subset; `None` trains on all of `train`.
    pub subset_cap: Option<usize>,
    pub config_hash: String,
}

impl MatrixInputs<'_> {
    fn bank(&self, n: f64) -> Result<&PooledBank> {
        self.features
            .iter()
            .find(|b| b.segment_seconds() == n)
            .ok_or_else(|| Error::Missing(format!("features at {n} s")))
    }

    fn store(&self, n: f64) -> Result<&SoftLabelStore> {
        self.stores
            .iter()
            .find(|s| s.segment_seconds() == n)
            .ok_or_else(|| Error::Missing(format!("soft labels at {n} s")))
    }

    /// The clips a given seed's student trains on.
    pub fn student_train(&self, seed: u64) -> Result<Manifest> {
        match self.subset_cap {
            Some(cap) => Ok(imbalance_subsample(self.train, cap, seed)?.0),
            None => Ok(self.train.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: MatrixCell,
    pub row: ResultRow,
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<LogEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub cell: MatrixCell,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOutcome {
    pub results: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

impl MatrixOutcome {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.results.iter().map(|r| r.row.clone()).collect()
    }
}

pub fn run_cell(cell: &MatrixCell, inputs: &MatrixInputs) -> Result<CellResult> {
    let n = cell.segment_seconds;
    let features = inputs.bank(n)?;
    let store = match cell.method {
        Method::Psl if cell.alpha > 0.0 => Some(inputs.store(n)?),
        _ => None,
    };
    if cell.method == Method::Weak && cell.alpha != 0.0 {
        return Err(Error::config("alpha", "the weak baseline has no soft labels; alpha must be 0"));
    }
    let train = inputs.student_train(cell.seed)?;
    let outcome = train_student(&StudentRun {
        train: &train,
        valid: inputs.valid,
        store,
        distill: DistillConfig::new(cell.alpha)?,
        segmentation: SegmentationConfig::new(n)?,
        features,
        config: inputs.student.clone(),
        seed: cell.seed,
        discard_weak_labels: cell.alpha == 1.0,
        init: None,
        config_hash: inputs.config_hash.clone(),
    })?;
    let model = outcome.checkpoint.model()?;
    let report = evaluate_model(&model, inputs.eval, features, LabelSource::Original)?;
    Ok(CellResult {
        cell: cell.clone(),
        row: ResultRow {
            method: cell.method.as_str().to_string(),
            alpha: cell.alpha,
            segment_seconds: n,
            seed: cell.seed,
            map: report.map,
            dprime: report.dprime,
            map_at_3: report.map_at_3,
            lwlrap: report.lwlrap,
        },
        checkpoint: outcome.checkpoint,
        log: outcome.log,
    })
}

/// Runs every cell in order. A failing cell is recorded and the rest still run.
pub fn run_experiment_matrix(cells: &[MatrixCell], inputs: &MatrixInputs) -> MatrixOutcome {
    let mut out = MatrixOutcome::default();
    for cell in cells {
        match run_cell(cell, inputs) {
            Ok(r) => {
                log::info!("{cell}: mAP {:.4}", r.row.map);
                out.results.push(r);
            }
            Err(e) => {
                log::error!("{cell}: {e}");
                out.failures.push(CellFailure {
                    cell: cell.clone(),
                    message: e.to_string(),
                });
            }
        }
    }
    out
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(format!("results row: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(["method", "alpha", "segment_seconds", "seed", "map", "dprime", "map_at_3", "lwlrap"])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, results_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format("results", path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format("results", path, e.to_string())))
        .collect()
}

/// Median over seeds of the `map` column for one (method, alpha, n) group.
pub fn median_map(rows: &[ResultRow], method: Method, alpha: f64, segment_seconds: f64) -> Option<f64> {
    let mut v: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method.as_str() && r.alpha == alpha && r.segment_seconds == segment_seconds)
        .map(|r| r.map)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
