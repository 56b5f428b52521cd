use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use psl_core::config::{content_hash, sha256_hex, RunConfig};
use psl_core::datagen::{corrupt_labels, generate_corpus, ClassSchema, CorpusSpec, Manifest, Split};
use psl_core::dsp::MelExtractor;
use psl_core::labelspace::SoftLabelStore;
use psl_core::metrics::{self, MetricsReport};
use psl_core::model::ModelCheckpoint;
use psl_core::pipeline::*;
use psl_core::{Error, Result};
use serde::Deserialize;
use serde_json::json;

use crate::run_dir::{is_nonempty_dir, write_atomic, Freshness, RunDirectory, Stamp};
use crate::{Cli, Command};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Missing(_) | Error::HashMismatch { .. } => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn fingerprint<T: serde::Serialize>(value: &T) -> Result<String> {
    content_hash(value)
}

struct Corpus {
    stamp: Stamp,
    dir: PathBuf,
    all: Manifest,
    train: Manifest,
    valid: Manifest,
    eval: Manifest,
}

impl Corpus {
    fn audio_sha(&self) -> &str {
        self.stamp.extra.get("audio_sha256").and_then(|v| v.as_str()).unwrap_or_default()
    }
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    dir: RunDirectory,
    force: bool,
    dry_run: bool,
}

pub fn run(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) if !path.exists() => return Err(Failure::Usage(format!("config file {} does not exist", path.display()))),
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.run_dir {
        cfg.paths.run_dir = dir.clone();
    }
    cfg.validate()?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let ctx = Ctx {
        hash: cfg.hash()?,
        dir: RunDirectory::new(cfg.paths.run_dir.clone()),
        cfg,
        force: cli.force,
        dry_run: cli.dry_run,
    };
    match cli.command {
        Command::Gen => ctx.gen(),
        Command::TrainAnnotator => ctx.train_annotator(),
        Command::Relabel { resolution } => ctx.relabel(resolution),
        Command::TrainStudent { resolution, alpha, weak } => ctx.train_student(resolution, alpha, weak),
        Command::Eval {
            checkpoint,
            scores,
            resolution,
        } => ctx.eval(checkpoint, scores, resolution),
        Command::Analyze { resolution } => ctx.analyze(resolution),
        Command::Transfer { source, resolution } => ctx.transfer(&source, resolution),
        Command::Matrix => ctx.matrix(),
    }
}

impl Ctx {
    fn stamp(&self, stage: &str, fingerprint: &str, extra: serde_json::Value) -> Stamp {
        Stamp {
            stage: stage.into(),
            fingerprint: fingerprint.into(),
            config_hash: self.hash.clone(),
            extra: extra.as_object().cloned().unwrap_or_default(),
        }
    }

    /// Whether `artifact` has to be (re)built. A current artifact is left alone
    /// unless `--force`; one from another configuration needs `--force`.
    fn should_build(&self, artifact: &Path, fp: &str) -> CmdResult<bool> {
        match self.dir.freshness(artifact, fp)? {
            Freshness::Missing => Ok(true),
            _ if self.force => Ok(true),
            Freshness::Current(_) => {
                println!("{} is up to date; nothing to do", artifact.display());
                Ok(false)
            }
            Freshness::Stale(_) => Err(Failure::Usage(format!(
                "{} was produced by a different configuration; pass --force to replace it",
                artifact.display()
            ))),
        }
    }

    fn save_config(&self) -> Result<()> {
        let text = self.cfg.to_toml_string()?;
        let path = self.dir.config_copy();
        write_atomic(&path, |tmp| fs::write(tmp, &text).map_err(|e| Error::io(tmp, e)))
    }

    fn clip_seconds(&self) -> f64 {
        self.cfg.corpus.clip_seconds
    }

    fn gen_fp(&self) -> Result<String> {
        fingerprint(&("gen", &self.cfg.corpus, &self.cfg.corruption))
    }

    fn annotator_fp(&self) -> Result<String> {
        fingerprint(&(
            "annotator",
            self.gen_fp()?,
            &self.cfg.features,
            &self.cfg.annotator,
            self.cfg.model.hidden,
            self.cfg.seed,
        ))
    }

    fn relabel_fp(&self, n: f64) -> Result<String> {
        fingerprint(&("relabel", self.annotator_fp()?, n))
    }

    fn student_fp(&self, cell: &MatrixCell) -> Result<String> {
        let store = match cell.method {
            Method::Psl if cell.alpha > 0.0 => Some(self.relabel_fp(cell.segment_seconds)?),
            _ => None,
        };
        fingerprint(&(
            "student",
            self.gen_fp()?,
            &self.cfg.features,
            &self.cfg.student,
            self.cfg.model.hidden,
            self.cfg.psl.subset_cap,
            store,
            cell.method.as_str(),
            cell.alpha,
            cell.segment_seconds,
            cell.seed,
        ))
    }

    fn target_fp(&self) -> Result<String> {
        fingerprint(&("target", &self.cfg.transfer.corpus))
    }

    fn load_corpus(&self) -> Result<Corpus> {
        let path = self.dir.manifest();
        let stamp = self.dir.require(&path, &self.gen_fp()?, "gen")?;
        self.read_corpus(stamp, &self.dir.corpus_dir(), self.cfg.corpus.n_classes)
    }

    fn read_corpus(&self, stamp: Stamp, dir: &Path, n_classes: usize) -> Result<Corpus> {
        let all = Manifest::read_jsonl(&dir.join("manifest.jsonl"), n_classes)?;
        Ok(Corpus {
            stamp,
            dir: dir.to_path_buf(),
            train: all.split(Split::Train),
            valid: all.split(Split::Valid),
            eval: all.split(Split::Eval),
            all,
        })
    }

    fn load_audio(&self, corpus: &Corpus) -> AudioSet {
        let (audio, errors) = AudioSet::load(&corpus.all, &corpus.dir);
        for e in &errors {
            warn!("clip {}: {}", e.clip_id, e.message);
        }
        audio
    }

    /// Pooled features for every clip of `corpus`, cached on disk under a key
    /// derived from the audio hash, the front-end config and `n`.
    fn bank(&self, corpus: &Corpus, n: f64, audio: &mut Option<AudioSet>) -> Result<PooledBank> {
        let key = fingerprint(&("features", corpus.audio_sha(), &self.cfg.features, n))?;
        let path = self.dir.features(&key[..32]);
        if path.exists() {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            return PooledBank::from_bytes(&bytes, &path);
        }
        let audio = audio.get_or_insert_with(|| self.load_audio(corpus));
        let extractor = MelExtractor::new(&self.cfg.features)?;
        info!("extracting features at {n} s for {} clips", corpus.all.len());
        let (bank, errors) = PooledBank::build(&corpus.all, audio, &extractor, n);
        if errors.is_empty() {
            write_atomic(&path, |tmp| fs::write(tmp, bank.to_bytes()).map_err(|e| Error::io(tmp, e)))?;
        } else {
            for e in &errors {
                warn!("clip {}: {}", e.clip_id, e.message);
            }
        }
        Ok(bank)
    }

    fn load_store(&self, n: f64) -> Result<SoftLabelStore> {
        let path = self.dir.store(n);
        self.dir.require(&path, &self.relabel_fp(n)?, "relabel")?;
        SoftLabelStore::read(&path)
    }

    fn write_checkpoint(&self, path: &Path, ckpt: &ModelCheckpoint, stamp: &Stamp) -> Result<()> {
        write_atomic(path, |tmp| ckpt.write(tmp))?;
        self.dir.write_stamp(path, stamp)
    }

    fn write_json(&self, path: &Path, value: &serde_json::Value) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(value)?;
        write_atomic(path, |tmp| fs::write(tmp, &bytes).map_err(|e| Error::io(tmp, e)))
    }

    fn write_log(&self, name: &str, events: &[LogEvent]) -> Result<()> {
        write_atomic(&self.dir.log(name), |tmp| write_log(events, tmp))
    }

    fn write_clip_errors(&self, name: &str, errors: &[ClipError]) -> Result<()> {
        let mut text = String::new();
        for e in errors {
            text.push_str(&serde_json::to_string(&json!({"clip_id": e.clip_id, "error": e.message}))?);
            text.push('\n');
        }
        write_atomic(&self.dir.log(name), |tmp| fs::write(tmp, &text).map_err(|e| Error::io(tmp, e)))
    }

    // ------------------------------------------------------------ gen

    /// Writes a corpus and its manifest into `dir`; returns the audio hash.
    fn write_corpus(&self, spec: &CorpusSpec, corruption: Option<&psl_core::datagen::CorruptionSpec>, dir: &Path) -> Result<String> {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let schema = ClassSchema::standard(spec.n_classes, spec.sample_rate_hz, spec.schema_variant)?;
        let clean = generate_corpus(spec, &schema, dir)?;
        if let Some(c) = corruption {
            let corrupted = corrupt_labels(&clean, c)?;
            let path = dir.join("manifest.jsonl");
            write_atomic(&path, |tmp| corrupted.write_jsonl(tmp))?;
        }
        let mut digests = String::new();
        for clip in &clean.clips {
            let path = dir.join(&clip.audio_path);
            digests.push_str(&sha256_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?));
        }
        Ok(sha256_hex(digests.as_bytes()))
    }

    fn gen(&self) -> CmdResult {
        let out = self.dir.corpus_dir();
        let manifest = self.dir.manifest();
        let fp = self.gen_fp()?;
        if self.dry_run {
            println!(
                "would write {} clips of {} s at {} Hz to {}",
                self.cfg.corpus.n_clips,
                self.cfg.corpus.clip_seconds,
                self.cfg.corpus.sample_rate_hz,
                out.display()
            );
            return Ok(());
        }
        if !self.force {
            if let Freshness::Current(_) = self.dir.freshness(&manifest, &fp)? {
                println!("corpus at {} is up to date; nothing to do", out.display());
                return Ok(());
            }
            if is_nonempty_dir(&out) {
                return Err(Failure::Usage(format!("{} is not empty; pass --force to overwrite it", out.display())));
            }
        }
        self.save_config()?;
        let audio_sha = self.write_corpus(&self.cfg.corpus, Some(&self.cfg.corruption), &out)?;
        self.dir
            .write_stamp(&manifest, &self.stamp("gen", &fp, json!({"audio_sha256": audio_sha})))?;
        println!("wrote {} clips to {}", self.cfg.corpus.n_clips, out.display());
        Ok(())
    }

    // ------------------------------------------------------------ annotator

    fn train_annotator(&self) -> CmdResult {
        let artifact = self.dir.annotator();
        let fp = self.annotator_fp()?;
        if self.dry_run {
            println!(
                "would train the annotator for {} steps into {}",
                self.cfg.annotator.steps,
                artifact.display()
            );
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        if !self.should_build(&artifact, &fp)? {
            return Ok(());
        }
        self.save_config()?;
        let audio = self.load_audio(&corpus);
        let out = train_annotator(&AnnotatorRun {
            train: &corpus.train,
            valid: &corpus.valid,
            audio: &audio,
            mel: self.cfg.features.clone(),
            segmentation: psl_core::labelspace::SegmentationConfig::new(self.clip_seconds())?,
            config: self.cfg.annotator_config(),
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
        })?;
        self.write_log("annotator", &out.log)?;
        self.write_checkpoint(&artifact, &out.checkpoint, &self.stamp("train-annotator", &fp, json!({"corpus": corpus.stamp.fingerprint})))?;
        println!(
            "annotator validation mAP {:.4}, written to {}",
            out.checkpoint.validation_map,
            artifact.display()
        );
        Ok(())
    }

    // ------------------------------------------------------------ relabel

    fn relabel(&self, resolution: Option<f64>) -> CmdResult {
        let resolutions = resolution.map_or_else(|| self.cfg.psl.resolutions.clone(), |n| vec![n]);
        for &n in &resolutions {
            psl_core::labelspace::SegmentationConfig::new(n).map_err(|_| Failure::Usage(format!("--resolution {n} must be positive")))?;
        }
        if self.dry_run {
            for &n in &resolutions {
                println!("would relabel the training split at {n} s into {}", self.dir.store(n).display());
            }
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let annotator_path = self.dir.annotator();
        let ann_fp = self.annotator_fp()?;
        self.dir.require(&annotator_path, &ann_fp, "train-annotator")?;
        let annotator = ModelCheckpoint::read(&annotator_path)?.model()?;
        let mut audio = None;
        for &n in &resolutions {
            let artifact = self.dir.store(n);
            let fp = self.relabel_fp(n)?;
            if !self.should_build(&artifact, &fp)? {
                continue;
            }
            self.save_config()?;
            let bank = self.bank(&corpus, n, &mut audio)?;
            let (store, errors) = relabel_pooled(&annotator, &corpus.train, &bank, &ann_fp[..16])?;
            if !errors.is_empty() {
                warn!("{} clips could not be relabelled at {n} s", errors.len());
                self.write_clip_errors(&format!("relabel_{n}s_errors"), &errors)?;
            }
            write_atomic(&artifact, |tmp| store.write(tmp))?;
            self.dir.write_stamp(&artifact, &self.stamp("relabel", &fp, json!({"annotator": ann_fp})))?;
            println!("{} segments at {n} s written to {}", store.len(), artifact.display());
        }
        Ok(())
    }

    // ------------------------------------------------------------ students

    fn matrix_inputs<'a>(&self, corpus: &'a Corpus, stores: &'a [SoftLabelStore], banks: &'a [PooledBank]) -> MatrixInputs<'a> {
        MatrixInputs {
            train: &corpus.train,
            valid: &corpus.valid,
            eval: &corpus.eval,
            stores,
            features: banks,
            student: self.cfg.student_config(),
            subset_cap: self.cfg.psl.subset_cap,
            config_hash: self.hash.clone(),
        }
    }

    fn student_path(&self, cell: &MatrixCell) -> PathBuf {
        self.dir.student(cell.method.as_str(), cell.alpha, cell.segment_seconds, cell.seed)
    }

    fn save_cell(&self, result: &CellResult, corpus: &Corpus) -> Result<()> {
        let fp = self.student_fp(&result.cell)?;
        let stamp = self.stamp(
            "train-student",
            &fp,
            json!({"corpus": corpus.stamp.fingerprint, "row": result.row}),
        );
        let c = &result.cell;
        self.write_log(
            &format!("{}_a{}_{}s_seed{}", c.method.as_str(), c.alpha, c.segment_seconds, c.seed),
            &result.log,
        )?;
        self.write_checkpoint(&self.student_path(&result.cell), &result.checkpoint, &stamp)
    }

    fn train_student(&self, resolution: Option<f64>, alpha: f64, weak: bool) -> CmdResult {
        let cell = if weak {
            MatrixCell {
                method: Method::Weak,
                alpha: 0.0,
                segment_seconds: self.clip_seconds(),
                seed: self.cfg.seed,
            }
        } else {
            DistillConfig::new(alpha)?;
            MatrixCell {
                method: Method::Psl,
                alpha,
                segment_seconds: resolution.expect("clap requires --resolution without --weak"),
                seed: self.cfg.seed,
            }
        };
        let artifact = self.student_path(&cell);
        if self.dry_run {
            println!("would train {cell} into {}", artifact.display());
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let fp = self.student_fp(&cell)?;
        let stores = match cell.method {
            Method::Psl if cell.alpha > 0.0 => vec![self.load_store(cell.segment_seconds)?],
            _ => vec![],
        };
        if !self.should_build(&artifact, &fp)? {
            return Ok(());
        }
        self.save_config()?;
        let banks = [self.bank(&corpus, cell.segment_seconds, &mut None)?];
        let result = run_cell(&cell, &self.matrix_inputs(&corpus, &stores, &banks))?;
        self.save_cell(&result, &corpus)?;
        println!("{cell}: eval mAP {:.4}, written to {}", result.row.map, artifact.display());
        Ok(())
    }

    // ------------------------------------------------------------ eval

    fn eval(&self, checkpoint: Option<PathBuf>, scores: Option<PathBuf>, resolution: Option<f64>) -> CmdResult {
        let source = checkpoint.as_ref().or(scores.as_ref()).expect("clap requires one source");
        if !source.exists() {
            return Err(Failure::Usage(format!("missing artifact: {}", source.display())));
        }
        let name = source.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let out = self.dir.results(&format!("eval_{name}.json"));
        if self.dry_run {
            println!("would evaluate {} on the eval split into {}", source.display(), out.display());
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let report = match (&checkpoint, &scores) {
            (Some(path), _) => {
                if let Some(stamp) = self.dir.read_stamp(path)? {
                    let corpus_fp = stamp.extra.get("corpus").and_then(|v| v.as_str());
                    if corpus_fp.is_some_and(|fp| fp != corpus.stamp.fingerprint) {
                        return Err(Error::HashMismatch {
                            expected: corpus.stamp.fingerprint.clone(),
                            found: corpus_fp.unwrap_or_default().to_string(),
                        }
                        .into());
                    }
                } else {
                    warn!("{} has no stamp; its provenance is not checked", path.display());
                }
                let model = ModelCheckpoint::read(path)?.model()?;
                let n = resolution.unwrap_or(self.clip_seconds());
                let bank = self.bank(&corpus, n, &mut None)?;
                evaluate_model(&model, &corpus.eval, &bank, LabelSource::Original)?
            }
            (None, Some(path)) => {
                let rows = read_scores(path)?;
                let scores = corpus
                    .eval
                    .clips
                    .iter()
                    .map(|c| {
                        rows.get(&c.clip_id)
                            .cloned()
                            .ok_or_else(|| Failure::Usage(format!("{} has no scores for clip {}", path.display(), c.clip_id)))
                    })
                    .collect::<CmdResult<Vec<_>>>()?;
                MetricsReport::evaluate(&eval_batch(scores, &corpus.eval, LabelSource::Original)?)?
            }
            (None, None) => unreachable!(),
        };
        self.save_config()?;
        let doc = json!({"config_hash": self.hash, "source": source, "report": report});
        self.write_json(&out, &doc)?;
        println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
        Ok(())
    }

    // ------------------------------------------------------------ analyze

    fn analyze(&self, resolution: Option<f64>) -> CmdResult {
        let n = resolution.unwrap_or_else(|| self.cfg.psl.resolutions.iter().copied().fold(f64::INFINITY, f64::min));
        let theta = self.cfg.eval.threshold;
        if self.dry_run {
            println!("would analyse the {n} s soft labels at threshold {theta} into {}", self.dir.analysis("").display());
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let store = self.load_store(n)?;
        self.save_config()?;
        let predicted = metrics::predicted_label_sets(&store, theta)?;
        let union = metrics::label_count_histogram(&store, theta)?;
        let segments = metrics::segment_label_count_histogram(&store, theta)?;
        let weak = metrics::weak_label_count_histogram(&corpus.train);
        let coverage = metrics::label_coverage(&metrics::align_with_predictions(&corpus.train, &predicted, false)?);
        let coverage_original = metrics::label_coverage(&metrics::align_with_predictions(&corpus.train, &predicted, true)?);
        let recovery = metrics::dropped_label_recovery(&corpus.train, &predicted)?;

        let tag = format!("{n}s");
        write_atomic(&self.dir.analysis(&format!("label_counts_{tag}.csv")), |p| union.write_csv(p))?;
        write_atomic(&self.dir.analysis(&format!("label_counts_segments_{tag}.csv")), |p| segments.write_csv(p))?;
        write_atomic(&self.dir.analysis("label_counts_weak.csv"), |p| weak.write_csv(p))?;
        write_atomic(&self.dir.analysis(&format!("coverage_{tag}.csv")), |p| coverage.write_csv(p))?;
        let summary = json!({
            "config_hash": self.hash,
            "segment_seconds": n,
            "threshold": theta,
            "clips": predicted.len(),
            "label_counts": union.counts,
            "label_counts_segments": segments.counts,
            "label_counts_weak": weak.counts,
            "coverage_mean": coverage.mean,
            "coverage_original_mean": coverage_original.mean,
            "recovery": {"dropped": recovery.dropped, "recovered": recovery.recovered, "rate": recovery.rate},
        });
        self.write_json(&self.dir.analysis(&format!("summary_{tag}.json")), &summary)?;
        println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
        Ok(())
    }

    // ------------------------------------------------------------ transfer

    fn target_corpus(&self) -> Result<Corpus> {
        let dir = self.dir.target_dir();
        let manifest = self.dir.target_manifest();
        let fp = self.target_fp()?;
        let stamp = match self.dir.freshness(&manifest, &fp)? {
            Freshness::Current(s) => s,
            _ => {
                info!("generating the target corpus in {}", dir.display());
                let audio_sha = self.write_corpus(&self.cfg.transfer.corpus, None, &dir)?;
                let s = self.stamp("transfer-corpus", &fp, json!({"audio_sha256": audio_sha}));
                self.dir.write_stamp(&manifest, &s)?;
                s
            }
        };
        self.read_corpus(stamp, &dir, self.cfg.transfer.corpus.n_classes)
    }

    fn transfer(&self, source: &Path, resolution: Option<f64>) -> CmdResult {
        if !source.exists() {
            return Err(Failure::Usage(format!("missing artifact: {}", source.display())));
        }
        let n = resolution.unwrap_or(self.cfg.transfer.corpus.clip_seconds);
        let segmentation = psl_core::labelspace::SegmentationConfig::new(n)?;
        let name = source.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let artifact = self.dir.transfer(&name, n, self.cfg.seed);
        if self.dry_run {
            println!("would train a head on the target corpus from {} into {}", source.display(), artifact.display());
            return Ok(());
        }
        let bytes = fs::read(source).map_err(|e| Error::io(source, e))?;
        let fp = fingerprint(&(
            "transfer",
            self.target_fp()?,
            sha256_hex(&bytes),
            &self.cfg.features,
            &self.cfg.transfer.head,
            self.cfg.model.hidden,
            n,
            self.cfg.seed,
        ))?;
        if !self.should_build(&artifact, &fp)? {
            return Ok(());
        }
        self.save_config()?;
        let model = ModelCheckpoint::from_bytes(&bytes, source)?.model()?;
        let target = self.target_corpus()?;
        let bank = self.bank(&target, n, &mut None)?;
        let out = transfer(&TransferRun {
            source: &model,
            train: &target.train,
            valid: &target.valid,
            features: &bank,
            segmentation,
            config: self.cfg.head_config(),
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
        })?;
        let report = evaluate_model(&out.checkpoint.model()?, &target.eval, &bank, LabelSource::Original)?;
        self.write_log(&format!("transfer_{name}_{n}s_seed{}", self.cfg.seed), &out.log)?;
        self.write_checkpoint(&artifact, &out.checkpoint, &self.stamp("transfer", &fp, json!({"corpus": target.stamp.fingerprint})))?;
        let doc = json!({"config_hash": self.hash, "source": source, "segment_seconds": n, "seed": self.cfg.seed, "report": report});
        self.write_json(&self.dir.results(&format!("transfer_{name}_{n}s_seed{}.json", self.cfg.seed)), &doc)?;
        println!("transfer from {}: target mAP {:.4}", source.display(), report.map);
        Ok(())
    }

    // ------------------------------------------------------------ matrix

    fn matrix(&self) -> CmdResult {
        let clip = self.clip_seconds();
        let cells = plan_matrix(clip, &self.cfg.psl.resolutions, &self.cfg.psl.alphas, &self.cfg.model.seeds);
        let artifact = self.dir.results("results.csv");
        if self.dry_run {
            for cell in &cells {
                println!("{cell}");
            }
            println!("{} cells planned; results would go to {}", cells.len(), artifact.display());
            return Ok(());
        }
        let corpus = self.load_corpus()?;
        let needs_store = self.cfg.psl.alphas.iter().any(|&a| a > 0.0);
        let mut stores = Vec::new();
        let mut store_fps = Vec::new();
        if needs_store {
            for &n in &self.cfg.psl.resolutions {
                stores.push(self.load_store(n)?);
                store_fps.push(self.relabel_fp(n)?);
            }
        }
        let fp = fingerprint(&(
            "matrix",
            self.gen_fp()?,
            &store_fps,
            &self.cfg.student,
            self.cfg.model.hidden,
            &self.cfg.psl,
            &self.cfg.model.seeds,
        ))?;
        if !self.should_build(&artifact, &fp)? {
            return Ok(());
        }
        self.save_config()?;
        let mut resolutions = self.cfg.psl.resolutions.clone();
        if !resolutions.contains(&clip) {
            resolutions.push(clip);
        }
        let mut audio = None;
        let banks = resolutions
            .iter()
            .map(|&n| self.bank(&corpus, n, &mut audio))
            .collect::<Result<Vec<_>>>()?;
        let outcome = run_experiment_matrix(&cells, &self.matrix_inputs(&corpus, &stores, &banks));
        for result in &outcome.results {
            self.save_cell(result, &corpus)?;
        }
        let rows = outcome.rows();
        write_atomic(&artifact, |tmp| write_results_csv(&rows, tmp))?;
        self.dir.write_stamp(&artifact, &self.stamp("matrix", &fp, json!({"corpus": corpus.stamp.fingerprint})))?;
        print_medians(&rows, clip, &self.cfg.psl.resolutions, &self.cfg.psl.alphas);
        if !outcome.failures.is_empty() {
            let log = self.dir.log("matrix_failures");
            let mut text = String::new();
            for f in &outcome.failures {
                text.push_str(&serde_json::to_string(f).map_err(Error::from)?);
                text.push('\n');
            }
            write_atomic(&log, |tmp| fs::write(tmp, &text).map_err(|e| Error::io(tmp, e)))?;
            return Err(Failure::Runtime(format!(
                "{} of {} cells failed; see {}",
                outcome.failures.len(),
                cells.len(),
                log.display()
            )));
        }
        println!("{} rows written to {}", rows.len(), artifact.display());
        Ok(())
    }
}

fn print_medians(rows: &[ResultRow], clip: f64, resolutions: &[f64], alphas: &[f64]) {
    if let Some(m) = median_map(rows, Method::Weak, 0.0, clip) {
        println!("weak baseline  median mAP {m:.4}");
    }
    for &n in resolutions {
        for &a in alphas {
            if let Some(m) = median_map(rows, Method::Psl, a, n) {
                println!("PSL-{n}s alpha {a}  median mAP {m:.4}");
            }
        }
    }
}

#[derive(Deserialize)]
struct ScoreRow {
    clip_id: String,
    scores: Vec<f64>,
}

fn read_scores(path: &Path) -> CmdResult<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: ScoreRow = serde_json::from_str(line)
            .map_err(|e| Failure::Usage(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.insert(row.clip_id, row.scores);
    }
    Ok(rows)
}
