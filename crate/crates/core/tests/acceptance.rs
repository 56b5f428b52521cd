//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::metric_oracles as oracle;
use psl_core::config::RunConfig;
use psl_core::datagen::{corrupt_labels, generate_clips, ClassSchema, ClipRecord, CorpusSpec, LabelSet, Manifest, Split};
use psl_core::dsp::{MelConfig, MelExtractor};
use psl_core::labelspace::{propagate_weak, segment_clip, segment_count, SegmentationConfig, SoftLabelStore};
use psl_core::metrics::{self, EvalBatch};
use psl_core::model::{bce_with_logits, distill_loss, MicroTagger, ModelCheckpoint, TaggerShape};
use psl_core::pipeline::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let shape = TaggerShape::new(64, 12, 6);
        let m = MicroTagger::new(shape, seed);
        let x: Vec<Vec<f64>> = (0..4).map(|_| (0..64).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let loss = |m: &MicroTagger| bce_with_logits(&m.forward_pooled(&x).unwrap().logits, &y).unwrap().loss;
        let cache = m.forward_pooled(&x).map_err(|e| e.to_string())?;
        let dz = bce_with_logits(&cache.logits, &y).map_err(|e| e.to_string())?.grad_logits;
        let grad = m.backward(&cache, &dz).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for i in 0..shape.n_params() {
            let (mut plus, mut minus) = (m.clone(), m.clone());
            plus.params_mut()[i] += h;
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max((fd - grad[i]).abs() / denom);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst < 1e-4 && secs < 30.0, format!("max rel err {worst:.2e}, {secs:.1}s"))
}

// ---------------------------------------------------------------- 2

fn metric_oracles() -> Outcome {
    let started = Instant::now();
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc);
    let instances = 600;
    let mut mismatches = Vec::new();
    for i in 0..instances {
        let (s, t) = oracle::random_instance(&mut rng);
        let b = EvalBatch::new(s.clone(), t.clone()).map_err(|e| e.to_string())?;
        for c in 0..b.n_classes() {
            let (cs, ct) = (b.class_scores(c), b.class_truths(c));
            if !close(metrics::average_precision(&cs, &ct), oracle::ap(&cs, &ct)) {
                mismatches.push(format!("ap#{i}"));
            }
        }
        let pairs = [
            ("map", metrics::map_score(&b).ok(), oracle::map(&s, &t)),
            ("dprime", metrics::dprime(&b).ok(), oracle::dprime(&s, &t)),
            ("map@3", metrics::map_at_k(&b, 3).ok(), oracle::map_at_k(&s, &t, 3)),
            ("lwlrap", metrics::lwlrap(&b).ok(), oracle::lwlrap(&s, &t)),
        ];
        for (name, got, want) in pairs {
            if !close(got, want) {
                mismatches.push(format!("{name}#{i}"));
            }
        }
    }
    let d_half = metrics::dprime_from_auc(0.5);
    let d_one = metrics::dprime_from_auc(oracle::series_cdf(1.0));
    let anchors = d_half.abs() <= 1e-6 && (d_one - std::f64::consts::SQRT_2).abs() <= 1e-6;
    let secs = started.elapsed().as_secs_f64();
    ensure(
        mismatches.is_empty() && anchors && secs < 10.0,
        format!(
            "{instances} instances, {} mismatches {:?}, d'(0.5)={d_half:.2e}, d'(Phi(1))={d_one:.9}, {secs:.1}s",
            mismatches.len(),
            mismatches.iter().take(5).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- shared benchmark

struct Corpus {
    all: Manifest,
    train: Manifest,
    valid: Manifest,
    eval: Manifest,
}

impl Corpus {
    fn new(all: Manifest) -> Self {
        Self {
            train: all.split(Split::Train),
            valid: all.split(Split::Valid),
            eval: all.split(Split::Eval),
            all,
        }
    }
}

struct Bench {
    cfg: RunConfig,
    hash: String,
    clean: Manifest,
    audio: AudioSet,
    extractor: MelExtractor,
    corpus: Corpus,
    annotator: MicroTagger,
    banks: Vec<PooledBank>,
    stores: Vec<SoftLabelStore>,
    matrix: MatrixOutcome,
    setup_time: Duration,
    matrix_time: Duration,
}

fn train_ma(cfg: &RunConfig, corpus: &Corpus, audio: &AudioSet, seed: u64, hash: &str) -> psl_core::Result<MicroTagger> {
    let out = train_annotator(&AnnotatorRun {
        train: &corpus.train,
        valid: &corpus.valid,
        audio,
        mel: cfg.features.clone(),
        segmentation: SegmentationConfig::new(cfg.corpus.clip_seconds)?,
        config: cfg.annotator_config(),
        seed,
        config_hash: hash.to_string(),
    })?;
    out.checkpoint.model()
}

fn bank_for(banks: &[PooledBank], n: f64) -> &PooledBank {
    banks.iter().find(|b| b.segment_seconds() == n).expect("bank for resolution")
}

fn store_for(stores: &[SoftLabelStore], n: f64) -> &SoftLabelStore {
    stores.iter().find(|s| s.segment_seconds() == n).expect("store for resolution")
}

impl Bench {
    fn build() -> psl_core::Result<Self> {
        let started = Instant::now();
        let cfg = RunConfig::default();
        cfg.validate()?;
        let hash = cfg.hash()?;
        let schema = ClassSchema::standard(cfg.corpus.n_classes, cfg.corpus.sample_rate_hz, cfg.corpus.schema_variant)?;
        let clips = generate_clips(&cfg.corpus, &schema)?;
        let audio = AudioSet::from_generated(&clips);
        let clean = Manifest::new(cfg.corpus.n_classes, clips.into_iter().map(|c| c.record).collect())?;
        let corpus = Corpus::new(corrupt_labels(&clean, &cfg.corruption)?);
        let extractor = MelExtractor::new(&cfg.features)?;
        let annotator = train_ma(&cfg, &corpus, &audio, cfg.seed, &hash)?;

        let mut resolutions = cfg.psl.resolutions.clone();
        if !resolutions.contains(&cfg.corpus.clip_seconds) {
            resolutions.push(cfg.corpus.clip_seconds);
        }
        let mut banks = Vec::new();
        let mut stores = Vec::new();
        for &n in &resolutions {
            let (bank, errs) = PooledBank::build(&corpus.all, &audio, &extractor, n);
            assert!(errs.is_empty(), "{errs:?}");
            let (store, errs) = relabel_pooled(&annotator, &corpus.train, &bank, "ma")?;
            assert!(errs.is_empty(), "{errs:?}");
            banks.push(bank);
            stores.push(store);
        }
        let setup_time = started.elapsed();

        let started = Instant::now();
        let inputs = MatrixInputs {
            train: &corpus.train,
            valid: &corpus.valid,
            eval: &corpus.eval,
            stores: &stores,
            features: &banks,
            student: cfg.student_config(),
            subset_cap: cfg.psl.subset_cap,
            config_hash: hash.clone(),
        };
        let cells = plan_matrix(cfg.corpus.clip_seconds, &cfg.psl.resolutions, &cfg.psl.alphas, &cfg.model.seeds);
        let matrix = run_experiment_matrix(&cells, &inputs);
        let matrix_time = started.elapsed();
        Ok(Self {
            cfg,
            hash,
            clean,
            audio,
            extractor,
            corpus,
            annotator,
            banks,
            stores,
            matrix,
            setup_time,
            matrix_time,
        })
    }

    fn median(&self, method: Method, alpha: f64, n: f64) -> Option<f64> {
        median_map(&self.matrix.rows(), method, alpha, n)
    }
}

// ---------------------------------------------------------------- 3

fn resolution_ordering(b: &Bench) -> Outcome {
    if !b.matrix.failures.is_empty() {
        return Err(format!("{} matrix cells failed: {:?}", b.matrix.failures.len(), b.matrix.failures));
    }
    let clip = b.cfg.corpus.clip_seconds;
    let weak = b.median(Method::Weak, 0.0, clip).ok_or("no weak rows")?;
    let psl = |n: f64| b.median(Method::Psl, 1.0, n).ok_or(format!("no PSL-{n}s rows"));
    let (p2, p5, p10) = (psl(2.0)?, psl(5.0)?, psl(10.0)?);
    let secs = (b.setup_time + b.matrix_time).as_secs_f64();
    ensure(
        p2 > p5 && p5 > p10 && p10 > weak && p2 - weak >= 0.05 && secs < 900.0,
        format!(
            "median mAP PSL-2s {p2:.4} > PSL-5s {p5:.4} > PSL-10s {p10:.4} > weak {weak:.4}, gap {:.1} pts, {secs:.0}s",
            100.0 * (p2 - weak)
        ),
    )
}

// ---------------------------------------------------------------- 4

fn distill_endpoints() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..50 {
        let (bsz, c) = (rng.random_range(1..6), rng.random_range(1..8));
        let mut fill = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
            (0..bsz).map(|_| (0..c).map(|_| rng.random_range(lo..hi)).collect()).collect()
        };
        let (z, soft, weak) = (fill(-8.0, 8.0), fill(0.0, 1.0), fill(0.0, 1.0));
        let weak: Vec<Vec<f64>> = weak.iter().map(|r| r.iter().map(|v| v.round()).collect()).collect();
        let one = distill_loss(&z, Some(&soft), Some(&weak), 1.0).map_err(|e| e.to_string())?;
        let pure_soft = bce_with_logits(&z, &soft).map_err(|e| e.to_string())?;
        let zero = distill_loss(&z, Some(&soft), Some(&weak), 0.0).map_err(|e| e.to_string())?;
        let pure_weak = bce_with_logits(&z, &weak).map_err(|e| e.to_string())?;
        let bits = |o: &psl_core::model::BceOutput| {
            let mut v = vec![o.loss.to_bits()];
            v.extend(o.grad_logits.iter().flatten().map(|g| g.to_bits()));
            v
        };
        if bits(&one) != bits(&pure_soft) || bits(&zero) != bits(&pure_weak) {
            return Err("endpoint loss differs bitwise".into());
        }
    }
    Ok(())
}

fn distill_ordering(b: &Bench) -> Outcome {
    let endpoints = distill_endpoints();
    let mut ok = endpoints.is_ok() && b.matrix.failures.is_empty();
    let mut parts = Vec::new();
    for &n in &b.cfg.psl.resolutions {
        let m = |a: f64| b.median(Method::Psl, a, n).unwrap_or(f64::NAN);
        let (a1, a05, a0) = (m(1.0), m(0.5), m(0.0));
        ok &= a1 >= a05 && a05 >= a0;
        parts.push(format!("{n}s: {a1:.4} >= {a05:.4} >= {a0:.4}"));
    }
    let endpoint_note = match endpoints {
        Ok(()) => "endpoints bitwise".to_string(),
        Err(e) => e,
    };
    ensure(ok, format!("alpha 1 / 0.5 / 0 medians {}; {endpoint_note}", parts.join(", ")))
}

// ---------------------------------------------------------------- 5

const THETA: f64 = 0.5;
const MIN_RECOVERY: f64 = 0.5;
const MIN_COVERAGE: f64 = 0.6;
const ANALYSIS_RESOLUTION: f64 = 2.0;

fn missing_label_seed(b: &Bench, k: u64) -> Result<(f64, f64), String> {
    let e = |e: psl_core::Error| e.to_string();
    let (corpus, annotator);
    let (train, ma) = if k == 0 {
        (&b.corpus.train, &b.annotator)
    } else {
        let mut corruption = b.cfg.corruption.clone();
        corruption.seed += k;
        corpus = Corpus::new(corrupt_labels(&b.clean, &corruption).map_err(e)?);
        annotator = train_ma(&b.cfg, &corpus, &b.audio, b.cfg.seed + k, &b.hash).map_err(e)?;
        (&corpus.train, &annotator)
    };
    let store = if k == 0 {
        store_for(&b.stores, ANALYSIS_RESOLUTION).clone()
    } else {
        relabel_pooled(ma, train, bank_for(&b.banks, ANALYSIS_RESOLUTION), "ma").map_err(e)?.0
    };
    let predicted = metrics::predicted_label_sets(&store, THETA).map_err(e)?;
    let recovery = metrics::dropped_label_recovery(train, &predicted).map_err(e)?;
    let pairs = metrics::align_with_predictions(train, &predicted, false).map_err(e)?;
    Ok((recovery.rate, metrics::label_coverage(&pairs).mean))
}

fn missing_labels(b: &Bench) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let (rec, cov) = missing_label_seed(b, k)?;
        ok &= rec >= MIN_RECOVERY && cov > MIN_COVERAGE;
        parts.push(format!("seed {k}: recovery {rec:.3} coverage {cov:.3}"));
    }
    ensure(
        ok,
        format!("theta {THETA}, {ANALYSIS_RESOLUTION}s union; {} (need >= {MIN_RECOVERY}, > {MIN_COVERAGE})", parts.join("; ")),
    )
}

// ---------------------------------------------------------------- 6

fn transfer_seed(b: &Bench, target: &Corpus, tbanks: &[PooledBank], seed: u64) -> psl_core::Result<(f64, f64)> {
    let n = ANALYSIS_RESOLUTION;
    let clip = b.cfg.corpus.clip_seconds;
    let student = train_student(&StudentRun {
        train: &b.corpus.train,
        valid: &b.corpus.valid,
        store: Some(store_for(&b.stores, n)),
        distill: DistillConfig::new(1.0)?,
        segmentation: SegmentationConfig::new(n)?,
        features: bank_for(&b.banks, n),
        config: b.cfg.student_config(),
        seed,
        discard_weak_labels: true,
        init: None,
        config_hash: b.hash.clone(),
    })?
    .checkpoint
    .model()?;
    let head = |source: &MicroTagger, res: f64| -> psl_core::Result<f64> {
        let bank = bank_for(tbanks, res);
        let out = transfer(&TransferRun {
            source,
            train: &target.train,
            valid: &target.valid,
            features: bank,
            segmentation: SegmentationConfig::new(res)?,
            config: b.cfg.head_config(),
            seed,
            config_hash: b.hash.clone(),
        })?;
        Ok(evaluate_model(&out.checkpoint.model()?, &target.eval, bank, LabelSource::Original)?.map)
    };
    Ok((head(&student, n)?, head(&b.annotator, clip)?))
}

fn transfer_direction(b: &Bench) -> Outcome {
    let e = |e: psl_core::Error| e.to_string();
    let tc = &b.cfg.transfer.corpus;
    let schema = ClassSchema::standard(tc.n_classes, tc.sample_rate_hz, tc.schema_variant).map_err(e)?;
    let source_schema = ClassSchema::standard(b.cfg.corpus.n_classes, b.cfg.corpus.sample_rate_hz, b.cfg.corpus.schema_variant).map_err(e)?;
    let shared: Vec<_> = schema.classes().iter().filter(|c| source_schema.classes().iter().any(|s| s.synth == c.synth)).collect();
    if !shared.is_empty() {
        return Err(format!("{} target classes also occur in the source schema", shared.len()));
    }
    let clips = generate_clips(tc, &schema).map_err(e)?;
    let audio = AudioSet::from_generated(&clips);
    let target = Corpus::new(Manifest::new(tc.n_classes, clips.into_iter().map(|c| c.record).collect()).map_err(e)?);
    let tbanks: Vec<PooledBank> = [ANALYSIS_RESOLUTION, b.cfg.corpus.clip_seconds]
        .iter()
        .map(|&n| PooledBank::build(&target.all, &audio, &b.extractor, n).0)
        .collect();
    let mut wins = 0;
    let mut parts = Vec::new();
    for &seed in &b.cfg.model.seeds {
        let (psl, ma) = transfer_seed(b, &target, &tbanks, seed).map_err(e)?;
        wins += usize::from(psl >= ma);
        parts.push(format!("{psl:.4}/{ma:.4}"));
    }
    ensure(
        wins >= 4,
        format!("PSL-2s head >= MA head in {wins}/{} seeds (PSL/MA mAP {})", b.cfg.model.seeds.len(), parts.join(" ")),
    )
}

// ---------------------------------------------------------------- 7

fn small_chain(dir: &std::path::Path) -> psl_core::Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let sr = 8000;
    let spec = CorpusSpec {
        n_clips: 80,
        n_classes: 4,
        clip_seconds: 4.0,
        sample_rate_hz: sr,
        seed: 12,
        ..CorpusSpec::default()
    };
    let clips = generate_clips(&spec, &ClassSchema::standard(4, sr, 0)?)?;
    let audio = AudioSet::from_generated(&clips);
    let all = Manifest::new(4, clips.into_iter().map(|c| c.record).collect())?;
    let corpus = Corpus::new(corrupt_labels(&all, &RunConfig::default().corruption)?);
    let mel = MelConfig::at_sample_rate(sr);
    let extractor = MelExtractor::new(&mel)?;
    let ma = train_annotator(&AnnotatorRun {
        train: &corpus.train,
        valid: &corpus.valid,
        audio: &audio,
        mel,
        segmentation: SegmentationConfig::new(4.0)?,
        config: AnnotatorConfig {
            hidden: 16,
            steps: 40,
            val_every: 10,
            ..AnnotatorConfig::default()
        },
        seed: 5,
        config_hash: "determinism".into(),
    })?;
    let (bank2, _) = PooledBank::build(&corpus.all, &audio, &extractor, 2.0);
    let (bank4, _) = PooledBank::build(&corpus.all, &audio, &extractor, 4.0);
    let (store, _) = relabel(&ma.checkpoint.model()?, &corpus.train, &audio, &extractor, 2.0, "ma")?;
    let stores = [store.clone()];
    let banks = [bank2, bank4];
    let inputs = MatrixInputs {
        train: &corpus.train,
        valid: &corpus.valid,
        eval: &corpus.eval,
        stores: &stores,
        features: &banks,
        student: StudentConfig {
            hidden: 16,
            max_epochs: 5,
            ..StudentConfig::default()
        },
        subset_cap: None,
        config_hash: "determinism".into(),
    };
    let out = run_experiment_matrix(&plan_matrix(4.0, &[2.0], &[1.0, 0.5, 0.0], &[0, 1]), &inputs);

    let (ck, st, csv) = (dir.join("ma.ckpt"), dir.join("store.jsonl"), dir.join("results.csv"));
    ma.checkpoint.write(&ck)?;
    store.write(&st)?;
    write_results_csv(&out.rows(), &csv)?;
    assert_eq!(ModelCheckpoint::read(&ck)?, ma.checkpoint, "checkpoint round trip");
    assert_eq!(SoftLabelStore::read(&st)?, store, "store round trip");
    assert_eq!(read_results_csv(&csv)?, out.rows(), "results round trip");
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| psl_core::Error::io(p, e));
    Ok((read(&ck)?, read(&st)?, read(&csv)?))
}

fn segmentation_invariants(cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let template = ClipRecord {
        clip_id: "p".into(),
        audio_path: "p.wav".into(),
        duration_s: 1.0,
        split: Split::Train,
        weak_labels: LabelSet::new(vec![0, 2]),
        original_weak_labels: LabelSet::new(vec![0, 2]),
        strong_events: vec![],
    };
    for _ in 0..cases {
        let duration = rng.random_range(0.01..60.0);
        let n = [1.0, 2.0, 5.0, 10.0][rng.random_range(0..4)];
        let clip = ClipRecord {
            duration_s: duration,
            ..template.clone()
        };
        let spans = segment_clip(&clip, &SegmentationConfig::new(n).unwrap()).map_err(|e| e.to_string())?;
        let fail = |what: &str| Err(format!("{what} at duration {duration}, n {n}"));
        if spans.len() != segment_count(duration, n) || spans.len() != ((duration / n).ceil() as usize).max(1) {
            return fail("segment count");
        }
        if spans[0].start_s != 0.0 || spans.last().unwrap().end_s != duration {
            return fail("coverage");
        }
        for (i, w) in spans.windows(2).enumerate() {
            if w[0].end_s != w[1].start_s || w[0].padded || w[0].seg_index != i {
                return fail("contiguity");
            }
        }
        if spans.iter().any(|s| s.end_s - s.start_s > n + 1e-9 || s.end_s <= s.start_s) {
            return fail("span length");
        }
        let records = propagate_weak(&clip, &spans, 4);
        if records.len() != spans.len() || records.iter().any(|r| r.label.values() != [1.0, 0.0, 1.0, 0.0]) {
            return fail("propagation");
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let (d1, d2) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    let a = small_chain(d1.path()).map_err(|e| e.to_string())?;
    let b = small_chain(d2.path()).map_err(|e| e.to_string())?;
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2];
    let seg = segmentation_invariants(1000);
    ensure(
        same.iter().all(|&s| s) && seg.is_ok(),
        format!(
            "checkpoint/store/csv identical {same:?}, file round trips exact, segmentation over 1000 durations: {}",
            seg.err().unwrap_or_else(|| "ok".into())
        ),
    )
}

// ----------------------------------------------------------------

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = started.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} [{secs:.1}s]: {detail}");
    outcome.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= run("1 gradient check", gradient_check);
    ok &= run("2 metric oracles", metric_oracles);
    let bench = match catch_unwind(Bench::build) {
        Ok(Ok(b)) => Some(b),
        Ok(Err(e)) => {
            eprintln!("benchmark setup failed: {e}");
            None
        }
        Err(_) => None,
    };
    let with_bench = |name: &str, f: fn(&Bench) -> Outcome| match &bench {
        Some(b) => run(name, || f(b)),
        None => run(name, || Err("benchmark setup failed".into())),
    };
    ok &= with_bench("3 PSL ordering", resolution_ordering);
    ok &= with_bench("4 distillation ordering", distill_ordering);
    ok &= with_bench("5 missing-label mitigation", missing_labels);
    ok &= with_bench("6 transfer direction", transfer_direction);
    ok &= run("7 determinism and formats", determinism);
    if !ok {
        std::process::exit(1);
    }
}
