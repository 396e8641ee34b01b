//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a hard criterion fails. The ablation ordering is a soft gate:
//! its scores are always printed and a miss is reported but not fatal.

mod common;

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segline::cli::{cmd_eval, cmd_segment, cmd_train, EvalArgs, ModeArg, SegmentArgs, SplitPart, TrainArgs};
use segline::corpus::{split_corpus, write_corpus_file};
use segline::embedder::{default_manifest_path, manifest_for, write_manifest};
use segline::metrics::{pk, windowdiff};
use segline::model::LossWeights;
use segline::sampler::{build_training_set, consecutive_sample, PairKind};
use segline::synthetic::SynthConfig;
use segline::trainer::{evaluate_documents, train, TrainData};
use segline::{Document, Segmentation, TrainConfig};

use common::{median, random_boundaries, synthetic, window_oracle, Instance};

type Criterion = (usize, &'static str, bool, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatched = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=30);
        let k = rng.gen_range(1..=n);
        let r = random_boundaries(n, &mut rng);
        let h = random_boundaries(n, &mut rng);
        let (rs, hs) = (Segmentation::new(n, r.clone()).unwrap(), Segmentation::new(n, h.clone()).unwrap());
        let (p, w) = (pk(&rs, &hs, k).unwrap(), windowdiff(&rs, &hs, k).unwrap());
        let (po, wo) = window_oracle(n, &r, &h, k);
        if (p.mismatches, p.windows) != po || (w.mismatches, w.windows) != wo {
            mismatched += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: mismatched == 0 && elapsed < Duration::from_secs(10),
        detail: format!("{mismatched} of 1000 instances differ, {elapsed:.2?}"),
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let settings = [LossWeights::STP_TC, LossWeights::STP_NSP, LossWeights::STP_TC_NSP];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let instance = Instance::random(&mut rng);
        let batch = instance.batch();
        for w in &settings {
            worst = worst.max(common::gradient_check(&instance.params, &batch, w, 1e-4, 1e-6));
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst < 1e-4 && elapsed < Duration::from_secs(30),
        detail: format!("max relative error {worst:.2e} over 150 checks, {elapsed:.2?}"),
    }
}

/// Trains on the split of a synthetic corpus and scores the test part.
fn train_and_test(synth: &SynthConfig, config: &TrainConfig) -> (f64, f64) {
    let (docs, topics, emb) = synthetic(synth, 64);
    let split = split_corpus(docs, config.split, config.seed).unwrap();
    let pairs = build_training_set(&split.train, config.seed);
    let data = TrainData {
        train_docs: &split.train,
        pairs: &pairs,
        valid_docs: &split.valid,
        embeddings: &emb,
        topics: &topics,
    };
    let outcome = train(config, &data).unwrap();
    let report =
        evaluate_documents(&outcome.checkpoint.params, &split.test, &emb, config.segment_mode()).unwrap();
    (report.pk, report.windowdiff)
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let config = TrainConfig {
        weights: LossWeights::STP_TC_NSP,
        batch_size: 48,
        max_epochs: 14,
        ..TrainConfig::default()
    };
    let (p, w) = single_threaded(|| train_and_test(&SynthConfig::default(), &config));
    let elapsed = start.elapsed();
    Outcome {
        pass: p <= 0.10 && w <= 0.12 && elapsed < Duration::from_secs(120),
        detail: format!("test Pk {p:.4} (<= 0.10), WindowDiff {w:.4} (<= 0.12), {elapsed:.2?} on one thread"),
    }
}

fn sampler_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut checked, mut violations) = (0usize, 0usize);
    let mut doc_no = 0;
    while checked < 10_000 {
        let n = rng.gen_range(1..=25);
        let topics: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let doc = Document::from_topics(&format!("d{doc_no}"), 0, &topics);
        doc_no += 1;
        for i in 0..n {
            let sample = consecutive_sample(&doc, i, &mut rng);
            let has_positive = i + 1 < n && topics[i + 1] == topics[i];
            let neg1: HashSet<usize> = (0..n)
                .filter(|&k| topics[k] == topics[i] && k + 1 != i && k != i && k != i + 1)
                .collect();
            let neg2: HashSet<usize> = (0..n).filter(|&l| topics[l] != topics[i] && l != i + 1).collect();
            let count = |kind| sample.iter().filter(|p| p.kind == kind).count();
            if count(PairKind::Positive) != usize::from(has_positive)
                || count(PairKind::SameTopicNegative) != usize::from(!neg1.is_empty())
                || count(PairKind::DifferentTopicNegative) != usize::from(!neg2.is_empty())
            {
                violations += 1;
            }
            for p in &sample {
                checked += 1;
                let labels_ok = p.i == i
                    && p.topic_i == topics[p.i]
                    && p.topic_j == topics[p.j]
                    && p.stp == u8::from(topics[p.i] == topics[p.j])
                    && p.nsp == u8::from(p.j == p.i + 1);
                let category_ok = match p.kind {
                    PairKind::Positive => p.j == i + 1 && topics[p.j] == topics[i],
                    PairKind::SameTopicNegative => neg1.contains(&p.j),
                    PairKind::DifferentTopicNegative => neg2.contains(&p.j),
                    PairKind::Natural => false,
                };
                if !(labels_ok && category_ok) {
                    violations += 1;
                }
            }
        }
        for p in build_training_set(std::slice::from_ref(&doc), doc_no as u64) {
            checked += 1;
            if p.stp != u8::from(topics[p.i] == topics[p.j]) || p.nsp != u8::from(p.j == p.i + 1) {
                violations += 1;
            }
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!("{violations} violations in {checked} pairs"),
    }
}

fn ablation() -> Outcome {
    let configs = [
        ("STP+TC", LossWeights::STP_TC),
        ("STP+NSP", LossWeights::STP_NSP),
        ("STP+TC+NSP", LossWeights::STP_TC_NSP),
        ("STP-only", LossWeights::STP_ONLY),
        ("TC-only", LossWeights::TC_ONLY),
    ];
    let mut medians = Vec::new();
    for (name, weights) in configs {
        let scores: Vec<f64> = (0..5u64)
            .map(|seed| {
                let synth = SynthConfig {
                    shared_fraction: 0.2,
                    seed,
                    ..SynthConfig::default()
                };
                let config = TrainConfig {
                    weights,
                    seed,
                    ..TrainConfig::default()
                };
                train_and_test(&synth, &config).0
            })
            .collect();
        let m = median(scores.clone());
        println!("    {name:<11} median Pk {m:.4}  per seed {scores:.4?}");
        medians.push(m);
    }
    let (full, stp, tc) = (medians[2], medians[3], medians[4]);
    let first = full <= stp + 0.02;
    let second = stp < tc;
    Outcome {
        pass: first && second,
        detail: format!(
            "Pk(STP+TC+NSP) {full:.4} <= Pk(STP-only) {stp:.4} + 0.02: {first}; Pk(STP-only) < Pk(TC-only) {tc:.4}: {second}"
        ),
    }
}

fn train_via_cli(dir: &Path, corpus: &Path, emb: &Path, name: &str, threads: usize) -> (Vec<u8>, Vec<u8>) {
    let ckpt = dir.join(format!("{name}.ckpt.json"));
    let args = TrainArgs {
        config: None,
        corpus: corpus.to_path_buf(),
        emb: emb.to_path_buf(),
        manifest: None,
        out: ckpt.clone(),
        log: None,
        weights: Some("4,1,4".into()),
        seed: Some(11),
        epochs: Some(4),
        batch_size: None,
        lr: None,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| cmd_train(&args)).unwrap();
    let seg = dir.join(format!("{name}.seg.jsonl"));
    cmd_segment(&SegmentArgs {
        ckpt: ckpt.clone(),
        corpus: corpus.to_path_buf(),
        emb: emb.to_path_buf(),
        manifest: None,
        mode: Some(ModeArg::Stp),
        split: SplitPart::Test,
        out: seg.clone(),
    })
    .unwrap();
    let report = dir.join(format!("{name}.report.json"));
    cmd_eval(&EvalArgs {
        gold: corpus.to_path_buf(),
        pred: seg,
        out: report.clone(),
        ckpt: Some(ckpt.clone()),
        emb: Some(emb.to_path_buf()),
        manifest: None,
    })
    .unwrap();
    (fs::read(ckpt).unwrap(), fs::read(report).unwrap())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        docs: 60,
        ..SynthConfig::default()
    };
    let (docs, topics, emb) = synthetic(&synth, 32);
    let corpus = dir.path().join("corpus.jsonl");
    let vocab = segline::TopicVocab::from_labels(topics).unwrap();
    write_corpus_file(&corpus, &docs, &vocab).unwrap();
    let emb_path = dir.path().join("emb.bin");
    emb.write(&emb_path).unwrap();
    write_manifest(&default_manifest_path(&emb_path), &manifest_for(&docs)).unwrap();

    let (ckpt_a, report_a) = train_via_cli(dir.path(), &corpus, &emb_path, "a", 1);
    let (ckpt_b, report_b) = train_via_cli(dir.path(), &corpus, &emb_path, "b", 4);
    Outcome {
        pass: ckpt_a == ckpt_b && report_a == report_b,
        detail: format!(
            "checkpoints identical: {} ({} bytes), reports identical: {} (1 vs 4 threads)",
            ckpt_a == ckpt_b,
            ckpt_a.len(),
            report_a == report_b
        ),
    }
}

fn main() {
    let criteria: [Criterion; 6] = [
        (1, "metric oracle equivalence", true, metric_oracle),
        (2, "gradient correctness", true, gradient_check),
        (3, "synthetic end-to-end", true, synthetic_end_to_end),
        (4, "sampler soundness", true, sampler_soundness),
        (5, "ablation direction", false, ablation),
        (6, "determinism", true, determinism),
    ];
    let mut hard_failures = 0;
    for (id, name, hard, run) in criteria {
        let outcome = run();
        let verdict = match (outcome.pass, hard) {
            (true, _) => "PASS",
            (false, true) => {
                hard_failures += 1;
                "FAIL"
            }
            (false, false) => "FAIL (soft gate, reported only)",
        };
        println!("criterion {id} [{name}]: {verdict} - {}", outcome.detail);
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
