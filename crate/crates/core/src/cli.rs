//! Command-line front end. Exit codes: 0 on success, 1 on runtime failure,
//! 2 on bad usage, bad configuration or a missing input file.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    convert_wikisection_all, derive_gold, read_corpus_jsonl, split_corpus, write_corpus_file, Corpus, Document,
    TopicVocab,
};
use crate::embedder::{
    check_alignment, default_manifest_path, embed_corpus, load_embeddings, manifest_for, write_manifest,
    EmbedderConfig, EmbeddingMatrix,
};
use crate::metrics::{evaluate, MetricReport};
use crate::model::LossWeights;
use crate::sampler::{build_training_set, write_pairs_file};
use crate::segmenter::{head_f1, read_segments_file, segment, write_segments_file, SegmentMode, SegmentRecord};
use crate::synthetic::{generate, SynthConfig};
use crate::trainer::{train, write_log, TrainConfig, TrainData};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "segline", version, about = "Topic segmentation with sentence-pair heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a WikiSection-style JSON array into corpus JSONL.
    Convert(ConvertArgs),
    /// Embed every sentence of a corpus into a SEGEMB1 file.
    Embed(EmbedArgs),
    /// Write the sampled training pairs of a corpus.
    Sample(SampleArgs),
    /// Train the heads and write a checkpoint.
    Train(TrainArgs),
    /// Segment documents with a trained checkpoint.
    Segment(SegmentArgs),
    /// Score predicted segmentations against gold.
    Eval(EvalArgs),
    /// Generate a synthetic labelled corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Topic vocabulary; extended if it exists, created otherwise.
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbedMode {
    Hash,
    File,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "hash")]
    pub mode: EmbedMode,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip L2 normalisation (hash mode).
    #[arg(long)]
    pub raw: bool,
    /// Precomputed SEGEMB1 file (file mode).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Manifest of `--input`; defaults to `<input>.manifest.jsonl`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSONL log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Loss weights as `stp,tc,nsp`.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitPart {
    All,
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Stp,
    TcOnly,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Defaults to STP unless the checkpoint was trained without it.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Which part of the checkpoint's train/valid/test split to segment.
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitPart,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold corpus JSONL.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted segmentations JSONL.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// With `--emb`, also reports TC and NSP F1 from this checkpoint.
    #[arg(long, requires = "emb")]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub emb: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 6)]
    pub topics: usize,
    #[arg(long, default_value_t = 0.0)]
    pub shared_fraction: f64,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long)]
    pub max_words: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Convert(a) => cmd_convert(&a),
        Command::Embed(a) => cmd_embed(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    require(path)?;
    read_corpus_jsonl(path).map_err(runtime)
}

/// Loads an embedding file and checks it row-for-row against `docs`.
fn load_aligned(emb: &Path, manifest: Option<&Path>, docs: &[Document]) -> Result<EmbeddingMatrix, CliError> {
    let manifest = manifest.map_or_else(|| default_manifest_path(emb), Path::to_path_buf);
    require(emb)?;
    require(&manifest)?;
    let (matrix, entries) = load_embeddings(emb, &manifest).map_err(runtime)?;
    check_alignment(&entries, docs).map_err(runtime)?;
    Ok(matrix)
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<(), CliError> {
    require(&args.input)?;
    let raw: serde_json::Value = serde_json::from_reader(BufReader::new(
        File::open(&args.input).map_err(runtime)?,
    ))
    .map_err(|e| runtime(format!("{}: {e}", args.input.display())))?;
    let mut vocab = if args.vocab.is_file() {
        TopicVocab::from_json(&fs::read_to_string(&args.vocab).map_err(runtime)?).map_err(runtime)?
    } else {
        TopicVocab::new()
    };
    let conversion = convert_wikisection_all(&raw, &mut vocab);
    let total = conversion.total();
    let rejected = conversion.rejected.len();
    write_corpus_file(&args.out, &conversion.documents, &vocab).map_err(runtime)?;
    fs::write(&args.vocab, vocab.to_json()).map_err(runtime)?;
    log::info!("converted {} of {total} documents", conversion.documents.len());
    if total == 0 || rejected * 2 > total {
        return Err(CliError::Runtime(format!("rejected {rejected} of {total} documents")));
    }
    Ok(())
}

pub fn cmd_embed(args: &EmbedArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let config = match args.mode {
        EmbedMode::Hash => EmbedderConfig {
            normalize: !args.raw,
            ..EmbedderConfig::hash(args.d, args.seed)
        },
        EmbedMode::File => {
            let input = args
                .input
                .clone()
                .ok_or_else(|| CliError::Usage("--mode file requires --input".into()))?;
            require(&input)?;
            let manifest = args.manifest.clone().unwrap_or_else(|| default_manifest_path(&input));
            require(&manifest)?;
            EmbedderConfig {
                manifest: Some(manifest),
                ..EmbedderConfig::file(input, args.d)
            }
        }
    };
    config.validate().map_err(usage)?;
    let matrix = embed_corpus(&corpus.documents, &config).map_err(runtime)?;
    matrix.write(&args.out).map_err(runtime)?;
    write_manifest(&default_manifest_path(&args.out), &manifest_for(&corpus.documents)).map_err(runtime)?;
    log::info!("wrote {} x {} embeddings to {}", matrix.n(), matrix.d(), args.out.display());
    Ok(())
}

pub fn cmd_sample(args: &SampleArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.corpus)?;
    let pairs = build_training_set(&corpus.documents, args.seed);
    write_pairs_file(&args.out, &pairs).map_err(runtime)?;
    log::info!("wrote {} pairs", pairs.len());
    Ok(())
}

/// Resolves the training config from `--config` plus flag overrides.
pub fn train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            require(path)?;
            let text = fs::read_to_string(path).map_err(runtime)?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(w) = &args.weights {
        config.weights = LossWeights::parse(w).map_err(usage)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.max_epochs = epochs;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.lr0 = lr;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = train_config(args)?;
    let corpus = load_corpus(&args.corpus)?;
    let embeddings = load_aligned(&args.emb, args.manifest.as_deref(), &corpus.documents)?;
    let split = split_corpus(corpus.documents, config.split, config.seed).map_err(runtime)?;
    let pairs = build_training_set(&split.train, config.seed);
    let data = TrainData {
        train_docs: &split.train,
        pairs: &pairs,
        valid_docs: &split.valid,
        embeddings: &embeddings,
        topics: corpus.vocab.labels(),
    };
    let outcome = train(&config, &data).map_err(runtime)?;
    outcome.checkpoint.write(&args.out).map_err(runtime)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let file = File::create(&log_path).map_err(runtime)?;
    write_log(&outcome.log, BufWriter::new(file)).map_err(runtime)?;
    log::info!(
        "best epoch {} with validation Pk {:.4}",
        outcome.checkpoint.epoch,
        outcome.checkpoint.validation_pk
    );
    Ok(())
}

fn select_part(corpus: Corpus, ckpt: &Checkpoint, part: SplitPart) -> Result<Vec<Document>, CliError> {
    if part == SplitPart::All {
        return Ok(corpus.documents);
    }
    let split = split_corpus(corpus.documents, ckpt.config.split, ckpt.config.seed).map_err(runtime)?;
    Ok(match part {
        SplitPart::Train => split.train,
        SplitPart::Valid => split.valid,
        SplitPart::Test => split.test,
        SplitPart::All => unreachable!(),
    })
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<(), CliError> {
    require(&args.ckpt)?;
    let ckpt = Checkpoint::read(&args.ckpt).map_err(runtime)?;
    let corpus = load_corpus(&args.corpus)?;
    if corpus.vocab.len() > ckpt.params.num_topics() {
        return Err(CliError::Runtime(format!(
            "corpus has {} topics but the checkpoint knows {}",
            corpus.vocab.len(),
            ckpt.params.num_topics()
        )));
    }
    let embeddings = load_aligned(&args.emb, args.manifest.as_deref(), &corpus.documents)?;
    let mode = match args.mode {
        Some(ModeArg::Stp) => SegmentMode::Stp,
        Some(ModeArg::TcOnly) => SegmentMode::TcOnly,
        None => ckpt.config.segment_mode(),
    };
    let docs = select_part(corpus, &ckpt, args.split)?;
    let records = docs
        .iter()
        .map(|doc| Ok(SegmentRecord::new(&doc.doc_id, &segment(&ckpt.params, doc, &embeddings, mode)?)))
        .collect::<Result<Vec<_>, crate::segmenter::SegmentError>>()
        .map_err(runtime)?;
    write_segments_file(&args.out, &records).map_err(runtime)?;
    log::info!("segmented {} documents", records.len());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.gold)?;
    require(&args.pred)?;
    let predicted = read_segments_file(&args.pred).map_err(runtime)?;
    let mut docs = Vec::with_capacity(predicted.len());
    let mut gold = Vec::with_capacity(predicted.len());
    let mut hyp = Vec::with_capacity(predicted.len());
    for (doc_id, seg) in predicted {
        let doc = corpus
            .get(&doc_id)
            .ok_or_else(|| CliError::Runtime(format!("predicted document {doc_id} is not in the gold corpus")))?;
        if doc.len() != seg.n() {
            return Err(CliError::Runtime(format!(
                "{doc_id}: gold has {} sentences, prediction {}",
                doc.len(),
                seg.n()
            )));
        }
        gold.push(derive_gold(doc));
        hyp.push(seg);
        docs.push(doc.clone());
    }
    let mut report: MetricReport = evaluate(&gold, &hyp).map_err(runtime)?;
    let stp_pred: Vec<usize> = hyp
        .iter()
        .flat_map(|s| (0..s.n().saturating_sub(1)).map(|b| usize::from(!s.is_boundary(b))))
        .collect();
    let stp_gold: Vec<usize> = gold
        .iter()
        .flat_map(|s| (0..s.n().saturating_sub(1)).map(|b| usize::from(!s.is_boundary(b))))
        .collect();
    if !stp_pred.is_empty() {
        report.per_head_f1.insert(
            "stp".into(),
            crate::metrics::micro_f1(&stp_pred, &stp_gold).map_err(runtime)?,
        );
    }
    if let (Some(ckpt_path), Some(emb)) = (&args.ckpt, &args.emb) {
        require(ckpt_path)?;
        let ckpt = Checkpoint::read(ckpt_path).map_err(runtime)?;
        let embeddings = load_aligned(emb, args.manifest.as_deref(), &corpus.documents)?;
        // Topic ids follow the checkpoint's label order, not the gold file's.
        let mut remapped = docs.clone();
        for doc in &mut remapped {
            for s in &mut doc.sentences {
                let label = corpus.vocab.label(s.topic_id).unwrap_or_default();
                s.topic_id = ckpt
                    .topics
                    .iter()
                    .position(|t| t == label)
                    .ok_or_else(|| CliError::Runtime(format!("topic {label:?} is unknown to the checkpoint")))?;
            }
        }
        let heads = head_f1(&ckpt.params, &remapped, &embeddings).map_err(runtime)?;
        for name in ["tc", "nsp"] {
            if let Some(v) = heads.get(name) {
                report.per_head_f1.insert(name.into(), *v);
            }
        }
    }
    let mut out = BufWriter::new(File::create(&args.out).map_err(runtime)?);
    serde_json::to_writer_pretty(&mut out, &report).map_err(runtime)?;
    out.write_all(b"\n").map_err(runtime)?;
    out.flush().map_err(runtime)?;
    log::info!(
        "pk={:.4} windowdiff={:.4} k={} docs={}",
        report.pk, report.windowdiff, report.k_used, report.docs
    );
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        docs: args.docs,
        min_words: args.min_words.unwrap_or(defaults.min_words),
        max_words: args.max_words.unwrap_or(defaults.max_words),
        topics: args.topics,
        shared_fraction: args.shared_fraction,
        seed: args.seed,
        ..defaults
    };
    let corpus = generate(&config).map_err(usage)?;
    write_corpus_file(&args.out, &corpus.documents, &corpus.vocab).map_err(runtime)?;
    Ok(())
}

/// Caps the global rayon pool from `SEGLINE_THREADS` (unset or 0 = automatic).
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("SEGLINE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("SEGLINE_THREADS must be a number, got {value:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(runtime)?;
    }
    Ok(())
}
