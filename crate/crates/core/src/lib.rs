//! Topic segmentation with a siamese sentence-pair classifier.
//!
//! Sentences are embedded independently, each adjacent pair is turned into the
//! feature `u;v;|u-v|`, and three linear heads are trained jointly:
//! same-topic prediction (STP), topic classification (TC) and next-sentence
//! prediction (NSP). Boundaries are placed wherever STP says "different topic".
//!
//! The pipeline is split into modules that mirror the data flow:
//! [`corpus`] → [`embedder`] → [`sampler`] → [`model`] / [`trainer`] →
//! [`segmenter`] → [`metrics`]. The [`cli`] module wires them together for the
//! `segline` binary, and [`synthetic`] generates labelled toy corpora.
//!
//! The model math is generic over the scalar type (see [`Scalar`]); the
//! training pipeline runs in `f32` to match the on-disk embedding and
//! checkpoint formats, while gradient checks run in `f64`.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod embedder;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod scalar;
pub mod segmenter;
pub mod synthetic;
pub mod trainer;

pub use corpus::{CorpusSplit, Document, Segmentation, Sentence, TopicVocab};
pub use embedder::{EmbedderConfig, EmbeddingMatrix};
pub use metrics::MetricReport;
pub use model::{LabeledPair, LossWeights};
pub use sampler::PairExample;
pub use scalar::Scalar;
pub use trainer::TrainConfig;

/// Head parameters in single precision, as used by training and checkpoints.
pub type HeadParams32 = model::HeadParams<f32>;
/// Head parameters in double precision, used for gradient checking.
pub type HeadParams64 = model::HeadParams<f64>;
/// Logits produced by [`HeadParams32`].
pub type PairLogits32 = model::PairLogits<f32>;
/// Logits produced by [`HeadParams64`].
pub type PairLogits64 = model::PairLogits<f64>;
/// Pair feature in single precision.
pub type PairFeature32 = model::PairFeature<f32>;
/// Pair feature in double precision.
pub type PairFeature64 = model::PairFeature<f64>;
