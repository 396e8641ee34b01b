//! Labelled toy corpora with known topic structure.
//!
//! Each topic owns a word list; a configurable fraction of every list is
//! drawn from one pool shared by all topics. Documents are runs of segments
//! with different topics on either side of each boundary.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Sentence, TopicVocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub topics: usize,
    pub vocab_per_topic: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    /// Fraction of each topic's word list taken from the shared pool.
    pub shared_fraction: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 200,
            min_sentences: 8,
            max_sentences: 20,
            topics: 6,
            vocab_per_topic: 30,
            min_segments: 2,
            max_segments: 4,
            shared_fraction: 0.0,
            min_words: 15,
            max_words: 25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.topics < 2 {
            return Err("need at least two topics".into());
        }
        if self.min_segments < 1 || self.min_segments > self.max_segments {
            return Err("invalid segment range".into());
        }
        if self.min_sentences < self.max_segments || self.min_sentences > self.max_sentences {
            return Err("every document needs at least one sentence per segment".into());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err("invalid words-per-sentence range".into());
        }
        if !(0.0..1.0).contains(&self.shared_fraction) || self.vocab_per_topic == 0 {
            return Err("shared_fraction must be in [0, 1) and vocab_per_topic positive".into());
        }
        Ok(())
    }

    fn word_lists(&self) -> Vec<Vec<String>> {
        let shared = (self.shared_fraction * self.vocab_per_topic as f64).round() as usize;
        let own = self.vocab_per_topic - shared;
        (0..self.topics)
            .map(|t| {
                (0..own)
                    .map(|w| format!("t{t}w{w}"))
                    .chain((0..shared).map(|w| format!("common{w}")))
                    .collect()
            })
            .collect()
    }
}

fn sentence<R: Rng>(words: &[String], config: &SynthConfig, rng: &mut R) -> String {
    let len = rng.gen_range(config.min_words..=config.max_words);
    let mut out: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
    let first = out[0];
    let mut text = first[..1].to_uppercase() + &first[1..];
    out.remove(0);
    for w in out {
        text.push(' ');
        text.push_str(w);
    }
    text.push('.');
    text
}

/// Generates a corpus. Sids are contiguous in document order.
pub fn generate(config: &SynthConfig) -> Result<Corpus, String> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let words = config.word_lists();
    let vocab = TopicVocab::from_labels((0..config.topics).map(|t| format!("topic{t}"))).expect("distinct names");

    let mut documents = Vec::with_capacity(config.docs);
    let mut next_sid = 0;
    for d in 0..config.docs {
        let n = rng.gen_range(config.min_sentences..=config.max_sentences);
        let segments = rng.gen_range(config.min_segments..=config.max_segments);
        let mut cuts: Vec<usize> = index::sample(&mut rng, n - 1, segments - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        cuts.push(n);

        let mut sentences = Vec::with_capacity(n);
        let mut start = 0;
        let mut previous: Option<usize> = None;
        for end in cuts {
            let topic = loop {
                let t = rng.gen_range(0..config.topics);
                if Some(t) != previous {
                    break t;
                }
            };
            previous = Some(topic);
            for _ in start..end {
                sentences.push(Sentence {
                    sid: next_sid,
                    text: sentence(&words[topic], config, &mut rng),
                    topic_id: topic,
                });
                next_sid += 1;
            }
            start = end;
        }
        documents.push(Document {
            doc_id: format!("synth-{d:04}"),
            sentences,
        });
    }
    Ok(Corpus { documents, vocab })
}
