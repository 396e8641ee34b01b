//! Documents, topic labels and gold segmentations.
//!
//! Raw WikiSection-style JSON is converted once into the canonical JSONL
//! interchange format (one document per line); everything downstream reads
//! only that format.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("document {doc_id} rejected: {reason}")]
    Rejected { doc_id: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("boundary {boundary} out of range for {n} sentences")]
    BoundaryOutOfRange { boundary: usize, n: usize },
    #[error("duplicate topic label {0:?}")]
    DuplicateTopic(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Dense, 0-based mapping between topic names and ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TopicVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    labels: Vec<String>,
}

impl TopicVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for label in labels {
            let label = label.into();
            if vocab.index.contains_key(&label) {
                return Err(CorpusError::DuplicateTopic(label));
            }
            vocab.get_or_insert(&label);
        }
        Ok(vocab)
    }

    /// Returns the id of `label`, appending it if unseen.
    pub fn get_or_insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabFile {
            labels: self.labels.clone(),
        })
        .expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        let file: VocabFile = serde_json::from_str(s).map_err(|e| CorpusError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_labels(file.labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    /// Corpus-global id; also the row of this sentence in an [`crate::EmbeddingMatrix`].
    pub sid: usize,
    pub text: String,
    pub topic_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn topics(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.topic_id).collect()
    }

    /// Builds a document from topic ids alone, with placeholder texts.
    /// Mostly useful in tests and examples.
    pub fn from_topics(doc_id: &str, first_sid: usize, topics: &[usize]) -> Self {
        let sentences = topics
            .iter()
            .enumerate()
            .map(|(i, &topic_id)| Sentence {
                sid: first_sid + i,
                text: format!("sentence {i} of {doc_id}"),
                topic_id,
            })
            .collect();
        Document {
            doc_id: doc_id.to_string(),
            sentences,
        }
    }
}

/// Boundary set over `n` sentences. Boundary `b` sits between sentence `b`
/// and sentence `b + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    n: usize,
    boundaries: BTreeSet<usize>,
}

impl Segmentation {
    pub fn new<I: IntoIterator<Item = usize>>(n: usize, boundaries: I) -> Result<Self, CorpusError> {
        let boundaries: BTreeSet<usize> = boundaries.into_iter().collect();
        if let Some(&b) = boundaries.iter().find(|&&b| b + 1 >= n) {
            return Err(CorpusError::BoundaryOutOfRange { boundary: b, n });
        }
        Ok(Segmentation { n, boundaries })
    }

    /// A single segment covering all `n` sentences.
    pub fn single(n: usize) -> Self {
        Segmentation {
            n,
            boundaries: BTreeSet::new(),
        }
    }

    /// Rebuilds a segmentation from half-open `[start, end)` segments that
    /// must tile `0..n` in order.
    pub fn from_segments(n: usize, segments: &[(usize, usize)]) -> Result<Self, CorpusError> {
        let mut expected_start = 0;
        let mut boundaries = BTreeSet::new();
        for (idx, &(start, end)) in segments.iter().enumerate() {
            if start != expected_start || end <= start || end > n {
                return Err(CorpusError::Config(format!(
                    "segment {idx} [{start}, {end}) does not tile 0..{n}"
                )));
            }
            if end < n {
                boundaries.insert(end - 1);
            }
            expected_start = end;
        }
        if expected_start != n && n > 0 {
            return Err(CorpusError::Config(format!(
                "segments end at {expected_start}, expected {n}"
            )));
        }
        Ok(Segmentation { n, boundaries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn boundaries(&self) -> &BTreeSet<usize> {
        &self.boundaries
    }

    pub fn is_boundary(&self, b: usize) -> bool {
        self.boundaries.contains(&b)
    }

    pub fn num_segments(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.boundaries.len() + 1
        }
    }

    /// Half-open `[start, end)` sentence ranges of each segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        if self.n == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.boundaries.len() + 1);
        let mut start = 0;
        for &b in &self.boundaries {
            out.push((start, b + 1));
            start = b + 1;
        }
        out.push((start, self.n));
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusSplit {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CorpusError::Config(format!("split ratios must be nonnegative: {self:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Config(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// Splits after `.`, `!` or `?` when followed by whitespace and then an
/// uppercase letter or a digit. A period that ends one of these tokens never
/// splits.
pub const ABBREVIATIONS: &[&str] = &["e.g.", "i.e.", "Dr.", "St.", "vs.", "etc."];

/// A sentence together with its character (not byte) span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSpan {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl SentenceSpan {
    pub fn midpoint(&self) -> usize {
        self.char_start + (self.char_end - self.char_start) / 2
    }
}

pub trait SentenceSplitter {
    fn split_spans(&self, text: &str) -> Vec<SentenceSpan>;
}

/// The rule-based splitter described on [`ABBREVIATIONS`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleSplitter;

impl SentenceSplitter for RuleSplitter {
    fn split_spans(&self, text: &str) -> Vec<SentenceSpan> {
        let chars: Vec<char> = text.chars().collect();
        let mut spans = Vec::new();
        let mut start = 0;
        let mut idx = 0;
        while idx < chars.len() {
            let c = chars[idx];
            if matches!(c, '.' | '!' | '?') && chars.get(idx + 1).is_some_and(|c| c.is_whitespace()) {
                let mut next = idx + 1;
                while next < chars.len() && chars[next].is_whitespace() {
                    next += 1;
                }
                let opens_sentence = chars
                    .get(next)
                    .is_some_and(|c| c.is_uppercase() || c.is_ascii_digit());
                if opens_sentence && !(c == '.' && ends_with_abbreviation(&chars[start..=idx])) {
                    push_trimmed(&chars, start, idx + 1, &mut spans);
                    start = next;
                    idx = next;
                    continue;
                }
            }
            idx += 1;
        }
        push_trimmed(&chars, start, chars.len(), &mut spans);
        spans
    }
}

fn ends_with_abbreviation(chars: &[char]) -> bool {
    let token_start = chars
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let token: String = chars[token_start..]
        .iter()
        .skip_while(|c| !c.is_alphanumeric())
        .collect();
    ABBREVIATIONS.contains(&token.as_str())
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<SentenceSpan>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push(SentenceSpan {
            text: chars[start..end].iter().collect(),
            char_start: start,
            char_end: end,
        });
    }
}

/// Splits `text` into sentences with [`RuleSplitter`].
pub fn split_sentences(text: &str) -> Vec<String> {
    RuleSplitter.split_spans(text).into_iter().map(|s| s.text).collect()
}

/// Converts one WikiSection record into a [`Document`].
///
/// Each sentence takes the `sectionLabel` of the annotation that contains its
/// midpoint character; sentences outside every annotation are dropped.
/// Offsets are counted in Unicode scalar values. Sentence ids start at
/// `first_sid`.
pub fn convert_wikisection(
    raw_doc: &Value,
    vocab: &mut TopicVocab,
    splitter: &dyn SentenceSplitter,
    first_sid: usize,
    fallback_id: &str,
) -> Result<Document, CorpusError> {
    let doc_id = match raw_doc.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => raw_doc
            .get("title")
            .and_then(Value::as_str)
            .map_or_else(|| fallback_id.to_string(), str::to_string),
    };
    let reject = |reason: &str| CorpusError::Rejected {
        doc_id: doc_id.clone(),
        reason: reason.to_string(),
    };

    let text = raw_doc
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| reject("missing text field"))?;
    let annotations = raw_doc
        .get("annotations")
        .and_then(Value::as_array)
        .ok_or_else(|| reject("missing annotations"))?;
    if annotations.is_empty() {
        return Err(reject("empty annotation list"));
    }

    let mut ranges = Vec::with_capacity(annotations.len());
    for ann in annotations {
        let begin = ann.get("begin").and_then(Value::as_u64);
        let length = ann.get("length").and_then(Value::as_u64);
        let label = ann
            .get("sectionLabel")
            .or_else(|| ann.get("label"))
            .and_then(Value::as_str);
        match (begin, length, label) {
            (Some(b), Some(l), Some(label)) => ranges.push((b as usize, (b + l) as usize, label)),
            _ => return Err(reject("annotation lacks begin, length or sectionLabel")),
        }
    }

    // Resolve labels first so rejected documents never touch the vocab.
    let mut labelled = Vec::new();
    for span in splitter.split_spans(text) {
        let mid = span.midpoint();
        if let Some(&(_, _, label)) = ranges.iter().find(|(b, e, _)| *b <= mid && mid < *e) {
            labelled.push((span.text, label));
        }
    }
    if labelled.is_empty() {
        return Err(reject("no sentence falls inside an annotation"));
    }
    let sentences = labelled
        .into_iter()
        .enumerate()
        .map(|(i, (text, label))| Sentence {
            sid: first_sid + i,
            text,
            topic_id: vocab.get_or_insert(label),
        })
        .collect();
    Ok(Document { doc_id, sentences })
}

/// Outcome of converting a batch of raw documents.
#[derive(Debug, Default)]
pub struct Conversion {
    pub documents: Vec<Document>,
    pub rejected: Vec<CorpusError>,
}

impl Conversion {
    pub fn total(&self) -> usize {
        self.documents.len() + self.rejected.len()
    }
}

/// Converts every record of a WikiSection file (a JSON array, or a single
/// object). Rejected records are logged and skipped; sids stay contiguous
/// over the accepted documents.
pub fn convert_wikisection_all(raw: &Value, vocab: &mut TopicVocab) -> Conversion {
    let records: Vec<&Value> = match raw {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    };
    let mut out = Conversion::default();
    let mut next_sid = 0;
    for (idx, record) in records.into_iter().enumerate() {
        match convert_wikisection(record, vocab, &RuleSplitter, next_sid, &format!("doc-{idx}")) {
            Ok(doc) => {
                next_sid += doc.len();
                out.documents.push(doc);
            }
            Err(err) => {
                log::warn!("skipping record {idx}: {err}");
                out.rejected.push(err);
            }
        }
    }
    out
}

/// Gold boundaries: every position where the topic changes.
pub fn derive_gold(doc: &Document) -> Segmentation {
    let boundaries = doc
        .sentences
        .windows(2)
        .enumerate()
        .filter(|(_, pair)| pair[0].topic_id != pair[1].topic_id)
        .map(|(i, _)| i)
        .collect();
    Segmentation {
        n: doc.len(),
        boundaries,
    }
}

/// Seeded shuffle followed by a contiguous train/valid/test partition.
/// Validation and test sizes are `floor(ratio * N)`; train takes the rest.
pub fn split_corpus(corpus: Vec<Document>, ratios: SplitRatios, seed: u64) -> Result<CorpusSplit, CorpusError> {
    ratios.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::Config("cannot split an empty corpus".into()));
    }
    let n = corpus.len();
    let n_valid = (ratios.valid * n as f64 + 1e-9).floor() as usize;
    let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;

    let mut docs = corpus;
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = docs.split_off(n_train + n_valid);
    let valid = docs.split_off(n_train);
    Ok(CorpusSplit {
        train: docs,
        valid,
        test,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalSentence {
    text: String,
    topic: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalDoc {
    doc_id: String,
    sentences: Vec<CanonicalSentence>,
}

/// Documents plus the vocabulary their topic ids refer to.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocab: TopicVocab,
}

impl Corpus {
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }
}

/// Parses canonical JSONL. Sids are assigned in file order starting at 0.
/// Topics are resolved against `vocab`, which grows with unseen labels.
pub fn parse_corpus_jsonl<R: BufRead>(reader: R, mut vocab: TopicVocab) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    let mut next_sid = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse {
            line: lineno + 1,
            message,
        };
        let raw: CanonicalDoc = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if raw.sentences.is_empty() {
            return Err(parse_err(format!("document {} has no sentences", raw.doc_id)));
        }
        if !seen.insert(raw.doc_id.clone()) {
            return Err(parse_err(format!("duplicate doc_id {}", raw.doc_id)));
        }
        let mut sentences = Vec::with_capacity(raw.sentences.len());
        for s in raw.sentences {
            if s.text.trim().is_empty() {
                return Err(parse_err(format!("empty sentence in {}", raw.doc_id)));
            }
            sentences.push(Sentence {
                sid: next_sid,
                text: s.text,
                topic_id: vocab.get_or_insert(&s.topic),
            });
            next_sid += 1;
        }
        documents.push(Document {
            doc_id: raw.doc_id,
            sentences,
        });
    }
    Ok(Corpus { documents, vocab })
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_corpus_jsonl(BufReader::new(file), TopicVocab::new())
}

pub fn write_corpus_jsonl<W: Write>(documents: &[Document], vocab: &TopicVocab, mut out: W) -> std::io::Result<()> {
    for doc in documents {
        let raw = CanonicalDoc {
            doc_id: doc.doc_id.clone(),
            sentences: doc
                .sentences
                .iter()
                .map(|s| CanonicalSentence {
                    text: s.text.clone(),
                    topic: vocab
                        .label(s.topic_id)
                        .map_or_else(|| s.topic_id.to_string(), str::to_string),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &raw)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_corpus_file(path: &Path, documents: &[Document], vocab: &TopicVocab) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_corpus_jsonl(documents, vocab, BufWriter::new(file)).map_err(|e| CorpusError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn doc(topics: &[usize]) -> Document {
        Document::from_topics("d", 0, topics)
    }

    #[test]
    fn splitter_examples() {
        assert!(split_sentences("").is_empty());
        assert!(split_sentences("   \n\t").is_empty());
        assert_eq!(split_sentences("A city. It grew."), vec!["A city.", "It grew."]);
        assert_eq!(
            split_sentences("Dr. Smith arrived. He left."),
            vec!["Dr. Smith arrived.", "He left."]
        );
    }

    #[test]
    fn splitter_rule_details() {
        assert_eq!(split_sentences("Wait! 3 cars came? Yes."), vec!["Wait!", "3 cars came?", "Yes."]);
        // lowercase continuation, decimal numbers and abbreviations never split
        assert_eq!(split_sentences("It rose. then fell."), vec!["It rose. then fell."]);
        assert_eq!(split_sentences("It is 3.5 Km long."), vec!["It is 3.5 Km long."]);
        assert_eq!(
            split_sentences("Fruit, e.g. Apples, vs. Pears etc. Are fine. Ok (i.e. Good) Yes."),
            vec!["Fruit, e.g. Apples, vs. Pears etc. Are fine.", "Ok (i.e. Good) Yes."]
        );
        assert_eq!(split_sentences("St. Louis grew. A lot."), vec!["St. Louis grew.", "A lot."]);
    }

    #[test]
    fn spans_are_char_offsets() {
        let spans = RuleSplitter.split_spans("Ünï one. Two.");
        assert_eq!(spans[0].char_start, 0);
        assert_eq!(spans[0].char_end, 8);
        assert_eq!(spans[1].char_start, 9);
        assert_eq!(spans[1].text, "Two.");
    }

    proptest! {
        #[test]
        fn splitter_preserves_non_whitespace(text in "[A-Za-z0-9 .!?\n]{0,80}") {
            let joined: String = split_sentences(&text).concat();
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&text));
            for s in split_sentences(&text) {
                prop_assert!(!s.trim().is_empty());
            }
        }
    }

    #[test]
    fn wikisection_single_annotation() {
        let raw = json!({
            "id": "w1",
            "text": "The town was founded early. It grew quickly.",
            "annotations": [{"begin": 0, "length": 44, "sectionLabel": "history"}]
        });
        let mut vocab = TopicVocab::new();
        let doc = convert_wikisection(&raw, &mut vocab, &RuleSplitter, 0, "x").unwrap();
        assert_eq!(doc.doc_id, "w1");
        assert_eq!(doc.len(), 2);
        assert!(doc.sentences.iter().all(|s| vocab.label(s.topic_id) == Some("history")));
    }

    #[test]
    fn wikisection_midpoint_containment() {
        // sentence 1 spans [0, 30) -> midpoint 15; sentence 2 spans [40, 80) -> midpoint 60
        let first = format!("{}.", "A".repeat(29));
        let second = format!("{}.", "B".repeat(39));
        let text = format!("{first}{}{second}", " ".repeat(10));
        let raw = json!({
            "id": 7,
            "text": text,
            "annotations": [
                {"begin": 0, "length": 40, "sectionLabel": "geography"},
                {"begin": 40, "length": 50, "sectionLabel": "climate"}
            ]
        });
        let spans = RuleSplitter.split_spans(raw["text"].as_str().unwrap());
        assert_eq!(spans.iter().map(SentenceSpan::midpoint).collect::<Vec<_>>(), vec![15, 60]);

        let mut vocab = TopicVocab::new();
        let doc = convert_wikisection(&raw, &mut vocab, &RuleSplitter, 5, "x").unwrap();
        assert_eq!(doc.doc_id, "7");
        let labels: Vec<_> = doc.sentences.iter().map(|s| vocab.label(s.topic_id).unwrap()).collect();
        assert_eq!(labels, vec!["geography", "climate"]);
        assert_eq!(doc.sentences[0].sid, 5);
        assert_eq!(doc.sentences[1].sid, 6);
    }

    #[test]
    fn wikisection_drops_uncovered_and_rejects_bad_records() {
        let raw = json!({
            "id": "w",
            "text": "Covered here. Outside the annotation.",
            "annotations": [{"begin": 0, "length": 13, "sectionLabel": "a"}]
        });
        let mut vocab = TopicVocab::new();
        let doc = convert_wikisection(&raw, &mut vocab, &RuleSplitter, 0, "x").unwrap();
        assert_eq!(doc.len(), 1);

        let no_ann = json!({"id": "z", "text": "Some text.", "annotations": []});
        assert!(matches!(
            convert_wikisection(&no_ann, &mut vocab, &RuleSplitter, 0, "x"),
            Err(CorpusError::Rejected { .. })
        ));
        let no_text = json!({"id": "z", "annotations": [{"begin": 0, "length": 1, "sectionLabel": "a"}]});
        assert!(convert_wikisection(&no_text, &mut vocab, &RuleSplitter, 0, "x").is_err());

        let batch = json!([raw, no_ann]);
        let conv = convert_wikisection_all(&batch, &mut TopicVocab::new());
        assert_eq!(conv.documents.len(), 1);
        assert_eq!(conv.rejected.len(), 1);
    }

    #[test]
    fn gold_examples() {
        let b = |t: &[usize]| derive_gold(&doc(t)).boundaries().iter().copied().collect::<Vec<_>>();
        assert_eq!(b(&[0, 0, 1, 1, 1, 2]), vec![1, 4]);
        assert!(b(&[0, 0, 0]).is_empty());
        assert_eq!(b(&[0, 1, 0, 1]), vec![0, 1, 2]);
        assert!(b(&[3]).is_empty());
    }

    #[test]
    fn segmentation_rejects_out_of_range() {
        assert!(Segmentation::new(3, [2]).is_err());
        assert!(Segmentation::new(1, [0]).is_err());
        let s = Segmentation::new(6, [1, 4, 4]).unwrap();
        assert_eq!(s.segments(), vec![(0, 2), (2, 5), (5, 6)]);
        assert_eq!(Segmentation::single(3).segments(), vec![(0, 3)]);
    }

    #[test]
    fn split_sizes() {
        let docs: Vec<_> = (0..10).map(|i| Document::from_topics(&format!("d{i}"), 0, &[0])).collect();
        let split = split_corpus(docs.clone(), SplitRatios::default(), 0).unwrap();
        assert_eq!((split.train.len(), split.valid.len(), split.test.len()), (7, 1, 2));

        let again = split_corpus(docs, SplitRatios::default(), 0).unwrap();
        let ids = |d: &[Document]| d.iter().map(|d| d.doc_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&split.train), ids(&again.train));
        assert_eq!(ids(&split.test), ids(&again.test));
    }

    #[test]
    fn split_sizes_at_en_city_scale() {
        let docs: Vec<_> = (0..19_539).map(|i| Document::from_topics(&i.to_string(), 0, &[0])).collect();
        let split = split_corpus(docs, SplitRatios::default(), 3).unwrap();
        // floor(0.1 * 19539) = 1953, floor(0.2 * 19539) = 3907, remainder to train
        assert_eq!((split.train.len(), split.valid.len(), split.test.len()), (13_679, 1_953, 3_907));
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let docs = vec![doc(&[0])];
        let bad = SplitRatios {
            train: 0.7,
            valid: 0.2,
            test: 0.2,
        };
        assert!(matches!(split_corpus(docs.clone(), bad, 0), Err(CorpusError::Config(_))));
        assert!(split_corpus(Vec::new(), SplitRatios::default(), 0).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 1usize..60, seed in any::<u64>()) {
            let docs: Vec<_> = (0..n).map(|i| Document::from_topics(&format!("d{i}"), 0, &[0])).collect();
            let split = split_corpus(docs, SplitRatios::default(), seed).unwrap();
            let mut ids: Vec<String> = split.train.iter().chain(&split.valid).chain(&split.test)
                .map(|d| d.doc_id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert!((split.valid.len() as f64 - 0.1 * n as f64).abs() <= 1.0);
            prop_assert!((split.test.len() as f64 - 0.2 * n as f64).abs() <= 1.0);
        }

        #[test]
        fn gold_counts_topic_changes(topics in proptest::collection::vec(0usize..4, 1..30)) {
            let d = doc(&topics);
            let gold = derive_gold(&d);
            let changes = topics.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert_eq!(gold.boundaries().len(), changes);
            prop_assert_eq!(derive_gold(&d), gold);
        }
    }

    #[test]
    fn jsonl_roundtrip_assigns_contiguous_sids() {
        let input = r#"{"doc_id":"a","sentences":[{"text":"x y","topic":"t1"},{"text":"z","topic":"t2"}]}
{"doc_id":"b","sentences":[{"text":"w","topic":"t2"}]}
"#;
        let corpus = parse_corpus_jsonl(input.as_bytes(), TopicVocab::new()).unwrap();
        assert_eq!(corpus.vocab.labels(), &["t1".to_string(), "t2".to_string()]);
        assert_eq!(corpus.documents[1].sentences[0].sid, 2);
        assert_eq!(corpus.documents[1].sentences[0].topic_id, 1);

        let mut buf = Vec::new();
        write_corpus_jsonl(&corpus.documents, &corpus.vocab, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), input);
    }

    #[test]
    fn jsonl_rejects_empty_documents() {
        let input = r#"{"doc_id":"a","sentences":[]}"#;
        assert!(parse_corpus_jsonl(input.as_bytes(), TopicVocab::new()).is_err());
        let dup = "{\"doc_id\":\"a\",\"sentences\":[{\"text\":\"x\",\"topic\":\"t\"}]}\n".repeat(2);
        assert!(parse_corpus_jsonl(dup.as_bytes(), TopicVocab::new()).is_err());
    }

    #[test]
    fn vocab_json_roundtrip() {
        let v = TopicVocab::from_labels(["a", "b"]).unwrap();
        assert_eq!(TopicVocab::from_json(&v.to_json()).unwrap(), v);
        assert!(TopicVocab::from_labels(["a", "a"]).is_err());
    }
}
