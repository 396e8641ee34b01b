//! Training pairs: every consecutive pair of a document, plus consecutive
//! sampling, which draws for each anchor sentence a same-topic consecutive
//! positive, a same-topic non-consecutive negative and a different-topic
//! negative, all from the anchor's own document.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Document};
use crate::embedder::seeded_hash;

/// Which rule produced a pair. Not serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PairKind {
    #[default]
    Natural,
    Positive,
    SameTopicNegative,
    DifferentTopicNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub doc_id: String,
    pub i: usize,
    pub j: usize,
    /// 1 when both sentences share a topic.
    pub stp: u8,
    /// 1 when `j == i + 1`.
    pub nsp: u8,
    #[serde(rename = "ti")]
    pub topic_i: usize,
    #[serde(rename = "tj")]
    pub topic_j: usize,
    #[serde(skip)]
    pub kind: PairKind,
}

impl PairExample {
    fn new(doc: &Document, i: usize, j: usize, kind: PairKind) -> Self {
        let topic_i = doc.sentences[i].topic_id;
        let topic_j = doc.sentences[j].topic_id;
        PairExample {
            doc_id: doc.doc_id.clone(),
            i,
            j,
            stp: (topic_i == topic_j) as u8,
            nsp: (j == i + 1) as u8,
            topic_i,
            topic_j,
            kind,
        }
    }
}

/// `(i, i + 1)` for every adjacent pair.
pub fn natural_pairs(doc: &Document) -> Vec<PairExample> {
    (0..doc.len().saturating_sub(1))
        .map(|i| PairExample::new(doc, i, i + 1, PairKind::Natural))
        .collect()
}

/// Up to three pairs anchored at sentence `i`. Categories without an
/// eligible partner are skipped. The different-topic negative never uses
/// `i + 1`, so `nsp` stays purely positional.
pub fn consecutive_sample<R: Rng + ?Sized>(doc: &Document, i: usize, rng: &mut R) -> Vec<PairExample> {
    let n = doc.len();
    assert!(i < n, "anchor {i} out of range for {n} sentences");
    let topic = doc.sentences[i].topic_id;
    let mut out = Vec::with_capacity(3);

    if i + 1 < n && doc.sentences[i + 1].topic_id == topic {
        out.push(PairExample::new(doc, i, i + 1, PairKind::Positive));
    }

    let same_topic: Vec<usize> = (0..n)
        .filter(|&k| doc.sentences[k].topic_id == topic && k + 1 != i && k != i && k != i + 1)
        .collect();
    if !same_topic.is_empty() {
        let k = same_topic[rng.gen_range(0..same_topic.len())];
        out.push(PairExample::new(doc, i, k, PairKind::SameTopicNegative));
    }

    let other_topic: Vec<usize> = (0..n)
        .filter(|&l| doc.sentences[l].topic_id != topic && l != i + 1)
        .collect();
    if !other_topic.is_empty() {
        let l = other_topic[rng.gen_range(0..other_topic.len())];
        out.push(PairExample::new(doc, i, l, PairKind::DifferentTopicNegative));
    }
    out
}

/// Natural pairs plus consecutive samples for one document, deduplicated on
/// `(i, j)` keeping the first occurrence.
pub fn document_pairs<R: Rng + ?Sized>(doc: &Document, rng: &mut R) -> Vec<PairExample> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut push = |p: PairExample, out: &mut Vec<PairExample>| {
        if seen.insert((p.i, p.j)) {
            out.push(p);
        }
    };
    for p in natural_pairs(doc) {
        push(p, &mut out);
    }
    for i in 0..doc.len() {
        for p in consecutive_sample(doc, i, rng) {
            push(p, &mut out);
        }
    }
    out
}

/// Builds the training set. Each document draws from its own generator
/// (seed mixed with the doc_id hash), so documents can be sampled in
/// parallel; the final shuffle is sequential and seeded by `seed`.
pub fn build_training_set(documents: &[Document], seed: u64) -> Vec<PairExample> {
    let per_doc: Vec<Vec<PairExample>> = documents
        .par_iter()
        .map(|doc| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeded_hash(&doc.doc_id, seed));
            document_pairs(doc, &mut rng)
        })
        .collect();
    let mut all: Vec<PairExample> = per_doc.into_iter().flatten().collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all
}

pub fn write_pairs<W: Write>(pairs: &[PairExample], mut out: W) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_pairs_file(path: &Path, pairs: &[PairExample]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_pairs(pairs, BufWriter::new(file)).map_err(|e| CorpusError::io(path, e))
}

pub fn read_pairs<R: BufRead>(reader: R) -> Result<Vec<PairExample>, CorpusError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_pairs_file(path: &Path) -> Result<Vec<PairExample>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_pairs(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn doc(topics: &[usize]) -> Document {
        Document::from_topics("d", 0, topics)
    }

    fn ij(pairs: &[PairExample]) -> Vec<(usize, usize)> {
        pairs.iter().map(|p| (p.i, p.j)).collect()
    }

    /// Brute-force candidate sets per category for anchor `i`.
    fn candidates(topics: &[usize], i: usize) -> [BTreeSet<usize>; 3] {
        let n = topics.len();
        let mut pos = BTreeSet::new();
        let mut neg1 = BTreeSet::new();
        let mut neg2 = BTreeSet::new();
        for j in 0..n {
            if j == i {
                continue;
            }
            let same = topics[i] == topics[j];
            let adjacent = j + 1 == i || j == i + 1;
            if j == i + 1 && same {
                pos.insert(j);
            }
            if same && !adjacent {
                neg1.insert(j);
            }
            if !same && j != i + 1 {
                neg2.insert(j);
            }
        }
        [pos, neg1, neg2]
    }

    #[test]
    fn natural_pair_examples() {
        let pairs = natural_pairs(&doc(&[0, 0, 1]));
        assert_eq!(ij(&pairs), vec![(0, 1), (1, 2)]);
        assert_eq!((pairs[0].stp, pairs[0].nsp), (1, 1));
        assert_eq!((pairs[1].stp, pairs[1].nsp), (0, 1));
        assert!(natural_pairs(&doc(&[0])).is_empty());
        let alt = natural_pairs(&doc(&[0, 1, 0, 1]));
        assert_eq!(alt.len(), 3);
        assert!(alt.iter().all(|p| p.stp == 0 && p.nsp == 1));
    }

    #[test]
    fn singleton_candidate_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = consecutive_sample(&doc(&[0, 0, 0, 1]), 0, &mut rng);
        assert_eq!(ij(&s), vec![(0, 1), (0, 2), (0, 3)]);
        assert_eq!(
            s.iter().map(|p| p.kind).collect::<Vec<_>>(),
            vec![PairKind::Positive, PairKind::SameTopicNegative, PairKind::DifferentTopicNegative]
        );
    }

    #[test]
    fn boundary_neighbour_is_not_a_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(consecutive_sample(&doc(&[0, 1]), 0, &mut rng).is_empty());
    }

    #[test]
    fn enumerated_choices() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = consecutive_sample(&doc(&[0, 0, 1, 1, 0]), 0, &mut rng);
            assert_eq!(s.len(), 3);
            assert_eq!((s[0].i, s[0].j), (0, 1));
            assert_eq!((s[1].i, s[1].j), (0, 4));
            assert!(s[2].j == 2 || s[2].j == 3);
        }
    }

    #[test]
    fn training_set_for_short_document() {
        // natural (0,1), (1,2); anchor 0 adds (0,2); anchor 2 adds (2,0) or (2,1)
        for seed in 0..10 {
            let set = build_training_set(&[doc(&[0, 0, 1])], seed);
            let got: BTreeSet<_> = ij(&set).into_iter().collect();
            assert_eq!(got.len(), 4);
            assert!(got.contains(&(0, 1)) && got.contains(&(1, 2)) && got.contains(&(0, 2)));
            assert!(got.contains(&(2, 0)) ^ got.contains(&(2, 1)));
        }
    }

    #[test]
    fn training_set_matches_enumeration_oracle() {
        let topics = [0, 0, 0, 1];
        let d = doc(&topics);
        for seed in 0..10 {
            let set = build_training_set(std::slice::from_ref(&d), seed);
            let got: BTreeSet<_> = ij(&set).into_iter().collect();
            // every natural pair, then per anchor at most one pick per category
            let mut must: BTreeSet<(usize, usize)> = (0..3).map(|i| (i, i + 1)).collect();
            let mut allowed = must.clone();
            for i in 0..topics.len() {
                let [pos, neg1, neg2] = candidates(&topics, i);
                for set in [&pos, &neg1, &neg2] {
                    if set.len() == 1 {
                        must.insert((i, *set.iter().next().unwrap()));
                    }
                    allowed.extend(set.iter().map(|&j| (i, j)));
                }
            }
            assert!(must.is_subset(&got), "seed {seed}: {got:?}");
            assert!(got.is_subset(&allowed), "seed {seed}: {got:?}");
            // only anchor 3 has a choice: one of (3,0), (3,1), (3,2)
            assert_eq!(must.len(), 7);
            assert_eq!(got.len(), 8);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let docs = vec![doc(&[0, 0, 1, 1, 0, 2]), Document::from_topics("e", 6, &[1, 1, 0, 0])];
        assert_eq!(build_training_set(&docs, 5), build_training_set(&docs, 5));
    }

    proptest! {
        #[test]
        fn labels_and_categories_hold(topics in proptest::collection::vec(0usize..3, 1..15), seed in any::<u64>()) {
            let d = doc(&topics);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..topics.len() {
                let cands = candidates(&topics, i);
                let sampled = consecutive_sample(&d, i, &mut rng);
                for kind in [PairKind::Positive, PairKind::SameTopicNegative, PairKind::DifferentTopicNegative] {
                    let idx = kind as usize - 1;
                    let picks: Vec<_> = sampled.iter().filter(|p| p.kind == kind).collect();
                    prop_assert_eq!(picks.len(), usize::from(!cands[idx].is_empty()));
                    for p in picks {
                        prop_assert!(cands[idx].contains(&p.j));
                    }
                }
            }
            let set = build_training_set(std::slice::from_ref(&d), seed);
            let mut keys = HashSet::new();
            for p in &set {
                prop_assert!(keys.insert((p.i, p.j)));
                prop_assert_ne!(p.i, p.j);
                prop_assert_eq!(p.stp, (topics[p.i] == topics[p.j]) as u8);
                prop_assert_eq!(p.nsp, (p.j == p.i + 1) as u8);
            }
        }
    }

    #[test]
    fn jsonl_schema() {
        let d = doc(&[0, 1]);
        let pairs = natural_pairs(&d);
        let mut buf = Vec::new();
        write_pairs(&pairs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "{\"doc_id\":\"d\",\"i\":0,\"j\":1,\"stp\":0,\"nsp\":1,\"ti\":0,\"tj\":1}\n");
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
    }
}
