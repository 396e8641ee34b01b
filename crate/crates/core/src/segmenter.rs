//! Slides a two-sentence window over a document and places a boundary
//! between `s_i` and `s_{i+1}` whenever the model says they differ.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Document, Segmentation};
use crate::embedder::{EmbedError, EmbeddingMatrix};
use crate::metrics::micro_f1;
use crate::model::{argmax, forward, predict, HeadParams, ModelError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Which head decides boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    /// Boundary where STP predicts "different topic".
    #[default]
    Stp,
    /// Boundary where the predicted topics of neighbours differ.
    TcOnly,
}

fn rows<T: Scalar>(doc: &Document, embeddings: &EmbeddingMatrix) -> Result<Vec<Vec<T>>, SegmentError> {
    doc.sentences
        .iter()
        .map(|s| Ok(embeddings.row(s.sid)?.iter().map(|&x| T::widen(x)).collect()))
        .collect()
}

pub fn segment_stp<T: Scalar>(
    params: &HeadParams<T>,
    doc: &Document,
    embeddings: &EmbeddingMatrix,
) -> Result<Segmentation, SegmentError> {
    let vectors = rows::<T>(doc, embeddings)?;
    let mut boundaries = Vec::new();
    for (i, pair) in vectors.windows(2).enumerate() {
        if predict(params, &pair[0], &pair[1])?.stp == 0 {
            boundaries.push(i);
        }
    }
    Ok(Segmentation::new(doc.len(), boundaries)?)
}

pub fn segment_tc_only<T: Scalar>(
    params: &HeadParams<T>,
    doc: &Document,
    embeddings: &EmbeddingMatrix,
) -> Result<Segmentation, SegmentError> {
    let vectors = rows::<T>(doc, embeddings)?;
    let topics = vectors
        .iter()
        .map(|u| Ok(argmax(&forward(params, u, u)?.tc_u)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(boundaries_from_topics(&topics))
}

/// Boundaries wherever consecutive topic labels differ.
pub fn boundaries_from_topics(topics: &[usize]) -> Segmentation {
    let boundaries = topics
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, _)| i);
    Segmentation::new(topics.len(), boundaries).expect("indices below n - 1")
}

pub fn segment<T: Scalar>(
    params: &HeadParams<T>,
    doc: &Document,
    embeddings: &EmbeddingMatrix,
    mode: SegmentMode,
) -> Result<Segmentation, SegmentError> {
    match mode {
        SegmentMode::Stp => segment_stp(params, doc, embeddings),
        SegmentMode::TcOnly => segment_tc_only(params, doc, embeddings),
    }
}

/// Micro-F1 of each head over the natural pairs (STP, NSP) and sentences
/// (TC) of `docs`, against gold topics.
pub fn head_f1<T: Scalar>(
    params: &HeadParams<T>,
    docs: &[Document],
    embeddings: &EmbeddingMatrix,
) -> Result<BTreeMap<String, f64>, SegmentError> {
    let mut stp = (Vec::new(), Vec::new());
    let mut nsp = (Vec::new(), Vec::new());
    let mut tc = (Vec::new(), Vec::new());
    for doc in docs {
        let vectors = rows::<T>(doc, embeddings)?;
        for (i, pair) in vectors.windows(2).enumerate() {
            let pred = predict(params, &pair[0], &pair[1])?;
            let same = doc.sentences[i].topic_id == doc.sentences[i + 1].topic_id;
            stp.0.push(pred.stp);
            stp.1.push(usize::from(same));
            nsp.0.push(pred.nsp);
            nsp.1.push(1);
        }
        for (u, s) in vectors.iter().zip(&doc.sentences) {
            tc.0.push(argmax(&forward(params, u, u)?.tc_u));
            tc.1.push(s.topic_id);
        }
    }
    let mut out = BTreeMap::new();
    for (name, (pred, gold)) in [("stp", stp), ("nsp", nsp), ("tc", tc)] {
        if !pred.is_empty() {
            out.insert(name.to_string(), micro_f1(&pred, &gold).expect("equal, non-empty"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub doc_id: String,
    pub boundaries: Vec<usize>,
    /// Half-open `[start, end)` ranges.
    pub segments: Vec<[usize; 2]>,
}

impl SegmentRecord {
    pub fn new(doc_id: &str, segmentation: &Segmentation) -> Self {
        SegmentRecord {
            doc_id: doc_id.to_string(),
            boundaries: segmentation.boundaries().iter().copied().collect(),
            segments: segmentation.segments().into_iter().map(|(s, e)| [s, e]).collect(),
        }
    }

    /// Rebuilds the segmentation from `segments`, checking that it agrees
    /// with `boundaries`.
    pub fn segmentation(&self) -> Result<Segmentation, CorpusError> {
        let n = self.segments.last().map_or(0, |s| s[1]);
        let ranges: Vec<(usize, usize)> = self.segments.iter().map(|s| (s[0], s[1])).collect();
        let seg = Segmentation::from_segments(n, &ranges)?;
        if !seg.boundaries().iter().eq(self.boundaries.iter()) {
            return Err(CorpusError::Config(format!(
                "{}: boundaries {:?} disagree with segments",
                self.doc_id, self.boundaries
            )));
        }
        Ok(seg)
    }
}

pub fn write_segments<W: Write>(out: &mut W, doc: &Document, segmentation: &Segmentation) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, &SegmentRecord::new(&doc.doc_id, segmentation))?;
    out.write_all(b"\n")
}

pub fn write_segments_file(path: &Path, records: &[SegmentRecord]) -> Result<(), SegmentError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_segments<R: BufRead>(reader: R) -> Result<Vec<(String, Segmentation)>, SegmentError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SegmentRecord = serde_json::from_str(&line).map_err(|e| SegmentError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let seg = record.segmentation()?;
        out.push((record.doc_id, seg));
    }
    Ok(out)
}

pub fn read_segments_file(path: &Path) -> Result<Vec<(String, Segmentation)>, SegmentError> {
    read_segments(BufReader::new(File::open(path)?))
}
