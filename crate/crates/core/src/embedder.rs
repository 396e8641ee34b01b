//! Sentence vectors: a signed feature-hash embedder and the `SEGEMB1` file
//! format for vectors exported from a pretrained encoder.
//!
//! `SEGEMB1` layout (little-endian): the 8-byte magic `SEGEMB1\0`, `u32 n`,
//! `u32 d`, a flags byte (bit 0 set when rows are L2-normalized), three zero
//! bytes, then `n * d` `f32` values in row-major order. Row `r` belongs to the
//! sentence with sid `r`; the companion manifest is JSONL with one
//! `{"sid", "doc_id", "index_in_doc"}` record per row.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSplit, Document};

pub const MAGIC: &[u8; 8] = b"SEGEMB1\0";
pub const HEADER_LEN: usize = 20;
const FLAG_NORMALIZED: u8 = 1;
const NORM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: not a SEGEMB1 file")]
    BadMagic,
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload size mismatch: header says {n}x{d} ({expected} bytes) but found {actual}")]
    SizeMismatch { n: usize, d: usize, expected: usize, actual: usize },
    #[error("manifest misaligned at row {row}: {message}")]
    ManifestMisaligned { row: usize, message: String },
    #[error("row {row} has a non-finite value")]
    NonFinite { row: usize },
    #[error("row {row} has norm {norm}, expected 1 within {NORM_TOLERANCE}")]
    NotNormalized { row: usize, norm: f32 },
    #[error("invalid embedder configuration: {0}")]
    Config(String),
    #[error("no embedding row for sid {0}")]
    MissingRow(usize),
}

impl EmbedError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        EmbedError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Row-per-sentence `f32` vectors. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    normalized: bool,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates shape, finiteness and (when `normalized`) unit row norms.
    pub fn new(n: usize, d: usize, normalized: bool, data: Vec<f32>) -> Result<Self, EmbedError> {
        if n == 0 || d == 0 {
            return Err(EmbedError::InvalidHeader(format!("n and d must be positive, got {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(EmbedError::SizeMismatch {
                n,
                d,
                expected: n * d,
                actual: data.len(),
            });
        }
        let matrix = EmbeddingMatrix { n, d, normalized, data };
        for row in 0..n {
            let values = matrix.row_unchecked(row);
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite { row });
            }
            if normalized {
                let norm = l2_norm(values);
                if norm != 0.0 && (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(EmbedError::NotNormalized { row, norm });
                }
            }
        }
        Ok(matrix)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, sid: usize) -> Result<&[f32], EmbedError> {
        if sid >= self.n {
            return Err(EmbedError::MissingRow(sid));
        }
        Ok(self.row_unchecked(sid))
    }

    fn row_unchecked(&self, r: usize) -> &[f32] {
        &self.data[r * self.d..(r + 1) * self.d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.push(if self.normalized { FLAG_NORMALIZED } else { 0 });
        out.extend_from_slice(&[0, 0, 0]);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbedError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(EmbedError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(EmbedError::Truncated {
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let n = read_u32(8);
        let d = read_u32(12);
        let flags = bytes[16];
        if bytes[17..20] != [0, 0, 0] || flags & !FLAG_NORMALIZED != 0 {
            return Err(EmbedError::InvalidHeader(format!("unknown flags or reserved bytes: {:?}", &bytes[16..20])));
        }
        let expected = n
            .checked_mul(d)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| EmbedError::InvalidHeader(format!("{n}x{d} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < expected {
            return Err(EmbedError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(EmbedError::SizeMismatch {
                n,
                d,
                expected,
                actual: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n, d, flags & FLAG_NORMALIZED != 0, data)
    }

    pub fn write(&self, path: &Path) -> Result<(), EmbedError> {
        let mut file = BufWriter::new(File::create(path).map_err(|e| EmbedError::io(path, e))?);
        file.write_all(&self.to_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| EmbedError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, EmbedError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| EmbedError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn l2_norm(values: &[f32]) -> f32 {
    values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt() as f32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sid: usize,
    pub doc_id: String,
    pub index_in_doc: usize,
}

/// Manifest records for `documents`, sorted by sid.
pub fn manifest_for(documents: &[Document]) -> Vec<ManifestEntry> {
    let mut entries: Vec<ManifestEntry> = documents
        .iter()
        .flat_map(|doc| {
            doc.sentences.iter().enumerate().map(|(i, s)| ManifestEntry {
                sid: s.sid,
                doc_id: doc.doc_id.clone(),
                index_in_doc: i,
            })
        })
        .collect();
    entries.sort_by_key(|e| e.sid);
    entries
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), EmbedError> {
    let io = |e: std::io::Error| EmbedError::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for entry in entries {
        serde_json::to_writer(&mut out, entry).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, EmbedError> {
    let file = File::open(path).map_err(|e| EmbedError::io(path, e))?;
    let mut entries = Vec::new();
    for (row, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| EmbedError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| EmbedError::ManifestMisaligned {
            row,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Loads a `SEGEMB1` file and checks that manifest line `r` carries sid `r`.
pub fn load_embeddings(path: &Path, manifest_path: &Path) -> Result<(EmbeddingMatrix, Vec<ManifestEntry>), EmbedError> {
    let matrix = EmbeddingMatrix::read(path)?;
    let manifest = read_manifest(manifest_path)?;
    if manifest.len() != matrix.n() {
        return Err(EmbedError::ManifestMisaligned {
            row: manifest.len().min(matrix.n()),
            message: format!("manifest has {} lines, matrix has {} rows", manifest.len(), matrix.n()),
        });
    }
    if let Some((row, entry)) = manifest.iter().enumerate().find(|(r, e)| e.sid != *r) {
        return Err(EmbedError::ManifestMisaligned {
            row,
            message: format!("expected sid {row}, found {}", entry.sid),
        });
    }
    Ok((matrix, manifest))
}

/// Checks that `manifest` describes exactly the sentences of `documents`.
pub fn check_alignment(manifest: &[ManifestEntry], documents: &[Document]) -> Result<(), EmbedError> {
    let expected = manifest_for(documents);
    if expected.len() != manifest.len() {
        return Err(EmbedError::ManifestMisaligned {
            row: expected.len().min(manifest.len()),
            message: format!("corpus has {} sentences, manifest {}", expected.len(), manifest.len()),
        });
    }
    for (row, (want, got)) in expected.iter().zip(manifest).enumerate() {
        if want != got {
            return Err(EmbedError::ManifestMisaligned {
                row,
                message: format!("expected {want:?}, found {got:?}"),
            });
        }
    }
    Ok(())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded hash of a string, shared with other modules that need a stable
/// per-key stream (e.g. per-document sampling seeds).
pub fn seeded_hash(key: &str, seed: u64) -> u64 {
    splitmix64(fnv1a(key.as_bytes()) ^ splitmix64(seed))
}

const SIGN_SALT: u64 = 0x5163_9d7a_c3b1_e2f1;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Bucket and sign of one token.
pub fn token_slot(token: &str, d: usize, seed: u64) -> (usize, f64) {
    let bucket = (seeded_hash(token, seed) % d as u64) as usize;
    let sign = if seeded_hash(token, seed ^ SIGN_SALT) & 1 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Signed bag-of-words counts before normalization.
pub fn hash_counts(text: &str, d: usize, seed: u64) -> Vec<f64> {
    let mut acc = vec![0.0f64; d];
    for token in tokenize(text) {
        let (bucket, sign) = token_slot(&token, d, seed);
        acc[bucket] += sign;
    }
    acc
}

/// Signed feature-hash embedding, L2-normalized unless it is all zeros.
pub fn hash_embed(text: &str, d: usize, seed: u64) -> Vec<f32> {
    assert!(d >= 1, "embedding dimension must be positive");
    let acc = hash_counts(text, d, seed);
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; d];
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hash,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub d: usize,
    pub seed: u64,
    pub normalize: bool,
    pub path: Option<PathBuf>,
    /// Manifest for `kind = file`; defaults to `<path>.manifest.jsonl`.
    pub manifest: Option<PathBuf>,
}

impl EmbedderConfig {
    pub fn hash(d: usize, seed: u64) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            d,
            seed,
            normalize: true,
            path: None,
            manifest: None,
        }
    }

    pub fn file(path: PathBuf, d: usize) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::File,
            d,
            seed: 0,
            normalize: false,
            path: Some(path),
            manifest: None,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.d == 0 {
            return Err(EmbedError::Config("d must be at least 1".into()));
        }
        if self.kind == EmbedderKind::File && self.path.is_none() {
            return Err(EmbedError::Config("kind=file requires a path".into()));
        }
        Ok(())
    }
}

/// Default manifest location next to an embedding file.
pub fn default_manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.jsonl");
    PathBuf::from(s)
}

/// One row per sentence of `documents`, indexed by sid. The documents must
/// cover sids `0..n` exactly (a whole corpus, or all parts of a split).
pub fn embed_corpus(documents: &[Document], config: &EmbedderConfig) -> Result<EmbeddingMatrix, EmbedError> {
    config.validate()?;
    let manifest = manifest_for(documents);
    if let Some((row, e)) = manifest.iter().enumerate().find(|(r, e)| e.sid != *r) {
        return Err(EmbedError::ManifestMisaligned {
            row,
            message: format!("sids must be contiguous from 0, found {}", e.sid),
        });
    }
    match config.kind {
        EmbedderKind::Hash => {
            let mut texts = vec![""; manifest.len()];
            for doc in documents {
                for s in &doc.sentences {
                    texts[s.sid] = &s.text;
                }
            }
            let rows: Vec<Vec<f32>> = texts
                .par_iter()
                .map(|t| {
                    if config.normalize {
                        hash_embed(t, config.d, config.seed)
                    } else {
                        hash_counts(t, config.d, config.seed).into_iter().map(|v| v as f32).collect()
                    }
                })
                .collect();
            EmbeddingMatrix::new(rows.len(), config.d, config.normalize, rows.concat())
        }
        EmbedderKind::File => {
            let path = config.path.as_deref().expect("validated");
            let manifest_path = config.manifest.clone().unwrap_or_else(|| default_manifest_path(path));
            let (matrix, file_manifest) = load_embeddings(path, &manifest_path)?;
            if matrix.d() != config.d {
                return Err(EmbedError::Config(format!(
                    "configured d={} but file has d={}",
                    config.d,
                    matrix.d()
                )));
            }
            check_alignment(&file_manifest, documents)?;
            Ok(matrix)
        }
    }
}

/// Embeds every part of a split into one sid-indexed matrix shared by all
/// three parts.
pub fn embed_split(split: &CorpusSplit, config: &EmbedderConfig) -> Result<EmbeddingMatrix, EmbedError> {
    let all: Vec<Document> = split
        .train
        .iter()
        .chain(&split.valid)
        .chain(&split.test)
        .cloned()
        .collect();
    embed_corpus(&all, config)
}
