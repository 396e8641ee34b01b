//! Segmentation metrics: Pk, WindowDiff and micro-F1.
//!
//! A window of size `k` starting at sentence `i` covers the boundary indices
//! `[i, i + k)`; its endpoints `s_i` and `s_{i+k}` lie in the same segment
//! exactly when no boundary falls in that range. `k` is clamped to `n - 1`
//! per document, giving `n - k` windows. Corpus scores are micro-averaged:
//! total mismatches over total windows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Segmentation;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("reference has {reference} sentences but hypothesis has {hypothesis}")]
    LengthMismatch { reference: usize, hypothesis: usize },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("cannot compute a window size for an empty corpus")]
    EmptyCorpus,
    #[error("label lists differ in length: {pred} predicted vs {gold} gold")]
    LabelLengthMismatch { pred: usize, gold: usize },
    #[error("no labels to score")]
    NoLabels,
    #[error("{gold} gold documents but {hyp} predicted")]
    DocumentCountMismatch { gold: usize, hyp: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowCounts {
    pub mismatches: usize,
    pub windows: usize,
}

impl WindowCounts {
    pub fn rate(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.mismatches as f64 / self.windows as f64
        }
    }
}

/// Half the mean gold segment length over the whole corpus, rounded half away
/// from zero, at least 1.
pub fn window_size(gold: &[Segmentation]) -> Result<usize, MetricError> {
    let sentences: usize = gold.iter().map(Segmentation::n).sum();
    let segments: usize = gold.iter().map(Segmentation::num_segments).sum();
    if gold.is_empty() || segments == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    let mean_len = sentences as f64 / segments as f64;
    Ok(((mean_len / 2.0).round() as usize).max(1))
}

/// `prefix[i]` = number of boundaries with index `< i`.
fn boundary_prefix(seg: &Segmentation) -> Vec<usize> {
    let mut prefix = vec![0; seg.n() + 1];
    for i in 0..seg.n() {
        prefix[i + 1] = prefix[i] + usize::from(seg.is_boundary(i));
    }
    prefix
}

fn sliding<F>(reference: &Segmentation, hypothesis: &Segmentation, k: usize, disagree: F) -> Result<WindowCounts, MetricError>
where
    F: Fn(usize, usize) -> bool,
{
    if reference.n() != hypothesis.n() {
        return Err(MetricError::LengthMismatch {
            reference: reference.n(),
            hypothesis: hypothesis.n(),
        });
    }
    if k == 0 {
        return Err(MetricError::ZeroWindow);
    }
    let n = reference.n();
    if n <= 1 {
        return Ok(WindowCounts::default());
    }
    let k = k.min(n - 1);
    let r = boundary_prefix(reference);
    let h = boundary_prefix(hypothesis);
    let mismatches = (0..n - k)
        .filter(|&i| disagree(r[i + k] - r[i], h[i + k] - h[i]))
        .count();
    Ok(WindowCounts {
        mismatches,
        windows: n - k,
    })
}

/// Pk: windows where reference and hypothesis disagree on whether the two
/// ends share a segment.
pub fn pk(reference: &Segmentation, hypothesis: &Segmentation, k: usize) -> Result<WindowCounts, MetricError> {
    sliding(reference, hypothesis, k, |r, h| (r > 0) != (h > 0))
}

/// WindowDiff: windows where the boundary counts differ.
pub fn windowdiff(reference: &Segmentation, hypothesis: &Segmentation, k: usize) -> Result<WindowCounts, MetricError> {
    sliding(reference, hypothesis, k, |r, h| r != h)
}

/// Micro-averaged F1 for single-label classification, which is accuracy.
pub fn micro_f1(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LabelLengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricError::NoLabels);
    }
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Window-weighted mean over documents. Documents without windows are
/// skipped; if no document has any, the result is 0.
pub fn aggregate(per_doc: &[WindowCounts]) -> f64 {
    let mismatches: usize = per_doc.iter().map(|c| c.mismatches).sum();
    let windows: usize = per_doc.iter().map(|c| c.windows).sum();
    if windows == 0 {
        log::warn!("no evaluation windows in {} documents; reporting 0", per_doc.len());
        return 0.0;
    }
    mismatches as f64 / windows as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pk: f64,
    pub windowdiff: f64,
    #[serde(rename = "k")]
    pub k_used: usize,
    pub per_head_f1: BTreeMap<String, f64>,
    pub docs: usize,
    #[serde(rename = "windows")]
    pub windows_counted: usize,
}

/// Corpus-level Pk and WindowDiff, with `k` taken from the gold side.
pub fn evaluate(gold: &[Segmentation], hyp: &[Segmentation]) -> Result<MetricReport, MetricError> {
    if gold.len() != hyp.len() {
        return Err(MetricError::DocumentCountMismatch {
            gold: gold.len(),
            hyp: hyp.len(),
        });
    }
    let k = window_size(gold)?;
    let mut pk_counts = Vec::with_capacity(gold.len());
    let mut wd_counts = Vec::with_capacity(gold.len());
    for (g, h) in gold.iter().zip(hyp) {
        pk_counts.push(pk(g, h, k)?);
        wd_counts.push(windowdiff(g, h, k)?);
    }
    Ok(MetricReport {
        pk: aggregate(&pk_counts),
        windowdiff: aggregate(&wd_counts),
        k_used: k,
        per_head_f1: BTreeMap::new(),
        docs: gold.len(),
        windows_counted: pk_counts.iter().map(|c| c.windows).sum(),
    })
}
