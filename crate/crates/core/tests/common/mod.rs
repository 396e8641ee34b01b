#![allow(dead_code)]

use rand::Rng;
use segline::model::{multitask_loss, HeadParams, LabeledPair, LossWeights};
use segline::synthetic::{generate, SynthConfig};
use segline::{Document, EmbedderConfig, EmbeddingMatrix};

/// Segment id of each sentence given raw boundary indices.
fn segment_ids(n: usize, boundaries: &[usize]) -> Vec<usize> {
    (0..n).map(|i| boundaries.iter().filter(|&&b| b < i).count()).collect()
}

/// Window scan straight from the definitions: `(mismatches, windows)` for
/// Pk and WindowDiff with probes `i` and `i + k`, `k` capped at `n - 1`.
pub fn window_oracle(n: usize, reference: &[usize], hypothesis: &[usize], k: usize) -> ((usize, usize), (usize, usize)) {
    if n < 2 {
        return ((0, 0), (0, 0));
    }
    let k = k.min(n - 1);
    let (r_ids, h_ids) = (segment_ids(n, reference), segment_ids(n, hypothesis));
    let between = |bs: &[usize], i: usize| bs.iter().filter(|&&b| b >= i && b < i + k).count();
    let (mut pk, mut wd, mut windows) = (0, 0, 0);
    let mut i = 0;
    while i + k < n {
        windows += 1;
        if (r_ids[i] == r_ids[i + k]) != (h_ids[i] == h_ids[i + k]) {
            pk += 1;
        }
        if between(reference, i) != between(hypothesis, i) {
            wd += 1;
        }
        i += 1;
    }
    ((pk, windows), (wd, windows))
}

pub fn random_boundaries<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let p: f64 = rng.gen();
    (0..n.saturating_sub(1)).filter(|_| rng.gen_bool(p)).collect()
}

/// Largest relative gap between the analytic gradient and central
/// differences. The denominator is floored at `floor` so entries that are
/// zero on both sides compare by absolute error.
pub fn gradient_check(
    params: &HeadParams<f64>,
    batch: &[LabeledPair<'_, f64>],
    weights: &LossWeights,
    step: f64,
    floor: f64,
) -> f64 {
    let analytic = multitask_loss(params, batch, weights).unwrap().grads;
    let analytic: Vec<f64> = analytic.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut probe = params.clone();
    let mut idx = 0;
    let mut worst = 0.0f64;
    for t in 0..6 {
        for e in 0..probe.tensors()[t].len() {
            let original = probe.tensors()[t][e];
            probe.tensors_mut()[t][e] = original + step;
            let plus = multitask_loss(&probe, batch, weights).unwrap().loss;
            probe.tensors_mut()[t][e] = original - step;
            let minus = multitask_loss(&probe, batch, weights).unwrap().loss;
            probe.tensors_mut()[t][e] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    worst
}

pub struct Instance {
    pub params: HeadParams<f64>,
    pub vectors: Vec<(Vec<f64>, Vec<f64>)>,
    pub labels: Vec<(usize, usize, usize, usize)>,
}

impl Instance {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let d = rng.gen_range(1..=8);
        let k = rng.gen_range(2..=5);
        let b = rng.gen_range(1..=8);
        let mut params = HeadParams::<f64>::xavier(d, k, rng);
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x += rng.gen_range(-0.5..0.5);
            }
        }
        let vec = |rng: &mut R| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let vectors = (0..b).map(|_| (vec(rng), vec(rng))).collect();
        let labels = (0..b)
            .map(|_| (rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..k), rng.gen_range(0..k)))
            .collect();
        Instance { params, vectors, labels }
    }

    pub fn batch(&self) -> Vec<LabeledPair<'_, f64>> {
        self.vectors
            .iter()
            .zip(&self.labels)
            .map(|((u, v), &(stp, nsp, tu, tv))| LabeledPair {
                u,
                v,
                stp,
                nsp,
                topic_u: Some(tu),
                topic_v: Some(tv),
            })
            .collect()
    }
}

/// A synthetic corpus with its hash embeddings.
pub fn synthetic(config: &SynthConfig, d: usize) -> (Vec<Document>, Vec<String>, EmbeddingMatrix) {
    let corpus = generate(config).unwrap();
    let emb = segline::embedder::embed_corpus(&corpus.documents, &EmbedderConfig::hash(d, config.seed)).unwrap();
    (corpus.documents, corpus.vocab.labels().to_vec(), emb)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}
