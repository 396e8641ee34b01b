//! Siamese pair classifier.
//!
//! Both sentences of a pair share one encoder (the frozen embedder), so the
//! heads only ever see `u` and `v`:
//!
//! * TC:  `W_tc · u + b_tc` and `W_tc · v + b_tc` with one shared weight set
//! * NSP: `W_nsp · f + b_nsp`
//! * STP: `W_stp · f + b_stp`
//!
//! where `f = u;v;|u-v|`. The training objective is
//! `w_stp·CE(stp) + w_tc·(CE(tc_u) + CE(tc_v))/2 + w_nsp·CE(nsp)`, each term
//! mean-reduced over the batch. STP class 1 means "same topic".

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at batch index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid loss weights: {0}")]
    Weights(String),
}

/// `u;v;|u-v|`, length `3d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature<T>(Vec<T>);

impl<T: Scalar> PairFeature<T> {
    pub fn new(u: &[T], v: &[T]) -> Result<Self, ModelError> {
        if u.len() != v.len() {
            return Err(ModelError::Shape(format!("|u| = {} but |v| = {}", u.len(), v.len())));
        }
        let mut f = Vec::with_capacity(3 * u.len());
        f.extend_from_slice(u);
        f.extend_from_slice(v);
        f.extend(u.iter().zip(v).map(|(a, b)| (*a - *b).abs()));
        Ok(PairFeature(f))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn pair_feature<T: Scalar>(u: &[T], v: &[T]) -> Result<PairFeature<T>, ModelError> {
    PairFeature::new(u, v)
}

/// Weights of the three heads. Matrices are row-major with one row per class.
/// Also used to hold gradients, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    d: usize,
    k: usize,
    pub tc_w: Vec<T>,
    pub tc_b: Vec<T>,
    pub nsp_w: Vec<T>,
    pub nsp_b: Vec<T>,
    pub stp_w: Vec<T>,
    pub stp_b: Vec<T>,
}

/// Names of the parameter tensors in checkpoint order.
pub const TENSOR_NAMES: [&str; 6] = ["W_tc", "b_tc", "W_nsp", "b_nsp", "W_stp", "b_stp"];

impl<T: Scalar> HeadParams<T> {
    pub fn zeros(d: usize, k: usize) -> Self {
        HeadParams {
            d,
            k,
            tc_w: vec![T::zero(); k * d],
            tc_b: vec![T::zero(); k],
            nsp_w: vec![T::zero(); 2 * 3 * d],
            nsp_b: vec![T::zero(); 2],
            stp_w: vec![T::zero(); 2 * 3 * d],
            stp_b: vec![T::zero(); 2],
        }
    }

    /// Xavier-uniform weights, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases. Draw order is `W_tc`, `W_nsp`, `W_stp`.
    pub fn xavier<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(d, k);
        let mut fill = |w: &mut [T], fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w.iter_mut() {
                *x = T::lit(rng.gen_range(-a..a));
            }
        };
        fill(&mut params.tc_w, d, k);
        fill(&mut params.nsp_w, 3 * d, 2);
        fill(&mut params.stp_w, 3 * d, 2);
        params
    }

    /// Rebuilds parameters from tensors in [`TENSOR_NAMES`] order.
    pub fn from_tensors(d: usize, k: usize, tensors: [Vec<T>; 6]) -> Result<Self, ModelError> {
        let expected = Self::zeros(d, k);
        for (name, (got, want)) in TENSOR_NAMES.iter().zip(tensors.iter().zip(expected.tensors())) {
            if got.len() != want.len() {
                return Err(ModelError::Shape(format!("{name}: expected {} values, got {}", want.len(), got.len())));
            }
        }
        let [tc_w, tc_b, nsp_w, nsp_b, stp_w, stp_b] = tensors;
        Ok(HeadParams {
            d,
            k,
            tc_w,
            tc_b,
            nsp_w,
            nsp_b,
            stp_w,
            stp_b,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_topics(&self) -> usize {
        self.k
    }

    pub fn tensors(&self) -> [&[T]; 6] {
        [&self.tc_w, &self.tc_b, &self.nsp_w, &self.nsp_b, &self.stp_w, &self.stp_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.tc_w,
            &mut self.tc_b,
            &mut self.nsp_w,
            &mut self.nsp_b,
            &mut self.stp_w,
            &mut self.stp_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Self, alpha: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a = *a + alpha * *b;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = *x * alpha;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect::<Vec<U>>();
        HeadParams {
            d: self.d,
            k: self.k,
            tc_w: conv(&self.tc_w),
            tc_b: conv(&self.tc_b),
            nsp_w: conv(&self.nsp_w),
            nsp_b: conv(&self.nsp_b),
            stp_w: conv(&self.stp_w),
            stp_b: conv(&self.stp_b),
        }
    }

    fn check_input(&self, u: &[T], v: &[T]) -> Result<(), ModelError> {
        if u.len() != self.d || v.len() != self.d {
            return Err(ModelError::Shape(format!(
                "model expects d = {}, got |u| = {}, |v| = {}",
                self.d,
                u.len(),
                v.len()
            )));
        }
        Ok(())
    }
}

/// `w · x + b` for a row-major `rows x x.len()` matrix.
fn affine<T: Scalar>(w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            w[r * cols..(r + 1) * cols]
                .iter()
                .zip(x)
                .fold(bias, |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLogits<T> {
    pub tc_u: Vec<T>,
    pub tc_v: Vec<T>,
    pub nsp: [T; 2],
    pub stp: [T; 2],
}

pub fn forward<T: Scalar>(params: &HeadParams<T>, u: &[T], v: &[T]) -> Result<PairLogits<T>, ModelError> {
    params.check_input(u, v)?;
    let f = PairFeature::new(u, v)?;
    let nsp = affine(&params.nsp_w, &params.nsp_b, f.as_slice());
    let stp = affine(&params.stp_w, &params.stp_b, f.as_slice());
    Ok(PairLogits {
        tc_u: affine(&params.tc_w, &params.tc_b, u),
        tc_v: affine(&params.tc_w, &params.tc_b, v),
        nsp: [nsp[0], nsp[1]],
        stp: [stp[0], stp[1]],
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable log-softmax (max subtraction).
pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    /// 1 = same topic; a boundary is predicted for 0.
    pub stp: usize,
    pub nsp: usize,
    pub topic_u: usize,
    pub topic_v: usize,
}

pub fn predict<T: Scalar>(params: &HeadParams<T>, u: &[T], v: &[T]) -> Result<Prediction, ModelError> {
    let logits = forward(params, u, v)?;
    Ok(Prediction {
        stp: argmax(&logits.stp),
        nsp: argmax(&logits.nsp),
        topic_u: argmax(&logits.tc_u),
        topic_v: argmax(&logits.tc_v),
    })
}

/// Per-head loss weights. A weight of zero removes that head from the
/// objective entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub stp: f64,
    pub tc: f64,
    pub nsp: f64,
}

impl LossWeights {
    pub const STP_ONLY: LossWeights = LossWeights { stp: 1.0, tc: 0.0, nsp: 0.0 };
    pub const TC_ONLY: LossWeights = LossWeights { stp: 0.0, tc: 1.0, nsp: 0.0 };
    pub const STP_TC: LossWeights = LossWeights { stp: 4.0, tc: 1.0, nsp: 0.0 };
    pub const STP_NSP: LossWeights = LossWeights { stp: 1.0, tc: 0.0, nsp: 1.0 };
    pub const STP_TC_NSP: LossWeights = LossWeights { stp: 4.0, tc: 1.0, nsp: 4.0 };

    pub fn new(stp: f64, tc: f64, nsp: f64) -> Result<Self, ModelError> {
        let w = LossWeights { stp, tc, nsp };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.stp, self.tc, self.nsp];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::Weights(format!("weights must be finite and nonnegative: {self:?}")));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(ModelError::Weights("at least one weight must be positive".into()));
        }
        Ok(())
    }

    /// Parses `"stp,tc,nsp"`, e.g. `"4,1,4"`.
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| ModelError::Weights(format!("{s:?}: {e}")))?;
        match parts.as_slice() {
            [stp, tc, nsp] => Self::new(*stp, *tc, *nsp),
            _ => Err(ModelError::Weights(format!("expected three comma-separated weights, got {s:?}"))),
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::STP_TC_NSP
    }
}

/// One labelled pair with borrowed sentence vectors.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPair<'a, T> {
    pub u: &'a [T],
    pub v: &'a [T],
    /// 1 = same topic.
    pub stp: usize,
    /// 1 = consecutive.
    pub nsp: usize,
    pub topic_u: Option<usize>,
    pub topic_v: Option<usize>,
}

/// Unweighted mean cross-entropy of each head.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T> {
    pub stp: T,
    pub tc: T,
    pub nsp: T,
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: T,
    pub parts: LossParts<T>,
    pub grads: HeadParams<T>,
}

/// Raw (unnormalized) sums over a run of examples. Combining two
/// accumulators is plain addition, so chunks can be reduced in any fixed
/// order.
#[derive(Debug, Clone)]
struct Accum<T> {
    grads: HeadParams<T>,
    stp_sum: T,
    nsp_sum: T,
    tc_sum: T,
    tc_count: usize,
    pairs: usize,
}

impl<T: Scalar> Accum<T> {
    fn new(d: usize, k: usize) -> Self {
        Accum {
            grads: HeadParams::zeros(d, k),
            stp_sum: T::zero(),
            nsp_sum: T::zero(),
            tc_sum: T::zero(),
            tc_count: 0,
            pairs: 0,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.grads.add_scaled(&other.grads, T::one());
        self.stp_sum = self.stp_sum + other.stp_sum;
        self.nsp_sum = self.nsp_sum + other.nsp_sum;
        self.tc_sum = self.tc_sum + other.tc_sum;
        self.tc_count += other.tc_count;
        self.pairs += other.pairs;
        self
    }
}

/// Adds `CE(softmax(w·x + b), label)` to the running sum and its gradient to
/// `gw`, `gb`. Returns the example's loss.
fn softmax_ce_step<T: Scalar>(w: &[T], b: &[T], x: &[T], label: usize, gw: &mut [T], gb: &mut [T]) -> T {
    let logits = affine(w, b, x);
    let logp = log_softmax(&logits);
    let cols = x.len();
    for (r, lp) in logp.iter().enumerate() {
        let g = lp.exp() - if r == label { T::one() } else { T::zero() };
        gb[r] = gb[r] + g;
        for (gwi, xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *gwi = *gwi + g * *xi;
        }
    }
    -logp[label]
}

fn accumulate<T: Scalar>(
    params: &HeadParams<T>,
    batch: &[LabeledPair<'_, T>],
    first_index: usize,
    weights: &LossWeights,
) -> Result<Accum<T>, ModelError> {
    let mut acc = Accum::new(params.d, params.k);
    let need_feature = weights.stp > 0.0 || weights.nsp > 0.0;
    for (offset, ex) in batch.iter().enumerate() {
        let index = first_index + offset;
        params.check_input(ex.u, ex.v)?;
        if ex.stp > 1 || ex.nsp > 1 {
            return Err(ModelError::Shape(format!("binary label out of range at batch index {index}")));
        }
        let check = |value: T, what: &'static str| {
            if value.is_finite() {
                Ok(value)
            } else {
                Err(ModelError::NonFinite { what, index })
            }
        };
        acc.pairs += 1;
        if need_feature {
            let f = PairFeature::new(ex.u, ex.v)?;
            let g = &mut acc.grads;
            if weights.stp > 0.0 {
                let ce = softmax_ce_step(&params.stp_w, &params.stp_b, f.as_slice(), ex.stp, &mut g.stp_w, &mut g.stp_b);
                acc.stp_sum = acc.stp_sum + check(ce, "STP loss")?;
            }
            if weights.nsp > 0.0 {
                let ce = softmax_ce_step(&params.nsp_w, &params.nsp_b, f.as_slice(), ex.nsp, &mut g.nsp_w, &mut g.nsp_b);
                acc.nsp_sum = acc.nsp_sum + check(ce, "NSP loss")?;
            }
        }
        if weights.tc > 0.0 {
            for (x, topic) in [(ex.u, ex.topic_u), (ex.v, ex.topic_v)] {
                let Some(topic) = topic else { continue };
                if topic >= params.k {
                    return Err(ModelError::Shape(format!(
                        "topic {topic} out of range for K = {} at batch index {index}",
                        params.k
                    )));
                }
                let g = &mut acc.grads;
                let ce = softmax_ce_step(&params.tc_w, &params.tc_b, x, topic, &mut g.tc_w, &mut g.tc_b);
                acc.tc_sum = acc.tc_sum + check(ce, "TC loss")?;
                acc.tc_count += 1;
            }
        }
    }
    Ok(acc)
}

fn finish<T: Scalar>(acc: Accum<T>, weights: &LossWeights) -> Result<LossOutput<T>, ModelError> {
    if acc.pairs == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let mut grads = acc.grads;
    let mut parts = LossParts::default();
    let mut loss = T::zero();

    let mut term = |w: f64, sum: T, count: usize, tensors: [&mut Vec<T>; 2]| -> T {
        if w == 0.0 || count == 0 {
            for t in tensors {
                t.iter_mut().for_each(|x| *x = T::zero());
            }
            return T::zero();
        }
        let count = T::from_count(count);
        let scale = T::lit(w) / count;
        for t in tensors {
            t.iter_mut().for_each(|x| *x = *x * scale);
        }
        let mean = sum / count;
        loss = loss + T::lit(w) * mean;
        mean
    };
    parts.stp = term(weights.stp, acc.stp_sum, acc.pairs, [&mut grads.stp_w, &mut grads.stp_b]);
    parts.nsp = term(weights.nsp, acc.nsp_sum, acc.pairs, [&mut grads.nsp_w, &mut grads.nsp_b]);
    parts.tc = term(weights.tc, acc.tc_sum, acc.tc_count, [&mut grads.tc_w, &mut grads.tc_b]);
    if !loss.is_finite() {
        return Err(ModelError::NonFinite { what: "total loss", index: 0 });
    }
    Ok(LossOutput { loss, parts, grads })
}

/// Weighted multi-task loss and its analytic gradient, computed sequentially.
pub fn multitask_loss<T: Scalar>(
    params: &HeadParams<T>,
    batch: &[LabeledPair<'_, T>],
    weights: &LossWeights,
) -> Result<LossOutput<T>, ModelError> {
    weights.validate()?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    finish(accumulate(params, batch, 0, weights)?, weights)
}

/// How [`multitask_loss_parallel`] combines per-chunk sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Fixed-size chunks summed left to right: bit-identical for any thread
    /// count.
    Deterministic { chunk: usize },
    /// Rayon's work-stealing reduction. Low-order bits may change with the
    /// thread count.
    Unordered,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Deterministic { chunk: 16 }
    }
}

/// Data-parallel variant of [`multitask_loss`].
pub fn multitask_loss_parallel<T: Scalar>(
    params: &HeadParams<T>,
    batch: &[LabeledPair<'_, T>],
    weights: &LossWeights,
    reduction: Reduction,
) -> Result<LossOutput<T>, ModelError>
where
    for<'a> LabeledPair<'a, T>: Sync,
{
    weights.validate()?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let acc = match reduction {
        Reduction::Deterministic { chunk } => {
            let chunk = chunk.max(1);
            let parts: Vec<Accum<T>> = batch
                .par_chunks(chunk)
                .enumerate()
                .map(|(c, items)| accumulate(params, items, c * chunk, weights))
                .collect::<Result<_, _>>()?;
            parts.into_iter().reduce(Accum::merge).expect("non-empty batch")
        }
        Reduction::Unordered => batch
            .par_iter()
            .enumerate()
            .map(|(i, ex)| accumulate(params, std::slice::from_ref(ex), i, weights))
            .try_reduce(|| Accum::new(params.d, params.k), |a, b| Ok(a.merge(b)))?,
    };
    finish(acc, weights)
}
