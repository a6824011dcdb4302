//! Fusion and prediction head.
//!
//! Concatenates the three branch features, classifies with a bias-free
//! softmax layer, sums emotion probabilities into a two-way polarity
//! vector along the taxonomy partition, and combines the emotion and
//! polarity negative log-likelihoods as `L = L_emo + lambda * L_pol`.
//!
//! On wrong predictions the emotion term alone cannot tell a
//! polarity-preserving mistake from a polarity-crossing one; the
//! polarity term penalizes the crossing mistake much harder, which is
//! the point of the combined loss.

use crate::diffmath::{
    affine, affine_backward, concat, nll_backward, nll_from_probs, softmax, softmax_backward,
    HasParams, Param, Rng, Tensor, LOG_EPS,
};
use crate::error::{Error, Result};
use crate::taxonomy::{Polarity, Taxonomy};

/// The emotion classifier: a single weight matrix [C x D], no bias.
#[derive(Clone, Debug)]
pub struct ClassifierParams {
    pub w: Param,
}

impl ClassifierParams {
    pub fn new(classes: usize, feat: usize, rng: &mut Rng) -> ClassifierParams {
        ClassifierParams {
            w: Param::new(crate::diffmath::init_matrix(rng, classes, feat)),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.value.rows()
    }

    pub fn feat(&self) -> usize {
        self.w.value.cols()
    }
}

impl HasParams for ClassifierParams {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w", &mut self.w);
    }
}

/// Probability vector over the emotion categories.
#[derive(Clone, Debug)]
pub struct EmotionProbs(Tensor);

impl EmotionProbs {
    /// Validate a hand-constructed distribution: entries in [0, 1] and
    /// sum 1 within 1e-9.
    pub fn new(probs: Tensor) -> Result<EmotionProbs> {
        probs.expect_vector("emotion probs")?;
        let sum: f64 = probs.as_slice().iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "emotion probs sum to {sum}, not 1"
            )));
        }
        if probs.as_slice().iter().any(|p| *p < 0.0 || *p > 1.0) {
            return Err(Error::InvalidArgument("emotion probs outside [0, 1]".into()));
        }
        Ok(EmotionProbs(probs))
    }

    pub(crate) fn from_softmax(probs: Tensor) -> EmotionProbs {
        EmotionProbs(probs)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.len()
    }

    /// Argmax with ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.as_slice().iter().enumerate() {
            if *v > self.0.at(best) {
                best = i;
            }
        }
        best
    }
}

/// Two-way polarity probabilities: index 0 positive, index 1 negative.
#[derive(Clone, Copy, Debug)]
pub struct PolarProbs {
    pub positive: f64,
    pub negative: f64,
}

impl PolarProbs {
    pub fn get(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Positive => self.positive,
            Polarity::Negative => self.negative,
        }
    }
}

/// Per-example loss decomposition; `l_total = l_emo + lambda * l_pol`
/// exactly, in that operation order.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub l_emo: f64,
    pub l_pol: f64,
    pub lambda: f64,
    pub l_total: f64,
}

/// Concatenate the branch features into the fused emotion feature.
pub fn fuse(v_g: &Tensor, v_s: &Tensor, v_e: &Tensor) -> Result<Tensor> {
    concat(&[v_g, v_s, v_e])
}

/// Softmax classification of the fused feature.
pub fn classify(p: &ClassifierParams, v_emo: &Tensor) -> Result<(EmotionProbs, Tensor)> {
    let logits = affine(&p.w.value, v_emo, None)?;
    let probs = softmax(&logits)?;
    Ok((EmotionProbs::from_softmax(probs.clone()), probs))
}

/// Backward through softmax and the classifier given the gradient
/// w.r.t. the probability vector.
pub fn classify_backward(
    p: &mut ClassifierParams,
    v_emo: &Tensor,
    probs: &EmotionProbs,
    grad_probs: &Tensor,
    grad_v_emo: &mut Tensor,
) {
    let mut grad_logits = Tensor::zeros_vector(probs.count());
    softmax_backward(probs.as_tensor(), grad_probs, &mut grad_logits);
    affine_backward(
        &p.w.value,
        v_emo,
        &grad_logits,
        &mut p.w.grad,
        Some(grad_v_emo),
        None,
    );
}

/// Sum the emotion probabilities over the taxonomy's polarity partition.
pub fn polarity_aggregate(t: &Taxonomy, e: &EmotionProbs) -> Result<PolarProbs> {
    if e.count() != t.count() {
        return Err(Error::ShapeMismatch(format!(
            "polarity_aggregate: {} probs vs taxonomy with {}",
            e.count(),
            t.count()
        )));
    }
    let (pos, neg) = t.partition_indices();
    let mut positive = 0.0;
    for i in pos {
        positive += e.as_tensor().at(i);
    }
    let mut negative = 0.0;
    for i in neg {
        negative += e.as_tensor().at(i);
    }
    Ok(PolarProbs { positive, negative })
}

/// Negative log-likelihood of the labeled emotion.
pub fn emotion_loss(e: &EmotionProbs, y_emo: usize) -> Result<f64> {
    nll_from_probs(e.as_tensor(), y_emo)
}

/// Negative log-likelihood of the labeled polarity under the aggregated
/// polar vector.
pub fn polarity_loss(t: &Taxonomy, e: &EmotionProbs, y_pol: Polarity) -> Result<f64> {
    let pol = polarity_aggregate(t, e)?;
    Ok(-pol.get(y_pol).max(LOG_EPS).ln())
}

/// The combined loss. The polarity label is derived from the emotion
/// label through the taxonomy.
pub fn hierarchical_loss(
    t: &Taxonomy,
    e: &EmotionProbs,
    y_emo: usize,
    lambda: f64,
) -> Result<LossBreakdown> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("negative lambda {lambda}")));
    }
    let y_pol = t.polarity_of(y_emo)?;
    let l_emo = emotion_loss(e, y_emo)?;
    let l_pol = polarity_loss(t, e, y_pol)?;
    Ok(LossBreakdown {
        l_emo,
        l_pol,
        lambda,
        l_total: l_emo + lambda * l_pol,
    })
}

/// Backward of [`hierarchical_loss`] into the emotion probabilities.
pub fn hierarchical_loss_backward(
    t: &Taxonomy,
    e: &EmotionProbs,
    y_emo: usize,
    lambda: f64,
    grad_total: f64,
    grad_probs: &mut Tensor,
) -> Result<()> {
    // Emotion term.
    nll_backward(e.as_tensor(), y_emo, grad_total, grad_probs);
    // Polarity term: every emotion sharing the labeled polarity carries
    // the same d(-ln p_pol)/dp weight.
    if lambda > 0.0 {
        let y_pol = t.polarity_of(y_emo)?;
        let pol = polarity_aggregate(t, e)?;
        let d_pol = grad_total * lambda * (-1.0 / pol.get(y_pol).max(LOG_EPS));
        for (i, g) in grad_probs.as_mut_slice().iter_mut().enumerate() {
            if t.polarity_of(i)? == y_pol {
                *g += d_pol;
            }
        }
    }
    Ok(())
}

/// Full head backward: hierarchical loss -> softmax -> classifier,
/// accumulating into the classifier weights and the fused feature.
#[allow(clippy::too_many_arguments)]
pub fn head_backward(
    t: &Taxonomy,
    p: &mut ClassifierParams,
    v_emo: &Tensor,
    probs: &EmotionProbs,
    y_emo: usize,
    lambda: f64,
    grad_total: f64,
    grad_v_emo: &mut Tensor,
) -> Result<()> {
    let mut grad_probs = Tensor::zeros_vector(probs.count());
    hierarchical_loss_backward(t, probs, y_emo, lambda, grad_total, &mut grad_probs)?;
    classify_backward(p, v_emo, probs, &grad_probs, grad_v_emo);
    Ok(())
}
