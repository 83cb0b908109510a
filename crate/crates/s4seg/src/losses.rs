//! Loss functions for adversarial semi-supervised segmentation.
//!
//! Every loss comes in a value-only and a value+gradient form. Gradients are
//! hand-derived and checked against central finite differences in the test
//! suites, so the functions are generic over the float type: training runs
//! in `f32`, verification in `f64`.
//!
//! Conventions shared by all losses:
//! - probabilities are clamped to `[LOG_EPS, 1]` before any logarithm, and
//!   the gradient is zero where the clamp is active;
//! - a prediction is a per-pixel probability simplex over `C` classes;
//! - batch cross-entropy averages over all pixels of the batch, while the
//!   self-training term keeps the per-sample spatial sum and averages over
//!   gated-in samples only.

use ndarray::{Array3, NdFloat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::MaskLabel;

/// Clamp floor applied to every log argument.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("non-finite input in {term}")]
    NonFinite { term: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

/// Per-pixel class probabilities for one sample, shape `[C, H, W]`.
/// Channel values sum to one at every pixel.
#[derive(Debug, Clone)]
pub struct SoftPrediction<F = f32> {
    probs: Array3<F>,
}

impl<F: NdFloat> SoftPrediction<F> {
    /// Validates range and the per-pixel simplex invariant (1e-6).
    pub fn new(probs: Array3<F>) -> Result<Self, LossError> {
        let (c, h, w) = probs.dim();
        if c < 2 {
            return Err(LossError::InvalidArg(format!("need at least 2 channels, got {c}")));
        }
        let one = F::one();
        let tol = F::from(1e-6).unwrap();
        for i in 0..h {
            for j in 0..w {
                let mut sum = F::zero();
                for ci in 0..c {
                    let v = probs[(ci, i, j)];
                    if !(v >= F::zero() && v <= one) {
                        return Err(LossError::InvalidArg(format!(
                            "probability {v} out of [0,1] at ({ci},{i},{j})"
                        )));
                    }
                    sum = sum + v;
                }
                if (sum - one).abs() > tol {
                    return Err(LossError::InvalidArg(format!(
                        "channel sum {sum} at pixel ({i},{j}) breaks the simplex invariant"
                    )));
                }
            }
        }
        Ok(SoftPrediction { probs })
    }

    /// Wraps probabilities known to satisfy the invariants (softmax output).
    pub fn from_probs_unchecked(probs: Array3<F>) -> Self {
        SoftPrediction { probs }
    }

    pub fn probs(&self) -> &Array3<F> {
        &self.probs
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.probs.dim()
    }
}

/// Weights of the four generator loss terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub w_ce: f64,
    pub w_dice: f64,
    pub w_fm: f64,
    pub w_st: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_ce: 0.4,
            w_dice: 0.6,
            w_fm: 0.1,
            w_st: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, w) in [
            ("w_ce", self.w_ce),
            ("w_dice", self.w_dice),
            ("w_fm", self.w_fm),
            ("w_st", self.w_st),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::InvalidArg(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// A hardened generator prediction used as a training target. The one-hot
/// mask is a constant with respect to differentiation; only the prediction
/// passed to [`st_loss`] carries gradient.
#[derive(Debug, Clone)]
pub struct PseudoLabel<F = f32> {
    pub onehot: Array3<F>,
    pub confidence: F,
}

fn clamp_low<F: NdFloat>(v: F) -> F {
    let eps = F::from(LOG_EPS).unwrap();
    if v < eps {
        eps
    } else {
        v
    }
}

fn check_pair_shapes<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
) -> Result<(), LossError> {
    if preds.len() != targets.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    for (i, (p, t)) in preds.iter().zip(targets).enumerate() {
        let (c, h, w) = p.dim();
        let (th, tw) = t.labels().dim();
        if (h, w) != (th, tw) {
            return Err(LossError::ShapeMismatch(format!(
                "sample {i}: prediction {h}x{w} vs target {th}x{tw}"
            )));
        }
        if t.n_classes() != c {
            return Err(LossError::ShapeMismatch(format!(
                "sample {i}: prediction has {c} channels, target expects {}",
                t.n_classes()
            )));
        }
    }
    Ok(())
}

/// Pixel-averaged cross-entropy of predictions against hard labels:
/// `-(1/N) sum_i sum_c y_ic log p_ic` with `N` the total pixel count.
pub fn compute_ce_loss<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
) -> Result<F, LossError> {
    Ok(ce_impl(preds, targets, false)?.0)
}

/// Cross-entropy plus `dL/dp` for every prediction element.
pub fn compute_ce_loss_with_grad<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
) -> Result<(F, Vec<Array3<F>>), LossError> {
    let (loss, grads) = ce_impl(preds, targets, true)?;
    Ok((loss, grads.expect("requested")))
}

#[allow(clippy::type_complexity)]
fn ce_impl<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
    want_grad: bool,
) -> Result<(F, Option<Vec<Array3<F>>>), LossError> {
    if preds.is_empty() {
        return Err(LossError::EmptyBatch("cross-entropy"));
    }
    check_pair_shapes(preds, targets)?;
    let eps = F::from(LOG_EPS).unwrap();
    let n_pixels: usize = preds.iter().map(|p| p.dim().1 * p.dim().2).sum();
    let n = F::from(n_pixels).unwrap();
    let mut total = F::zero();
    let mut grads = if want_grad {
        Some(preds.iter().map(|p| Array3::zeros(p.dim())).collect::<Vec<_>>())
    } else {
        None
    };
    for (bi, (pred, target)) in preds.iter().zip(targets).enumerate() {
        let (_, h, w) = pred.dim();
        let labels = target.labels();
        for i in 0..h {
            for j in 0..w {
                let cls = labels[(i, j)] as usize;
                let p = pred.probs()[(cls, i, j)];
                if !p.is_finite() {
                    return Err(LossError::NonFinite { term: "cross-entropy input" });
                }
                let pc = clamp_low(p);
                total = total - pc.ln();
                if let Some(gs) = grads.as_mut() {
                    if p >= eps {
                        gs[bi][(cls, i, j)] = -F::one() / (n * pc);
                    }
                }
            }
        }
    }
    Ok((total / n, grads))
}

/// Dice loss `1 - DSC` on one class channel, with
/// `DSC = (2*sum(p*g) + s) / (sum(p^2) + sum(g^2) + s)`, `s = 1e-6`,
/// sums pooled over every pixel of the batch.
pub fn compute_dice_loss<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
    class_index: usize,
) -> Result<F, LossError> {
    Ok(dice_impl(preds, targets, class_index, false)?.0)
}

pub fn compute_dice_loss_with_grad<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
    class_index: usize,
) -> Result<(F, Vec<Array3<F>>), LossError> {
    let (loss, grads) = dice_impl(preds, targets, class_index, true)?;
    Ok((loss, grads.expect("requested")))
}

const DICE_SMOOTHING: f64 = 1e-6;

#[allow(clippy::type_complexity)]
fn dice_impl<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    targets: &[MaskLabel],
    class_index: usize,
    want_grad: bool,
) -> Result<(F, Option<Vec<Array3<F>>>), LossError> {
    if preds.is_empty() {
        return Err(LossError::EmptyBatch("dice"));
    }
    check_pair_shapes(preds, targets)?;
    if let Some(p) = preds.first() {
        if class_index >= p.dim().0 {
            return Err(LossError::InvalidArg(format!(
                "class_index {class_index} out of range for {} channels",
                p.dim().0
            )));
        }
    }
    let s = F::from(DICE_SMOOTHING).unwrap();
    let two = F::from(2.0).unwrap();
    let mut inter = F::zero();
    let mut p_sq = F::zero();
    let mut g_sq = F::zero();
    for (pred, target) in preds.iter().zip(targets) {
        let (_, h, w) = pred.dim();
        let labels = target.labels();
        for i in 0..h {
            for j in 0..w {
                let p = pred.probs()[(class_index, i, j)];
                let g = if labels[(i, j)] as usize == class_index {
                    F::one()
                } else {
                    F::zero()
                };
                inter = inter + p * g;
                p_sq = p_sq + p * p;
                g_sq = g_sq + g;
            }
        }
    }
    let num = two * inter + s;
    let den = p_sq + g_sq + s;
    let loss = F::one() - num / den;
    let grads = if want_grad {
        let mut gs: Vec<Array3<F>> = preds.iter().map(|p| Array3::zeros(p.dim())).collect();
        for (bi, (pred, target)) in preds.iter().zip(targets).enumerate() {
            let (_, h, w) = pred.dim();
            let labels = target.labels();
            for i in 0..h {
                for j in 0..w {
                    let p = pred.probs()[(class_index, i, j)];
                    let g = if labels[(i, j)] as usize == class_index {
                        F::one()
                    } else {
                        F::zero()
                    };
                    // d(1 - num/den)/dp = -(2g*den - num*2p) / den^2
                    gs[bi][(class_index, i, j)] =
                        -(two * g * den - num * two * p) / (den * den);
                }
            }
        }
        Some(gs)
    } else {
        None
    };
    Ok((loss, grads))
}

/// Feature matching: mean absolute difference between the batch-averaged
/// real and fake feature maps, normalized by the element count of one map.
/// Real features are constants; the gradient is with respect to the fake
/// features only.
pub fn compute_fm_loss<F: NdFloat>(
    real_features: &[Array3<F>],
    fake_features: &[Array3<F>],
) -> Result<F, LossError> {
    Ok(fm_impl(real_features, fake_features, false)?.0)
}

pub fn compute_fm_loss_with_grad<F: NdFloat>(
    real_features: &[Array3<F>],
    fake_features: &[Array3<F>],
) -> Result<(F, Vec<Array3<F>>), LossError> {
    let (loss, grads) = fm_impl(real_features, fake_features, true)?;
    Ok((loss, grads.expect("requested")))
}

#[allow(clippy::type_complexity)]
fn fm_impl<F: NdFloat>(
    real_features: &[Array3<F>],
    fake_features: &[Array3<F>],
    want_grad: bool,
) -> Result<(F, Option<Vec<Array3<F>>>), LossError> {
    if real_features.is_empty() || fake_features.is_empty() {
        return Err(LossError::EmptyBatch("feature matching"));
    }
    let dim = real_features[0].dim();
    for f in real_features.iter().chain(fake_features.iter()) {
        if f.dim() != dim {
            return Err(LossError::ShapeMismatch(format!(
                "feature map {:?} vs expected {:?}",
                f.dim(),
                dim
            )));
        }
    }
    let n_el = F::from(dim.0 * dim.1 * dim.2).unwrap();
    let nr = F::from(real_features.len()).unwrap();
    let nf = F::from(fake_features.len()).unwrap();
    let mut mean_real = Array3::<F>::zeros(dim);
    for f in real_features {
        mean_real = mean_real + f;
    }
    mean_real.mapv_inplace(|v| v / nr);
    let mut mean_fake = Array3::<F>::zeros(dim);
    for f in fake_features {
        mean_fake = mean_fake + f;
    }
    mean_fake.mapv_inplace(|v| v / nf);

    let mut total = F::zero();
    for (r, f) in mean_real.iter().zip(mean_fake.iter()) {
        if !r.is_finite() || !f.is_finite() {
            return Err(LossError::NonFinite { term: "feature matching input" });
        }
        total = total + (*r - *f).abs();
    }
    let loss = total / n_el;
    let grads = if want_grad {
        // dL/dfake_b[e] = sign(mean_fake[e] - mean_real[e]) / (n_el * nf)
        let mut g_one = Array3::<F>::zeros(dim);
        for ((ge, r), f) in g_one.iter_mut().zip(mean_real.iter()).zip(mean_fake.iter()) {
            let d = *f - *r;
            let sgn = if d > F::zero() {
                F::one()
            } else if d < F::zero() {
                -F::one()
            } else {
                F::zero()
            };
            *ge = sgn / (n_el * nf);
        }
        Some(vec![g_one; fake_features.len()])
    } else {
        None
    };
    Ok((loss, grads))
}

/// Hardens a prediction into a one-hot pseudo-label; ties break toward the
/// lower class index. The confidence is the discriminator's probability for
/// the generating sample. The result is a constant for differentiation.
pub fn harden_pseudo_label<F: NdFloat>(
    pred: &SoftPrediction<F>,
    d_prob: F,
) -> Result<PseudoLabel<F>, LossError> {
    if !(d_prob >= F::zero() && d_prob <= F::one()) {
        return Err(LossError::InvalidArg(format!(
            "discriminator probability {d_prob} out of [0,1]"
        )));
    }
    let (c, h, w) = pred.dim();
    let mut onehot = Array3::<F>::zeros((c, h, w));
    for i in 0..h {
        for j in 0..w {
            let mut best = 0usize;
            let mut best_v = pred.probs()[(0, i, j)];
            for ci in 1..c {
                let v = pred.probs()[(ci, i, j)];
                if v > best_v {
                    best_v = v;
                    best = ci;
                }
            }
            onehot[(best, i, j)] = F::one();
        }
    }
    Ok(PseudoLabel {
        onehot,
        confidence: d_prob,
    })
}

/// Self-training loss: samples whose confidence clears `tau` contribute the
/// spatial sum `-sum y* log p`; the total is averaged over gated-in samples
/// (zero when the gate admits none).
pub fn compute_st_loss<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    pseudos: &[PseudoLabel<F>],
    tau: F,
) -> Result<F, LossError> {
    Ok(st_impl(preds, pseudos, tau, false)?.0)
}

pub fn compute_st_loss_with_grad<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    pseudos: &[PseudoLabel<F>],
    tau: F,
) -> Result<(F, Vec<Array3<F>>, usize), LossError> {
    let (loss, grads, gated) = st_impl(preds, pseudos, tau, true)?;
    Ok((loss, grads.expect("requested"), gated))
}

/// Number of samples whose confidence clears the gate.
pub fn gated_in_count<F: NdFloat>(pseudos: &[PseudoLabel<F>], tau: F) -> usize {
    pseudos.iter().filter(|p| p.confidence >= tau).count()
}

#[allow(clippy::type_complexity)]
fn st_impl<F: NdFloat>(
    preds: &[SoftPrediction<F>],
    pseudos: &[PseudoLabel<F>],
    tau: F,
    want_grad: bool,
) -> Result<(F, Option<Vec<Array3<F>>>, usize), LossError> {
    if preds.len() != pseudos.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} predictions vs {} pseudo-labels",
            preds.len(),
            pseudos.len()
        )));
    }
    if !(tau >= F::zero() && tau <= F::one()) {
        return Err(LossError::InvalidArg(format!("tau {tau} out of [0,1]")));
    }
    for (i, (p, y)) in preds.iter().zip(pseudos).enumerate() {
        if p.dim() != y.onehot.dim() {
            return Err(LossError::ShapeMismatch(format!(
                "sample {i}: prediction {:?} vs pseudo-label {:?}",
                p.dim(),
                y.onehot.dim()
            )));
        }
    }
    let eps = F::from(LOG_EPS).unwrap();
    let gated: Vec<usize> = pseudos
        .iter()
        .enumerate()
        .filter(|(_, y)| y.confidence >= tau)
        .map(|(i, _)| i)
        .collect();
    let n_gated = gated.len();
    let mut grads = if want_grad {
        Some(preds.iter().map(|p| Array3::zeros(p.dim())).collect::<Vec<_>>())
    } else {
        None
    };
    if n_gated == 0 {
        return Ok((F::zero(), grads, 0));
    }
    let ng = F::from(n_gated).unwrap();
    let mut total = F::zero();
    for &bi in &gated {
        let pred = &preds[bi];
        let y = &pseudos[bi];
        let (c, h, w) = pred.dim();
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    if y.onehot[(ci, i, j)] > F::zero() {
                        let p = pred.probs()[(ci, i, j)];
                        if !p.is_finite() {
                            return Err(LossError::NonFinite { term: "self-training input" });
                        }
                        let pc = clamp_low(p);
                        total = total - pc.ln();
                        if let Some(gs) = grads.as_mut() {
                            if p >= eps {
                                gs[bi][(ci, i, j)] = -F::one() / (ng * pc);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((total / ng, grads, n_gated))
}

/// Weighted sum of the four generator loss terms.
pub fn compute_total_generator_loss<F: NdFloat>(
    ce: F,
    dice: F,
    fm: F,
    st: F,
    w: &LossWeights,
) -> Result<F, LossError> {
    for (name, v) in [("ce", ce), ("dice", dice), ("fm", fm), ("st", st)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite { term: name });
        }
    }
    w.validate()?;
    let wc = F::from(w.w_ce).unwrap();
    let wd = F::from(w.w_dice).unwrap();
    let wf = F::from(w.w_fm).unwrap();
    let ws = F::from(w.w_st).unwrap();
    Ok(wc * ce + wd * dice + wf * fm + ws * st)
}

/// Discriminator objective in minimization form:
/// `-(mean log d_real + mean log(1 - d_fake))`, log arguments clamped to
/// `[LOG_EPS, 1 - LOG_EPS]`.
pub fn compute_discriminator_loss<F: NdFloat>(
    d_real: &[F],
    d_fake: &[F],
) -> Result<F, LossError> {
    Ok(disc_impl(d_real, d_fake, false)?.0)
}

/// Loss plus gradients with respect to each real/fake probability.
#[allow(clippy::type_complexity)]
pub fn compute_discriminator_loss_with_grad<F: NdFloat>(
    d_real: &[F],
    d_fake: &[F],
) -> Result<(F, Vec<F>, Vec<F>), LossError> {
    let (loss, grads) = disc_impl(d_real, d_fake, true)?;
    let (gr, gf) = grads.expect("requested");
    Ok((loss, gr, gf))
}

#[allow(clippy::type_complexity)]
fn disc_impl<F: NdFloat>(
    d_real: &[F],
    d_fake: &[F],
    want_grad: bool,
) -> Result<(F, Option<(Vec<F>, Vec<F>)>), LossError> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(LossError::EmptyBatch("discriminator"));
    }
    for &v in d_real.iter().chain(d_fake.iter()) {
        if !v.is_finite() {
            return Err(LossError::NonFinite { term: "discriminator input" });
        }
        if !(v >= F::zero() && v <= F::one()) {
            return Err(LossError::InvalidArg(format!("probability {v} out of [0,1]")));
        }
    }
    let eps = F::from(LOG_EPS).unwrap();
    let hi = F::one() - eps;
    let clamp = |v: F| {
        if v < eps {
            eps
        } else if v > hi {
            hi
        } else {
            v
        }
    };
    let nr = F::from(d_real.len()).unwrap();
    let nf = F::from(d_fake.len()).unwrap();
    let mut sum_real = F::zero();
    for &d in d_real {
        sum_real = sum_real + clamp(d).ln();
    }
    let mut sum_fake = F::zero();
    for &d in d_fake {
        sum_fake = sum_fake + clamp(F::one() - d).ln();
    }
    let loss = -(sum_real / nr + sum_fake / nf);
    let grads = if want_grad {
        let gr: Vec<F> = d_real
            .iter()
            .map(|&d| {
                if d > eps && d < hi {
                    -F::one() / (nr * d)
                } else {
                    F::zero()
                }
            })
            .collect();
        let gf: Vec<F> = d_fake
            .iter()
            .map(|&d| {
                let arg = F::one() - d;
                if arg > eps && arg < hi {
                    F::one() / (nf * arg)
                } else {
                    F::zero()
                }
            })
            .collect();
        Some((gr, gf))
    } else {
        None
    };
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn mask_from(rows: &[&[u8]], n_classes: usize) -> MaskLabel {
        let h = rows.len();
        let w = rows[0].len();
        let labels = Array2::from_shape_fn((h, w), |(i, j)| rows[i][j]);
        MaskLabel::new(labels, n_classes).unwrap()
    }

    /// Two-class prediction from the class-1 probability map.
    fn pred_from_p1(p1: &Array2<f64>) -> SoftPrediction<f64> {
        let (h, w) = p1.dim();
        let probs = Array3::from_shape_fn((2, h, w), |(c, i, j)| {
            if c == 1 {
                p1[(i, j)]
            } else {
                1.0 - p1[(i, j)]
            }
        });
        SoftPrediction::new(probs).unwrap()
    }

    #[test]
    fn ce_zero_when_prediction_matches_onehot_target() {
        let p1 = Array2::from_shape_fn((2, 2), |(i, j)| if (i + j) % 2 == 0 { 1.0 } else { 0.0 });
        let target = mask_from(&[&[1, 0], &[0, 1]], 2);
        let pred = pred_from_p1(&p1);
        let loss = compute_ce_loss(&[pred], &[target]).unwrap();
        // log is clamped at LOG_EPS so "0" is really -ln(1) = 0 exactly
        assert!(loss.abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn ce_uniform_prediction_is_ln2() {
        let p1 = Array2::from_elem((3, 3), 0.5);
        let target = mask_from(&[&[0, 1, 0], &[1, 1, 0], &[0, 0, 1]], 2);
        let pred = pred_from_p1(&p1);
        let loss = compute_ce_loss(&[pred], &[target]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn ce_two_pixel_case_matches_arbitrary_precision_value() {
        // pred = [(0.9, 0.1), (0.2, 0.8)], targets = [0, 1]
        // expected = -(ln 0.9 + ln 0.8)/2, frozen from a 30-digit evaluation
        let probs =
            Array3::from_shape_vec((2, 1, 2), vec![0.9, 0.2, 0.1, 0.8]).unwrap();
        let pred = SoftPrediction::new(probs).unwrap();
        let target = mask_from(&[&[0, 1]], 2);
        let loss: f64 = compute_ce_loss(&[pred], &[target]).unwrap();
        assert!((loss - 0.164252033486018028).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn dice_perfect_binary_match_is_zero() {
        let p1 = Array2::from_shape_fn((4, 4), |(i, j)| if i < 2 && j < 2 { 1.0 } else { 0.0 });
        let target = mask_from(
            &[&[1, 1, 0, 0], &[1, 1, 0, 0], &[0, 0, 0, 0], &[0, 0, 0, 0]],
            2,
        );
        let loss = compute_dice_loss(&[pred_from_p1(&p1)], &[target], 1).unwrap();
        assert!(loss.abs() < 1e-5, "got {loss}");
    }

    #[test]
    fn dice_disjoint_foregrounds_is_one() {
        let p1 = Array2::from_shape_fn((4, 4), |(i, _)| if i == 0 { 1.0 } else { 0.0 });
        let target = mask_from(
            &[&[0, 0, 0, 0], &[0, 0, 0, 0], &[0, 0, 0, 0], &[1, 1, 1, 1]],
            2,
        );
        let loss = compute_dice_loss(&[pred_from_p1(&p1)], &[target], 1).unwrap();
        assert!((loss - 1.0).abs() < 1e-5, "got {loss}");
    }

    #[test]
    fn dice_half_probability_single_foreground_pixel() {
        // 4 pixels, p = 0.5 everywhere, one foreground pixel:
        // DSC = (2*0.5 + s)/(4*0.25 + 1 + s) -> 0.5, loss 0.5 (within 1e-6)
        let p1 = Array2::from_elem((2, 2), 0.5);
        let target = mask_from(&[&[1, 0], &[0, 0]], 2);
        let loss = compute_dice_loss(&[pred_from_p1(&p1)], &[target], 1).unwrap();
        assert!((loss - 0.5).abs() < 1e-6, "got {loss}");
        // frozen exact value with s = 1e-6
        assert!((loss - 0.499999750000125).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn dice_empty_pred_and_target_is_zero_loss() {
        // nothing to find, nothing predicted: smoothing drives DSC -> 1
        let p1 = Array2::from_elem((2, 2), 0.0);
        let target = mask_from(&[&[0, 0], &[0, 0]], 2);
        let loss = compute_dice_loss(&[pred_from_p1(&p1)], &[target], 1).unwrap();
        assert!(loss.abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn fm_identical_batches_zero_and_symmetry() {
        let a = Array3::from_shape_fn((3, 2, 2), |(c, i, j)| (c * 4 + i * 2 + j) as f64 * 0.1);
        let b = a.mapv(|v| v + 0.25);
        let zero = compute_fm_loss(&[a.clone()], &[a.clone()]).unwrap();
        assert_eq!(zero, 0.0);
        let ab = compute_fm_loss(&[a.clone()], &[b.clone()]).unwrap();
        let ba = compute_fm_loss(&[b], &[a]).unwrap();
        assert!((ab - ba).abs() < 1e-15);
        assert!((ab - 0.25).abs() < 1e-12, "constant offset is the MAD: {ab}");
    }

    #[test]
    fn fm_constant_features_give_absolute_difference() {
        let a = Array3::from_elem((2, 3, 3), 0.7f64);
        let b = Array3::from_elem((2, 3, 3), 0.2f64);
        let loss = compute_fm_loss(&[a], &[b]).unwrap();
        assert!((loss - 0.5).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn harden_breaks_ties_toward_lower_class() {
        let probs = Array3::from_shape_vec(
            (2, 1, 3),
            vec![0.7, 0.5, 0.3, 0.3, 0.5, 0.7],
        )
        .unwrap();
        let pred = SoftPrediction::new(probs).unwrap();
        let pl = harden_pseudo_label(&pred, 0.9f64).unwrap();
        assert_eq!(pl.onehot[(0, 0, 0)], 1.0); // clear argmax 0
        assert_eq!(pl.onehot[(0, 0, 1)], 1.0); // exact tie -> class 0
        assert_eq!(pl.onehot[(1, 0, 2)], 1.0); // clear argmax 1
        assert_eq!(pl.confidence, 0.9);
    }

    #[test]
    fn st_all_below_tau_is_zero() {
        let p1 = Array2::from_elem((2, 2), 0.5);
        let pred = pred_from_p1(&p1);
        let pl = harden_pseudo_label(&pred, 0.3f64).unwrap();
        let loss = compute_st_loss(&[pred], &[pl], 0.6).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn st_gated_uniform_prediction_is_four_ln2() {
        // single gated 2x2 sample, uniform pred, C=2 -> 4 * ln 2
        let p1 = Array2::from_elem((2, 2), 0.5);
        let pred = pred_from_p1(&p1);
        let pl = harden_pseudo_label(&pred, 0.95f64).unwrap();
        let loss = compute_st_loss(&[pred], &[pl], 0.6).unwrap();
        assert!((loss - 2.772588722239781238).abs() < 1e-12, "got {loss}");
    }

    #[test]
    fn st_self_consistent_onehot_prediction_is_zero() {
        let p1 = Array2::from_shape_fn((2, 2), |(i, _)| if i == 0 { 1.0 } else { 0.0 });
        let pred = pred_from_p1(&p1);
        let pl = harden_pseudo_label(&pred, 1.0f64).unwrap();
        let loss = compute_st_loss(&[pred], &[pl], 0.6).unwrap();
        assert!(loss.abs() < 1e-9, "got {loss}");
    }

    #[test]
    fn total_loss_default_weights_sum() {
        let w = LossWeights::default();
        let total = compute_total_generator_loss(1.0f64, 1.0, 1.0, 1.0, &w).unwrap();
        assert!((total - 2.1).abs() < 1e-12, "got {total}");
        let zero = compute_total_generator_loss(0.0f64, 0.0, 0.0, 0.0, &w).unwrap();
        assert_eq!(zero, 0.0);
        let zw = LossWeights { w_ce: 0.0, w_dice: 0.0, w_fm: 0.0, w_st: 0.0 };
        let z = compute_total_generator_loss(3.0f64, -2.0, 7.0, 0.5, &zw).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn total_loss_rejects_non_finite_and_names_term() {
        let w = LossWeights::default();
        let err = compute_total_generator_loss(1.0f64, f64::NAN, 0.0, 0.0, &w).unwrap_err();
        assert!(err.to_string().contains("dice"), "got {err}");
    }

    #[test]
    fn discriminator_loss_values() {
        let eps = LOG_EPS;
        let near_zero =
            compute_discriminator_loss(&[1.0 - eps], &[eps]).unwrap();
        assert!(near_zero.abs() < 1e-5, "got {near_zero}");
        let chance = compute_discriminator_loss(&[0.5f64], &[0.5]).unwrap();
        assert!((chance - 1.386294361119890619).abs() < 1e-12, "got {chance}");
        let mixed = compute_discriminator_loss(&[0.9f64, 0.8], &[0.3]).unwrap();
        assert!((mixed - 0.520926977424750407).abs() < 1e-12, "got {mixed}");
    }

    #[test]
    fn discriminator_loss_requires_nonempty_batches() {
        assert!(compute_discriminator_loss::<f64>(&[], &[0.5]).is_err());
        assert!(compute_discriminator_loss::<f64>(&[0.5], &[]).is_err());
    }

    #[test]
    fn ce_is_minimized_at_the_onehot_target() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let target = mask_from(&[&[1, 0], &[0, 1]], 2);
        let exact = pred_from_p1(&Array2::from_shape_fn((2, 2), |(i, j)| {
            if (i == 0 && j == 0) || (i == 1 && j == 1) {
                1.0
            } else {
                0.0
            }
        }));
        let at_target = compute_ce_loss(&[exact], &[target.clone()]).unwrap();
        for _ in 0..200 {
            let p1 = Array2::from_shape_fn((2, 2), |_| rng.random::<f64>());
            let other = compute_ce_loss(&[pred_from_p1(&p1)], &[target.clone()]).unwrap();
            assert!(other >= at_target - 1e-12);
        }
    }

    #[test]
    fn st_gate_is_monotone_in_tau() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let preds: Vec<SoftPrediction<f64>> = (0..8)
            .map(|_| {
                let p1 = Array2::from_shape_fn((2, 2), |_| rng.random::<f64>());
                pred_from_p1(&p1)
            })
            .collect();
        let pseudos: Vec<PseudoLabel<f64>> = preds
            .iter()
            .map(|p| harden_pseudo_label(p, rng.random::<f64>()).unwrap())
            .collect();
        let mut prev = usize::MAX;
        for step in 0..=10 {
            let tau = step as f64 / 10.0;
            let gated = gated_in_count(&pseudos, tau);
            assert!(gated <= prev, "gate grew when tau rose");
            prev = gated;
        }
    }

    #[test]
    fn total_loss_is_linear_in_each_weight() {
        let base = LossWeights { w_ce: 0.3, w_dice: 0.7, w_fm: 0.2, w_st: 0.9 };
        let (ce, dice, fm, st) = (1.3f64, 0.4, 0.8, 2.0);
        let l1 = compute_total_generator_loss(ce, dice, fm, st, &base).unwrap();
        for k in 0..4 {
            let mut doubled = base;
            let delta = match k {
                0 => {
                    doubled.w_ce *= 2.0;
                    base.w_ce * ce
                }
                1 => {
                    doubled.w_dice *= 2.0;
                    base.w_dice * dice
                }
                2 => {
                    doubled.w_fm *= 2.0;
                    base.w_fm * fm
                }
                _ => {
                    doubled.w_st *= 2.0;
                    base.w_st * st
                }
            };
            let l2 = compute_total_generator_loss(ce, dice, fm, st, &doubled).unwrap();
            assert!((l2 - l1 - delta).abs() < 1e-12);
        }
    }
}
