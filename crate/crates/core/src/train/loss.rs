//! Loss terms of the training objective: mean absolute error, Dice +
//! cross-entropy segmentation loss, anisotropic total variation, and the
//! pre-activation regularizer.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{self, Dims};

/// Dice smoothing term.
pub const DICE_SMOOTHING: f64 = 1e-5;
/// Lower clamp on probabilities inside the cross-entropy log.
pub const CE_CLAMP: f64 = 1e-12;

/// Mean absolute error.
pub fn loss_mae<T: Float>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::invalid("mae needs equal-length non-empty inputs"));
    }
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        acc = acc + (p - t).abs();
    }
    Ok(acc / T::from(pred.len()).unwrap())
}

/// Per-class Dice statistics over a batch of soft predictions against hard
/// labels.
struct DiceStats<T> {
    inter: [T; 4],
    psum: [T; 4],
    gsum: [T; 4],
}

fn dice_stats<T: Float>(pred_probs: &[[T; 4]], labels: &[u8]) -> DiceStats<T> {
    let mut s = DiceStats {
        inter: [T::zero(); 4],
        psum: [T::zero(); 4],
        gsum: [T::zero(); 4],
    };
    for (p, &l) in pred_probs.iter().zip(labels) {
        let l = l as usize;
        s.inter[l] = s.inter[l] + p[l];
        s.gsum[l] = s.gsum[l] + T::one();
        for c in 0..4 {
            s.psum[c] = s.psum[c] + p[c] * p[c];
        }
    }
    s
}

/// Dice loss plus cross-entropy, the segmentation supervision term.
pub fn loss_seg<T: Float>(pred_probs: &[[T; 4]], labels: &[u8]) -> Result<T> {
    let (value, _) = loss_seg_with_grad(pred_probs, labels, false)?;
    Ok(value)
}

/// Segmentation loss and, optionally, its gradient with respect to every
/// predicted probability.
pub fn loss_seg_with_grad<T: Float>(
    pred_probs: &[[T; 4]],
    labels: &[u8],
    want_grad: bool,
) -> Result<(T, Vec<[T; 4]>)> {
    if pred_probs.is_empty() || pred_probs.len() != labels.len() {
        return Err(Error::invalid("segmentation loss needs equal-length non-empty inputs"));
    }
    if labels.iter().any(|&l| l > 3) {
        return Err(Error::invalid("segmentation label out of range 0..=3"));
    }
    let n = T::from(labels.len()).unwrap();
    let smooth = T::from(DICE_SMOOTHING).unwrap();
    let clamp = T::from(CE_CLAMP).unwrap();
    let quarter = T::from(0.25).unwrap();
    let two = T::from(2.0).unwrap();

    let stats = dice_stats(pred_probs, labels);
    let mut dice_mean = T::zero();
    let mut denom = [T::zero(); 4];
    let mut numer = [T::zero(); 4];
    for c in 0..4 {
        denom[c] = stats.psum[c] + stats.gsum[c] + smooth;
        numer[c] = two * stats.inter[c] + smooth;
        dice_mean = dice_mean + numer[c] / denom[c] * quarter;
    }
    let dice_loss = T::one() - dice_mean;

    let mut ce = T::zero();
    for (p, &l) in pred_probs.iter().zip(labels) {
        ce = ce - p[l as usize].max(clamp).ln();
    }
    ce = ce / n;

    let value = dice_loss + ce;
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![[T::zero(); 4]; labels.len()];
        for (v, (p, &l)) in grad.iter_mut().zip(pred_probs.iter().zip(labels)) {
            for c in 0..4 {
                let g = if c == l as usize { T::one() } else { T::zero() };
                // d(dice_c)/dp = (2 g D - numer * 2 p) / D^2, averaged over
                // classes and negated for the loss
                let ddice = (two * g * denom[c] - numer[c] * two * p[c]) / (denom[c] * denom[c]);
                v[c] = v[c] - quarter * ddice;
            }
            if p[l as usize] > clamp {
                v[l as usize] = v[l as usize] - (p[l as usize] * n).recip();
            }
        }
    }
    Ok((value, grad))
}

/// Anisotropic total variation: per axis, the mean absolute forward
/// difference; axes shorter than 2 voxels contribute nothing.
pub fn loss_tv<T: Float>(patch: &[T], dims: Dims) -> T {
    let (value, _) = tv_with_grad(patch, dims, false);
    value
}

/// TV and, optionally, its (sub)gradient; the sign of a zero difference is
/// taken as zero.
pub fn tv_with_grad<T: Float>(patch: &[T], dims: Dims, want_grad: bool) -> (T, Vec<T>) {
    debug_assert_eq!(patch.len(), grid::num_voxels(dims));
    let mut value = T::zero();
    let mut grad = if want_grad {
        vec![T::zero(); patch.len()]
    } else {
        Vec::new()
    };
    let sizes = [dims.0, dims.1, dims.2];
    for axis in 0..3 {
        let n_axis = sizes[axis];
        if n_axis < 2 {
            continue;
        }
        let stride = match axis {
            0 => 1,
            1 => dims.0,
            _ => dims.0 * dims.1,
        };
        let count = T::from((n_axis - 1) * patch.len() / n_axis).unwrap();
        let mut axis_sum = T::zero();
        let (la, lb) = match axis {
            0 => (dims.1, dims.2),
            1 => (dims.0, dims.2),
            _ => (dims.0, dims.1),
        };
        for b in 0..lb {
            for a in 0..la {
                let base = match axis {
                    0 => grid::index(dims, 0, a, b),
                    1 => grid::index(dims, a, 0, b),
                    _ => grid::index(dims, a, b, 0),
                };
                for i in 0..n_axis - 1 {
                    let lo = base + i * stride;
                    let hi = lo + stride;
                    let d = patch[hi] - patch[lo];
                    axis_sum = axis_sum + d.abs();
                    if want_grad && d != T::zero() {
                        let s = d.signum() / count;
                        grad[hi] = grad[hi] + s;
                        grad[lo] = grad[lo] - s;
                    }
                }
            }
        }
        value = value + axis_sum / count;
    }
    (value, grad)
}

/// Mean squared magnitude of the pre-activation vectors (divided by the
/// channel count, so a unit one-hot row scores 1/5).
pub fn loss_preact<T: Float>(pre: &[[T; 5]]) -> T {
    if pre.is_empty() {
        return T::zero();
    }
    let mut acc = T::zero();
    for row in pre {
        for &v in row {
            acc = acc + v * v;
        }
    }
    acc / T::from(5 * pre.len()).unwrap()
}

/// Single-iteration loss report.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    pub mae: f64,
    pub seg: f64,
    pub tv: f64,
    pub preact: f64,
}

impl LossBreakdown {
    pub fn weighted(weights: &LossWeights, mae: f64, seg: f64, tv: f64, preact: f64) -> Self {
        LossBreakdown {
            total: weights.mae * mae + weights.seg * seg + weights.tv * tv + weights.preact * preact,
            mae,
            seg,
            tv,
            preact,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.mae.is_finite()
            && self.seg.is_finite()
            && self.tv.is_finite()
            && self.preact.is_finite()
    }
}

/// Tunable multipliers of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub mae: f64,
    pub seg: f64,
    pub tv: f64,
    pub preact: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("mae", self.mae),
            ("seg", self.seg),
            ("tv", self.tv),
            ("preact", self.preact),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(alloc::format!(
                    "loss weight {name} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}
