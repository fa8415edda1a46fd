//! Image quality and segmentation overlap metrics.

use alloc::vec;
use alloc::vec::Vec;
// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{self, Dims};
use crate::volume::{Segmentation, Volume};

/// SSIM box window edge length.
pub const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Sliding-window sums along one axis (valid positions only).
fn box_sum_axis(src: &[f64], dims: Dims, axis: usize, win: usize) -> (Vec<f64>, Dims) {
    let n_axis = [dims.0, dims.1, dims.2][axis];
    debug_assert!(n_axis >= win);
    let n_out = n_axis - win + 1;
    let mut out_dims = dims;
    match axis {
        0 => out_dims.0 = n_out,
        1 => out_dims.1 = n_out,
        _ => out_dims.2 = n_out,
    }
    let stride = match axis {
        0 => 1,
        1 => dims.0,
        _ => dims.0 * dims.1,
    };
    let out_stride = match axis {
        0 => 1,
        1 => out_dims.0,
        _ => out_dims.0 * out_dims.1,
    };
    let (la, lb) = match axis {
        0 => (dims.1, dims.2),
        1 => (dims.0, dims.2),
        _ => (dims.0, dims.1),
    };
    let mut out = vec![0.0f64; grid::num_voxels(out_dims)];
    for b in 0..lb {
        for a in 0..la {
            let base = match axis {
                0 => grid::index(dims, 0, a, b),
                1 => grid::index(dims, a, 0, b),
                _ => grid::index(dims, a, b, 0),
            };
            let out_base = match axis {
                0 => grid::index(out_dims, 0, a, b),
                1 => grid::index(out_dims, a, 0, b),
                _ => grid::index(out_dims, a, b, 0),
            };
            let mut acc = 0.0;
            for i in 0..win {
                acc += src[base + i * stride];
            }
            out[out_base] = acc;
            for i in 1..n_out {
                acc += src[base + (i + win - 1) * stride] - src[base + (i - 1) * stride];
                out[out_base + i * out_stride] = acc;
            }
        }
    }
    (out, out_dims)
}

fn box_sums(src: &[f64], dims: Dims, win: usize) -> (Vec<f64>, Dims) {
    let (s, d) = box_sum_axis(src, dims, 0, win);
    let (s, d) = box_sum_axis(&s, d, 1, win);
    box_sum_axis(&s, d, 2, win)
}

/// Mean local SSIM over all full 7^3 windows, computed in 3D with the
/// standard constants for unit data range.
pub fn ssim(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::invalid("ssim needs volumes of equal dims"));
    }
    let dims = a.dims();
    if dims.0 < SSIM_WINDOW || dims.1 < SSIM_WINDOW || dims.2 < SSIM_WINDOW {
        return Err(Error::invalid("volume smaller than the ssim window"));
    }
    let n = grid::num_voxels(dims);
    let mut fa = vec![0.0f64; n];
    let mut fb = vec![0.0f64; n];
    let mut faa = vec![0.0f64; n];
    let mut fbb = vec![0.0f64; n];
    let mut fab = vec![0.0f64; n];
    for i in 0..n {
        let x = a.data()[i] as f64;
        let y = b.data()[i] as f64;
        fa[i] = x;
        fb[i] = y;
        faa[i] = x * x;
        fbb[i] = y * y;
        fab[i] = x * y;
    }
    let (sa, od) = box_sums(&fa, dims, SSIM_WINDOW);
    let (sb, _) = box_sums(&fb, dims, SSIM_WINDOW);
    let (saa, _) = box_sums(&faa, dims, SSIM_WINDOW);
    let (sbb, _) = box_sums(&fbb, dims, SSIM_WINDOW);
    let (sab, _) = box_sums(&fab, dims, SSIM_WINDOW);
    let count = (SSIM_WINDOW * SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    for i in 0..sa.len() {
        let mu_a = sa[i] / count;
        let mu_b = sb[i] / count;
        let var_a = saa[i] / count - mu_a * mu_a;
        let var_b = sbb[i] / count - mu_b * mu_b;
        let cov = sab[i] / count - mu_a * mu_b;
        let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
        total += s;
    }
    Ok(total / grid::num_voxels(od) as f64)
}

/// Mean shifted line correlation: 1 minus the mean Pearson correlation of
/// zero-centered axis-aligned lines, over lines with nonzero variance in
/// both volumes.  Lower is better; identical volumes score 0.
pub fn mslc(a: &Volume, b: &Volume) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::invalid("mslc needs volumes of equal dims"));
    }
    let dims = a.dims();
    let mut corr_sum = 0.0;
    let mut lines = 0usize;
    for axis in 0..3 {
        let n_axis = [dims.0, dims.1, dims.2][axis];
        if n_axis < 2 {
            continue;
        }
        let stride = match axis {
            0 => 1,
            1 => dims.0,
            _ => dims.0 * dims.1,
        };
        let (la, lb) = match axis {
            0 => (dims.1, dims.2),
            1 => (dims.0, dims.2),
            _ => (dims.0, dims.1),
        };
        for q in 0..lb {
            for p in 0..la {
                let base = match axis {
                    0 => grid::index(dims, 0, p, q),
                    1 => grid::index(dims, p, 0, q),
                    _ => grid::index(dims, p, q, 0),
                };
                let mut ma = 0.0;
                let mut mb = 0.0;
                for i in 0..n_axis {
                    ma += a.data()[base + i * stride] as f64;
                    mb += b.data()[base + i * stride] as f64;
                }
                ma /= n_axis as f64;
                mb /= n_axis as f64;
                let mut saa = 0.0;
                let mut sbb = 0.0;
                let mut sab = 0.0;
                for i in 0..n_axis {
                    let da = a.data()[base + i * stride] as f64 - ma;
                    let db = b.data()[base + i * stride] as f64 - mb;
                    saa += da * da;
                    sbb += db * db;
                    sab += da * db;
                }
                if saa > 0.0 && sbb > 0.0 {
                    corr_sum += sab / (saa.sqrt() * sbb.sqrt());
                    lines += 1;
                }
            }
        }
    }
    if lines == 0 {
        return Err(Error::degenerate("no line with nonzero variance in both volumes"));
    }
    Ok(1.0 - corr_sum / lines as f64)
}

/// WM-GM contrast with the CSF signal standing in for background noise:
/// `(mean WM - mean GM) / std CSF`.
pub fn wm_gm_contrast(volume: &Volume, seg: &Segmentation) -> Result<f64> {
    if seg.dims() != volume.dims() {
        return Err(Error::invalid("segmentation dims do not match volume"));
    }
    let labels = seg.labels();
    let wm_mask: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
    let gm_mask: Vec<bool> = labels.iter().map(|&l| l == 2).collect();
    let csf_mask: Vec<bool> = labels.iter().map(|&l| l == 3).collect();
    for (name, mask) in [("wm", &wm_mask), ("gm", &gm_mask), ("csf", &csf_mask)] {
        if !mask.iter().any(|&m| m) {
            return Err(Error::degenerate(alloc::format!("{name} class is empty")));
        }
    }
    let csf_std = volume.masked_std(&csf_mask)?;
    if csf_std == 0.0 {
        return Err(Error::degenerate("csf signal has zero variance"));
    }
    let wm = volume.masked_mean(&wm_mask)?;
    let gm = volume.masked_mean(&gm_mask)?;
    Ok((wm - gm) / csf_std)
}

/// Per-class Dice and IoU (soft inputs are argmax-hardened); a class empty
/// in both segmentations scores 1.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverlapScores {
    pub dice: [f64; 4],
    pub iou: [f64; 4],
}

impl OverlapScores {
    /// Mean over the three tissue classes (background excluded).
    pub fn tissue_mean(&self) -> (f64, f64) {
        let dice = (self.dice[1] + self.dice[2] + self.dice[3]) / 3.0;
        let iou = (self.iou[1] + self.iou[2] + self.iou[3]) / 3.0;
        (dice, iou)
    }
}

pub fn dice_iou(pred: &Segmentation, reference: &Segmentation) -> Result<OverlapScores> {
    if pred.dims() != reference.dims() {
        return Err(Error::invalid("segmentations must share dims"));
    }
    let p = pred.labels();
    let r = reference.labels();
    let mut inter = [0usize; 4];
    let mut np = [0usize; 4];
    let mut nr = [0usize; 4];
    for (&a, &b) in p.iter().zip(&r) {
        np[a as usize] += 1;
        nr[b as usize] += 1;
        if a == b {
            inter[a as usize] += 1;
        }
    }
    let mut scores = OverlapScores { dice: [0.0; 4], iou: [0.0; 4] };
    for c in 0..4 {
        let union = np[c] + nr[c] - inter[c];
        if np[c] == 0 && nr[c] == 0 {
            scores.dice[c] = 1.0;
            scores.iou[c] = 1.0;
        } else {
            scores.dice[c] = 2.0 * inter[c] as f64 / (np[c] + nr[c]) as f64;
            scores.iou[c] = inter[c] as f64 / union as f64;
        }
    }
    Ok(scores)
}

/// Reconstruction quality score: the mean of SSIM, the MSLC mapped onto
/// [0, 1] as `1 - mslc/2`, Dice and IoU.  The perceptual slot is reserved
/// but unused, so self-contained runs need no pretrained weights.
pub fn rqs(ssim: f64, mslc: f64, lpips: Option<f64>, dice: f64, iou: f64) -> f64 {
    let _ = lpips;
    rqs_weighted(ssim, mslc, dice, iou, [0.25; 4])
}

pub fn rqs_weighted(ssim: f64, mslc: f64, dice: f64, iou: f64, weights: [f64; 4]) -> f64 {
    let terms = [ssim, 1.0 - mslc / 2.0, dice, iou];
    let wsum: f64 = weights.iter().sum();
    terms.iter().zip(&weights).map(|(t, w)| t * w).sum::<f64>() / wsum
}

/// One evaluation record; segmentation-dependent entries are optional.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub ssim: f64,
    pub mslc: f64,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub wm_gm_contrast: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub dice: Option<[f64; 4]>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub iou: Option<[f64; 4]>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub edge_f1: Option<f64>,
    #[cfg_attr(feature = "serde", serde(skip_serializing_if = "Option::is_none"))]
    pub rqs: Option<f64>,
}
