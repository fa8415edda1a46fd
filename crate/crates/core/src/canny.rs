//! Canny edge maps on 2D slices and tolerance-based edge matching.

use alloc::vec;
use alloc::vec::Vec;
// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid;

/// A single 2D slice, row-major (`idx = x + width * y`).
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2d {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Slice2d {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("slice data length does not match dims"));
        }
        Ok(Slice2d { width, height, data })
    }

}

/// Binary edge map with the same layout as its source slice.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMap {
    pub fn count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count()
    }

    fn positions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.edges[x + self.width * y] {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Standard Canny: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression with 4-direction quantization, hysteresis thresholding on
/// the max-normalized gradient magnitude.
pub fn canny_edges(slice: &Slice2d, sigma: f64, low: f64, high: f64) -> Result<EdgeMap> {
    if !(low > 0.0 && low < high) {
        return Err(Error::invalid("thresholds must satisfy 0 < low < high"));
    }
    let (w, h) = (slice.width, slice.height);
    if w < 3 || h < 3 {
        return Err(Error::invalid("slice too small for edge detection"));
    }
    // reuse the 3D separable smoother with a unit z axis
    let smoothed_f: Vec<f64> = slice.data.iter().map(|&v| v as f64).collect();
    let smoothed = grid::smooth(&smoothed_f, (w, h, 1), sigma);
    let at = |x: i64, y: i64| -> f64 {
        let xc = x.clamp(0, w as i64 - 1) as usize;
        let yc = y.clamp(0, h as i64 - 1) as usize;
        smoothed[xc + w * yc]
    };
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    let mut mag = vec![0.0f64; w * h];
    let mut max_mag = 0.0f64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let sx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let sy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = x as usize + w * y as usize;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = (sx * sx + sy * sy).sqrt();
            max_mag = max_mag.max(mag[i]);
        }
    }
    if max_mag == 0.0 {
        return Ok(EdgeMap { width: w, height: h, edges: vec![false; w * h] });
    }
    for m in &mut mag {
        *m /= max_mag;
    }

    // non-maximum suppression; plateaus are thinned by requiring a strict
    // win against the negative-direction neighbour
    let mut thin = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = x + w * y;
            if mag[i] == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]);
            let deg = angle.to_degrees();
            let deg = if deg < 0.0 { deg + 180.0 } else { deg };
            let (dxy, dyy) = if !(22.5..157.5).contains(&deg) {
                (1i64, 0i64)
            } else if deg < 67.5 {
                (1, 1)
            } else if deg < 112.5 {
                (0, 1)
            } else {
                (1, -1)
            };
            let neg = mag[(x as i64 - dxy) as usize + w * ((y as i64 - dyy) as usize)];
            let pos = mag[(x as i64 + dxy) as usize + w * ((y as i64 + dyy) as usize)];
            if mag[i] > neg && mag[i] >= pos {
                thin[i] = mag[i];
            }
        }
    }

    // hysteresis: strong seeds grow through weak 8-neighbours
    let mut edges = vec![false; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m >= high && !edges[i] {
            edges[i] = true;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (jx, jy) = (j % w, j / w);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = jx as i64 + dx;
                        let ny = jy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let k = nx as usize + w * ny as usize;
                        if !edges[k] && thin[k] >= low {
                            edges[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    Ok(EdgeMap { width: w, height: h, edges })
}

/// F1 of edge pixels under greedy one-to-one matching within a Chebyshev
/// pixel tolerance.  Two empty maps count as a perfect match.
pub fn edge_f1(pred: &EdgeMap, reference: &EdgeMap, tolerance_px: usize) -> Result<f64> {
    if pred.width != reference.width || pred.height != reference.height {
        return Err(Error::invalid("edge maps must share dims"));
    }
    let p = pred.positions();
    let r = reference.positions();
    if p.is_empty() && r.is_empty() {
        return Ok(1.0);
    }
    if p.is_empty() || r.is_empty() {
        return Ok(0.0);
    }
    let mut used = vec![false; r.len()];
    let tol = tolerance_px as i64;
    let mut matched = 0usize;
    for &(px, py) in &p {
        let mut best: Option<(i64, usize)> = None;
        for (k, &(rx, ry)) in r.iter().enumerate() {
            if used[k] {
                continue;
            }
            let d = (px as i64 - rx as i64).abs().max((py as i64 - ry as i64).abs());
            if d <= tol && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        if let Some((_, k)) = best {
            used[k] = true;
            matched += 1;
        }
    }
    let precision = matched as f64 / p.len() as f64;
    let recall = matched as f64 / r.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Extract the axial slice at index `z` of a volume.
pub fn axial_slice(volume: &crate::volume::Volume, z: usize) -> Result<Slice2d> {
    let dims = volume.dims();
    if z >= dims.2 {
        return Err(Error::invalid("slice index out of range"));
    }
    let mut data = Vec::with_capacity(dims.0 * dims.1);
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            data.push(volume.at(x, y, z));
        }
    }
    Slice2d::new(dims.0, dims.1, data)
}
