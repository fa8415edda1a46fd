//! Low-level operations on 3D scalar lattices.
//!
//! Volumes are stored flat, x-fastest: `idx = x + nx*(y + ny*z)`.  The
//! separable convolution and pooling here are shared by the forward model
//! (on `f32` volumes) and by the training loss path (generic `T`, so the
//! gradient checker can run the identical code in `f64`).

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

/// Lattice dimensions (nx, ny, nz).
pub type Dims = (usize, usize, usize);

#[inline]
pub fn num_voxels(dims: Dims) -> usize {
    dims.0 * dims.1 * dims.2
}

#[inline]
pub fn index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims.0 * (y + dims.1 * z)
}

/// Discrete Gaussian kernel truncated at radius `ceil(4*sigma)`, normalized
/// to sum 1.  `sigma == 0` yields the identity kernel `[1]`.
pub fn gaussian_kernel<T: Float>(sigma: f64) -> Vec<T> {
    if sigma == 0.0 {
        return vec![T::one()];
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let mut weights = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0f64;
    for d in -radius..=radius {
        let w = (-(d as f64) * (d as f64) / (2.0 * sigma * sigma)).exp();
        weights.push(w);
        sum += w;
    }
    weights
        .into_iter()
        .map(|w| T::from(w / sum).unwrap())
        .collect()
}

/// Mirror an out-of-range index back into `[0, n)` (half-sample symmetric:
/// -1 -> 0, n -> n-1).  Folds repeatedly for kernels wider than the axis.
#[inline]
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable convolution along one axis with symmetric boundary handling.
fn convolve_axis<T: Float>(src: &[T], dims: Dims, axis: usize, kernel: &[T]) -> Vec<T> {
    let (nx, ny, nz) = dims;
    let n_axis = [nx, ny, nz][axis] as i64;
    let radius = (kernel.len() / 2) as i64;
    let mut out = vec![T::zero(); src.len()];
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    // iterate over all lines along `axis`
    let (la, lb) = match axis {
        0 => (ny, nz),
        1 => (nx, nz),
        _ => (nx, ny),
    };
    for b in 0..lb {
        for a in 0..la {
            let base = match axis {
                0 => index(dims, 0, a, b),
                1 => index(dims, a, 0, b),
                _ => index(dims, a, b, 0),
            };
            for i in 0..n_axis {
                let mut acc = T::zero();
                for (k, &w) in kernel.iter().enumerate() {
                    let j = reflect(i + k as i64 - radius, n_axis);
                    acc = acc + w * src[base + j * stride];
                }
                out[base + i as usize * stride] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`convolve_axis`]: scatter instead of gather, same boundary.
fn convolve_axis_adjoint<T: Float>(grad: &[T], dims: Dims, axis: usize, kernel: &[T]) -> Vec<T> {
    let (nx, ny, nz) = dims;
    let n_axis = [nx, ny, nz][axis] as i64;
    let radius = (kernel.len() / 2) as i64;
    let mut out = vec![T::zero(); grad.len()];
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let (la, lb) = match axis {
        0 => (ny, nz),
        1 => (nx, nz),
        _ => (nx, ny),
    };
    for b in 0..lb {
        for a in 0..la {
            let base = match axis {
                0 => index(dims, 0, a, b),
                1 => index(dims, a, 0, b),
                _ => index(dims, a, b, 0),
            };
            for i in 0..n_axis {
                let g = grad[base + i as usize * stride];
                for (k, &w) in kernel.iter().enumerate() {
                    let j = reflect(i + k as i64 - radius, n_axis);
                    out[base + j * stride] = out[base + j * stride] + w * g;
                }
            }
        }
    }
    out
}

/// 3D separable Gaussian smoothing; `sigma == 0` copies the input.
pub fn smooth<T: Float>(src: &[T], dims: Dims, sigma: f64) -> Vec<T> {
    debug_assert_eq!(src.len(), num_voxels(dims));
    if sigma == 0.0 {
        return src.to_vec();
    }
    let kernel = gaussian_kernel::<T>(sigma);
    let mut cur = convolve_axis(src, dims, 0, &kernel);
    cur = convolve_axis(&cur, dims, 1, &kernel);
    convolve_axis(&cur, dims, 2, &kernel)
}

/// Adjoint of [`smooth`] (axes applied in reverse).
pub fn smooth_adjoint<T: Float>(grad: &[T], dims: Dims, sigma: f64) -> Vec<T> {
    if sigma == 0.0 {
        return grad.to_vec();
    }
    let kernel = gaussian_kernel::<T>(sigma);
    let mut cur = convolve_axis_adjoint(grad, dims, 2, &kernel);
    cur = convolve_axis_adjoint(&cur, dims, 1, &kernel);
    convolve_axis_adjoint(&cur, dims, 0, &kernel)
}

/// Output dimensions of block-mean pooling with factor `df`.
pub fn pooled_dims(dims: Dims, df: usize) -> Dims {
    (
        dims.0.div_ceil(df),
        dims.1.div_ceil(df),
        dims.2.div_ceil(df),
    )
}

/// Block-mean pooling over `df^3` blocks; trailing partial blocks are
/// averaged over the voxels they actually contain.
pub fn pool<T: Float>(src: &[T], dims: Dims, df: usize) -> Vec<T> {
    debug_assert!(df >= 1);
    let out_dims = pooled_dims(dims, df);
    let mut out = vec![T::zero(); num_voxels(out_dims)];
    for oz in 0..out_dims.2 {
        let z1 = (oz * df + df).min(dims.2);
        for oy in 0..out_dims.1 {
            let y1 = (oy * df + df).min(dims.1);
            for ox in 0..out_dims.0 {
                let x1 = (ox * df + df).min(dims.0);
                let mut acc = T::zero();
                let mut count = 0usize;
                for z in oz * df..z1 {
                    for y in oy * df..y1 {
                        for x in ox * df..x1 {
                            acc = acc + src[index(dims, x, y, z)];
                            count += 1;
                        }
                    }
                }
                out[index(out_dims, ox, oy, oz)] = acc / T::from(count).unwrap();
            }
        }
    }
    out
}

/// Adjoint of [`pool`]: broadcast each pooled gradient back over its block,
/// divided by the block's voxel count.
pub fn pool_adjoint<T: Float>(grad: &[T], in_dims: Dims, df: usize) -> Vec<T> {
    let out_dims = pooled_dims(in_dims, df);
    debug_assert_eq!(grad.len(), num_voxels(out_dims));
    let mut out = vec![T::zero(); num_voxels(in_dims)];
    for oz in 0..out_dims.2 {
        let z1 = (oz * df + df).min(in_dims.2);
        for oy in 0..out_dims.1 {
            let y1 = (oy * df + df).min(in_dims.1);
            for ox in 0..out_dims.0 {
                let x1 = (ox * df + df).min(in_dims.0);
                let count = (z1 - oz * df) * (y1 - oy * df) * (x1 - ox * df);
                let g = grad[index(out_dims, ox, oy, oz)] / T::from(count).unwrap();
                for z in oz * df..z1 {
                    for y in oy * df..y1 {
                        for x in ox * df..x1 {
                            out[index(in_dims, x, y, z)] = out[index(in_dims, x, y, z)] + g;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Erode a binary mask by one voxel (6-connected); volume-boundary voxels
/// are always eroded.
pub fn erode_mask(mask: &[bool], dims: Dims) -> Vec<bool> {
    let (nx, ny, nz) = dims;
    let mut out = vec![false; mask.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = index(dims, x, y, z);
                if !mask[i] || x == 0 || y == 0 || z == 0 || x == nx - 1 || y == ny - 1 || z == nz - 1 {
                    continue;
                }
                out[i] = mask[i - 1]
                    && mask[i + 1]
                    && mask[i - nx]
                    && mask[i + nx]
                    && mask[i - nx * ny]
                    && mask[i + nx * ny];
            }
        }
    }
    out
}
