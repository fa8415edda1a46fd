//! Interpolation baselines: nearest, trilinear, and bicubic resampling.
//!
//! Output voxel `i` samples the input at `(i + 0.5)/factor - 0.5`
//! (voxel-center alignment), which makes factor 1 an exact identity for
//! all three methods.  Coordinates are clamped to the valid range, so
//! linear interpolation stays a convex combination of its neighbours;
//! the cubic kernel (Catmull-Rom, a = -0.5) may overshoot and is clamped
//! to [0, 1] afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{self, Dims};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Interp {
    Nearest,
    Trilinear,
    Bicubic,
}

fn catmull_rom(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Resample one axis of a flat lattice to `n_out` samples.
fn resample_axis(
    src: &[f64],
    dims: Dims,
    axis: usize,
    n_out: usize,
    factor: f64,
    method: Interp,
) -> (Vec<f64>, Dims) {
    let n_in = [dims.0, dims.1, dims.2][axis];
    let mut out_dims = dims;
    match axis {
        0 => out_dims.0 = n_out,
        1 => out_dims.1 = n_out,
        _ => out_dims.2 = n_out,
    }
    let mut out = vec![0.0f64; grid::num_voxels(out_dims)];
    let clamp_idx = |i: i64| -> usize { i.clamp(0, n_in as i64 - 1) as usize };

    let (la, lb) = match axis {
        0 => (dims.1, dims.2),
        1 => (dims.0, dims.2),
        _ => (dims.0, dims.1),
    };
    let in_stride = match axis {
        0 => 1,
        1 => dims.0,
        _ => dims.0 * dims.1,
    };
    let out_stride = match axis {
        0 => 1,
        1 => out_dims.0,
        _ => out_dims.0 * out_dims.1,
    };
    for b in 0..lb {
        for a in 0..la {
            let in_base = match axis {
                0 => grid::index(dims, 0, a, b),
                1 => grid::index(dims, a, 0, b),
                _ => grid::index(dims, a, b, 0),
            };
            let out_base = match axis {
                0 => grid::index(out_dims, 0, a, b),
                1 => grid::index(out_dims, a, 0, b),
                _ => grid::index(out_dims, a, b, 0),
            };
            for i in 0..n_out {
                let coord = (i as f64 + 0.5) / factor - 0.5;
                let v = match method {
                    Interp::Nearest => {
                        let j = clamp_idx(coord.round() as i64);
                        src[in_base + j * in_stride]
                    }
                    Interp::Trilinear => {
                        if n_in == 1 {
                            src[in_base]
                        } else {
                            let c = coord.clamp(0.0, (n_in - 1) as f64);
                            let j0 = (c.floor() as i64).clamp(0, n_in as i64 - 2) as usize;
                            let j1 = j0 + 1;
                            let t = c - j0 as f64;
                            (1.0 - t) * src[in_base + j0 * in_stride]
                                + t * src[in_base + j1 * in_stride]
                        }
                    }
                    Interp::Bicubic => {
                        let j = coord.floor() as i64;
                        let t = coord - j as f64;
                        let mut acc = 0.0;
                        for (k, off) in (-1..=2).enumerate() {
                            let w = catmull_rom(t - off as f64);
                            acc += w * src[in_base + clamp_idx(j + off) * in_stride];
                            let _ = k;
                        }
                        acc
                    }
                };
                out[out_base + i * out_stride] = v;
            }
        }
    }
    (out, out_dims)
}

/// Resample a volume by a positive factor per axis.
pub fn resample(volume: &Volume, factors: [f64; 3], method: Interp) -> Result<Volume> {
    for &f in &factors {
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::invalid(format!("resampling factor {f} must be positive")));
        }
    }
    let dims = volume.dims();
    let in_dims = [dims.0, dims.1, dims.2];
    let out_dims: [usize; 3] =
        core::array::from_fn(|a| ((in_dims[a] as f64 * factors[a]).round() as usize).max(1));

    let mut data: Vec<f64> = volume.data().iter().map(|&v| v as f64).collect();
    let mut cur_dims = dims;
    for axis in 0..3 {
        let (next, next_dims) =
            resample_axis(&data, cur_dims, axis, out_dims[axis], factors[axis], method);
        data = next;
        cur_dims = next_dims;
    }
    if method == Interp::Bicubic {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    // metadata: spacing shrinks by the realized per-axis ratio; the affine
    // absorbs both the scaling and the half-voxel center shift
    let realized: [f64; 3] = core::array::from_fn(|a| out_dims[a] as f64 / in_dims[a] as f64);
    let spacing = volume.spacing();
    let new_spacing: [f32; 3] =
        core::array::from_fn(|a| (spacing[a] as f64 / realized[a]) as f32);
    let old = volume.affine();
    let mut affine = old;
    for r in 0..3 {
        let mut shift = 0.0f64;
        for (a, rf) in realized.iter().enumerate() {
            affine[r][a] = (old[r][a] as f64 / rf) as f32;
            shift += old[r][a] as f64 * (0.5 / rf - 0.5);
        }
        affine[r][3] = (old[r][3] as f64 + shift) as f32;
    }

    let out = Volume::new(
        (out_dims[0], out_dims[1], out_dims[2]),
        new_spacing,
        affine,
        data.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn ramp_volume() -> Volume {
        let dims = (8, 1, 1);
        let data: Vec<f32> = (0..8).map(|i| i as f32 / 10.0).collect();
        Volume::from_data(dims, data).unwrap()
    }

    #[test]
    fn factor_one_is_identity_for_all_methods() {
        let mut rng = Stream::new(5);
        let dims = (6, 5, 4);
        let data: Vec<f32> = (0..grid::num_voxels(dims))
            .map(|_| rng.uniform(0.0, 1.0) as f32)
            .collect();
        let vol = Volume::from_data(dims, data).unwrap();
        for method in [Interp::Nearest, Interp::Trilinear, Interp::Bicubic] {
            let out = resample(&vol, [1.0; 3], method).unwrap();
            assert_eq!(out.dims(), dims);
            for (a, b) in vol.data().iter().zip(out.data()) {
                assert!((a - b).abs() < 1e-6, "{method:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_preserved_under_upsampling() {
        let vol = Volume::constant((4, 4, 4), 0.37);
        let out = resample(&vol, [2.0; 3], Interp::Trilinear).unwrap();
        assert_eq!(out.dims(), (8, 8, 8));
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-6);
        }
    }

    #[test]
    fn trilinear_matches_hand_computed_ramp() {
        // upsample a 1D ramp x2: interior output i samples (i+0.5)/2-0.5
        let vol = ramp_volume();
        let out = resample(&vol, [2.0, 1.0, 1.0], Interp::Trilinear).unwrap();
        assert_eq!(out.dims(), (16, 1, 1));
        for i in 0..16usize {
            let coord = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 7.0);
            let expect = coord / 10.0;
            let got = out.data()[i] as f64;
            assert!((got - expect).abs() < 1e-6, "i={i} {got} vs {expect}");
        }
    }

    #[test]
    fn trilinear_reproduces_affine_fields_at_interior_points() {
        // linear functions are fixed points of linear interpolation wherever
        // the sample coordinate is inside the lattice hull
        let dims = (9, 7, 6);
        let f = |x: f64, y: f64, z: f64| 0.1 + 0.02 * x + 0.03 * y - 0.01 * z;
        let mut data = alloc::vec::Vec::new();
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    data.push(f(x as f64, y as f64, z as f64) as f32);
                }
            }
        }
        let vol = Volume::from_data(dims, data).unwrap();
        let factors = [2.0, 1.5, 3.0];
        let out = resample(&vol, factors, Interp::Trilinear).unwrap();
        let od = out.dims();
        for z in 0..od.2 {
            for y in 0..od.1 {
                for x in 0..od.0 {
                    let sx = (x as f64 + 0.5) / factors[0] - 0.5;
                    let sy = (y as f64 + 0.5) / factors[1] - 0.5;
                    let sz = (z as f64 + 0.5) / factors[2] - 0.5;
                    let interior = sx >= 0.0
                        && sy >= 0.0
                        && sz >= 0.0
                        && sx <= (dims.0 - 1) as f64
                        && sy <= (dims.1 - 1) as f64
                        && sz <= (dims.2 - 1) as f64;
                    if interior {
                        let expect = f(sx, sy, sz);
                        let got = out.at(x, y, z) as f64;
                        assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
                    }
                }
            }
        }
    }

    #[test]
    fn trilinear_stays_in_envelope() {
        let mut rng = Stream::new(17);
        let dims = (5, 5, 5);
        let data: Vec<f32> = (0..grid::num_voxels(dims))
            .map(|_| rng.uniform(0.0, 1.0) as f32)
            .collect();
        let vol = Volume::from_data(dims, data).unwrap();
        let (lo, hi) = vol.min_max();
        let out = resample(&vol, [2.3, 1.7, 2.0], Interp::Trilinear).unwrap();
        for &v in out.data() {
            assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }

    #[test]
    fn bicubic_clamped_to_unit_range() {
        let vol = ramp_volume();
        let out = resample(&vol, [3.0, 1.0, 1.0], Interp::Bicubic).unwrap();
        for &v in out.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn non_positive_factor_rejected() {
        let vol = Volume::constant((2, 2, 2), 0.0);
        assert!(resample(&vol, [0.0, 1.0, 1.0], Interp::Nearest).is_err());
        assert!(resample(&vol, [-1.0, 1.0, 1.0], Interp::Trilinear).is_err());
    }
}
