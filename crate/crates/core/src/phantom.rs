//! Synthetic nested-ellipsoid brain phantom for desk-scale testing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{self, Dims};
use crate::rng::keyed_normal_pair;
use crate::volume::{Segmentation, Volume};

/// Three nested ellipsoid shells (CSF outer, GM middle, WM inner) on a
/// constant background, with optional i.i.d. Gaussian intensity noise.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    /// Outer shell semi-axes in voxels.
    pub csf_radii: [f64; 3],
    pub gm_radii: [f64; 3],
    pub wm_radii: [f64; 3],
    /// Mean intensities; T1-weighted ordering WM > GM > CSF is enforced.
    pub wm_intensity: f32,
    pub gm_intensity: f32,
    pub csf_intensity: f32,
    pub background: f32,
    /// Std of zero-mean Gaussian noise added to every voxel (0 = noiseless).
    #[cfg_attr(feature = "serde", serde(default))]
    pub noise_std: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: (64, 64, 64),
            csf_radii: [28.0; 3],
            gm_radii: [22.0; 3],
            wm_radii: [15.0; 3],
            wm_intensity: 0.8,
            gm_intensity: 0.55,
            csf_intensity: 0.3,
            background: 0.05,
            noise_std: 0.01,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.0 == 0 || self.dims.1 == 0 || self.dims.2 == 0 {
            return Err(Error::invalid("phantom dims must be positive"));
        }
        for a in 0..3 {
            if !(self.csf_radii[a] > self.gm_radii[a] && self.gm_radii[a] > self.wm_radii[a]) {
                return Err(Error::invalid(
                    "shell radii must be strictly nested: csf > gm > wm on every axis",
                ));
            }
            if self.wm_radii[a] <= 0.0 {
                return Err(Error::invalid("shell radii must be positive"));
            }
        }
        if !(self.wm_intensity > self.gm_intensity && self.gm_intensity > self.csf_intensity) {
            return Err(Error::invalid(
                "tissue intensities must satisfy the T1-weighted ordering wm > gm > csf",
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// Build the phantom volume and its hard segmentation.  Deterministic for a
/// fixed `(spec, seed)` pair; with `noise_std == 0` the per-class intensity
/// means equal the spec values exactly.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<(Volume, Segmentation)> {
    spec.validate()?;
    let dims: Dims = spec.dims;
    let n = grid::num_voxels(dims);
    let mut data = vec![0.0f32; n];
    let mut labels = vec![0u8; n];
    let center = [
        dims.0 as f64 / 2.0,
        dims.1 as f64 / 2.0,
        dims.2 as f64 / 2.0,
    ];
    let inside = |p: [f64; 3], radii: &[f64; 3]| -> bool {
        let mut q = 0.0;
        for a in 0..3 {
            let d = p[a] / radii[a];
            q += d * d;
        }
        q <= 1.0
    };
    for z in 0..dims.2 {
        for y in 0..dims.1 {
            for x in 0..dims.0 {
                let p = [
                    x as f64 + 0.5 - center[0],
                    y as f64 + 0.5 - center[1],
                    z as f64 + 0.5 - center[2],
                ];
                let i = grid::index(dims, x, y, z);
                let (label, value) = if inside(p, &spec.wm_radii) {
                    (1u8, spec.wm_intensity)
                } else if inside(p, &spec.gm_radii) {
                    (2, spec.gm_intensity)
                } else if inside(p, &spec.csf_radii) {
                    (3, spec.csf_intensity)
                } else {
                    (0, spec.background)
                };
                labels[i] = label;
                let noise = if spec.noise_std > 0.0 {
                    spec.noise_std * keyed_normal_pair(seed, i as u64).0 as f32
                } else {
                    0.0
                };
                data[i] = value + noise;
            }
        }
    }
    let volume = Volume::from_data(dims, data)?;
    let seg = Segmentation::from_labels(dims, labels)?;
    Ok((volume, seg))
}

/// Eroded per-class masks, handy as flat-region ROIs for SNR estimation.
pub fn eroded_class_masks(seg: &Segmentation, erosions: usize) -> [Vec<bool>; 4] {
    let dims = seg.dims();
    let labels = seg.labels();
    core::array::from_fn(|c| {
        let mut mask: Vec<bool> = labels.iter().map(|&l| l as usize == c).collect();
        for _ in 0..erosions {
            mask = grid::erode_mask(&mask, dims);
        }
        mask
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_means_are_exact() {
        let spec = PhantomSpec {
            noise_std: 0.0,
            ..PhantomSpec::default()
        };
        let (vol, seg) = make_phantom(&spec, 0).unwrap();
        let labels = seg.labels();
        for (class, expect) in [(1u8, 0.8f32), (2, 0.55), (3, 0.3), (0, 0.05)] {
            let vals: alloc::vec::Vec<f32> = vol
                .data()
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == class)
                .map(|(&v, _)| v)
                .collect();
            assert!(!vals.is_empty());
            assert!(vals.iter().all(|&v| v == expect));
        }
    }

    #[test]
    fn all_classes_present() {
        let (_, seg) = make_phantom(&PhantomSpec::default(), 1).unwrap();
        let counts = seg.class_counts();
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = PhantomSpec::default();
        let (a, _) = make_phantom(&spec, 42).unwrap();
        let (b, _) = make_phantom(&spec, 42).unwrap();
        assert_eq!(a.data(), b.data());
        let (c, _) = make_phantom(&spec, 43).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn non_nested_radii_rejected() {
        let spec = PhantomSpec {
            gm_radii: [29.0; 3],
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&spec, 0).is_err());
    }
}
