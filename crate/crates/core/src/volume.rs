//! Volume and segmentation data model.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{self, Dims};

/// Tissue classes in fixed channel order.  Background is an explicit class
/// so that the segmentation head of the network has four channels; the
/// contrast math only ever touches the three tissues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
#[repr(u8)]
pub enum TissueClass {
    Background = 0,
    WhiteMatter = 1,
    GrayMatter = 2,
    Csf = 3,
}

impl TissueClass {
    pub const ALL: [TissueClass; 4] = [
        TissueClass::Background,
        TissueClass::WhiteMatter,
        TissueClass::GrayMatter,
        TissueClass::Csf,
    ];

    /// The three tissues that enter the contrast equations.
    pub const TISSUES: [TissueClass; 3] = [
        TissueClass::WhiteMatter,
        TissueClass::GrayMatter,
        TissueClass::Csf,
    ];

    #[inline]
    pub fn channel(self) -> usize {
        self as usize
    }

    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            0 => Ok(TissueClass::Background),
            1 => Ok(TissueClass::WhiteMatter),
            2 => Ok(TissueClass::GrayMatter),
            3 => Ok(TissueClass::Csf),
            other => Err(Error::invalid(format!("segmentation label {other} out of range 0..=3"))),
        }
    }
}

/// A 3D scalar grid with voxel spacing and a voxel-to-world affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: [f32; 3],
    affine: [[f32; 4]; 4],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: [f32; 3], affine: [[f32; 4]; 4], data: Vec<f32>) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(Error::invalid("volume dimensions must be positive"));
        }
        if data.len() != grid::num_voxels(dims) {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("voxel spacing must be strictly positive"));
        }
        Ok(Volume { dims, spacing, affine, data })
    }

    /// Unit spacing, identity affine.
    pub fn from_data(dims: Dims, data: Vec<f32>) -> Result<Self> {
        Volume::new(dims, [1.0; 3], identity_affine(), data)
    }

    pub fn constant(dims: Dims, value: f32) -> Self {
        Volume {
            dims,
            spacing: [1.0; 3],
            affine: identity_affine(),
            data: vec![value; grid::num_voxels(dims)],
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    #[inline]
    pub fn affine(&self) -> [[f32; 4]; 4] {
        self.affine
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[grid::index(self.dims, x, y, z)]
    }

    pub fn set_spacing(&mut self, spacing: [f32; 3]) {
        self.spacing = spacing;
    }

    pub fn set_affine(&mut self, affine: [[f32; 4]; 4]) {
        self.affine = affine;
    }

    /// Replace the data, keeping metadata; lengths must match.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Volume> {
        Volume::new(self.dims, self.spacing, self.affine, data)
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Mean over the voxels selected by `mask`.
    pub fn masked_mean(&self, mask: &[bool]) -> Result<f64> {
        if mask.len() != self.data.len() {
            return Err(Error::invalid("mask length does not match volume"));
        }
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for (v, &m) in self.data.iter().zip(mask) {
            if m {
                sum += *v as f64;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("mask selects no voxels"));
        }
        Ok(sum / n as f64)
    }

    /// Population standard deviation over the voxels selected by `mask`.
    pub fn masked_std(&self, mask: &[bool]) -> Result<f64> {
        let mean = self.masked_mean(mask)?;
        let mut sq = 0.0f64;
        let mut n = 0usize;
        for (v, &m) in self.data.iter().zip(mask) {
            if m {
                let d = *v as f64 - mean;
                sq += d * d;
                n += 1;
            }
        }
        Ok((sq / n as f64).sqrt())
    }
}

fn identity_affine() -> [[f32; 4]; 4] {
    let mut a = [[0.0f32; 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a
}

/// Affine with diagonal spacing (the default voxel-to-world map).
pub fn spacing_affine(spacing: [f32; 3]) -> [[f32; 4]; 4] {
    let mut a = identity_affine();
    a[0][0] = spacing[0];
    a[1][1] = spacing[1];
    a[2][2] = spacing[2];
    a
}

/// Per-voxel tissue assignment, hard labels or a 4-channel distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum SegData {
    Hard(Vec<u8>),
    Soft(Vec<[f32; 4]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    dims: Dims,
    data: SegData,
}

/// Tolerance for soft-probability normalization.
pub const PROB_SUM_TOL: f32 = 1e-6;

impl Segmentation {
    pub fn from_labels(dims: Dims, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid::num_voxels(dims) {
            return Err(Error::invalid("label length does not match dims"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 3) {
            return Err(Error::invalid(format!("label {bad} out of range 0..=3")));
        }
        Ok(Segmentation { dims, data: SegData::Hard(labels) })
    }

    pub fn from_probs(dims: Dims, probs: Vec<[f32; 4]>) -> Result<Self> {
        if probs.len() != grid::num_voxels(dims) {
            return Err(Error::invalid("probability length does not match dims"));
        }
        for (i, p) in probs.iter().enumerate() {
            let sum: f32 = p.iter().sum();
            if p.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::invalid(format!(
                    "voxel {i}: class probabilities must be non-negative and sum to 1 (sum {sum})"
                )));
            }
        }
        Ok(Segmentation { dims, data: SegData::Soft(probs) })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &SegData {
        &self.data
    }

    pub fn is_soft(&self) -> bool {
        matches!(self.data, SegData::Soft(_))
    }

    /// Hard label per voxel; soft inputs are argmax-hardened (ties go to the
    /// lower channel, following the fixed class order).
    pub fn labels(&self) -> Vec<u8> {
        match &self.data {
            SegData::Hard(l) => l.clone(),
            SegData::Soft(p) => p
                .iter()
                .map(|probs| {
                    let mut best = 0usize;
                    for c in 1..4 {
                        if probs[c] > probs[best] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect(),
        }
    }

    /// Binary mask of one class.  Soft voxels count when the class
    /// probability exceeds 0.5.
    pub fn class_mask(&self, class: TissueClass) -> Vec<bool> {
        let c = class.channel();
        match &self.data {
            SegData::Hard(l) => l.iter().map(|&v| v as usize == c).collect(),
            SegData::Soft(p) => p.iter().map(|probs| probs[c] > 0.5).collect(),
        }
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut counts = [0usize; 4];
        for l in self.labels() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Majority-vote label pooling over `df^3` blocks (ties resolved in
    /// class order).  Used to carry a segmentation into downsampled space.
    pub fn pool_labels(&self, df: usize) -> Result<Segmentation> {
        if df == 0 {
            return Err(Error::invalid("pooling factor must be >= 1"));
        }
        let labels = self.labels();
        let out_dims = grid::pooled_dims(self.dims, df);
        let mut out = vec![0u8; grid::num_voxels(out_dims)];
        for oz in 0..out_dims.2 {
            for oy in 0..out_dims.1 {
                for ox in 0..out_dims.0 {
                    let mut counts = [0usize; 4];
                    for z in oz * df..(oz * df + df).min(self.dims.2) {
                        for y in oy * df..(oy * df + df).min(self.dims.1) {
                            for x in ox * df..(ox * df + df).min(self.dims.0) {
                                counts[labels[grid::index(self.dims, x, y, z)] as usize] += 1;
                            }
                        }
                    }
                    let mut best = 0usize;
                    for c in 1..4 {
                        if counts[c] > counts[best] {
                            best = c;
                        }
                    }
                    out[grid::index(out_dims, ox, oy, oz)] = best as u8;
                }
            }
        }
        Segmentation::from_labels(out_dims, out)
    }

    /// Per-class soft probabilities (one-hot for hard segmentations).
    pub fn probs(&self) -> Vec<[f32; 4]> {
        match &self.data {
            SegData::Soft(p) => p.clone(),
            SegData::Hard(l) => l
                .iter()
                .map(|&lab| {
                    let mut p = [0.0f32; 4];
                    p[lab as usize] = 1.0;
                    p
                })
                .collect(),
        }
    }
}

/// Rescale intensities to `[0, 1]`; a constant volume maps to all zeros.
pub fn normalize_intensity(volume: &Volume) -> Volume {
    let (lo, hi) = volume.min_max();
    let range = hi - lo;
    let data = if range == 0.0 {
        vec![0.0; volume.data().len()]
    } else {
        volume.data().iter().map(|&v| (v - lo) / range).collect()
    };
    Volume {
        dims: volume.dims,
        spacing: volume.spacing,
        affine: volume.affine,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let v = Volume::from_data((3, 1, 1), vec![0.0, 50.0, 100.0]).unwrap();
        assert_eq!(normalize_intensity(&v).data(), &[0.0, 0.5, 1.0]);

        let v = Volume::from_data((3, 1, 1), vec![-10.0, 0.0, 30.0]).unwrap();
        assert_eq!(normalize_intensity(&v).data(), &[0.0, 0.25, 1.0]);

        let v = Volume::constant((2, 2, 2), 3.5);
        assert!(normalize_intensity(&v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_is_idempotent() {
        let v = Volume::from_data((4, 1, 1), vec![1.0, 2.0, 5.0, -3.0]).unwrap();
        let once = normalize_intensity(&v);
        let twice = normalize_intensity(&once);
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn soft_probs_must_sum_to_one() {
        let bad = Segmentation::from_probs((1, 1, 1), vec![[0.5, 0.5, 0.5, 0.0]]);
        assert!(matches!(bad, Err(Error::InvalidArgument(_))));
        let ok = Segmentation::from_probs((1, 1, 1), vec![[0.25, 0.25, 0.25, 0.25]]);
        assert!(ok.is_ok());
    }

    #[test]
    fn argmax_hardening_and_masks() {
        let seg = Segmentation::from_probs(
            (2, 1, 1),
            vec![[0.1, 0.6, 0.2, 0.1], [0.7, 0.1, 0.1, 0.1]],
        )
        .unwrap();
        assert_eq!(seg.labels(), vec![1, 0]);
        assert_eq!(seg.class_mask(TissueClass::WhiteMatter), vec![true, false]);
    }

    #[test]
    fn bad_dims_rejected() {
        assert!(Volume::from_data((2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Volume::new((0, 1, 1), [1.0; 3], spacing_affine([1.0; 3]), vec![]).is_err());
        assert!(Volume::new((1, 1, 1), [0.0, 1.0, 1.0], spacing_affine([1.0; 3]), vec![0.0]).is_err());
    }

    #[test]
    fn majority_pooling() {
        // 2x2x1 block with labels [1,1,2,0] pools to 1
        let seg = Segmentation::from_labels((2, 2, 1), vec![1, 1, 2, 0]).unwrap();
        let pooled = seg.pool_labels(2).unwrap();
        assert_eq!(pooled.labels(), vec![1]);
    }
}
