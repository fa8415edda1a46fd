//! Tissue SNR estimation, the contrast linear system, and the bounded
//! regularized least-squares solve for the degradation vector.

use alloc::format;
use alloc::vec::Vec;
// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::volume::{Segmentation, TissueClass, Volume};

/// Rayleigh correction applied to the background noise std of magnitude
/// images.
pub const RAYLEIGH_CORRECTION: f64 = 1.53;

/// Per-tissue signal-to-noise ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnrTriple {
    pub wm: f64,
    pub gm: f64,
    pub csf: f64,
}

impl SnrTriple {
    pub fn new(wm: f64, gm: f64, csf: f64) -> Result<Self> {
        let t = SnrTriple { wm, gm, csf };
        if !t.as_array().iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::invalid("SNR values must be finite and positive"));
        }
        Ok(t)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wm, self.gm, self.csf]
    }

    /// T1-weighted inputs are expected to satisfy wm > gm > csf.  Violations
    /// are reported, not rejected.
    pub fn is_t1_ordered(&self) -> bool {
        self.wm > self.gm && self.gm > self.csf
    }
}

/// WM-CSF, WM-GM and GM-CSF contrasts, in SNR-difference units.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContrastTriple {
    pub wc: f64,
    pub wg: f64,
    pub gc: f64,
}

impl ContrastTriple {
    pub fn new(wc: f64, wg: f64, gc: f64) -> Self {
        ContrastTriple { wc, wg, gc }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wc, self.wg, self.gc]
    }

    /// The three contrasts are linearly dependent in exact arithmetic
    /// (wc = wg + gc); this reports how far a triple deviates from that.
    pub fn consistency_residual(&self) -> f64 {
        (self.wc - (self.wg + self.gc)).abs()
    }
}

/// Per-tissue degradation factors, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DegradationVector {
    pub wm: f64,
    pub gm: f64,
    pub csf: f64,
}

impl DegradationVector {
    pub fn new(wm: f64, gm: f64, csf: f64) -> Result<Self> {
        for v in [wm, gm, csf] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("degradation factor {v} outside [0, 1]")));
            }
        }
        Ok(DegradationVector { wm, gm, csf })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.wm, self.gm, self.csf]
    }

    pub fn norm(&self) -> f64 {
        (self.wm * self.wm + self.gm * self.gm + self.csf * self.csf).sqrt()
    }
}

/// Solver configuration for [`estimate_m`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    /// Regularization strength.
    pub epsilon: f64,
    /// Lattice spacing; must divide 1 into an integer number of cells.
    pub grid_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { epsilon: 1e-3, grid_step: 1e-3 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<usize> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be >= 0"));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return Err(Error::invalid("grid_step must lie in (0, 1]"));
        }
        let cells = 1.0 / self.grid_step;
        if (cells - cells.round()).abs() > 1e-9 * cells {
            return Err(Error::invalid("grid_step must divide 1 into an integer number of cells"));
        }
        Ok(cells.round() as usize)
    }
}

/// Binary ROI masks for SNR estimation: one flat region per tissue plus a
/// background region.
#[derive(Debug, Clone)]
pub struct RoiMasks {
    pub wm: Vec<bool>,
    pub gm: Vec<bool>,
    pub csf: Vec<bool>,
    pub background: Vec<bool>,
}

/// Per-tissue SNR: mean over the tissue ROI divided by the
/// Rayleigh-corrected background standard deviation (population std).
pub fn estimate_snr(volume: &Volume, rois: &RoiMasks) -> Result<SnrTriple> {
    let n = volume.data().len();
    for (name, mask) in [
        ("wm", &rois.wm),
        ("gm", &rois.gm),
        ("csf", &rois.csf),
        ("background", &rois.background),
    ] {
        if mask.len() != n {
            return Err(Error::invalid(format!("{name} mask length does not match volume")));
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::invalid(format!("{name} mask is empty")));
        }
    }
    if rois.background.iter().filter(|&&b| b).count() < 2 {
        return Err(Error::invalid("background mask needs at least 2 voxels"));
    }
    let sigma_bg = volume.masked_std(&rois.background)?;
    if sigma_bg == 0.0 {
        return Err(Error::degenerate("background std is zero"));
    }
    let denom = sigma_bg * RAYLEIGH_CORRECTION;
    SnrTriple::new(
        volume.masked_mean(&rois.wm)? / denom,
        volume.masked_mean(&rois.gm)? / denom,
        volume.masked_mean(&rois.csf)? / denom,
    )
}

/// The 3x3 contrast system matrix.  Row 1 always equals row 2 + row 3, so
/// the matrix is structurally rank-deficient and nothing downstream may
/// assume invertibility.
pub fn build_contrast_system(snr: &SnrTriple) -> [[f64; 3]; 3] {
    [
        [snr.wm, 0.0, -snr.csf],
        [snr.wm, -snr.gm, 0.0],
        [0.0, snr.gm, -snr.csf],
    ]
}

/// `A * m` for the structured contrast matrix.
pub fn apply_contrast_system(snr: &SnrTriple, m: &DegradationVector) -> ContrastTriple {
    ContrastTriple::new(
        snr.wm * m.wm - snr.csf * m.csf,
        snr.wm * m.wm - snr.gm * m.gm,
        snr.gm * m.gm - snr.csf * m.csf,
    )
}

#[inline]
fn objective_parts(s: [f64; 3], c: [f64; 3], eps: f64, x: f64, y: f64, z: f64) -> (f64, [f64; 3]) {
    let r1 = s[0] * x - s[2] * z - c[0];
    let r2 = s[0] * x - s[1] * y - c[1];
    let r3 = s[1] * y - s[2] * z - c[2];
    let value = 0.5 * (r1 * r1 + r2 * r2 + r3 * r3) + eps * (x * x + y * y + z * z);
    (value, [r1, r2, r3])
}

#[inline]
fn objective(s: [f64; 3], c: [f64; 3], eps: f64, x: f64, y: f64, z: f64) -> f64 {
    objective_parts(s, c, eps, x, y, z).0
}

/// Euclidean norm of the objective gradient at `m`.
fn gradient_norm(s: [f64; 3], c: [f64; 3], eps: f64, x: f64, y: f64, z: f64) -> f64 {
    let (_, [r1, r2, r3]) = objective_parts(s, c, eps, x, y, z);
    let gx = s[0] * (r1 + r2) + 2.0 * eps * x;
    let gy = -s[1] * r2 + s[1] * r3 + 2.0 * eps * y;
    let gz = -s[2] * r1 - s[2] * r3 + 2.0 * eps * z;
    (gx * gx + gy * gy + gz * gz).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    value: f64,
    idx: [usize; 3],
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.value < other.value || (self.value == other.value && self.idx < other.idx)
    }
}

/// Scan every lattice point whose index lies in the given inclusive ranges.
fn scan_box(
    s: [f64; 3],
    c: [f64; 3],
    eps: f64,
    h: f64,
    range: [(usize, usize); 3],
    best: &mut Candidate,
) {
    for zi in range[2].0..=range[2].1 {
        let z = zi as f64 * h;
        for yi in range[1].0..=range[1].1 {
            let y = yi as f64 * h;
            for xi in range[0].0..=range[0].1 {
                let x = xi as f64 * h;
                let cand = Candidate { value: objective(s, c, eps, x, y, z), idx: [xi, yi, zi] };
                if cand.better_than(best) {
                    *best = cand;
                }
            }
        }
    }
}

/// Exact minimizer of `0.5*||Am - c||^2 + eps*||m||^2` over the lattice
/// `{0, grid_step, ..., 1}^3`, ties broken by the lexicographically
/// smallest `(m_wm, m_gm, m_csf)`.
///
/// Fine lattices are solved coarse-to-fine: a coarse scan bounds the
/// objective below on each coarse cell via convexity
/// (`f(q) >= f(p) - ||grad f(p)|| * |q - p|`), and only cells whose bound
/// does not exceed the incumbent are rescanned at full resolution.  The
/// result is identical to an exhaustive fine scan; a plain one-box local
/// refinement is not, because the objective is flat along the null
/// direction of the rank-2 system.
pub fn estimate_m(
    snr: &SnrTriple,
    target: &ContrastTriple,
    config: &SolverConfig,
) -> Result<(DegradationVector, f64)> {
    let cells = config.validate()?;
    let s = snr.as_array();
    let c = target.as_array();
    let eps = config.epsilon;
    let h = config.grid_step;

    let mut best = Candidate { value: f64::INFINITY, idx: [0, 0, 0] };

    // small lattices: plain exhaustive scan
    if cells <= 200 {
        scan_box(s, c, eps, h, [(0, cells); 3], &mut best);
    } else {
        let k = cells.div_ceil(100);
        // coarse pass over indices {0, k, 2k, ...} plus the endpoint
        let mut coarse_idx: Vec<usize> = (0..=cells / k).map(|i| i * k).collect();
        if *coarse_idx.last().unwrap() != cells {
            coarse_idx.push(cells);
        }
        let mut coarse: Vec<Candidate> = Vec::with_capacity(coarse_idx.len().pow(3));
        for &zi in &coarse_idx {
            let z = zi as f64 * h;
            for &yi in &coarse_idx {
                let y = yi as f64 * h;
                for &xi in &coarse_idx {
                    let x = xi as f64 * h;
                    let cand =
                        Candidate { value: objective(s, c, eps, x, y, z), idx: [xi, yi, zi] };
                    if cand.better_than(&best) {
                        best = cand;
                    }
                    coarse.push(cand);
                }
            }
        }
        // any fine point is within (k/2 + 1) fine steps (L-inf) of a coarse
        // point, so the Euclidean reach of one coarse cell is bounded by:
        let half = k / 2 + 1;
        let reach = 3.0f64.sqrt() * half as f64 * h;
        coarse.sort_by(|a, b| a.value.partial_cmp(&b.value).unwrap().then(a.idx.cmp(&b.idx)));
        for cand in &coarse {
            let [xi, yi, zi] = cand.idx;
            let g = gradient_norm(s, c, eps, xi as f64 * h, yi as f64 * h, zi as f64 * h);
            if cand.value - g * reach > best.value {
                continue;
            }
            let range = core::array::from_fn(|a| {
                let i = cand.idx[a];
                (i.saturating_sub(half), (i + half).min(cells))
            });
            scan_box(s, c, eps, h, range, &mut best);
        }
    }

    let m = DegradationVector::new(
        best.idx[0] as f64 * h,
        best.idx[1] as f64 * h,
        best.idx[2] as f64 * h,
    )?;
    Ok((m, best.value))
}

/// Measured contrasts of a volume: per-tissue intensity-mean differences in
/// Rayleigh-corrected SNR units.
pub fn measure_contrast(
    volume: &Volume,
    seg: &Segmentation,
    bg_sigma: f64,
) -> Result<ContrastTriple> {
    if seg.dims() != volume.dims() {
        return Err(Error::invalid("segmentation dims do not match volume"));
    }
    if !(bg_sigma > 0.0) {
        return Err(Error::invalid("bg_sigma must be positive"));
    }
    let labels = seg.labels();
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for (&v, &l) in volume.data().iter().zip(&labels) {
        sums[l as usize] += v as f64;
        counts[l as usize] += 1;
    }
    for t in TissueClass::TISSUES {
        if counts[t.channel()] == 0 {
            return Err(Error::invalid(format!("tissue class {t:?} missing from segmentation")));
        }
    }
    let mean = |t: TissueClass| sums[t.channel()] / counts[t.channel()] as f64;
    let denom = bg_sigma * RAYLEIGH_CORRECTION;
    let wm = mean(TissueClass::WhiteMatter);
    let gm = mean(TissueClass::GrayMatter);
    let csf = mean(TissueClass::Csf);
    Ok(ContrastTriple::new(
        (wm - csf) / denom,
        (wm - gm) / denom,
        (gm - csf) / denom,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use alloc::vec;

    fn solve(s: [f64; 3], c: [f64; 3], eps: f64, h: f64) -> (DegradationVector, f64) {
        estimate_m(
            &SnrTriple::new(s[0], s[1], s[2]).unwrap(),
            &ContrastTriple::new(c[0], c[1], c[2]),
            &SolverConfig { epsilon: eps, grid_step: h },
        )
        .unwrap()
    }

    #[test]
    fn snr_from_direct_evaluation() {
        // ROI mean 100, sigma_bg 10 -> 100 / (10 * 1.53)
        let vol = Volume::from_data((5, 1, 1), vec![100.0, 80.0, 60.0, -10.0, 10.0]).unwrap();
        let rois = RoiMasks {
            wm: vec![true, false, false, false, false],
            gm: vec![false, true, false, false, false],
            csf: vec![false, false, true, false, false],
            background: vec![false, false, false, true, true],
        };
        let snr = estimate_snr(&vol, &rois).unwrap();
        assert!((snr.wm - 100.0 / 15.3).abs() < 1e-12);
        assert!((snr.gm - 80.0 / 15.3).abs() < 1e-12);
        assert!((snr.csf - 60.0 / 15.3).abs() < 1e-12);
        assert!(snr.is_t1_ordered());
    }

    #[test]
    fn constant_background_is_degenerate() {
        let vol = Volume::from_data((4, 1, 1), vec![5.0, 4.0, 3.0, 3.0]).unwrap();
        let rois = RoiMasks {
            wm: vec![true, false, false, false],
            gm: vec![false, true, false, false],
            csf: vec![false, true, false, false],
            background: vec![false, false, true, true],
        };
        assert!(matches!(estimate_snr(&vol, &rois), Err(Error::Degenerate(_))));
    }

    #[test]
    fn empty_mask_rejected() {
        let vol = Volume::constant((2, 1, 1), 1.0);
        let rois = RoiMasks {
            wm: vec![false, false],
            gm: vec![true, false],
            csf: vec![true, false],
            background: vec![true, true],
        };
        assert!(matches!(estimate_snr(&vol, &rois), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn system_matrix_layout() {
        let snr = SnrTriple::new(81.0, 58.0, 29.0).unwrap();
        let a = build_contrast_system(&snr);
        assert_eq!(a, [[81.0, 0.0, -29.0], [81.0, -58.0, 0.0], [0.0, 58.0, -29.0]]);
        // row 1 = row 2 + row 3, structurally
        for j in 0..3 {
            assert_eq!(a[0][j], a[1][j] + a[2][j]);
        }
        let m = DegradationVector::new(1.0, 1.0, 1.0).unwrap();
        let amc = apply_contrast_system(&snr, &m);
        assert_eq!(amc.as_array(), [52.0, 23.0, 29.0]);
    }

    #[test]
    fn snr_invariant_under_global_scaling() {
        let mut rng = Stream::new(2);
        let data: Vec<f32> = (0..64).map(|_| rng.uniform(0.1, 1.0) as f32).collect();
        let vol = Volume::from_data((4, 4, 4), data.clone()).unwrap();
        let scaled =
            Volume::from_data((4, 4, 4), data.iter().map(|&v| v * 2.0).collect()).unwrap();
        let mut wm = vec![false; 64];
        let mut gm = vec![false; 64];
        let mut csf = vec![false; 64];
        let mut bg = vec![false; 64];
        for i in 0..64 {
            match i % 4 {
                0 => wm[i] = true,
                1 => gm[i] = true,
                2 => csf[i] = true,
                _ => bg[i] = true,
            }
        }
        let rois = RoiMasks { wm, gm, csf, background: bg };
        let a = estimate_snr(&vol, &rois).unwrap();
        let b = estimate_snr(&scaled, &rois).unwrap();
        // doubling is exact in floating point, so the ratios agree tightly
        assert!((a.wm - b.wm).abs() < 1e-9);
        assert!((a.gm - b.gm).abs() < 1e-9);
        assert!((a.csf - b.csf).abs() < 1e-9);
    }

    #[test]
    fn consistent_system_identity() {
        // c = A (1,1,1) on the default-coarseness lattice recovers (1,1,1)
        // with objective exactly zero (all quantities are integers)
        let (m, obj) = solve([81.0, 58.0, 29.0], [52.0, 23.0, 29.0], 0.0, 0.01);
        assert_eq!(m.as_array(), [1.0, 1.0, 1.0]);
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn zero_target_with_regularizer_returns_origin() {
        let (m, obj) = solve([81.0, 58.0, 29.0], [0.0, 0.0, 0.0], 1e-3, 0.01);
        assert_eq!(m.as_array(), [0.0, 0.0, 0.0]);
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn golden_fine_lattice_solve() {
        // frozen from an independent full-lattice search (exhaustive over
        // (m_gm, m_csf) with closed-form minimization along m_wm)
        let (m, obj) = solve([81.0, 58.0, 29.0], [2.0, 12.0, 17.0], 0.0, 0.001);
        assert_eq!(m.as_array(), [206.0 * 0.001, 236.0 * 0.001, 196.0 * 0.001]);
        assert!((obj - 121.50001199999997).abs() < 1e-9, "obj {obj}");
    }

    #[test]
    fn minimizer_beats_coarse_rescan() {
        // exhaustive re-scan on a coarse lattice confirms global optimality
        let mut rng = Stream::new(31);
        for _ in 0..5 {
            let s = [
                rng.uniform(15.0, 110.0),
                rng.uniform(15.0, 110.0),
                rng.uniform(15.0, 110.0),
            ];
            let c = [rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0), rng.uniform(0.0, 30.0)];
            let eps = rng.uniform(0.0, 0.01);
            let h = 0.05;
            let (m, obj) = solve(s, c, eps, h);
            let cells = 20;
            for zi in 0..=cells {
                for yi in 0..=cells {
                    for xi in 0..=cells {
                        let v = objective(
                            s,
                            c,
                            eps,
                            xi as f64 * h,
                            yi as f64 * h,
                            zi as f64 * h,
                        );
                        assert!(obj <= v, "{m:?} {obj} beaten by ({xi},{yi},{zi}) = {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn regularization_never_grows_the_norm() {
        let mut rng = Stream::new(8);
        for _ in 0..10 {
            let s = [
                rng.uniform(20.0, 100.0),
                rng.uniform(20.0, 100.0),
                rng.uniform(20.0, 100.0),
            ];
            let c = [rng.uniform(0.0, 25.0), rng.uniform(0.0, 25.0), rng.uniform(0.0, 25.0)];
            let mut prev = f64::INFINITY;
            for eps in [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0] {
                let (m, _) = solve(s, c, eps, 0.02);
                assert!(m.norm() <= prev + 1e-12, "eps {eps}: {} > {prev}", m.norm());
                prev = m.norm();
            }
        }
    }

    #[test]
    fn argmin_invariant_under_exact_joint_scaling() {
        // scaling (A, c) by 2 is exact in floating point and must not move
        // the eps = 0 argmin
        let s = [52.0, 36.0, 19.0];
        let c = [2.0, 12.0, 17.0];
        let (m1, v1) = solve(s, c, 0.0, 0.01);
        let (m2, v2) = solve([104.0, 72.0, 38.0], [4.0, 24.0, 34.0], 0.0, 0.01);
        assert_eq!(m1.as_array(), m2.as_array());
        assert_eq!(v2, 4.0 * v1);
    }

    #[test]
    fn invalid_grid_step_rejected() {
        let cfg = SolverConfig { epsilon: 0.0, grid_step: 0.3 };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig { epsilon: -1.0, grid_step: 0.01 };
        assert!(cfg.validate().is_err());
        assert_eq!(SolverConfig::default().validate().unwrap(), 1000);
    }

    #[test]
    fn measured_contrast_on_labelled_volume() {
        // two voxels of each tissue with known means
        let data = vec![0.8, 0.8, 0.5, 0.6, 0.2, 0.4, 0.0, 0.0];
        let labels = vec![1, 1, 2, 2, 3, 3, 0, 0];
        let vol = Volume::from_data((8, 1, 1), data).unwrap();
        let seg = Segmentation::from_labels((8, 1, 1), labels).unwrap();
        let c = measure_contrast(&vol, &seg, 0.01).unwrap();
        let d = 0.01 * RAYLEIGH_CORRECTION;
        assert!((c.wc - (0.8 - 0.3) / d).abs() < 1e-6);
        assert!((c.wg - (0.8 - 0.55) / d).abs() < 1e-6);
        assert!((c.gc - (0.55 - 0.3) / d).abs() < 1e-6);
        assert!(c.consistency_residual() < 1e-9);
    }

    #[test]
    fn identical_means_give_zero_contrast() {
        let vol = Volume::constant((3, 1, 1), 0.5);
        let seg = Segmentation::from_labels((3, 1, 1), vec![1, 2, 3]).unwrap();
        let c = measure_contrast(&vol, &seg, 1.0).unwrap();
        assert_eq!(c.as_array(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_tissue_class_rejected() {
        let vol = Volume::constant((3, 1, 1), 0.5);
        let seg = Segmentation::from_labels((3, 1, 1), vec![1, 2, 0]).unwrap();
        assert!(measure_contrast(&vol, &seg, 1.0).is_err());
    }
}
