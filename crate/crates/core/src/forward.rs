//! The ULF synthesizer: per-tissue masking, Gaussian smoothing, block
//! downsampling, degradation scaling, recombination, and Rician noise.

use alloc::vec;
use alloc::vec::Vec;
// the trait supplies float math in no_std builds; test builds link std
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;

use crate::contrast::DegradationVector;
use crate::error::{Error, Result};
use crate::grid::{self, Dims};
use crate::rng::keyed_normal_pair;
use crate::volume::{Segmentation, TissueClass, Volume};

/// Forward-model parameters.
///
/// The Rician parameters are interpreted on a 0..`noise_scale` intensity
/// scale (255 by default): the degraded volume is scaled up, the noise
/// field added, and the result divided back down and clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ForwardConfig {
    /// Gaussian smoothing std in voxels.
    pub sigma_smooth: f64,
    /// Integer downsampling factor.
    pub df: usize,
    /// Rician non-centrality, in 0..noise_scale units.
    pub noise_rho: f64,
    /// Rician scale, in 0..noise_scale units.
    pub noise_sigma: f64,
    /// Intensity scale on which the noise parameters live.
    #[cfg_attr(feature = "serde", serde(default = "default_noise_scale"))]
    pub noise_scale: f64,
    pub seed: u64,
}

#[allow(dead_code)]
fn default_noise_scale() -> f64 {
    255.0
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            sigma_smooth: 0.5,
            df: 2,
            noise_rho: 5.0,
            noise_sigma: 15.0,
            noise_scale: 255.0,
            seed: 0,
        }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_smooth < 0.0 {
            return Err(Error::invalid("sigma_smooth must be >= 0"));
        }
        if self.df < 1 {
            return Err(Error::invalid("downsampling factor must be >= 1"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        if !(self.noise_scale > 0.0) {
            return Err(Error::invalid("noise_scale must be positive"));
        }
        Ok(())
    }
}

/// Separable Gaussian smoothing of a volume; `sigma == 0` is the identity.
pub fn gaussian_smooth(volume: &Volume, sigma: f64) -> Result<Volume> {
    if sigma < 0.0 {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let data = grid::smooth(volume.data(), volume.dims(), sigma);
    volume.with_data(data)
}

/// Block-average downsampling by an integer factor.
pub fn downsample(volume: &Volume, df: usize) -> Result<Volume> {
    if df < 1 {
        return Err(Error::invalid("downsampling factor must be >= 1"));
    }
    let dims = volume.dims();
    let out_dims = grid::pooled_dims(dims, df);
    let data = grid::pool(volume.data(), dims, df);
    let spacing = volume.spacing();
    let new_spacing = core::array::from_fn(|a| spacing[a] * df as f32);
    let old = volume.affine();
    let mut affine = old;
    // voxel i of the output sits at input voxel i*df + (df-1)/2
    for r in 0..3 {
        let mut shift = 0.0f32;
        for a in 0..3 {
            affine[r][a] = old[r][a] * df as f32;
            shift += old[r][a] * (df as f32 - 1.0) / 2.0;
        }
        affine[r][3] = old[r][3] + shift;
    }
    Volume::new(out_dims, new_spacing, affine, data)
}

/// Exponentially scaled modified Bessel functions `e^-z I_n(z)` for n = 0, 1.
fn scaled_bessel_i01(z: f64) -> (f64, f64) {
    debug_assert!(z >= 0.0);
    if z <= 25.0 {
        let q = z * z / 4.0;
        let mut term0 = 1.0;
        let mut term1 = 0.5;
        let mut i0 = term0;
        let mut i1 = term1;
        for k in 1..200 {
            term0 *= q / ((k * k) as f64);
            term1 *= q / ((k * (k + 1)) as f64);
            i0 += term0;
            i1 += term1;
            if term0 < 1e-18 * i0 {
                break;
            }
        }
        let e = (-z).exp();
        (i0 * e, i1 * z * e)
    } else {
        // large-argument asymptotics
        let inv = 1.0 / (8.0 * z);
        let base = 1.0 / (2.0 * core::f64::consts::PI * z).sqrt();
        let i0 = base * (1.0 + inv + 4.5 * inv * inv);
        let i1 = base * (1.0 - 3.0 * inv - 7.5 * inv * inv);
        (i0, i1)
    }
}

/// Mean of the Rician distribution with non-centrality `rho` and scale
/// `sigma_r`, from the closed form
/// `sigma * sqrt(pi/2) * e^(-t/2) * ((1+t) I0(t/2) + t I1(t/2))` with
/// `t = rho^2 / (2 sigma^2)`.  The training consistency path uses this as
/// the deterministic noise-floor offset of the forward model.
pub fn rician_mean(rho: f64, sigma_r: f64) -> f64 {
    if sigma_r == 0.0 {
        return rho.abs();
    }
    let t = rho * rho / (2.0 * sigma_r * sigma_r);
    let (i0s, i1s) = scaled_bessel_i01(t / 2.0);
    sigma_r * (core::f64::consts::PI / 2.0).sqrt() * ((1.0 + t) * i0s + t * i1s)
}

/// A Rician noise field: each voxel is `sqrt((rho + n1)^2 + n2^2)` with
/// `n1, n2 ~ Normal(0, sigma_r^2)`, generated counter-based from
/// `(seed, voxel index)` so the field is independent of evaluation order.
pub fn sample_rician(dims: Dims, rho: f64, sigma_r: f64, seed: u64) -> Result<Volume> {
    if sigma_r < 0.0 {
        return Err(Error::invalid("sigma_r must be >= 0"));
    }
    let n = grid::num_voxels(dims);
    let mut data = vec![0.0f32; n];
    if sigma_r == 0.0 {
        data.fill(rho.abs() as f32);
    } else {
        for (i, v) in data.iter_mut().enumerate() {
            let (n1, n2) = keyed_normal_pair(seed, i as u64);
            let a = rho + sigma_r * n1;
            let b = sigma_r * n2;
            *v = (a * a + b * b).sqrt() as f32;
        }
    }
    Volume::from_data(dims, data)
}

/// Noise-free degraded volume: per-tissue mask, smooth, downsample, scale
/// by the degradation factor, and sum.  Soft segmentations are hardened by
/// thresholding each tissue's probability at 0.5.
pub fn degrade(
    hf: &Volume,
    seg: &Segmentation,
    m: &DegradationVector,
    sigma_smooth: f64,
    df: usize,
) -> Result<Volume> {
    if seg.dims() != hf.dims() {
        return Err(Error::invalid("segmentation dims do not match volume"));
    }
    let dims = hf.dims();
    let out_dims = grid::pooled_dims(dims, df);
    let mut acc = vec![0.0f32; grid::num_voxels(out_dims)];
    let factors = m.as_array();
    for (t, &factor) in TissueClass::TISSUES.iter().zip(&factors) {
        let mask = seg.class_mask(*t);
        let masked: Vec<f32> = hf
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &inside)| if inside { v } else { 0.0 })
            .collect();
        let smoothed = grid::smooth(&masked, dims, sigma_smooth);
        let pooled = grid::pool(&smoothed, dims, df);
        for (a, p) in acc.iter_mut().zip(&pooled) {
            *a += factor as f32 * *p;
        }
    }
    let template = downsample(hf, df)?;
    template.with_data(acc)
}

/// Full forward model: [`degrade`], then Rician noise on the configured
/// intensity scale, divided back down and clamped to `[0, 1]`.
///
/// Deterministic for fixed inputs and `config.seed`; with
/// `noise_sigma == 0` and `noise_rho == 0` the output equals the noise-free
/// degraded volume.
pub fn simulate_ulf(
    hf: &Volume,
    seg: &Segmentation,
    m: &DegradationVector,
    config: &ForwardConfig,
) -> Result<Volume> {
    config.validate()?;
    let clean = degrade(hf, seg, m, config.sigma_smooth, config.df)?;
    if config.noise_sigma == 0.0 && config.noise_rho == 0.0 {
        return Ok(clean);
    }
    let noise = sample_rician(clean.dims(), config.noise_rho, config.noise_sigma, config.seed)?;
    let scale = config.noise_scale as f32;
    let data = clean
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&v, &g)| ((v * scale + g) / scale).clamp(0.0, 1.0))
        .collect();
    clean.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomSpec};

    #[test]
    fn smooth_sigma_zero_is_identity() {
        let (vol, _) = make_phantom(&PhantomSpec::default(), 1).unwrap();
        let out = gaussian_smooth(&vol, 0.0).unwrap();
        assert_eq!(out.data(), vol.data());
    }

    #[test]
    fn smooth_preserves_dc() {
        let vol = Volume::constant((6, 6, 6), 0.42);
        let out = gaussian_smooth(&vol, 1.5).unwrap();
        for &v in out.data() {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_identity_and_means() {
        let vol = Volume::from_data((2, 2, 2), (0..8).map(|v| v as f32).collect()).unwrap();
        let same = downsample(&vol, 1).unwrap();
        assert_eq!(same.data(), vol.data());
        let one = downsample(&vol, 2).unwrap();
        assert_eq!(one.dims(), (1, 1, 1));
        assert_eq!(one.data()[0], 3.5);
        assert_eq!(one.spacing(), [2.0; 3]);
    }

    #[test]
    fn checkerboard_averages_to_half() {
        let dims = (4, 4, 4);
        let mut data = vec![0.0f32; 64];
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..4 {
                    data[grid::index(dims, x, y, z)] = ((x + y + z) % 2) as f32;
                }
            }
        }
        let vol = Volume::from_data(dims, data).unwrap();
        let out = downsample(&vol, 2).unwrap();
        for &v in out.data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn rician_sigma_zero_is_constant_rho() {
        let vol = sample_rician((3, 3, 3), 5.0, 0.0, 9).unwrap();
        assert!(vol.data().iter().all(|&v| v == 5.0));
        let vol = sample_rician((2, 2, 2), -4.0, 0.0, 9).unwrap();
        assert!(vol.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn rician_mean_reference_values() {
        // rho = 0 reduces to the Rayleigh mean
        let expect = 2.0 * (core::f64::consts::PI / 2.0).sqrt();
        assert!((rician_mean(0.0, 2.0) - expect).abs() < 1e-12);
        // frozen from independent numerical integration of the density
        assert!((rician_mean(5.0, 15.0) - 19.318333085).abs() < 1e-6);
        // sigma -> 0 collapses onto |rho|
        assert_eq!(rician_mean(-3.0, 0.0), 3.0);
        // large-SNR regime approaches sqrt(rho^2 + sigma^2)
        let m = rician_mean(100.0, 1.0);
        assert!((m - (100.0f64 * 100.0 + 1.0).sqrt()).abs() < 0.01, "{m}");
    }

    #[test]
    fn rayleigh_mean_matches_closed_form() {
        // rho = 0 reduces to Rayleigh with mean sigma*sqrt(pi/2)
        let sigma = 2.0;
        let vol = sample_rician((100, 100, 100), 0.0, sigma, 123).unwrap();
        let mean: f64 = vol.data().iter().map(|&v| v as f64).sum::<f64>() / 1e6;
        let expect = sigma * (core::f64::consts::PI / 2.0).sqrt();
        assert!(
            (mean - expect).abs() / expect < 0.005,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn identity_modulation_masks_background() {
        let spec = PhantomSpec { noise_std: 0.0, ..PhantomSpec::default() };
        let (hf, seg) = make_phantom(&spec, 0).unwrap();
        let m = DegradationVector::new(1.0, 1.0, 1.0).unwrap();
        let config = ForwardConfig {
            sigma_smooth: 0.0,
            df: 1,
            noise_rho: 0.0,
            noise_sigma: 0.0,
            ..ForwardConfig::default()
        };
        let out = simulate_ulf(&hf, &seg, &m, &config).unwrap();
        let labels = seg.labels();
        for (i, (&o, &h)) in out.data().iter().zip(hf.data()).enumerate() {
            if labels[i] == 0 {
                assert_eq!(o, 0.0);
            } else {
                assert_eq!(o, h);
            }
        }
    }

    #[test]
    fn zero_degradation_zeroes_everything() {
        let (hf, seg) = make_phantom(&PhantomSpec::default(), 0).unwrap();
        let m = DegradationVector::new(0.0, 0.0, 0.0).unwrap();
        let config = ForwardConfig {
            noise_rho: 0.0,
            noise_sigma: 0.0,
            ..ForwardConfig::default()
        };
        let out = simulate_ulf(&hf, &seg, &m, &config).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_each_degradation_factor() {
        let spec = PhantomSpec { noise_std: 0.0, ..PhantomSpec::default() };
        let (hf, seg) = make_phantom(&spec, 0).unwrap();
        let config = ForwardConfig {
            noise_rho: 0.0,
            noise_sigma: 0.0,
            ..ForwardConfig::default()
        };
        let m0 = DegradationVector::new(0.25, 0.4, 0.1).unwrap();
        let m1 = DegradationVector::new(0.5, 0.4, 0.1).unwrap();
        let base = simulate_ulf(&hf, &seg, &m0, &config).unwrap();
        let doubled = simulate_ulf(&hf, &seg, &m1, &config).unwrap();
        let wm_only = degrade(
            &hf,
            &seg,
            &DegradationVector::new(0.25, 0.0, 0.0).unwrap(),
            config.sigma_smooth,
            config.df,
        )
        .unwrap();
        for i in 0..base.data().len() {
            let expect = base.data()[i] + wm_only.data()[i];
            assert!((doubled.data()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (hf, seg) = make_phantom(&PhantomSpec::default(), 0).unwrap();
        let m = DegradationVector::new(0.3, 0.4, 0.2).unwrap();
        let config = ForwardConfig { seed: 7, ..ForwardConfig::default() };
        let a = simulate_ulf(&hf, &seg, &m, &config).unwrap();
        let b = simulate_ulf(&hf, &seg, &m, &config).unwrap();
        assert_eq!(a.data(), b.data());
        let c = simulate_ulf(&hf, &seg, &m, &ForwardConfig { seed: 8, ..config }).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn noise_free_output_bounded_by_max_product() {
        let (hf, seg) = make_phantom(&PhantomSpec::default(), 0).unwrap();
        let m = DegradationVector::new(0.6, 0.5, 0.3).unwrap();
        let out = degrade(&hf, &seg, &m, 0.5, 2).unwrap();
        let (_, hf_max) = hf.min_max();
        let bound = hf_max as f64 * 0.6 + 1e-6;
        for &v in out.data() {
            assert!((v as f64) <= bound);
        }
    }

    #[test]
    fn misaligned_segmentation_rejected() {
        let (hf, _) = make_phantom(&PhantomSpec::default(), 0).unwrap();
        let seg = Segmentation::from_labels((2, 2, 2), vec![0; 8]).unwrap();
        let m = DegradationVector::new(0.5, 0.5, 0.5).unwrap();
        assert!(simulate_ulf(&hf, &seg, &m, &ForwardConfig::default()).is_err());
    }

    #[test]
    fn output_dims_are_ceil_of_ratio() {
        let vol = Volume::constant((5, 6, 7), 0.5);
        let out = downsample(&vol, 2).unwrap();
        assert_eq!(out.dims(), (3, 3, 4));
    }
}
