//! The ULF-consistency training objective and loop.
//!
//! Each step samples voxel patches, evaluates the network on the patch's
//! fine-lattice coordinates, reconstructs the intensity, pushes it through
//! the differentiable parts of the forward model (soft tissue weighting,
//! Gaussian smoothing, average pooling, degradation scaling) and compares
//! against the observed ULF patch.  Rician noise is never injected into
//! this consistency path; it only exists in the data.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use num_traits::Float;

use crate::contrast::DegradationVector;
use crate::error::{Error, Result};
use crate::grid::{self, Dims};
use crate::inr::{
    self, EmbeddingConfig, ForwardCache, InrGrads, InrParams, NetworkOutput, NetworkShape,
    OUT_FEATURES,
};
use crate::rng::Stream;
use crate::train::adam::{adam_step, AdamConfig, AdamState};
use crate::train::loss::{
    loss_mae, loss_preact, loss_seg_with_grad, tv_with_grad, LossBreakdown, LossWeights,
};
use crate::train::sampler::sample_patches_with;
use crate::volume::{Segmentation, Volume};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub iterations: usize,
    /// Patch edge length on the fine (output) lattice; must be a multiple
    /// of `df`.
    pub patch_size: usize,
    pub batch_patches: usize,
    pub seed: u64,
    /// Forward-model smoothing applied inside the consistency path.
    pub sigma_smooth: f64,
    /// Fine-to-observed downsampling factor.
    pub df: usize,
    /// Deterministic noise-floor offset added by the forward model (the
    /// mean of its additive Rician field on the normalized scale).  Without
    /// it the reconstruction absorbs the floor as spurious tissue signal
    /// amplified by 1/m_t.
    pub noise_offset: f64,
    pub embedding: EmbeddingConfig,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub omega0: f64,
    pub s0: f64,
    /// Initial bias of the intensity output; starting mid-range keeps the
    /// ReLU head out of its dead zone at step one.
    pub intensity_bias_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights { mae: 1.0, seg: 1.0, tv: 0.01, preact: 0.01 },
            adam: AdamConfig::default(),
            iterations: 5000,
            patch_size: 16,
            batch_patches: 4,
            seed: 0,
            sigma_smooth: 0.5,
            df: 2,
            noise_offset: crate::forward::rician_mean(5.0, 15.0) / 255.0,
            embedding: EmbeddingConfig::default(),
            hidden_width: 128,
            hidden_layers: 3,
            omega0: 20.0,
            s0: 10.0,
            intensity_bias_init: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn network_shape(&self) -> NetworkShape {
        NetworkShape {
            input_features: self.embedding.feature_width(),
            hidden_width: self.hidden_width,
            hidden_layers: self.hidden_layers,
        }
    }

    pub fn validate(&self, observed_dims: Dims) -> Result<()> {
        self.weights.validate()?;
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if self.df == 0 {
            return Err(Error::invalid("df must be >= 1"));
        }
        if self.patch_size == 0 || self.patch_size % self.df != 0 {
            return Err(Error::invalid("patch_size must be a positive multiple of df"));
        }
        let q = self.patch_size / self.df;
        let min_dim = observed_dims.0.min(observed_dims.1).min(observed_dims.2);
        if q > min_dim {
            return Err(Error::invalid("patch does not fit inside the observed volume"));
        }
        if self.batch_patches == 0 {
            return Err(Error::invalid("batch_patches must be >= 1"));
        }
        if self.sigma_smooth < 0.0 {
            return Err(Error::invalid("sigma_smooth must be >= 0"));
        }
        if !self.noise_offset.is_finite() || self.noise_offset < 0.0 {
            return Err(Error::invalid("noise_offset must be finite and >= 0"));
        }
        Ok(())
    }

    /// Fine-lattice dimensions implied by the observed volume.
    pub fn fine_dims(&self, observed_dims: Dims) -> Dims {
        (
            observed_dims.0 * self.df,
            observed_dims.1 * self.df,
            observed_dims.2 * self.df,
        )
    }
}

/// Per-axis embedding tables: every feature depends on a single axis, so
/// the trig work per lattice axis is done once.
struct AxisTables<T> {
    coord: Vec<T>,
    sin: Vec<T>,
    cos: Vec<T>,
    n_freq: usize,
}

impl<T: Float> AxisTables<T> {
    fn build(n: usize, freqs: &[T]) -> Self {
        let two_pi = T::from(core::f64::consts::TAU).unwrap();
        let mut coord = Vec::with_capacity(n);
        let mut sin = Vec::with_capacity(n * freqs.len());
        let mut cos = Vec::with_capacity(n * freqs.len());
        for i in 0..n {
            let w = T::from(inr::lattice_coord(i, n)).unwrap();
            coord.push(w);
            for &f in freqs {
                let (s, c) = (two_pi * f * w).sin_cos();
                sin.push(s);
                cos.push(c);
            }
        }
        AxisTables { coord, sin, cos, n_freq: freqs.len() }
    }
}

fn fill_features<T: Float>(
    tables: &[AxisTables<T>; 3],
    xi: usize,
    yi: usize,
    zi: usize,
    out: &mut [T],
) {
    let l = tables[0].n_freq;
    out[0] = tables[0].coord[xi];
    out[1] = tables[1].coord[yi];
    out[2] = tables[2].coord[zi];
    let idx = [xi, yi, zi];
    let mut o = 3;
    for k in 0..l {
        for (a, t) in tables.iter().enumerate() {
            out[o + a] = t.sin[idx[a] * l + k];
            out[o + 3 + a] = t.cos[idx[a] * l + k];
        }
        o += 6;
    }
}

struct PatchResult<T> {
    mae: T,
    seg: T,
    tv: T,
    preact: T,
}

#[allow(clippy::too_many_arguments)]
fn patch_loss_and_grads<T: Float>(
    params: &InrParams<T>,
    observed: &Volume,
    labels: &[u8],
    m: [f64; 3],
    config: &TrainConfig,
    tables: &[AxisTables<T>; 3],
    origin: [usize; 3],
    inv_batch: f64,
    grads: &mut InrGrads<T>,
) -> Result<PatchResult<T>> {
    let p = config.patch_size;
    let q = p / config.df;
    let pdims: Dims = (p, p, p);
    let qdims: Dims = (q, q, q);
    let n_h = grid::num_voxels(pdims);
    let n_u = grid::num_voxels(qdims);
    let ulf_dims = observed.dims();
    let width = config.embedding.feature_width();

    // embed the patch's fine-lattice coordinates
    let mut features = vec![T::zero(); n_h * width];
    {
        let mut row = 0usize;
        for z in 0..p {
            let zi = origin[2] * config.df + z;
            for y in 0..p {
                let yi = origin[1] * config.df + y;
                for x in 0..p {
                    let xi = origin[0] * config.df + x;
                    fill_features(tables, xi, yi, zi, &mut features[row * width..(row + 1) * width]);
                    row += 1;
                }
            }
        }
    }
    // note: the fine lattice is indexed x-fastest but the patch rows above
    // run z-outer; map local row index back to the patch lattice
    // (row = x + p*(y + p*z)) — the loops above produce exactly that order.

    let (output, cache): (NetworkOutput<T>, ForwardCache<T>) =
        inr::forward_with_cache(params, &features, n_h)?;
    drop(features);

    let xw: Vec<T> = inr::reconstruct(&output);

    // consistency path: soft-masked fields through smooth/pool/scale/sum,
    // on top of the forward model's deterministic noise floor
    let mut y_pred = vec![T::from(config.noise_offset).unwrap(); n_u];
    for (ti, &mt) in m.iter().enumerate() {
        let channel = ti + 1;
        let field: Vec<T> = xw
            .iter()
            .zip(&output.seg_probs)
            .map(|(&v, pr)| v * pr[channel])
            .collect();
        let smoothed = grid::smooth(&field, pdims, config.sigma_smooth);
        let pooled = grid::pool(&smoothed, pdims, config.df);
        let mt = T::from(mt).unwrap();
        for (acc, &v) in y_pred.iter_mut().zip(&pooled) {
            *acc = *acc + mt * v;
        }
    }

    // observed patch and labels
    let mut y_obs = vec![T::zero(); n_u];
    let mut lab = vec![0u8; n_u];
    {
        let mut row = 0usize;
        for z in 0..q {
            for y in 0..q {
                for x in 0..q {
                    let gi = grid::index(
                        ulf_dims,
                        origin[0] + x,
                        origin[1] + y,
                        origin[2] + z,
                    );
                    y_obs[row] = T::from(observed.data()[gi]).unwrap();
                    lab[row] = labels[gi];
                    row += 1;
                }
            }
        }
    }

    // pooled class probabilities for the segmentation supervision
    let mut pooled_probs = vec![[T::zero(); 4]; n_u];
    for c in 0..4 {
        let field: Vec<T> = output.seg_probs.iter().map(|pr| pr[c]).collect();
        let pooled = grid::pool(&field, pdims, config.df);
        for (dst, &v) in pooled_probs.iter_mut().zip(&pooled) {
            dst[c] = v;
        }
    }

    // loss terms
    let mae = loss_mae(&y_pred, &y_obs)?;
    let (seg, d_pooled_probs) = loss_seg_with_grad(&pooled_probs, &lab, true)?;
    let (tv, d_xw_tv) = tv_with_grad(&xw, pdims, true);
    let preact = loss_preact(&output.pre_activations);

    // upstream weights, averaged over the batch
    let wf_mae = T::from(config.weights.mae * inv_batch).unwrap();
    let wf_seg = T::from(config.weights.seg * inv_batch).unwrap();
    let wf_tv = T::from(config.weights.tv * inv_batch).unwrap();
    let wf_pre = T::from(config.weights.preact * inv_batch).unwrap();

    // d total / d y_pred
    let inv_nu = T::from(1.0 / n_u as f64).unwrap();
    let d_y: Vec<T> = y_pred
        .iter()
        .zip(&y_obs)
        .map(|(&a, &b)| {
            let d = a - b;
            if d > T::zero() {
                wf_mae * inv_nu
            } else if d < T::zero() {
                -(wf_mae * inv_nu)
            } else {
                T::zero()
            }
        })
        .collect();

    let mut d_xw: Vec<T> = d_xw_tv.iter().map(|&g| g * wf_tv).collect();
    let mut d_probs = vec![[T::zero(); 4]; n_h];

    for (ti, &mt) in m.iter().enumerate() {
        let channel = ti + 1;
        let mt = T::from(mt).unwrap();
        let d_pooled: Vec<T> = d_y.iter().map(|&g| g * mt).collect();
        let d_smoothed = grid::pool_adjoint(&d_pooled, pdims, config.df);
        let d_field = grid::smooth_adjoint(&d_smoothed, pdims, config.sigma_smooth);
        for i in 0..n_h {
            d_xw[i] = d_xw[i] + d_field[i] * output.seg_probs[i][channel];
            d_probs[i][channel] = d_probs[i][channel] + d_field[i] * xw[i];
        }
    }

    for c in 0..4 {
        let d_pc: Vec<T> = d_pooled_probs.iter().map(|g| g[c] * wf_seg).collect();
        let d = grid::pool_adjoint(&d_pc, pdims, config.df);
        for i in 0..n_h {
            d_probs[i][c] = d_probs[i][c] + d[i];
        }
    }

    // heads backward
    let two = T::from(2.0).unwrap();
    let pre_norm = T::from(5 * n_h).unwrap();
    let mut d_pre = vec![T::zero(); n_h * OUT_FEATURES];
    for i in 0..n_h {
        let u = output.intensity[i];
        let probs = &output.seg_probs[i];
        let pre = &output.pre_activations[i];
        let d_u = d_xw[i] * (T::one() - probs[0]);
        let d_p0_extra = -(d_xw[i] * u);
        let row = &mut d_pre[i * OUT_FEATURES..(i + 1) * OUT_FEATURES];
        row[0] = if pre[0] > T::zero() { d_u } else { T::zero() };
        let mut dp = d_probs[i];
        dp[0] = dp[0] + d_p0_extra;
        let mut dot = T::zero();
        for c in 0..4 {
            dot = dot + dp[c] * probs[c];
        }
        for c in 0..4 {
            row[1 + c] = probs[c] * (dp[c] - dot);
        }
        for (ch, rv) in row.iter_mut().enumerate() {
            *rv = *rv + pre[ch] * (two * wf_pre / pre_norm);
        }
    }

    inr::backward(params, &cache, &d_pre, n_h, grads);

    Ok(PatchResult { mae, seg, tv, preact })
}

/// Evaluate the composite training loss on a set of patches and accumulate
/// exact reverse-mode gradients for every parameter.
///
/// `origins` are patch origins on the observed (coarse) lattice; the fine
/// patch covers `origin * df .. origin * df + patch_size` per axis.
pub fn loss_and_gradients<T: Float>(
    params: &InrParams<T>,
    observed: &Volume,
    observed_seg: &Segmentation,
    m: &DegradationVector,
    config: &TrainConfig,
    origins: &[[usize; 3]],
) -> Result<(LossBreakdown, InrGrads<T>)> {
    config.validate(observed.dims())?;
    if observed_seg.dims() != observed.dims() {
        return Err(Error::invalid("segmentation dims do not match observed volume"));
    }
    if origins.is_empty() {
        return Err(Error::invalid("at least one patch origin required"));
    }
    let q = config.patch_size / config.df;
    let ulf_dims = observed.dims();
    for o in origins {
        if o[0] + q > ulf_dims.0 || o[1] + q > ulf_dims.1 || o[2] + q > ulf_dims.2 {
            return Err(Error::invalid("patch origin out of bounds"));
        }
    }
    if params.input_features() != config.embedding.feature_width() {
        return Err(Error::invalid("network input width does not match embedding"));
    }

    let fine = config.fine_dims(ulf_dims);
    let freqs: Vec<T> = config
        .embedding
        .frequencies()
        .into_iter()
        .map(|f| T::from(f).unwrap())
        .collect();
    let tables = [
        AxisTables::build(fine.0, &freqs),
        AxisTables::build(fine.1, &freqs),
        AxisTables::build(fine.2, &freqs),
    ];
    let labels = observed_seg.labels();

    let mut grads = InrGrads::zeros_like(params);
    let inv_batch = 1.0 / origins.len() as f64;
    let mut mae = 0.0f64;
    let mut seg = 0.0f64;
    let mut tv = 0.0f64;
    let mut preact = 0.0f64;
    for &origin in origins {
        let r = patch_loss_and_grads(
            params,
            observed,
            &labels,
            m.as_array(),
            config,
            &tables,
            origin,
            inv_batch,
            &mut grads,
        )?;
        mae += r.mae.to_f64().unwrap() * inv_batch;
        seg += r.seg.to_f64().unwrap() * inv_batch;
        tv += r.tv.to_f64().unwrap() * inv_batch;
        preact += r.preact.to_f64().unwrap() * inv_batch;
    }
    let breakdown = LossBreakdown::weighted(&config.weights, mae, seg, tv, preact);
    Ok((breakdown, grads))
}

/// Training failure modes.
#[derive(Debug, Clone)]
pub enum TrainError {
    Invalid(Error),
    /// The loss (or a gradient) went non-finite; the history up to the
    /// failing iteration is preserved.
    Diverged {
        iteration: usize,
        history: Vec<LossBreakdown>,
    },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Invalid(e) => write!(f, "{e}"),
            TrainError::Diverged { iteration, .. } => {
                write!(f, "training diverged at iteration {iteration}")
            }
        }
    }
}

impl From<Error> for TrainError {
    fn from(e: Error) -> Self {
        TrainError::Invalid(e)
    }
}

/// Fit the network to a single observed ULF volume and its segmentation.
/// Fully deterministic for a fixed config (two runs produce bit-identical
/// parameters).
pub fn train(
    observed: &Volume,
    observed_seg: &Segmentation,
    m: &DegradationVector,
    config: &TrainConfig,
) -> core::result::Result<(InrParams<f32>, Vec<LossBreakdown>), TrainError> {
    config.validate(observed.dims())?;
    if observed_seg.dims() != observed.dims() {
        return Err(Error::invalid("segmentation dims do not match observed volume").into());
    }
    let mut params = InrParams::<f32>::init(
        config.network_shape(),
        config.omega0,
        config.s0,
        config.intensity_bias_init,
        config.seed,
    );
    let mut state = AdamState::new(&params);
    // decouple the patch stream from the init stream
    let mut stream = Stream::new(config.seed.wrapping_add(0x517C_C1B7_2722_0A95));
    let q = config.patch_size / config.df;
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let origins =
            sample_patches_with(&mut stream, observed.dims(), q, config.batch_patches)?;
        let (breakdown, grads) =
            loss_and_gradients(&params, observed, observed_seg, m, config, &origins)?;
        if !breakdown.is_finite() || !grads.all_finite() {
            return Err(TrainError::Diverged { iteration, history });
        }
        adam_step(&mut state, &mut params, &grads, &config.adam);
        history.push(breakdown);
        if !params.all_finite() {
            return Err(TrainError::Diverged { iteration, history });
        }
    }
    Ok((params, history))
}
