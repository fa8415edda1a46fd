//! Implicit neural representation: Fourier feature embedding, an MLP with
//! Gabor wavelet activations, softmax/ReLU output heads, and lattice
//! evaluation.
//!
//! The network is generic over the float type so the training path can run
//! in `f32` while the finite-difference gradient checks run the identical
//! code in `f64`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{self, Dims};
use crate::rng::Stream;
use crate::volume::{Segmentation, Volume};

/// Number of network output channels: 1 intensity + 4 segmentation classes.
pub const OUT_FEATURES: usize = 5;

/// How the embedding frequencies are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "mode"))]
pub enum FrequencyMode {
    /// `f_k = base_scale * 2^k`.
    LogLinear,
    /// `f_k = |base_scale * N(0, 1)|`, reproducible per seed.
    GaussianRandom { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmbeddingConfig {
    pub num_frequencies: usize,
    pub base_scale: f64,
    pub mode: FrequencyMode,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            num_frequencies: 6,
            base_scale: 1.0,
            mode: FrequencyMode::LogLinear,
        }
    }
}

impl EmbeddingConfig {
    /// Embedded feature width: raw coords plus a sin/cos pair per axis per
    /// frequency.
    pub fn feature_width(&self) -> usize {
        3 + 6 * self.num_frequencies
    }

    pub fn frequencies(&self) -> Vec<f64> {
        match self.mode {
            FrequencyMode::LogLinear => (0..self.num_frequencies)
                .map(|k| self.base_scale * (1u64 << k) as f64)
                .collect(),
            FrequencyMode::GaussianRandom { seed } => {
                let mut rng = Stream::new(seed);
                (0..self.num_frequencies)
                    .map(|_| (self.base_scale * rng.next_normal()).abs())
                    .collect()
            }
        }
    }
}

/// Embed one coordinate into `out` (length must be `3 + 6 * freqs.len()`).
/// Layout: `[x, y, z]`, then per frequency the three sines and the three
/// cosines of `2*pi*f*w`.
pub fn embed_into<T: Float>(coords: [T; 3], freqs: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), 3 + 6 * freqs.len());
    out[0] = coords[0];
    out[1] = coords[1];
    out[2] = coords[2];
    let two_pi = T::from(core::f64::consts::TAU).unwrap();
    let mut o = 3;
    for &f in freqs {
        for &w in &coords {
            let (s, c) = (two_pi * f * w).sin_cos();
            out[o] = s;
            out[o + 3] = c;
            o += 1;
        }
        o += 3;
    }
}

/// Fourier feature embedding of a coordinate in `[-1, 1]^3`.
pub fn fourier_embed<T: Float>(coords: [T; 3], config: &EmbeddingConfig) -> Result<Vec<T>> {
    let one = T::one();
    for w in coords {
        if !(w >= -one && w <= one) {
            return Err(Error::invalid("coordinates must lie in [-1, 1]^3"));
        }
    }
    let freqs: Vec<T> = config
        .frequencies()
        .into_iter()
        .map(|f| T::from(f).unwrap())
        .collect();
    let mut out = vec![T::zero(); config.feature_width()];
    embed_into(coords, &freqs, &mut out);
    Ok(out)
}

/// Real Gabor wavelet: cosine carrier under a Gaussian envelope.
#[inline]
pub fn gabor_activation<T: Float>(x: T, omega0: T, s0: T) -> T {
    let sx = s0 * x;
    (omega0 * x).cos() * (-(sx * sx)).exp()
}

/// Derivative of [`gabor_activation`] with respect to `x`.
#[inline]
pub fn gabor_derivative<T: Float>(x: T, omega0: T, s0: T) -> T {
    let sx = s0 * x;
    let env = (-(sx * sx)).exp();
    let two = T::from(2.0).unwrap();
    -env * (omega0 * (omega0 * x).sin() + two * s0 * s0 * x * (omega0 * x).cos())
}

/// Layer sizes of the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkShape {
    /// Width of the embedded input.
    pub input_features: usize,
    pub hidden_width: usize,
    /// Number of hidden-to-hidden layers (the input layer is separate).
    pub hidden_layers: usize,
}

impl NetworkShape {
    pub fn standard(input_features: usize) -> Self {
        NetworkShape { input_features, hidden_width: 128, hidden_layers: 3 }
    }
}

/// One affine layer; weights stored `[input][output]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Dense<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    fn forward(&self, x: &[T], batch: usize, y: &mut [T]) {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        debug_assert_eq!(y.len(), batch * self.out_dim);
        for b in 0..batch {
            let xr = &x[b * self.in_dim..(b + 1) * self.in_dim];
            let yr = &mut y[b * self.out_dim..(b + 1) * self.out_dim];
            yr.copy_from_slice(&self.bias);
            for (i, &xv) in xr.iter().enumerate() {
                let wr = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
                for (yv, &wv) in yr.iter_mut().zip(wr) {
                    *yv = *yv + xv * wv;
                }
            }
        }
    }
}

/// All trainable parameters plus the activation hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InrParams<T> {
    pub layers: Vec<Dense<T>>,
    pub omega0: T,
    pub s0: T,
}

impl<T: Float> InrParams<T> {
    /// Uniform init in `±sqrt(6/fan_in) / omega0` for every affine layer,
    /// biases zero except the intensity output bias.  Scaling all layers by
    /// the carrier frequency keeps the pre-activations inside the wavelet's
    /// Gaussian envelope; with the plain `sqrt(6/fan_in)` bound the hidden
    /// layers start saturated and the network trains dead.
    pub fn init(
        shape: NetworkShape,
        omega0: f64,
        s0: f64,
        intensity_bias: f64,
        seed: u64,
    ) -> Self {
        let mut rng = Stream::new(seed);
        let mut dims = Vec::with_capacity(shape.hidden_layers + 2);
        dims.push((shape.input_features, shape.hidden_width));
        for _ in 0..shape.hidden_layers {
            dims.push((shape.hidden_width, shape.hidden_width));
        }
        dims.push((shape.hidden_width, OUT_FEATURES));
        let layers = dims
            .into_iter()
            .map(|(i, o)| {
                let bound = (6.0 / i as f64).sqrt() / omega0;
                let mut layer = Dense::zeros(i, o);
                for w in &mut layer.weights {
                    *w = T::from(rng.uniform(-bound, bound)).unwrap();
                }
                layer
            })
            .collect::<Vec<_>>();
        let mut params = InrParams {
            layers,
            omega0: T::from(omega0).unwrap(),
            s0: T::from(s0).unwrap(),
        };
        let last = params.layers.last_mut().unwrap();
        last.bias[0] = T::from(intensity_bias).unwrap();
        params
    }

    pub fn zeros(shape: NetworkShape) -> Self {
        let mut dims = vec![(shape.input_features, shape.hidden_width)];
        for _ in 0..shape.hidden_layers {
            dims.push((shape.hidden_width, shape.hidden_width));
        }
        dims.push((shape.hidden_width, OUT_FEATURES));
        InrParams {
            layers: dims.into_iter().map(|(i, o)| Dense::zeros(i, o)).collect(),
            omega0: T::from(20.0).unwrap(),
            s0: T::from(10.0).unwrap(),
        }
    }

    pub fn input_features(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Network outputs for a batch of embedded coordinates.
#[derive(Debug, Clone)]
pub struct NetworkOutput<T> {
    /// Post-ReLU intensity per sample.
    pub intensity: Vec<T>,
    /// Post-softmax class distribution per sample.
    pub seg_probs: Vec<[T; 4]>,
    /// Raw 5-channel outputs, kept for regularization.
    pub pre_activations: Vec<[T; OUT_FEATURES]>,
}

/// Intermediate activations retained for the backward pass.
pub struct ForwardCache<T> {
    /// Input to each affine layer (index 0 is the embedded batch).
    pub layer_inputs: Vec<Vec<T>>,
    /// Pre-activation of each activated layer.
    pub pre_acts: Vec<Vec<T>>,
}

fn heads<T: Float>(pre: &[T], batch: usize) -> NetworkOutput<T> {
    let mut intensity = Vec::with_capacity(batch);
    let mut seg_probs = Vec::with_capacity(batch);
    let mut pre_activations = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &pre[b * OUT_FEATURES..(b + 1) * OUT_FEATURES];
        let mut pre_row = [T::zero(); OUT_FEATURES];
        pre_row.copy_from_slice(row);
        pre_activations.push(pre_row);
        intensity.push(row[0].max(T::zero()));
        let mut max = row[1];
        for &v in &row[2..5] {
            max = max.max(v);
        }
        let mut e = [T::zero(); 4];
        let mut sum = T::zero();
        for c in 0..4 {
            e[c] = (row[1 + c] - max).exp();
            sum = sum + e[c];
        }
        let mut p = [T::zero(); 4];
        for c in 0..4 {
            p[c] = e[c] / sum;
        }
        seg_probs.push(p);
    }
    NetworkOutput { intensity, seg_probs, pre_activations }
}

/// Forward pass over a batch of embedded features (row-major,
/// `batch * input_features` values), retaining the activation cache.
pub fn forward_with_cache<T: Float>(
    params: &InrParams<T>,
    features: &[T],
    batch: usize,
) -> Result<(NetworkOutput<T>, ForwardCache<T>)> {
    let in_dim = params.input_features();
    if features.len() != batch * in_dim {
        return Err(Error::invalid(format!(
            "feature batch of {} values does not match batch {} x width {}",
            features.len(),
            batch,
            in_dim
        )));
    }
    let n_layers = params.layers.len();
    let mut layer_inputs: Vec<Vec<T>> = Vec::with_capacity(n_layers);
    let mut pre_acts: Vec<Vec<T>> = Vec::with_capacity(n_layers - 1);
    let mut current = features.to_vec();
    for (li, layer) in params.layers.iter().enumerate() {
        let mut z = vec![T::zero(); batch * layer.out_dim];
        layer.forward(&current, batch, &mut z);
        layer_inputs.push(current);
        if li + 1 == n_layers {
            let output = heads(&z, batch);
            return Ok((output, ForwardCache { layer_inputs, pre_acts }));
        }
        let mut h = vec![T::zero(); z.len()];
        for (hv, &zv) in h.iter_mut().zip(&z) {
            *hv = gabor_activation(zv, params.omega0, params.s0);
        }
        pre_acts.push(z);
        current = h;
    }
    unreachable!("network has at least two layers");
}

/// Forward pass without keeping the cache.
pub fn forward<T: Float>(
    params: &InrParams<T>,
    features: &[T],
    batch: usize,
) -> Result<NetworkOutput<T>> {
    forward_with_cache(params, features, batch).map(|(out, _)| out)
}

/// Gradient buffers shaped like the parameters.
#[derive(Debug, Clone)]
pub struct InrGrads<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Float> InrGrads<T> {
    pub fn zeros_like(params: &InrParams<T>) -> Self {
        InrGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                *w = *w * k;
            }
            for b in &mut l.bias {
                *b = *b * k;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Reverse pass: accumulate parameter gradients given the gradient of the
/// loss with respect to the final pre-activations (`batch x 5` row-major).
pub fn backward<T: Float>(
    params: &InrParams<T>,
    cache: &ForwardCache<T>,
    d_pre: &[T],
    batch: usize,
    grads: &mut InrGrads<T>,
) {
    let n_layers = params.layers.len();
    let mut d_out = d_pre.to_vec();
    for li in (0..n_layers).rev() {
        let layer = &params.layers[li];
        let g = &mut grads.layers[li];
        let x = &cache.layer_inputs[li];
        // dW[i][o] += sum_b x[b][i] * d_out[b][o]; db[o] += sum_b d_out[b][o]
        for b in 0..batch {
            let xr = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
            let dr = &d_out[b * layer.out_dim..(b + 1) * layer.out_dim];
            for (gb, &dv) in g.bias.iter_mut().zip(dr) {
                *gb = *gb + dv;
            }
            for (i, &xv) in xr.iter().enumerate() {
                let gw = &mut g.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                for (gv, &dv) in gw.iter_mut().zip(dr) {
                    *gv = *gv + xv * dv;
                }
            }
        }
        if li == 0 {
            break;
        }
        // d_in[b][i] = sum_o d_out[b][o] * w[i][o], then through the
        // activation derivative of the previous layer
        let z = &cache.pre_acts[li - 1];
        let mut d_in = vec![T::zero(); batch * layer.in_dim];
        for b in 0..batch {
            let dr = &d_out[b * layer.out_dim..(b + 1) * layer.out_dim];
            let di = &mut d_in[b * layer.in_dim..(b + 1) * layer.in_dim];
            for (i, dv) in di.iter_mut().enumerate() {
                let wr = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                let mut acc = T::zero();
                for (&w, &d) in wr.iter().zip(dr.iter()) {
                    acc = acc + w * d;
                }
                *dv = acc;
            }
        }
        for (dv, &zv) in d_in.iter_mut().zip(z.iter()) {
            *dv = *dv * gabor_derivative(zv, params.omega0, params.s0);
        }
        d_out = d_in;
    }
}

/// Weighted-sum reconstruction: intensity masked by the total tissue
/// probability, `X * (1 - p_bg)`.
#[inline]
pub fn reconstruct_sample<T: Float>(intensity: T, seg_probs: &[T; 4]) -> T {
    intensity * (T::one() - seg_probs[0])
}

pub fn reconstruct<T: Float>(output: &NetworkOutput<T>) -> Vec<T> {
    output
        .intensity
        .iter()
        .zip(&output.seg_probs)
        .map(|(&u, p)| reconstruct_sample(u, p))
        .collect()
}

/// Center of lattice cell `i` of `n`, mapped into `[-1, 1]`.
#[inline]
pub fn lattice_coord(i: usize, n: usize) -> f64 {
    -1.0 + 2.0 * (i as f64 + 0.5) / n as f64
}

/// Evaluate the reconstruction and soft segmentation on a full voxel
/// lattice.  Evaluation is chunked; results are identical to sample-by-
/// sample evaluation.
pub fn predict_grid(
    params: &InrParams<f32>,
    dims: Dims,
    embed: &EmbeddingConfig,
) -> Result<(Volume, Segmentation)> {
    if params.input_features() != embed.feature_width() {
        return Err(Error::invalid("embedding width does not match network input"));
    }
    let freqs: Vec<f32> = embed.frequencies().into_iter().map(|f| f as f32).collect();
    let width = embed.feature_width();
    let n = grid::num_voxels(dims);
    let mut values = vec![0.0f32; n];
    let mut probs = vec![[0.0f32; 4]; n];

    const CHUNK: usize = 16384;
    let mut features = vec![0.0f32; CHUNK * width];
    let mut idx = 0usize;
    let mut pending = 0usize;
    let flush = |features: &mut Vec<f32>,
                     pending: &mut usize,
                     start: usize,
                     values: &mut [f32],
                     probs: &mut [[f32; 4]]|
     -> Result<()> {
        if *pending == 0 {
            return Ok(());
        }
        let out = forward(params, &features[..*pending * width], *pending)?;
        for (k, (&u, p)) in out.intensity.iter().zip(&out.seg_probs).enumerate() {
            values[start + k] = reconstruct_sample(u, p);
            probs[start + k] = *p;
        }
        *pending = 0;
        Ok(())
    };

    let mut chunk_start = 0usize;
    for z in 0..dims.2 {
        let wz = lattice_coord(z, dims.2) as f32;
        for y in 0..dims.1 {
            let wy = lattice_coord(y, dims.1) as f32;
            for x in 0..dims.0 {
                let wx = lattice_coord(x, dims.0) as f32;
                embed_into(
                    [wx, wy, wz],
                    &freqs,
                    &mut features[pending * width..(pending + 1) * width],
                );
                pending += 1;
                idx += 1;
                if pending == CHUNK {
                    flush(&mut features, &mut pending, chunk_start, &mut values, &mut probs)?;
                    chunk_start = idx;
                }
            }
        }
    }
    flush(&mut features, &mut pending, chunk_start, &mut values, &mut probs)?;

    let volume = Volume::from_data(dims, values)?;
    let seg = Segmentation::from_probs(dims, probs)?;
    Ok((volume, seg))
}
