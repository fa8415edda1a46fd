//! Finite-difference verification of the analytic gradients.
//!
//! The composite loss is evaluated in f64 on a reduced network and every
//! probed parameter is checked against a central difference.  This is the
//! independent oracle for the reverse-mode implementation; the tolerances
//! follow from the f64 truncation/cancellation balance at h = 1e-5.

use mrisynth_core::contrast::DegradationVector;
use mrisynth_core::forward::{simulate_ulf, ForwardConfig};
use mrisynth_core::inr::{EmbeddingConfig, InrParams};
use mrisynth_core::phantom::{make_phantom, PhantomSpec};
use mrisynth_core::rng::Stream;
use mrisynth_core::train::{loss_and_gradients, AdamConfig, LossWeights, TrainConfig};
use mrisynth_core::volume::{Segmentation, Volume};

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn setup() -> (Volume, Segmentation, DegradationVector, TrainConfig) {
    let spec = PhantomSpec {
        dims: (16, 16, 16),
        csf_radii: [7.0; 3],
        gm_radii: [5.5; 3],
        wm_radii: [3.5; 3],
        ..PhantomSpec::default()
    };
    let (hf, seg) = make_phantom(&spec, 5).unwrap();
    let m = DegradationVector::new(0.3, 0.45, 0.15).unwrap();
    let fwd = ForwardConfig { seed: 2, ..ForwardConfig::default() };
    let ulf = simulate_ulf(&hf, &seg, &m, &fwd).unwrap();
    let ulf_seg = seg.pool_labels(2).unwrap();
    // reduced network: 2 hidden layers x 8 features
    let config = TrainConfig {
        iterations: 1,
        patch_size: 8,
        batch_patches: 2,
        hidden_width: 8,
        hidden_layers: 2,
        embedding: EmbeddingConfig { num_frequencies: 3, ..EmbeddingConfig::default() },
        adam: AdamConfig::default(),
        ..TrainConfig::default()
    };
    (ulf, ulf_seg, m, config)
}

fn loss_at(
    params: &InrParams<f64>,
    ulf: &Volume,
    seg: &Segmentation,
    m: &DegradationVector,
    config: &TrainConfig,
    origins: &[[usize; 3]],
) -> f64 {
    loss_and_gradients(params, ulf, seg, m, config, origins)
        .unwrap()
        .0
        .total
}

/// Relative error with an absolute floor for near-zero pairs.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn full_composite_loss_matches_central_differences() {
    let (ulf, seg, m, config) = setup();
    let params = InrParams::<f64>::init(config.network_shape(), 20.0, 10.0, 0.25, 7);
    let origins = [[0, 0, 0], [3, 2, 4]];
    let (_, grads) = loss_and_gradients(&params, &ulf, &seg, &m, &config, &origins).unwrap();

    // 100 random parameter probes across all layers
    let mut rng = Stream::new(99);
    let mut worst = 0.0f64;
    for probe in 0..100 {
        let li = rng.next_below(params.layers.len() as u64) as usize;
        let pick_bias = rng.next_below(8) == 0;
        let analytic;
        let mut plus = params.clone();
        let mut minus = params.clone();
        if pick_bias {
            let bi = rng.next_below(params.layers[li].bias.len() as u64) as usize;
            analytic = grads.layers[li].bias[bi];
            plus.layers[li].bias[bi] += FD_STEP;
            minus.layers[li].bias[bi] -= FD_STEP;
        } else {
            let wi = rng.next_below(params.layers[li].weights.len() as u64) as usize;
            analytic = grads.layers[li].weights[wi];
            plus.layers[li].weights[wi] += FD_STEP;
            minus.layers[li].weights[wi] -= FD_STEP;
        }
        let fd = (loss_at(&plus, &ulf, &seg, &m, &config, &origins)
            - loss_at(&minus, &ulf, &seg, &m, &config, &origins))
            / (2.0 * FD_STEP);
        let err = rel_err(analytic, fd);
        worst = worst.max(err);
        assert!(
            err < REL_TOL,
            "probe {probe} layer {li}: analytic {analytic} vs fd {fd} (rel {err})"
        );
    }
    println!("max relative error over 100 probes: {worst:.3e}");
}

#[test]
fn single_parameter_network_gradient() {
    // tiniest configuration: every parameter checked exhaustively; a
    // smaller step keeps the check away from |.| kink crossings
    const H: f64 = 1e-6;
    let (ulf, seg, m, mut config) = setup();
    config.hidden_width = 1;
    config.hidden_layers = 0;
    config.embedding.num_frequencies = 0;
    config.patch_size = 4;
    config.batch_patches = 1;
    let params = InrParams::<f64>::init(config.network_shape(), 20.0, 10.0, 0.25, 3);
    let origins = [[1, 1, 1]];
    let (_, grads) = loss_and_gradients(&params, &ulf, &seg, &m, &config, &origins).unwrap();
    for li in 0..params.layers.len() {
        for wi in 0..params.layers[li].weights.len() {
            let mut plus = params.clone();
            plus.layers[li].weights[wi] += H;
            let mut minus = params.clone();
            minus.layers[li].weights[wi] -= H;
            let fd = (loss_at(&plus, &ulf, &seg, &m, &config, &origins)
                - loss_at(&minus, &ulf, &seg, &m, &config, &origins))
                / (2.0 * H);
            let an = grads.layers[li].weights[wi];
            assert!(
                rel_err(an, fd) < REL_TOL || (an - fd).abs() < 1e-8,
                "layer {li} w{wi}: {an} vs {fd}"
            );
        }
        for bi in 0..params.layers[li].bias.len() {
            let mut plus = params.clone();
            plus.layers[li].bias[bi] += H;
            let mut minus = params.clone();
            minus.layers[li].bias[bi] -= H;
            let fd = (loss_at(&plus, &ulf, &seg, &m, &config, &origins)
                - loss_at(&minus, &ulf, &seg, &m, &config, &origins))
                / (2.0 * H);
            let an = grads.layers[li].bias[bi];
            assert!(
                rel_err(an, fd) < REL_TOL || (an - fd).abs() < 1e-8,
                "layer {li} b{bi}: {an} vs {fd}"
            );
        }
    }
}
