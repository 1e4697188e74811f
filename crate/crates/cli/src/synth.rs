//! Synthetic weights and input streams.
//!
//! Stands in for a real text corpus: inputs are standard normal, optionally
//! autocorrelated across tokens (`x_t = ρ·x_{t−1} + sqrt(1−ρ²)·ξ_t`) to
//! induce token-to-token reuse of active neurons. Weights are either raw
//! Gaussian layers or students distilled from a random teacher, which gives
//! the magnitude distribution its trained long tail. Everything is keyed by
//! one seed and fully reproducible.

use tailcut_core::ffn::{train_toy_ffn, ActivationKind, FfnWeights, TrainConfig};
use tailcut_core::sparsity::InputTrace;
use tailcut_core::{DetRng, Result};

/// How layer weights are produced.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightsSource {
    /// Gaussian-initialized, untrained.
    #[default]
    Random,
    /// Distilled from a frozen random teacher of the same kind and shape.
    ToyTrained {
        steps: usize,
        batch_size: usize,
        learning_rate: f64,
        momentum: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub kind: ActivationKind,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub n_tokens: usize,
    /// Token-to-token input autocorrelation in `[0, 1]`. 0 = independent
    /// tokens, 1 = the same input repeated.
    pub rho: f64,
    pub source: WeightsSource,
    pub seed: u64,
}

/// Deterministically expands a spec into per-layer weights and an input
/// stream. Layer `l` draws from an independent substream, so changing the
/// layer count does not reshuffle existing layers.
pub fn generate(spec: &GenSpec) -> Result<(Vec<FfnWeights<f32>>, InputTrace<f32>)> {
    use tailcut_core::CoreError;
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(CoreError::InvalidArgument("rho must lie in [0, 1]".into()));
    }
    if spec.n_layers == 0 || spec.n_tokens == 0 {
        return Err(CoreError::EmptyInput("gen spec".into()));
    }
    let mut root = DetRng::new(spec.seed);
    let mut weights_rng = root.fork(1);
    let mut inputs_rng = root.fork(2);

    let mut weights = Vec::with_capacity(spec.n_layers);
    for layer in 0..spec.n_layers {
        let mut rng = weights_rng.fork(layer as u64);
        let w = match spec.source {
            WeightsSource::Random => {
                FfnWeights::<f32>::random(spec.kind, spec.d_model, spec.d_ff, &mut rng)
            }
            WeightsSource::ToyTrained {
                steps,
                batch_size,
                learning_rate,
                momentum,
            } => {
                let teacher =
                    FfnWeights::<f32>::random(spec.kind, spec.d_model, spec.d_ff, &mut rng);
                let cfg = TrainConfig {
                    student_kind: spec.kind,
                    d_ff: spec.d_ff,
                    steps,
                    batch_size,
                    learning_rate,
                    momentum,
                    seed: rng.next_u64(),
                };
                train_toy_ffn(&teacher, &cfg)?.weights
            }
        };
        weights.push(w);
    }

    let rho = spec.rho as f32;
    let noise_scale = ((1.0 - spec.rho * spec.rho).max(0.0) as f32).sqrt();
    // One stream per layer: the first draw seeds x_0, later draws are noise.
    let mut layer_rngs: Vec<DetRng> = (0..spec.n_layers)
        .map(|layer| inputs_rng.fork(layer as u64))
        .collect();
    let mut state: Vec<Vec<f32>> = layer_rngs
        .iter_mut()
        .map(|rng| rng.normal_vec(spec.d_model))
        .collect();

    let mut data = Vec::with_capacity(spec.n_tokens * spec.n_layers * spec.d_model);
    for token in 0..spec.n_tokens {
        for layer in 0..spec.n_layers {
            if token > 0 {
                let rng = &mut layer_rngs[layer];
                for slot in state[layer].iter_mut() {
                    let noise: f32 = rng.standard_normal();
                    *slot = rho * *slot + noise_scale * noise;
                }
            }
            data.extend_from_slice(&state[layer]);
        }
    }
    let inputs = InputTrace::new(spec.n_tokens, spec.n_layers, spec.d_model, data)?;
    Ok((weights, inputs))
}
