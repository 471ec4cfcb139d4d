//! Inverted-dropout masks for one training sequence.
//!
//! Two kinds are sampled:
//!
//! * conventional dropout on layer inputs (between stacked layers and in
//!   front of the dense head): an independent Bernoulli draw for every
//!   timestep and unit;
//! * recurrent dropout on the hidden-to-hidden path: one mask per layer and
//!   direction, drawn once and reused at every timestep.
//!
//! Kept units are scaled by `1 / keep`, dropped units are zero.

use super::model::ModelConfig;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMasks {
    /// `timesteps x input_size`, applied to the layer input.
    pub input: Vec<f64>,
    /// One `hidden`-length mask per direction, constant over time.
    pub recurrent: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub layers: Vec<LayerMasks>,
    /// `timesteps x dense_input`, applied in front of the output layer.
    pub output: Vec<f64>,
}

fn bernoulli_mask(len: usize, rate: f64, rng: &mut SplitMix64) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if rng.next_f64() < keep { scale } else { 0.0 })
        .collect()
}

/// Samples every mask needed for one sequence's training pass. The raw
/// feature input of the first layer is never dropped.
pub fn sample_masks(config: &ModelConfig, rng: &mut SplitMix64) -> DropoutMasks {
    let t = config.timesteps;
    let dirs = config.directions();
    let layers = (0..config.layers)
        .map(|l| {
            let input_size = config.layer_input_size(l);
            let input = if l == 0 {
                vec![1.0; t * input_size]
            } else {
                bernoulli_mask(t * input_size, config.dropout_rate, rng)
            };
            let recurrent = (0..dirs)
                .map(|_| bernoulli_mask(config.hidden, config.recurrent_dropout_rate, rng))
                .collect();
            LayerMasks { input, recurrent }
        })
        .collect();
    let output = bernoulli_mask(t * config.dense_input_size(), config.dropout_rate, rng);
    DropoutMasks { layers, output }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::CellKind;

    fn config(rate: f64, rec: f64) -> ModelConfig {
        ModelConfig {
            dropout_rate: rate,
            recurrent_dropout_rate: rec,
            layers: 2,
            hidden: 8,
            ..ModelConfig::bidirectional(CellKind::Gru)
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let m = sample_masks(&config(0.0, 0.0), &mut SplitMix64::new(1));
        assert!(m.output.iter().all(|&v| v == 1.0));
        for l in &m.layers {
            assert!(l.input.iter().all(|&v| v == 1.0));
            assert!(l.recurrent.iter().flatten().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let a = sample_masks(&config(0.5, 0.5), &mut SplitMix64::new(9));
        let b = sample_masks(&config(0.5, 0.5), &mut SplitMix64::new(9));
        assert_eq!(a, b);
        assert!(a.layers[1].input.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn empirical_keep_fraction() {
        let mut rng = SplitMix64::new(2024);
        let m = bernoulli_mask(100_000, 0.5, &mut rng);
        let kept = m.iter().filter(|&&v| v > 0.0).count() as f64 / m.len() as f64;
        assert!((kept - 0.5).abs() <= 0.01, "kept {kept}");
    }

    #[test]
    fn first_layer_input_is_never_dropped() {
        let m = sample_masks(&config(0.9, 0.0), &mut SplitMix64::new(3));
        assert!(m.layers[0].input.iter().all(|&v| v == 1.0));
        assert_eq!(m.layers[0].recurrent.len(), 2);
        assert_eq!(m.layers[1].input.len(), 48 * 16);
        assert_eq!(m.output.len(), 48 * 16);
    }
}
