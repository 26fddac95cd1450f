use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, InitScheme, Network, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub init_scheme: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 32,
            shuffle_seed: 0,
            init_scheme: InitScheme::UniformScaled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// An epoch-mean loss above this multiple of the loss at initialization
/// counts as divergence. Saturating output layers keep the loss bounded, so
/// a blow-up often shows as growth rather than as a non-finite value.
pub const DIVERGENCE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    /// Mean reconstruction error before the first update.
    pub initial_loss: f64,
    /// Mean per-sample reconstruction error over the whole training set,
    /// measured after each epoch's last update.
    pub loss_curve: Vec<f64>,
}

pub fn train(net: Network, data: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainOutcome, NnError> {
    train_with_monitor(net, data, cfg, |_, _, _| {})
}

/// Mini-batch gradient descent; `monitor` sees every finished epoch.
pub fn train_with_monitor<F>(mut net: Network, data: &[Vec<f64>], cfg: &TrainConfig, mut monitor: F) -> Result<TrainOutcome, NnError>
where
    F: FnMut(usize, f64, &Network),
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyData);
    }
    for x in data {
        if x.len() != net.input_size() {
            return Err(NnError::DimensionMismatch {
                expected: net.input_size(),
                found: x.len(),
            });
        }
    }

    let initial_loss = mean_loss(&net, data)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = Gradients::zeros_like(&net);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for g in &mut grads.layers {
                g.weights.fill(0.0);
                g.biases.fill(0.0);
            }
            for &i in batch {
                total += net.accumulate_gradient(&data[i], &mut grads)?;
            }
            if !total.is_finite() {
                return Err(diverged(epoch, "non-finite loss", curve));
            }
            grads.scale(1.0 / batch.len() as f64);
            net.apply_gradients(&grads, cfg.learning_rate);
            if !net.all_finite() {
                return Err(diverged(epoch, "non-finite parameters", curve));
            }
        }
        let mean = mean_loss(&net, data)?;
        curve.push(mean);
        if !mean.is_finite() {
            return Err(diverged(epoch, "non-finite loss", curve));
        }
        if mean > DIVERGENCE_FACTOR * initial_loss {
            return Err(diverged(
                epoch,
                &format!("epoch loss {mean} exceeds {DIVERGENCE_FACTOR}x the initial {initial_loss}"),
                curve,
            ));
        }
        monitor(epoch, mean, &net);
    }
    Ok(TrainOutcome {
        network: net,
        initial_loss,
        loss_curve: curve,
    })
}

fn mean_loss(net: &Network, data: &[Vec<f64>]) -> Result<f64, NnError> {
    let mut total = 0.0;
    for x in data {
        total += net.reconstruction_error(x)?;
    }
    Ok(total / data.len() as f64)
}

fn diverged(epoch: usize, reason: &str, partial_curve: Vec<f64>) -> NnError {
    NnError::DivergenceDetected {
        epoch,
        reason: reason.to_string(),
        partial_curve,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, Activation, LayerSpec};

    fn small() -> Network {
        build_network(
            &[
                LayerSpec::new(6, 4, Activation::Sigmoid),
                LayerSpec::new(4, 6, Activation::Sigmoid),
            ],
            2,
            InitScheme::UniformScaled,
            false,
        )
        .unwrap()
    }

    #[test]
    fn single_vector_loss_drops() {
        let x = vec![vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]];
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            ..TrainConfig::default()
        };
        let out = train(small(), &x, &cfg).unwrap();
        assert!(out.loss_curve.last().unwrap() < &out.loss_curve[0]);
        assert_eq!(out.loss_curve.len(), 200);
    }

    #[test]
    fn deterministic() {
        let data: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..6).map(|j| ((i + j) % 2) as f64).collect())
            .collect();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 3,
            shuffle_seed: 9,
            ..TrainConfig::default()
        };
        let a = train(small(), &data, &cfg).unwrap();
        let b = train(small(), &data, &cfg).unwrap();
        assert_eq!(a, b);
        let bits = |c: &[f64]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.loss_curve), bits(&b.loss_curve));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data: Vec<Vec<f64>> = (0..64)
            .map(|i| (0..40).map(|j| ((i * j + j) % 3 == 0) as u8 as f64).collect())
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            ..TrainConfig::default()
        };
        match train(crate::nn::build_default_network(1), &data, &cfg) {
            Err(NnError::DivergenceDetected { partial_curve, epoch, .. }) => assert_eq!(partial_curve.len(), epoch + 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config_and_data() {
        let x = vec![vec![0.0; 6]];
        let bad_lr = TrainConfig {
            learning_rate: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(matches!(train(small(), &x, &bad_lr), Err(NnError::InvalidConfig(_))));
        let bad_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(small(), &x, &bad_batch), Err(NnError::InvalidConfig(_))));
        assert_eq!(train(small(), &[], &TrainConfig::default()), Err(NnError::EmptyData));
        assert!(matches!(
            train(small(), &[vec![0.0; 5]], &TrainConfig::default()),
            Err(NnError::DimensionMismatch { .. })
        ));
    }
}
