use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};

use super::{Gradients, Network, ParamGrad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub weight_decay: f64,
}

impl TrainConfig {
    /// Checks every field against its admissible range; `prefix` names the
    /// config section in error messages.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let fail = |field: &str, why: &str| {
            Err(Error::Config(format!("{prefix}.{field} {why}")))
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", &format!("must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", &format!("must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", &format!("must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

/// Momentum buffers, laid out like [`Gradients::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Velocity {
    pub fn zeros(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    l.params.as_ref().map(|p| ParamGrad {
                        weights: vec![0.0; p.weights.len()],
                        bias: vec![0.0; p.bias.len()],
                    })
                })
                .collect(),
        }
    }
}

/// One momentum-SGD update: `v <- momentum * v + g (+ weight_decay * w)`,
/// `w <- w - lr * v`. Masked weights stay exactly zero.
pub fn sgd_step(
    net: &mut Network,
    grads: &Gradients,
    cfg: &TrainConfig,
    velocity: &mut Velocity,
) -> Result<()> {
    if grads.layers.len() != net.layers.len() || velocity.layers.len() != net.layers.len() {
        return Err(Error::Shape("gradient/velocity layout does not match network".into()));
    }
    // validate everything before touching any parameter
    for (i, (layer, g)) in net.layers.iter().zip(&grads.layers).enumerate() {
        match (layer.params.as_ref(), g) {
            (None, None) => {}
            (Some(p), Some(g)) => {
                if g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len() {
                    return Err(Error::Shape(format!("gradient shape mismatch in layer {i}")));
                }
                if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient { layer: i });
                }
            }
            _ => return Err(Error::Shape(format!("gradient presence mismatch in layer {i}"))),
        }
    }
    for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
        let (Some(p), Some(g), Some(v)) = (layer.params.as_mut(), g, v.as_mut()) else {
            continue;
        };
        let w = p.weights.data_mut();
        for i in 0..w.len() {
            if !p.mask[i] {
                v.weights[i] = 0.0;
                w[i] = 0.0;
                continue;
            }
            let gi = g.weights[i] + cfg.weight_decay * w[i];
            v.weights[i] = cfg.momentum * v.weights[i] + gi;
            w[i] -= cfg.learning_rate * v.weights[i];
        }
        for i in 0..p.bias.len() {
            v.bias[i] = cfg.momentum * v.bias[i] + g.bias[i];
            p.bias[i] -= cfg.learning_rate * v.bias[i];
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub loss: f64,
    /// Accuracy of the pre-update predictions seen during the epoch.
    pub accuracy: f64,
}

/// Mini-batch training with shuffling seeded from `net.rng_seed`.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    let seed = net.rng_seed;
    train_with_seed(net, data, cfg, seed)
}

/// [`train`] with an explicit shuffle seed.
pub fn train_with_seed(
    net: &mut Network,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate("train")?;
    let mut velocity = Velocity::zeros(net);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch, labels) in batches(data, cfg.batch_size, seed, epoch as u64, true) {
            let grads = net.backward(&batch, &labels)?;
            loss_sum += grads.loss * labels.len() as f64;
            correct += grads.correct;
            sgd_step(net, &grads, cfg, &mut velocity)?;
        }
        history.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(history)
}
