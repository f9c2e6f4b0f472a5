use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::float::{softmax_cross_entropy, Gradients};
use super::model::ModelSpec;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::par;

/// Images per gradient chunk. Chunks are reduced in index order, so the
/// summed gradient does not depend on how many threads computed them.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// SGD with heavy-ball momentum.
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub lr: f64,
    /// SGD momentum, or Adam's β1.
    pub momentum: f64,
    pub batch_size: usize,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Train on the first `limit` examples only.
    pub limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            epochs: 8,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            lr_decay: 0.7,
            seed: 1,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainEvent {
    Batch {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub batches: usize,
}

pub fn train(model: &mut ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, data, cfg, |_, _| {})
}

/// Mini-batch SGD with momentum on softmax cross-entropy. The model's
/// current weights are the starting point. `observe` runs after every
/// parameter update and at the end of each epoch.
pub fn train_with<F>(model: &mut ModelSpec, data: &Dataset, cfg: &TrainConfig, mut observe: F) -> Result<TrainLog>
where
    F: FnMut(&ModelSpec, TrainEvent),
{
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let n = cfg.limit.unwrap_or(data.len()).min(data.len());
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = Gradients::zeros_like(model);
    let mut second = Gradients::zeros_like(model);
    let mut step = 0i32;
    let mut lr = cfg.lr;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let chunks: Vec<&[usize]> = idx.chunks(CHUNK).collect();
            let frozen: &ModelSpec = model;
            let partial = par::map_indexed(chunks.len(), |c| -> Result<(f64, Gradients)> {
                let mut grads = Gradients::zeros_like(frozen);
                let mut loss = 0.0;
                for &i in chunks[c] {
                    let trace = frozen.forward_trace(&data.image(i))?;
                    let (l, dlogits) = softmax_cross_entropy(trace.logits(), data.label(i))?;
                    frozen.backward(&trace, &dlogits, Some(&mut grads))?;
                    loss += l;
                }
                Ok((loss, grads))
            });
            let mut grads = Gradients::zeros_like(model);
            let mut loss = 0.0;
            for p in partial {
                let (l, g) = p?;
                loss += l;
                grads.add_assign(&g);
            }
            let loss = loss / idx.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            grads.scale(1.0 / idx.len() as f64);

            step += 1;
            let update = Update::new(cfg, lr, step);
            for (((layer, vel), sq), grad) in model
                .layers
                .iter_mut()
                .zip(&mut velocity.layers)
                .zip(&mut second.layers)
                .zip(&grads.layers)
            {
                let (Some((vw, vb)), Some((sw, sb)), Some((gw, gb))) = (vel.as_mut(), sq.as_mut(), grad.as_ref())
                else {
                    continue;
                };
                let (w, b) = layer.params_mut().expect("gradient slot implies parameters");
                update.apply(w, vw, sw, gw);
                update.apply(b, vb, sb, gb);
            }
            epoch_loss += loss * idx.len() as f64;
            log.batches += 1;
            observe(model, TrainEvent::Batch { epoch, batch, loss });
        }
        let mean_loss = epoch_loss / n as f64;
        log.epoch_losses.push(mean_loss);
        observe(model, TrainEvent::Epoch { epoch, mean_loss });
        lr *= cfg.lr_decay;
    }
    Ok(log)
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Update {
    optimizer: Optimizer,
    lr: f64,
    beta1: f64,
    /// Adam bias corrections for the current step.
    c1: f64,
    c2: f64,
}

impl Update {
    fn new(cfg: &TrainConfig, lr: f64, step: i32) -> Self {
        Update {
            optimizer: cfg.optimizer,
            lr,
            beta1: cfg.momentum,
            c1: 1.0 - cfg.momentum.powi(step),
            c2: 1.0 - ADAM_BETA2.powi(step),
        }
    }

    fn apply(&self, params: &mut [f64], m: &mut [f64], v: &mut [f64], grad: &[f64]) {
        match self.optimizer {
            Optimizer::Sgd => {
                for ((p, m), g) in params.iter_mut().zip(m).zip(grad) {
                    *m = self.beta1 * *m + g;
                    *p -= self.lr * *m;
                }
            }
            Optimizer::Adam => {
                for (((p, m), v), g) in params.iter_mut().zip(m).zip(v).zip(grad) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = *m / self.c1;
                    let vhat = *v / self.c2;
                    *p -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Split;
    use crate::nnengine::{Dense, Layer, Shape};

    /// Two linearly separable blobs on a 2×2 "image".
    fn blobs() -> Dataset {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64u8 {
            let class = i % 2;
            let base: [u8; 4] = if class == 0 { [200, 180, 20, 10] } else { [15, 30, 190, 220] };
            pixels.extend(base.iter().map(|v| v.wrapping_add(i / 2)));
            labels.push(class);
        }
        Dataset::from_raw(Split::Train, Shape::new(1, 2, 2), pixels, labels).unwrap()
    }

    fn tiny_model() -> ModelSpec {
        let mut m = ModelSpec::new(
            "tiny",
            Shape::new(1, 2, 2),
            vec![Layer::Flatten, Layer::Dense(Dense::zeros(4, 2))],
        )
        .unwrap();
        m.init_params(4);
        m
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let mut m = tiny_model();
        let before = m.clone();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 8, ..Default::default() };
        train(&mut m, &blobs(), &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn learns_separable_data_deterministically() {
        let data = blobs();
        let cfg = TrainConfig { lr: 0.1, epochs: 5, batch_size: 8, seed: 9, ..Default::default() };
        let mut a = tiny_model();
        let mut b = tiny_model();
        let la = train(&mut a, &data, &cfg).unwrap();
        let lb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.epoch_losses.last().unwrap() < &la.epoch_losses[0]);
        let acc = crate::nnengine::accuracy(&a, &data, data.len()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = tiny_model();
        if let Layer::Dense(d) = &mut m.layers[1] {
            d.weight[0] = f64::INFINITY;
        }
        let cfg = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
        assert!(matches!(train(&mut m, &blobs(), &cfg), Err(Error::Diverged { .. })));
    }
}
