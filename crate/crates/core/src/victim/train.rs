//! Standard supervised training of the victim classifier: SGD with momentum,
//! step-decayed learning rate, mean cross-entropy.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::VictimNet;
use super::{Architecture, ModelMeta, VictimModel};
use crate::data::{batch_from_samples, LabeledImageSet, Sample};
use crate::nn::{ParamStore, Sgd};
use crate::tensor::{fs, tensor_scalar, Graph};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VictimTrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning rate is multiplied by `decay` after each listed epoch
    /// (1-indexed), so with `[15, 20]` epoch 16 runs at `lr*decay`.
    pub decay_epochs: Vec<usize>,
    pub decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Random crop (4px pad) + horizontal flip.
    pub augment: bool,
    pub seed: u64,
}

impl Default for VictimTrainConfig {
    fn default() -> Self {
        VictimTrainConfig {
            architecture: Architecture::TinyCnn,
            epochs: 30,
            batch: 128,
            lr: 0.001,
            decay_epochs: vec![15, 20],
            decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: false,
            seed: 1,
        }
    }
}

impl VictimTrainConfig {
    /// Effective learning rate during the given 1-indexed epoch.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.lr * self.decay.powi(steps as i32)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_accuracy: Option<f64>,
}

pub struct TrainedVictim {
    pub model: VictimModel,
    pub log: Vec<EpochLog>,
}

pub fn train_victim(
    train_set: &LabeledImageSet,
    test_set: Option<&LabeledImageSet>,
    config: &VictimTrainConfig,
) -> Result<TrainedVictim> {
    if train_set.n() == 0 {
        return Err(Error::InvalidArgument("victim training set is empty".into()));
    }
    let k = train_set.k;
    let shape = train_set.shape;
    let mut params = ParamStore::<f32>::new();
    let net = VictimNet::build(config.architecture, k, shape, &mut params, config.seed);
    let mut opt = Sgd::<f32>::new(
        params.trainable_ids(),
        config.lr,
        config.momentum,
        config.weight_decay,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.n()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        opt.lr = config.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch) {
            let images = if config.augment {
                let augmented: Vec<Sample> = chunk
                    .iter()
                    .map(|&i| Sample {
                        id: String::new(),
                        label: train_set.samples[i].label,
                        pixels: augment_image(&train_set.samples[i].pixels, &mut rng),
                    })
                    .collect();
                let idx: Vec<usize> = (0..augmented.len()).collect();
                batch_from_samples::<f32>(&augmented, &idx, shape)
            } else {
                train_set.to_batch::<f32>(chunk)
            };
            let labels: Vec<usize> = chunk
                .iter()
                .map(|&i| train_set.samples[i].label as usize)
                .collect();

            let mut g = Graph::<f32>::new();
            let x = g.constant(images);
            let mut bn_updates = Vec::new();
            let trace = net.forward(&mut g, &params, x, true, Some(&mut bn_updates), None);
            let loss = g.softmax_ce(trace.logits, &labels);
            let loss_v = fs(tensor_scalar(g.value(loss)));
            if !loss_v.is_finite() {
                return Err(Error::Divergence {
                    iteration: (epoch - 1) * order.len() / config.batch + batches,
                    detail: format!("victim loss {loss_v} at epoch {epoch}"),
                });
            }
            g.backward(loss);
            let grads = g.grads_for(&params);
            drop(g);
            opt.step(&mut params, &grads);
            for u in bn_updates {
                u.apply(&mut params);
            }
            epoch_loss += loss_v;
            batches += 1;
        }
        epoch_loss /= batches.max(1) as f64;

        let test_accuracy = match test_set {
            Some(ts) if ts.n() > 0 => Some(evaluate_accuracy(&net, &params, ts)?),
            _ => None,
        };
        log.push(EpochLog {
            epoch,
            lr: opt.lr,
            train_loss: epoch_loss,
            test_accuracy,
        });
        log::info!(
            "victim epoch {epoch}/{}: lr {:.6} loss {:.4} test acc {:?}",
            config.epochs,
            opt.lr,
            epoch_loss,
            test_accuracy
        );
    }

    let mut meta = meta_of(config, k, shape);
    meta.train_config = Some(serde_json::to_value(config)?);
    meta.final_train_loss = log.last().map(|l| l.train_loss);
    meta.final_test_accuracy = log.last().and_then(|l| l.test_accuracy);
    let model = VictimModel::from_parts(params, meta, net);
    Ok(TrainedVictim { model, log })
}

fn meta_of(config: &VictimTrainConfig, k: usize, shape: crate::data::ImageShape) -> ModelMeta {
    ModelMeta {
        architecture: config.architecture,
        k,
        image_shape: shape,
        build_seed: config.seed,
        train_config: None,
        dataset_artifact: None,
        final_train_loss: None,
        final_test_accuracy: None,
        prune_mask: None,
    }
}

fn evaluate_accuracy(
    net: &VictimNet,
    params: &ParamStore<f32>,
    test: &LabeledImageSet,
) -> Result<f64> {
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..test.n()).collect();
    for chunk in indices.chunks(256) {
        let images = test.to_batch::<f32>(chunk);
        let mut g = Graph::<f32>::new();
        let x = g.constant(images);
        let trace = net.forward(&mut g, params, x, false, None, None);
        let logits = g.value(trace.logits);
        for (row, &i) in chunk.iter().enumerate() {
            let mut best = 0usize;
            let mut best_v = f32::NEG_INFINITY;
            for c in 0..test.k {
                let v = logits[[row, c]];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            if best == test.samples[i].label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / test.n() as f64)
}

/// 4-pixel-pad random crop plus horizontal flip.
fn augment_image<R: Rng>(pixels: &Array3<u8>, rng: &mut R) -> Array3<u8> {
    let (c, h, w) = pixels.dim();
    let pad = 4usize;
    let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let flip: bool = rng.random();
    let mut out = Array3::<u8>::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let sy = y as isize + dy;
                let sx = x as isize + dx;
                let sx = if flip { w as isize - 1 - sx } else { sx };
                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                    out[[ci, y, x]] = pixels[[ci, sy as usize, sx as usize]];
                }
            }
        }
    }
    out
}
