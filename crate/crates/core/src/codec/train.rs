//! Codec training: Adam on the four-term objective with an alternating
//! critic step (one critic update per encoder update).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    bits_to_tensor, codec_loss, eval_codec, CodecArch, CodecLossWeights, CodecMeta, CodecNets,
    FilterBankPerceptual, LossBreakdown, Message, StegoCodec,
};
use crate::data::LabeledImageSet;
use crate::nn::{Adam, ParamStore};
use crate::tensor::Graph;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodecTrainConfig {
    pub l_msg: usize,
    pub weights: CodecLossWeights,
    pub batch: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples reserved for held-out evaluation (clamped to half the set).
    pub holdout: usize,
    pub enc_channels: usize,
    pub dec_channels: usize,
    pub residual_scale: f64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        let arch = CodecArch::desk_default(20, crate::data::ImageShape::new(3, 32, 32));
        CodecTrainConfig {
            l_msg: 20,
            weights: CodecLossWeights::default(),
            batch: 16,
            iterations: 4000,
            lr: 1e-4,
            seed: 1,
            holdout: 128,
            enc_channels: arch.enc_channels,
            dec_channels: arch.dec_channels,
            residual_scale: arch.residual_scale,
        }
    }
}

impl CodecTrainConfig {
    pub fn arch_for(&self, shape: crate::data::ImageShape) -> CodecArch {
        CodecArch {
            l_msg: self.l_msg,
            image_shape: shape,
            enc_channels: self.enc_channels,
            dec_channels: self.dec_channels,
            residual_scale: self.residual_scale,
        }
    }
}

/// One training step's loss values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: LossBreakdown,
    pub critic_loss: Option<f64>,
}

pub struct TrainedCodec {
    pub codec: StegoCodec,
    pub log: Vec<IterationLog>,
    pub held_out_bit_accuracy: f64,
    pub held_out_mean_psnr: f64,
}

pub fn train_codec(benign_train: &LabeledImageSet, config: &CodecTrainConfig) -> Result<TrainedCodec> {
    if benign_train.n() == 0 {
        return Err(Error::InvalidArgument("codec training set is empty".into()));
    }
    if config.iterations < 1 || config.batch < 1 || config.l_msg < 1 {
        return Err(Error::InvalidArgument(
            "iterations, batch and L_msg must all be at least 1".into(),
        ));
    }
    config.weights.validate()?;

    let arch = config.arch_for(benign_train.shape);
    let mut params = ParamStore::<f32>::new();
    let nets = CodecNets::build(&arch, &mut params, config.seed);
    let percep = FilterBankPerceptual::new(arch.image_shape.c);

    let enc_dec_ids: Vec<_> = params
        .ids()
        .filter(|&id| {
            let n = params.name(id);
            n.starts_with("enc.") || n.starts_with("dec.")
        })
        .collect();
    let critic_ids: Vec<_> = params
        .ids()
        .filter(|&id| params.name(id).starts_with("critic."))
        .collect();
    let mut opt = Adam::<f32>::new(enc_dec_ids, config.lr);
    let mut critic_opt = Adam::<f32>::new(critic_ids, config.lr);
    let train_critic = config.weights.w_critic > 0.0;

    let n = benign_train.n();
    let holdout = config.holdout.min(n / 2);
    let pool = n - holdout;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = Vec::with_capacity(config.iterations);

    for iter in 0..config.iterations {
        let indices: Vec<usize> = (0..config.batch)
            .map(|_| rng.random_range(0..pool.max(1)))
            .collect();
        let images = benign_train.to_batch::<f32>(&indices);
        let bits: Vec<Vec<bool>> = (0..config.batch)
            .map(|_| Message::random(config.l_msg, &mut rng).bits().to_vec())
            .collect();

        let mut g = Graph::<f32>::new();
        let x = g.constant(images.clone());
        let m = g.constant(bits_to_tensor::<f32>(&bits));
        let encoded = nets.encoder.encode(&mut g, &params, x, m, &arch);
        let logits = nets.decoder.logits(&mut g, &params, encoded, &arch);
        let scores = train_critic.then(|| nets.critic.scores(&mut g, &params, encoded));
        let (total, breakdown) =
            codec_loss(&mut g, &percep, x, encoded, logits, m, scores, &config.weights).map_err(
                |e| Error::Divergence {
                    iteration: iter,
                    detail: e.to_string(),
                },
            )?;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                detail: format!("loss snapshot: {breakdown:?}"),
            });
        }
        g.backward(total);
        let grads = g.grads_for(&params);
        let encoded_value = g.value(encoded).clone();
        drop(g);
        opt.step(&mut params, &grads);

        // critic update on the pre-step encoder output, detached
        let critic_loss = if train_critic {
            let mut cg = Graph::<f32>::new();
            let fake = cg.constant(encoded_value);
            let real = cg.constant(images);
            let s_fake = nets.critic.scores(&mut cg, &params, fake);
            let s_real = nets.critic.scores(&mut cg, &params, real);
            let ones = cg.constant(ndarray::ArrayD::ones(cg.value(s_fake).raw_dim()));
            let zeros = cg.constant(ndarray::ArrayD::zeros(cg.value(s_real).raw_dim()));
            let l_fake = cg.bce_with_logits(s_fake, ones);
            let l_real = cg.bce_with_logits(s_real, zeros);
            let cl = cg.weighted_sum(&[(l_fake, 0.5), (l_real, 0.5)]);
            cg.backward(cl);
            let cgrads = cg.grads_for(&params);
            let value = crate::tensor::fs(crate::tensor::tensor_scalar(cg.value(cl)));
            drop(cg);
            if !value.is_finite() {
                return Err(Error::Divergence {
                    iteration: iter,
                    detail: format!("critic loss non-finite; codec loss snapshot: {breakdown:?}"),
                });
            }
            critic_opt.step(&mut params, &cgrads);
            Some(value)
        } else {
            None
        };

        log.push(IterationLog {
            iteration: iter,
            loss: breakdown,
            critic_loss,
        });
        if iter % 200 == 0 {
            log::debug!(
                "codec iter {iter}: total {:.4} res {:.4} percep {:.4} critic {:.4} msg {:.4}",
                breakdown.total,
                breakdown.residual,
                breakdown.perceptual,
                breakdown.critic,
                breakdown.message
            );
        }
    }

    // held-out evaluation
    let eval_indices: Vec<usize> = (pool..n).collect();
    let eval_indices = if eval_indices.is_empty() {
        (0..n.min(64)).collect()
    } else {
        eval_indices
    };
    let eval_images: Vec<_> = eval_indices
        .iter()
        .take(128)
        .map(|&i| benign_train.samples[i].pixels.clone())
        .collect();

    let meta = CodecMeta {
        arch: arch.clone(),
        weights: config.weights,
        iterations: config.iterations,
        seed: config.seed,
        train_set_artifact: None,
        held_out_bit_accuracy: 0.0,
        held_out_mean_psnr: 0.0,
    };
    let mut codec = StegoCodec::from_parts(params, meta, nets);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_EA1Au64);
    let (bit_acc, mean_psnr) = eval_codec(&codec, &eval_images, &mut eval_rng)?;
    codec.meta.held_out_bit_accuracy = bit_acc;
    codec.meta.held_out_mean_psnr = mean_psnr;
    log::info!(
        "codec trained: {} iterations, held-out bit accuracy {:.4}, mean PSNR {:.2} dB",
        config.iterations,
        bit_acc,
        mean_psnr
    );

    Ok(TrainedCodec {
        codec,
        log,
        held_out_bit_accuracy: bit_acc,
        held_out_mean_psnr: mean_psnr,
    })
}
