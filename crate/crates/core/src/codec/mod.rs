//! The steganographic trigger codec: embed an attacker string into images as
//! an invisible additive perturbation and recover it.

mod model;
mod percep;
mod train;

pub use model::{CodecArch, CriticNet, DecoderNet, EncoderNet};
pub use percep::{FilterBankPerceptual, PerceptualFeatures};
pub use train::{train_codec, CodecTrainConfig, IterationLog, TrainedCodec};

use std::path::Path;

use ndarray::{Array3, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_to_images, image_to_batch, ImageShape};
use crate::nn::{adopt_values, load_params, save_params, ParamStore};
use crate::tensor::{fs, Graph, NodeId, Scalar};
use crate::{Error, Result};

/// Fixed-length bit string carried by the trigger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    bits: Vec<bool>,
    source_string: String,
}

impl Message {
    /// Deterministic string→bits mapping: UTF-8 bytes, little-endian bit
    /// order within each byte, zero-padded / truncated to `l_msg`.
    pub fn from_string(s: &str, l_msg: usize) -> Self {
        let mut bits = Vec::with_capacity(l_msg);
        'outer: for byte in s.as_bytes() {
            for i in 0..8 {
                bits.push((byte >> i) & 1 == 1);
                if bits.len() == l_msg {
                    break 'outer;
                }
            }
        }
        bits.resize(l_msg, false);
        Message {
            bits,
            source_string: s.to_string(),
        }
    }

    /// Uniform random message (used while training the codec).
    pub fn random<R: Rng>(l_msg: usize, rng: &mut R) -> Self {
        let bits: Vec<bool> = (0..l_msg).map(|_| rng.random()).collect();
        Message {
            bits,
            source_string: String::new(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn source_string(&self) -> &str {
        &self.source_string
    }

    pub fn to_tensor<F: Scalar>(&self) -> ArrayD<F> {
        bits_to_tensor(std::slice::from_ref(&self.bits))
    }
}

pub(crate) fn bits_to_tensor<F: Scalar>(rows: &[Vec<bool>]) -> ArrayD<F> {
    let l = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut t = ArrayD::<F>::zeros(IxDyn(&[rows.len(), l]));
    for (i, row) in rows.iter().enumerate() {
        for (j, &b) in row.iter().enumerate() {
            t[[i, j]] = if b { F::one() } else { F::zero() };
        }
    }
    t
}

/// Scaling factors of the four codec loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecLossWeights {
    pub w_residual: f64,
    pub w_perceptual: f64,
    pub w_critic: f64,
    pub w_message: f64,
}

impl Default for CodecLossWeights {
    fn default() -> Self {
        CodecLossWeights {
            w_residual: 2.0,
            w_perceptual: 1.5,
            w_critic: 0.5,
            w_message: 1.5,
        }
    }
}

impl CodecLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_residual,
            self.w_perceptual,
            self.w_critic,
            self.w_message,
        ];
        if all.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-term loss values of one codec training step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub residual: f64,
    pub perceptual: f64,
    pub critic: f64,
    pub message: f64,
}

/// Compose the four-term codec objective in-graph.
///
/// `critic_scores` are the critic's logits on the encoded images (positive =
/// "judged encoded"); the encoder is rewarded for driving them down, so the
/// term is `mean softplus(score)`, which is zero for a fully fooled critic.
#[allow(clippy::too_many_arguments)]
pub fn codec_loss<F: Scalar>(
    g: &mut Graph<F>,
    percep: &dyn PerceptualFeatures<F>,
    input_images: NodeId,
    encoded_images: NodeId,
    decoded_logits: NodeId,
    true_bits: NodeId,
    critic_scores: Option<NodeId>,
    weights: &CodecLossWeights,
) -> Result<(NodeId, LossBreakdown)> {
    weights.validate()?;
    let residual = g.mse(encoded_images, input_images);
    let perceptual = percep.distance(g, encoded_images, input_images);
    let critic = match critic_scores {
        Some(scores) => {
            let sp = g.softplus(scores);
            g.mean_all(sp)
        }
        None => g.constant(crate::tensor::scalar_tensor(F::zero())),
    };
    let message = g.bce_with_logits(decoded_logits, true_bits);

    let breakdown_of = |g: &Graph<F>, n: NodeId| fs(crate::tensor::tensor_scalar(g.value(n)));
    let terms = [
        ("residual", residual),
        ("perceptual", perceptual),
        ("critic", critic),
        ("message", message),
    ];
    for (name, node) in terms {
        if !breakdown_of(g, node).is_finite() {
            return Err(Error::NonFiniteTerm { term: name.into() });
        }
    }

    let total = g.weighted_sum(&[
        (residual, weights.w_residual),
        (perceptual, weights.w_perceptual),
        (critic, weights.w_critic),
        (message, weights.w_message),
    ]);
    let breakdown = LossBreakdown {
        total: breakdown_of(g, total),
        residual: breakdown_of(g, residual),
        perceptual: breakdown_of(g, perceptual),
        critic: breakdown_of(g, critic),
        message: breakdown_of(g, message),
    };
    Ok((total, breakdown))
}

/// Codec metadata persisted next to the parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodecMeta {
    pub arch: CodecArch,
    pub weights: CodecLossWeights,
    pub iterations: usize,
    pub seed: u64,
    pub train_set_artifact: Option<String>,
    pub held_out_bit_accuracy: f64,
    pub held_out_mean_psnr: f64,
}

/// A trained encoder/decoder/critic parameter bundle.
pub struct StegoCodec {
    pub params: ParamStore<f32>,
    pub meta: CodecMeta,
    nets: CodecNets,
}

pub(crate) struct CodecNets {
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub critic: CriticNet,
}

impl CodecNets {
    /// Deterministic skeleton construction; parameter order is fixed by
    /// construction order, which save/load relies on.
    pub fn build<F: Scalar>(arch: &CodecArch, ps: &mut ParamStore<F>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CodecNets {
            encoder: EncoderNet::build(arch, ps, &mut rng),
            decoder: DecoderNet::build(arch, ps, &mut rng),
            critic: CriticNet::build(arch, ps, &mut rng),
        }
    }
}

impl StegoCodec {
    pub(crate) fn from_parts(params: ParamStore<f32>, meta: CodecMeta, nets: CodecNets) -> Self {
        StegoCodec { params, meta, nets }
    }

    pub fn l_msg(&self) -> usize {
        self.meta.arch.l_msg
    }

    pub fn image_shape(&self) -> ImageShape {
        self.meta.arch.image_shape
    }

    fn check_image_shape(&self, pixels: &Array3<u8>) -> Result<()> {
        let (c, h, w) = pixels.dim();
        let s = self.image_shape();
        if (c, h, w) != (s.c, s.h, s.w) {
            return Err(Error::shape(format!(
                "image {c}x{w}x{h} does not match codec {s}"
            )));
        }
        Ok(())
    }

    /// Encode one image; deterministic.
    pub fn encode(&self, image: &Array3<u8>, message: &Message) -> Result<Array3<u8>> {
        self.check_image_shape(image)?;
        if message.len() != self.l_msg() {
            return Err(Error::InvalidArgument(format!(
                "message length {} != codec L_msg {}",
                message.len(),
                self.l_msg()
            )));
        }
        let batch = image_to_batch::<f32>(image);
        let out = self.encode_float_batch(&batch, &[message.bits().to_vec()]);
        Ok(batch_to_images(&out).remove(0))
    }

    /// Encode a float batch `[B,C,H,W]` in `[0,1]`; returns quantized floats.
    pub fn encode_float_batch(&self, images: &ArrayD<f32>, bits: &[Vec<bool>]) -> ArrayD<f32> {
        let mut g = Graph::<f32>::new();
        let x = g.constant(images.clone());
        let m = g.constant(bits_to_tensor::<f32>(bits));
        let enc = self
            .nets
            .encoder
            .encode(&mut g, &self.params, x, m, &self.meta.arch);
        g.value(enc).clone()
    }

    /// Recover hard bits and per-bit confidence (sigmoid of the logits).
    pub fn decode(&self, image: &Array3<u8>) -> Result<(Vec<bool>, Vec<f64>)> {
        self.check_image_shape(image)?;
        let batch = image_to_batch::<f32>(image);
        let (bits, conf) = self.decode_float_batch(&batch);
        Ok((bits.into_iter().next().unwrap(), conf.into_iter().next().unwrap()))
    }

    /// Decode a float batch; hard bits threshold confidence at 0.5.
    pub fn decode_float_batch(&self, images: &ArrayD<f32>) -> (Vec<Vec<bool>>, Vec<Vec<f64>>) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(images.clone());
        let logits = self
            .nets
            .decoder
            .logits(&mut g, &self.params, x, &self.meta.arch);
        let lv = g.value(logits);
        let b = lv.shape()[0];
        let l = lv.shape()[1];
        let mut bits = Vec::with_capacity(b);
        let mut confs = Vec::with_capacity(b);
        for i in 0..b {
            let mut row_bits = Vec::with_capacity(l);
            let mut row_conf = Vec::with_capacity(l);
            for j in 0..l {
                let conf = 1.0 / (1.0 + (-fs(lv[[i, j]])).exp());
                row_conf.push(conf);
                row_bits.push(conf > 0.5);
            }
            bits.push(row_bits);
            confs.push(row_conf);
        }
        (bits, confs)
    }

    /// Fraction of bits recovered correctly.
    pub fn bit_accuracy(recovered: &[bool], expected: &[bool]) -> f64 {
        assert_eq!(recovered.len(), expected.len());
        let hits = recovered
            .iter()
            .zip(expected)
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / expected.len() as f64
    }

    /// Persist as `<dir>/params` + `<dir>/codec.meta`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_params(&self.params, &dir.join("params"))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join("codec.meta"), meta)
            .map_err(|e| Error::io(dir.join("codec.meta"), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("codec.meta");
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CodecMeta = serde_json::from_str(&meta_text)?;
        let loaded = load_params::<f32>(&dir.join("params"))?;
        // rebuild the skeleton to get layer handles, then adopt stored values
        let mut params = ParamStore::<f32>::new();
        let nets = CodecNets::build(&meta.arch, &mut params, meta.seed);
        adopt_values(&mut params, &loaded)?;
        Ok(StegoCodec { params, meta, nets })
    }
}

/// Mean decoded bit accuracy and mean PSNR of encode/decode round trips on
/// the given images with fresh random messages.
pub fn eval_codec<R: Rng>(
    codec: &StegoCodec,
    images: &[Array3<u8>],
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut acc_sum = 0.0;
    let mut psnr_sum = 0.0;
    for img in images {
        let msg = Message::random(codec.l_msg(), rng);
        let enc = codec.encode(img, &msg)?;
        let (bits, _) = codec.decode(&enc)?;
        acc_sum += StegoCodec::bit_accuracy(&bits, msg.bits());
        psnr_sum += crate::metrics::psnr(&enc, img)?;
    }
    let n = images.len() as f64;
    Ok((acc_sum / n, psnr_sum / n))
}


#[cfg(test)]
mod tests;
