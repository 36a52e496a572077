//! Encoder / decoder / critic network definitions.
//!
//! The encoder is a small U-Net that takes the image concatenated with the
//! message broadcast to a spatial map and predicts a bounded additive
//! residual. The decoder is a spatial-transformer front end followed by a
//! small CNN head producing one logit per message bit. The critic is a
//! 3-layer convolutional discriminator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::nn::{Conv2d, Initializer, Linear, ParamStore};
use crate::tensor::{Graph, NodeId, Scalar};

/// Architecture hyperparameters; fixed once a codec is trained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodecArch {
    pub l_msg: usize,
    pub image_shape: ImageShape,
    /// Base channel width of the encoder U-Net.
    pub enc_channels: usize,
    /// Base channel width of the decoder head.
    pub dec_channels: usize,
    /// Residual amplitude bound (fraction of full pixel range).
    pub residual_scale: f64,
}

impl CodecArch {
    pub fn desk_default(l_msg: usize, image_shape: ImageShape) -> Self {
        CodecArch {
            l_msg,
            image_shape,
            enc_channels: 12,
            dec_channels: 16,
            residual_scale: 0.35,
        }
    }

    /// Channels of the message map concatenated to the encoder input.
    pub const MSG_MAP_CHANNELS: usize = 4;

    fn check(&self) {
        assert!(
            self.image_shape.h % 8 == 0 && self.image_shape.w % 8 == 0,
            "codec image dims must be divisible by 8, got {}",
            self.image_shape
        );
    }
}

pub struct EncoderNet {
    msg_fc: Linear,
    c0: Conv2d,
    d1: Conv2d,
    d2: Conv2d,
    u1: Conv2d,
    u0: Conv2d,
    out: Conv2d,
}

impl EncoderNet {
    pub fn build<F: Scalar, R: Rng>(arch: &CodecArch, ps: &mut ParamStore<F>, rng: &mut R) -> Self {
        arch.check();
        let ec = arch.enc_channels;
        let (c, h, w) = (arch.image_shape.c, arch.image_shape.h, arch.image_shape.w);
        let mc = CodecArch::MSG_MAP_CHANNELS;
        let msg_fc = Linear::new(ps, "enc.msg_fc", arch.l_msg, mc * (h / 4) * (w / 4), rng);
        let c0 = Conv2d::new(ps, "enc.c0", c + mc, ec, 3, 1, 1, rng);
        let d1 = Conv2d::new(ps, "enc.d1", ec, 2 * ec, 3, 2, 1, rng);
        let d2 = Conv2d::new(ps, "enc.d2", 2 * ec, 2 * ec, 3, 2, 1, rng);
        let u1 = Conv2d::new(ps, "enc.u1", 4 * ec, 2 * ec, 3, 1, 1, rng);
        let u0 = Conv2d::new(ps, "enc.u0", 3 * ec, ec, 3, 1, 1, rng);
        let out = Conv2d::new(ps, "enc.out", ec, c, 3, 1, 1, rng);
        EncoderNet {
            msg_fc,
            c0,
            d1,
            d2,
            u1,
            u0,
            out,
        }
    }

    /// Bounded residual `[B,C,H,W]` for images `[B,C,H,W]` in `[0,1]` and
    /// message targets `[B,L]`.
    pub fn residual<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        images: NodeId,
        msg_bits: NodeId,
        arch: &CodecArch,
    ) -> NodeId {
        let (h, w) = (arch.image_shape.h, arch.image_shape.w);
        let mc = CodecArch::MSG_MAP_CHANNELS;
        let batch = g.value(images).shape()[0];

        let msg = self.msg_fc.forward(g, ps, msg_bits);
        let msg = g.relu(msg);
        let msg = g.reshape(msg, &[batch, mc, h / 4, w / 4]);
        let msg = g.upsample2(msg);
        let msg = g.upsample2(msg); // [B, mc, H, W]

        let x = g.concat_channels(&[images, msg]);
        let c0 = self.c0.forward(g, ps, x);
        let c0 = g.relu(c0);
        let d1 = self.d1.forward(g, ps, c0);
        let d1 = g.relu(d1);
        let d2 = self.d2.forward(g, ps, d1);
        let d2 = g.relu(d2);

        let up1 = g.upsample2(d2);
        let u1_in = g.concat_channels(&[up1, d1]);
        let u1 = self.u1.forward(g, ps, u1_in);
        let u1 = g.relu(u1);

        let up0 = g.upsample2(u1);
        let u0_in = g.concat_channels(&[up0, c0]);
        let u0 = self.u0.forward(g, ps, u0_in);
        let u0 = g.relu(u0);

        let res = self.out.forward(g, ps, u0);
        let res = g.tanh(res);
        g.scale(res, arch.residual_scale)
    }

    /// Residual added, clamped to `[0,1]`, then quantized to 255 levels with
    /// straight-through gradients (poisoned files are stored as 8-bit).
    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        images: NodeId,
        msg_bits: NodeId,
        arch: &CodecArch,
    ) -> NodeId {
        let res = self.residual(g, ps, images, msg_bits, arch);
        let enc = g.add(images, res);
        let enc = g.clamp_ste(enc, 0.0, 1.0);
        g.round_ste(enc, 255.0)
    }
}

pub struct DecoderNet {
    loc_c1: Conv2d,
    loc_c2: Conv2d,
    loc_fc1: Linear,
    loc_fc2: Linear,
    h1: Conv2d,
    h2: Conv2d,
    h3: Conv2d,
    fc1: Linear,
    fc2: Linear,
}

impl DecoderNet {
    pub fn build<F: Scalar, R: Rng>(arch: &CodecArch, ps: &mut ParamStore<F>, rng: &mut R) -> Self {
        arch.check();
        let dc = arch.dec_channels;
        let c = arch.image_shape.c;
        let loc_c1 = Conv2d::new(ps, "dec.loc_c1", c, 8, 3, 2, 1, rng);
        let loc_c2 = Conv2d::new(ps, "dec.loc_c2", 8, 8, 3, 2, 1, rng);
        let loc_fc1 = Linear::new(ps, "dec.loc_fc1", 8, 16, rng);
        // identity transform at initialization: zero weights, identity bias
        let loc_fc2 = Linear::with_init(
            ps,
            "dec.loc_fc2",
            16,
            6,
            Initializer::Zeros,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            rng,
        );
        let h1 = Conv2d::new(ps, "dec.h1", c, dc, 3, 2, 1, rng);
        let h2 = Conv2d::new(ps, "dec.h2", dc, 2 * dc, 3, 2, 1, rng);
        let h3 = Conv2d::new(ps, "dec.h3", 2 * dc, 4 * dc, 3, 2, 1, rng);
        let fc1 = Linear::new(ps, "dec.fc1", 4 * dc, 64, rng);
        let fc2 = Linear::new(ps, "dec.fc2", 64, arch.l_msg, rng);
        DecoderNet {
            loc_c1,
            loc_c2,
            loc_fc1,
            loc_fc2,
            h1,
            h2,
            h3,
            fc1,
            fc2,
        }
    }

    /// Per-bit logits `[B,L]` for images `[B,C,H,W]` in `[0,1]`.
    pub fn logits<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        images: NodeId,
        arch: &CodecArch,
    ) -> NodeId {
        let (h, w) = (arch.image_shape.h, arch.image_shape.w);
        let batch = g.value(images).shape()[0];

        // spatial transformer front end
        let l = self.loc_c1.forward(g, ps, images);
        let l = g.relu(l);
        let l = self.loc_c2.forward(g, ps, l);
        let l = g.relu(l);
        let l = g.global_avg_pool(l);
        let l = self.loc_fc1.forward(g, ps, l);
        let l = g.relu(l);
        let theta = self.loc_fc2.forward(g, ps, l);
        let theta = g.reshape(theta, &[batch, 2, 3]);
        let grid = g.affine_grid(theta, h, w);
        let xt = g.grid_sample(images, grid);

        // CNN head
        let y = self.h1.forward(g, ps, xt);
        let y = g.relu(y);
        let y = self.h2.forward(g, ps, y);
        let y = g.relu(y);
        let y = self.h3.forward(g, ps, y);
        let y = g.relu(y);
        let y = g.global_avg_pool(y);
        let y = self.fc1.forward(g, ps, y);
        let y = g.relu(y);
        self.fc2.forward(g, ps, y)
    }
}

pub struct CriticNet {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    fc: Linear,
}

impl CriticNet {
    pub fn build<F: Scalar, R: Rng>(arch: &CodecArch, ps: &mut ParamStore<F>, rng: &mut R) -> Self {
        let c = arch.image_shape.c;
        CriticNet {
            c1: Conv2d::new(ps, "critic.c1", c, 8, 3, 2, 1, rng),
            c2: Conv2d::new(ps, "critic.c2", 8, 16, 3, 2, 1, rng),
            c3: Conv2d::new(ps, "critic.c3", 16, 32, 3, 2, 1, rng),
            fc: Linear::new(ps, "critic.fc", 32, 1, rng),
        }
    }

    /// One logit per image; positive means "judged encoded".
    pub fn scores<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        images: NodeId,
    ) -> NodeId {
        let y = self.c1.forward(g, ps, images);
        let y = g.leaky_relu(y, 0.2);
        let y = self.c2.forward(g, ps, y);
        let y = g.leaky_relu(y, 0.2);
        let y = self.c3.forward(g, ps, y);
        let y = g.leaky_relu(y, 0.2);
        let y = g.global_avg_pool(y);
        self.fc.forward(g, ps, y)
    }
}
