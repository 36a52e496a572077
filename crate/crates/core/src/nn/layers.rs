use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::{Initializer, ParamId, ParamStore};
use crate::tensor::{sc, Graph, NodeId, Scalar};

/// 2-d convolution layer (square kernel).
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_c * k * k;
        let w = ps.add(
            format!("{name}.w"),
            Initializer::KaimingNormal.sample(&[out_c, in_c, k, k], fan_in, out_c * k * k, rng),
            true,
        );
        let b = ps.add(
            format!("{name}.b"),
            ArrayD::zeros(IxDyn(&[out_c])),
            true,
        );
        Conv2d {
            w,
            b: Some(b),
            stride,
            pad,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        x: NodeId,
    ) -> NodeId {
        let w = g.param(ps, self.w);
        let b = self.b.map(|b| g.param(ps, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Fully-connected layer.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(
            format!("{name}.w"),
            Initializer::XavierUniform.sample(&[d_in, d_out], d_in, d_out, rng),
            true,
        );
        let b = ps.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[d_out])), true);
        Linear { w, b }
    }

    /// Linear layer with explicitly initialized weights/bias (STN heads need
    /// an identity start).
    pub fn with_init<F: Scalar, R: Rng>(
        ps: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        w_init: Initializer,
        bias: &[f64],
        rng: &mut R,
    ) -> Self {
        assert_eq!(bias.len(), d_out);
        let w = ps.add(
            format!("{name}.w"),
            w_init.sample(&[d_in, d_out], d_in, d_out, rng),
            true,
        );
        let bias_t = ArrayD::from_shape_vec(
            IxDyn(&[d_out]),
            bias.iter().map(|&v| sc::<F>(v)).collect(),
        )
        .expect("bias shape");
        let b = ps.add(format!("{name}.b"), bias_t, true);
        Linear { w, b }
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, ps: &ParamStore<F>, x: NodeId) -> NodeId {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Batch normalization with running statistics kept as non-trainable
/// parameters so checkpoints capture them.
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<F: Scalar>(ps: &mut ParamStore<F>, name: &str, c: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[c])), true);
        let beta = ps.add(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[c])), true);
        let running_mean = ps.add(format!("{name}.rm"), ArrayD::zeros(IxDyn(&[c])), false);
        let running_var = ps.add(format!("{name}.rv"), ArrayD::ones(IxDyn(&[c])), false);
        BatchNorm2d {
            gamma,
            beta,
            running_mean,
            running_var,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Forward pass. In training mode the batch statistics are appended to
    /// `updates`; the training loop applies them to the store after the
    /// step (forward itself never needs a mutable store, so frozen models
    /// stay immutable).
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        ps: &ParamStore<F>,
        x: NodeId,
        training: bool,
        updates: Option<&mut Vec<BnUpdate<F>>>,
    ) -> NodeId {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        let rm = ps.value(self.running_mean).clone();
        let rv = ps.value(self.running_var).clone();
        let (y, stats) = g.batch_norm2d(x, gamma, beta, &rm, &rv, training, self.eps);
        if let (Some((mean, var)), Some(updates)) = (stats, updates) {
            updates.push(BnUpdate {
                mean_param: self.running_mean,
                var_param: self.running_var,
                mean,
                var,
                momentum: self.momentum,
            });
        }
        y
    }
}

/// Pending running-statistics update from one training forward pass.
pub struct BnUpdate<F: Scalar> {
    pub mean_param: ParamId,
    pub var_param: ParamId,
    pub mean: crate::tensor::Tensor<F>,
    pub var: crate::tensor::Tensor<F>,
    pub momentum: f64,
}

impl<F: Scalar> BnUpdate<F> {
    pub fn apply(self, ps: &mut ParamStore<F>) {
        let mom = sc::<F>(self.momentum);
        let keep = F::one() - mom;
        let rm = ps.value_mut(self.mean_param);
        *rm = rm.mapv(|v| v * keep) + &self.mean.mapv(|v| v * mom);
        let rv = ps.value_mut(self.var_param);
        *rv = rv.mapv(|v| v * keep) + &self.var.mapv(|v| v * mom);
    }
}
