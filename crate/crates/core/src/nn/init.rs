use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::{sc, Scalar, Tensor};

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Initializer {
    Zeros,
    Ones,
    /// He normal: `N(0, sqrt(2 / fan_in))`, the default for conv+relu stacks.
    KaimingNormal,
    /// Xavier/Glorot uniform, used for linear heads.
    XavierUniform,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

impl Initializer {
    pub fn sample<F: Scalar, R: Rng>(
        &self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Tensor<F> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match self {
            Initializer::Zeros => vec![0.0; n],
            Initializer::Ones => vec![1.0; n],
            Initializer::KaimingNormal => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("normal params");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Initializer::XavierUniform => {
                let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("uniform params");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Initializer::Uniform(bound) => {
                let dist = Uniform::new_inclusive(-bound, *bound).expect("uniform params");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        };
        ArrayD::from_shape_vec(IxDyn(shape), values.into_iter().map(sc::<F>).collect())
            .expect("init shape")
    }
}
