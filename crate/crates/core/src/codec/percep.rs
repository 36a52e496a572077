//! Perceptual distance between images.
//!
//! The reference perceptual metric in the training objective is a learned
//! feature distance; at 32×32 a full pretrained network is out of proportion,
//! so the default extractor is a fixed multi-scale filter bank
//! (blur/edge/Laplacian responses at two scales). The extractor is a trait so
//! a heavier feature network can be plugged in for larger images.

use ndarray::{ArrayD, IxDyn};

use crate::tensor::{sc, Graph, NodeId, Scalar};

pub trait PerceptualFeatures<F: Scalar> {
    /// Scalar perceptual distance node between two `[B,C,H,W]` batches.
    fn distance(&self, g: &mut Graph<F>, a: NodeId, b: NodeId) -> NodeId;
}

/// Fixed 3×3 filter bank applied at full and half resolution.
pub struct FilterBankPerceptual {
    channels: usize,
}

const KERNELS: [[f64; 9]; 4] = [
    // gaussian blur
    [
        1. / 16.,
        2. / 16.,
        1. / 16.,
        2. / 16.,
        4. / 16.,
        2. / 16.,
        1. / 16.,
        2. / 16.,
        1. / 16.,
    ],
    // sobel x
    [-1., 0., 1., -2., 0., 2., -1., 0., 1.],
    // sobel y
    [-1., -2., -1., 0., 0., 0., 1., 2., 1.],
    // laplacian
    [0., 1., 0., 1., -4., 1., 0., 1., 0.],
];

impl FilterBankPerceptual {
    pub fn new(channels: usize) -> Self {
        FilterBankPerceptual { channels }
    }

    fn weights<F: Scalar>(&self) -> ArrayD<F> {
        let c = self.channels;
        let mut w = ArrayD::<F>::zeros(IxDyn(&[KERNELS.len(), c, 3, 3]));
        for (f, k) in KERNELS.iter().enumerate() {
            for ci in 0..c {
                for i in 0..3 {
                    for j in 0..3 {
                        w[[f, ci, i, j]] = sc::<F>(k[i * 3 + j] / c as f64);
                    }
                }
            }
        }
        w
    }
}

impl<F: Scalar> PerceptualFeatures<F> for FilterBankPerceptual {
    fn distance(&self, g: &mut Graph<F>, a: NodeId, b: NodeId) -> NodeId {
        let w = g.constant(self.weights::<F>());
        let fa0 = g.conv2d(a, w, None, 1, 1);
        let fb0 = g.conv2d(b, w, None, 1, 1);
        let d0 = g.mse(fa0, fb0);

        let a1 = g.avg_pool2(a);
        let b1 = g.avg_pool2(b);
        let fa1 = g.conv2d(a1, w, None, 1, 1);
        let fb1 = g.conv2d(b1, w, None, 1, 1);
        let d1 = g.mse(fa1, fb1);

        g.weighted_sum(&[(d0, 0.5), (d1, 0.5)])
    }
}
