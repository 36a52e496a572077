//! Victim classifier: training, prediction, and named-layer introspection.

mod arch;
mod train;

pub use arch::{Architecture, Trace, LAST_CONV, PENULTIMATE};
pub use train::{train_victim, EpochLog, TrainedVictim, VictimTrainConfig};

use std::path::Path;

use ndarray::{Array2, ArrayD, Axis, Ix2};
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::nn::{load_params, save_params, ParamStore};
use crate::tensor::Graph;
use crate::{Error, Result};

use arch::VictimNet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub architecture: Architecture,
    pub k: usize,
    pub image_shape: ImageShape,
    pub build_seed: u64,
    pub train_config: Option<serde_json::Value>,
    pub dataset_artifact: Option<String>,
    pub final_train_loss: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    /// Channel keep-mask on the registered last conv layer (pruned clones).
    pub prune_mask: Option<Vec<bool>>,
}

/// A trained classifier with named-layer activation and gradient access.
pub struct VictimModel {
    pub params: ParamStore<f32>,
    pub meta: ModelMeta,
    net: VictimNet,
}

/// Prediction batches are chunked to bound peak memory.
const PREDICT_CHUNK: usize = 256;

impl VictimModel {
    pub(crate) fn from_parts(params: ParamStore<f32>, meta: ModelMeta, net: VictimNet) -> Self {
        VictimModel { params, meta, net }
    }

    /// Fresh, untrained model.
    pub fn build(arch: Architecture, k: usize, shape: ImageShape, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let net = VictimNet::build(arch, k, shape, &mut params, seed);
        VictimModel {
            params,
            meta: ModelMeta {
                architecture: arch,
                k,
                image_shape: shape,
                build_seed: seed,
                train_config: None,
                dataset_artifact: None,
                final_train_loss: None,
                final_test_accuracy: None,
                prune_mask: None,
            },
            net,
        }
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    pub fn image_shape(&self) -> ImageShape {
        self.meta.image_shape
    }

    fn check_batch(&self, images: &ArrayD<f32>) -> Result<()> {
        let s = self.meta.image_shape;
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != s.c || shape[2] != s.h || shape[3] != s.w {
            return Err(Error::shape(format!(
                "batch shape {shape:?} does not match model input {s}"
            )));
        }
        Ok(())
    }

    /// Forward pass building a fresh graph; exposed for defenses that need
    /// gradients of logits w.r.t. named activations.
    pub fn forward_trace(
        &self,
        g: &mut Graph<f32>,
        images: &ArrayD<f32>,
        training: bool,
    ) -> Result<Trace> {
        self.check_batch(images)?;
        let x = g.constant(images.clone());
        Ok(self.net.forward(
            g,
            &self.params,
            x,
            training,
            None,
            self.meta.prune_mask.as_deref(),
        ))
    }

    pub(crate) fn forward_node(
        &self,
        g: &mut Graph<f32>,
        x: crate::tensor::NodeId,
        training: bool,
    ) -> Trace {
        self.net.forward(
            g,
            &self.params,
            x,
            training,
            None,
            self.meta.prune_mask.as_deref(),
        )
    }

    /// Raw logits `[B,K]` in eval mode.
    pub fn logits(&self, images: &ArrayD<f32>) -> Result<Array2<f32>> {
        self.check_batch(images)?;
        let n = images.shape()[0];
        let mut out = Array2::<f32>::zeros((n, self.meta.k));
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(n);
            let chunk = images
                .slice_axis(Axis(0), ndarray::Slice::from(start..end))
                .to_owned();
            let mut g = Graph::<f32>::new();
            let trace = self.forward_trace(&mut g, &chunk, false)?;
            let logits = g
                .value(trace.logits)
                .view()
                .into_dimensionality::<Ix2>()
                .expect("logits rank");
            out.slice_axis_mut(Axis(0), ndarray::Slice::from(start..end))
                .assign(&logits);
        }
        Ok(out)
    }

    /// Softmax probabilities `[B,K]`; rows sum to 1.
    pub fn predict(&self, images: &ArrayD<f32>) -> Result<Array2<f32>> {
        let mut logits = self.logits(images)?;
        for mut row in logits.axis_iter_mut(Axis(0)) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(logits)
    }

    pub fn predict_labels(&self, images: &ArrayD<f32>) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("nonempty row")
            })
            .collect())
    }

    /// Names of every registered layer, in forward order.
    pub fn layer_names(&self) -> Result<Vec<String>> {
        let s = self.meta.image_shape;
        let dummy = ArrayD::<f32>::zeros(ndarray::IxDyn(&[1, s.c, s.h, s.w]));
        let mut g = Graph::<f32>::new();
        let trace = self.forward_trace(&mut g, &dummy, false)?;
        Ok(trace.named.into_iter().map(|(n, _)| n).collect())
    }

    /// Activation tensor of a registered layer in eval mode.
    pub fn activations(&self, images: &ArrayD<f32>, layer: &str) -> Result<ArrayD<f32>> {
        self.check_batch(images)?;
        let n = images.shape()[0];
        let mut pieces: Vec<ArrayD<f32>> = Vec::new();
        for start in (0..n).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(n);
            let chunk = images
                .slice_axis(Axis(0), ndarray::Slice::from(start..end))
                .to_owned();
            let mut g = Graph::<f32>::new();
            let trace = self.forward_trace(&mut g, &chunk, false)?;
            let node = trace
                .node(layer)
                .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
            pieces.push(g.value(node).clone());
        }
        let views: Vec<_> = pieces.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::shape(format!("activation concat: {e}")))
    }

    /// Channel count of the registered last conv layer.
    pub fn last_conv_channels(&self) -> usize {
        self.net.last_conv_channels()
    }

    /// Clone with a channel keep-mask on the last conv layer (for pruning).
    pub fn with_prune_mask(&self, mask: Vec<bool>) -> Result<VictimModel> {
        if mask.len() != self.last_conv_channels() {
            return Err(Error::InvalidArgument(format!(
                "prune mask has {} entries, layer has {} channels",
                mask.len(),
                self.last_conv_channels()
            )));
        }
        let mut clone = self.clone_model();
        clone.meta.prune_mask = Some(mask);
        Ok(clone)
    }

    /// Deep copy (parameters and metadata).
    pub fn clone_model(&self) -> VictimModel {
        let mut params = ParamStore::new();
        let net = VictimNet::build(
            self.meta.architecture,
            self.meta.k,
            self.meta.image_shape,
            &mut params,
            self.meta.build_seed,
        );
        crate::nn::adopt_values(&mut params, &self.params).expect("param layout matches");
        VictimModel {
            params,
            meta: self.meta.clone(),
            net,
        }
    }

    /// Persist as `<dir>/params` + `<dir>/model.meta`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_params(&self.params, &dir.join("params"))?;
        let meta = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(dir.join("model.meta"), meta)
            .map_err(|e| Error::io(dir.join("model.meta"), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<VictimModel> {
        let meta_path = dir.join("model.meta");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        let loaded = load_params::<f32>(&dir.join("params"))?;
        let mut params = ParamStore::new();
        let net = VictimNet::build(
            meta.architecture,
            meta.k,
            meta.image_shape,
            &mut params,
            meta.build_seed,
        );
        crate::nn::adopt_values(&mut params, &loaded)?;
        Ok(VictimModel { params, meta, net })
    }
}

#[cfg(test)]
mod tests;
