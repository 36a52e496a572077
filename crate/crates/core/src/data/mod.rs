//! Dataset types and the on-disk artifact store.

mod ingest;
mod store;
pub mod synth;

pub use ingest::{ingest_directory, IngestConfig, IngestOutcome};
pub use store::{content_hash, ArtifactKind, ArtifactRecord, ArtifactStore};

use ndarray::{Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::tensor::{sc, Scalar};
use crate::{Error, Result};

/// Per-sample image layout: channels × width × height, stored as `[C,H,W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub c: usize,
    pub w: usize,
    pub h: usize,
}

impl ImageShape {
    pub fn new(c: usize, w: usize, h: usize) -> Self {
        ImageShape { c, w, h }
    }

    pub fn pixels_per_image(&self) -> usize {
        self.c * self.w * self.h
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.w, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One labeled image; pixels are `[C,H,W]` `u8`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub label: u32,
    pub pixels: Array3<u8>,
}

/// One split of a labeled image dataset.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    pub name: String,
    pub k: usize,
    pub split: Split,
    pub shape: ImageShape,
    pub samples: Vec<Sample>,
}

impl LabeledImageSet {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Enforce the structural invariants: K ≥ 2, labels in range, uniform
    /// shapes, unique ids.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Dataset(format!(
                "{}: class count must be at least 2, got {}",
                self.name, self.k
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.label as usize >= self.k {
                return Err(Error::Dataset(format!(
                    "{}: sample {} has label {} outside [0, {})",
                    self.name, s.id, s.label, self.k
                )));
            }
            let dims = s.pixels.dim();
            if dims != (self.shape.c, self.shape.h, self.shape.w) {
                return Err(Error::Dataset(format!(
                    "{}: sample {} has shape {:?}, expected {}",
                    self.name, s.id, dims, self.shape
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Dataset(format!(
                    "{}: duplicate sample id {} in split {}",
                    self.name, s.id, self.split
                )));
            }
        }
        Ok(())
    }

    /// Float batch `[N,C,H,W]` scaled to `[0,1]`, in index order.
    pub fn to_batch<F: Scalar>(&self, indices: &[usize]) -> ArrayD<F> {
        batch_from_samples(&self.samples, indices, self.shape)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label as usize).collect()
    }
}

/// Train and test splits bundled as one stored artifact.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub k: usize,
    pub shape: ImageShape,
    pub train: LabeledImageSet,
    pub test: LabeledImageSet,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.test.validate()?;
        if self.train.k != self.k || self.test.k != self.k {
            return Err(Error::Dataset(format!(
                "{}: split class counts disagree with dataset",
                self.name
            )));
        }
        Ok(())
    }
}

/// Convert selected samples to a float batch `[N,C,H,W]` in `[0,1]`.
pub fn batch_from_samples<F: Scalar>(
    samples: &[Sample],
    indices: &[usize],
    shape: ImageShape,
) -> ArrayD<F> {
    let inv = sc::<F>(1.0 / 255.0);
    let mut out = ArrayD::<F>::zeros(IxDyn(&[indices.len(), shape.c, shape.h, shape.w]));
    for (row, &idx) in indices.iter().enumerate() {
        let px = &samples[idx].pixels;
        for c in 0..shape.c {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    out[[row, c, y, x]] = sc::<F>(px[[c, y, x]] as f64) * inv;
                }
            }
        }
    }
    out
}

/// Convert one image to a `[1,C,H,W]` float batch in `[0,1]`.
pub fn image_to_batch<F: Scalar>(pixels: &Array3<u8>) -> ArrayD<F> {
    let (c, h, w) = pixels.dim();
    let inv = sc::<F>(1.0 / 255.0);
    let mut out = ArrayD::<F>::zeros(IxDyn(&[1, c, h, w]));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[0, ci, y, x]] = sc::<F>(pixels[[ci, y, x]] as f64) * inv;
            }
        }
    }
    out
}

/// Quantize a float batch in `[0,1]` back to `u8` images.
pub fn batch_to_images<F: Scalar>(batch: &ArrayD<F>) -> Vec<Array3<u8>> {
    let b4 = batch
        .view()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("batch rank");
    let (n, c, h, w) = b4.dim();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut img = Array3::<u8>::zeros((c, h, w));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = crate::tensor::fs(b4[[i, ci, y, x]]) * 255.0;
                    img[[ci, y, x]] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        out.push(img);
    }
    out
}

#[cfg(test)]
mod tests;
