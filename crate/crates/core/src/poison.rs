//! Poisoned training set construction and trigger audits.
//!
//! A poisoned set is the union of a modified subset (images replaced by
//! trigger-carrying versions, labels forced to the target) and the untouched
//! remainder. Trigger extraction follows the convention that the trigger
//! contained in a sample is the additive residual for stego poisoning and
//! the (fixed) stamped/blended pattern for patch baselines.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Message, StegoCodec};
use crate::data::{LabeledImageSet, Sample};
use crate::{Error, Result};

/// How poisoned images are produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TriggerKind {
    /// Sample-specific additive residual from the stego encoder.
    Stego { message: Message },
    /// Fixed patch stamped or alpha-blended at a corner.
    Patch(PatchSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Patch side length in pixels.
    pub size: usize,
    /// Blend weight: 1.0 stamps the patch, smaller values alpha-blend it
    /// (the classic blended attack uses 0.1).
    pub alpha: f64,
}

impl PatchSpec {
    pub fn badnets(size: usize) -> Self {
        PatchSpec { size, alpha: 1.0 }
    }

    pub fn blended(size: usize) -> Self {
        PatchSpec { size, alpha: 0.1 }
    }

    /// White square with a dark cross-line, bottom-right corner.
    /// Returns (mask, pattern) canvases of the full image shape.
    fn render(&self, shape: crate::data::ImageShape) -> Result<(Array3<f64>, Array3<f64>)> {
        let (c, h, w) = (shape.c, shape.h, shape.w);
        if self.size > h || self.size > w {
            return Err(Error::InvalidArgument(format!(
                "patch size {} exceeds image {}x{}",
                self.size, w, h
            )));
        }
        let mut mask = Array3::<f64>::zeros((c, h, w));
        let mut pattern = Array3::<f64>::zeros((c, h, w));
        let (y0, x0) = (h - self.size, w - self.size);
        for ci in 0..c {
            for dy in 0..self.size {
                for dx in 0..self.size {
                    let on_cross = dy == dx || dy + dx + 1 == self.size;
                    mask[[ci, y0 + dy, x0 + dx]] = self.alpha;
                    pattern[[ci, y0 + dy, x0 + dx]] = if on_cross { 0.0 } else { 255.0 };
                }
            }
        }
        Ok((mask, pattern))
    }
}

/// The poisoning recipe: rate, target, trigger and the selected samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub gamma: f64,
    pub target_label: u32,
    pub trigger: TriggerKind,
    pub selected_ids: Vec<String>,
    pub seed: u64,
    /// When true, samples whose ground truth already equals the target are
    /// not selected for modification.
    pub exclude_target_class: bool,
}

/// A poisoned training split plus its plan and per-sample flags.
pub struct PoisonedSet {
    pub dataset: LabeledImageSet,
    pub plan: PoisonPlan,
    /// Aligned with `dataset.samples`.
    pub poisoned_flags: Vec<bool>,
}

impl PoisonedSet {
    pub fn n_poisoned(&self) -> usize {
        self.poisoned_flags.iter().filter(|&&f| f).count()
    }
}

/// Number of samples to modify: `round(gamma * n)`, ties to even.
pub fn poison_count(gamma: f64, n: usize) -> usize {
    (gamma * n as f64).round_ties_even() as usize
}

fn select_indices(
    benign: &LabeledImageSet,
    gamma: f64,
    target_label: u32,
    exclude_target_class: bool,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "poisoning rate must be in [0,1], got {gamma}"
        )));
    }
    if (target_label as usize) >= benign.k {
        return Err(Error::InvalidArgument(format!(
            "target label {target_label} outside [0,{})",
            benign.k
        )));
    }
    let count = poison_count(gamma, benign.n());
    let mut pool: Vec<usize> = (0..benign.n())
        .filter(|&i| !exclude_target_class || benign.samples[i].label != target_label)
        .collect();
    if count > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot poison {count} of {} eligible samples",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut chosen: Vec<usize> = pool.into_iter().take(count).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Construct the poisoned set by encoding the attack message into a
/// gamma-fraction of samples and relabeling them to the target.
pub fn poison(
    benign_train: &LabeledImageSet,
    codec: &StegoCodec,
    gamma: f64,
    target_label: u32,
    message: &Message,
    seed: u64,
    exclude_target_class: bool,
) -> Result<PoisonedSet> {
    if codec.image_shape() != benign_train.shape {
        return Err(Error::shape(format!(
            "codec expects {}, dataset is {}",
            codec.image_shape(),
            benign_train.shape
        )));
    }
    if message.len() != codec.l_msg() {
        return Err(Error::InvalidArgument(format!(
            "message length {} != codec L_msg {}",
            message.len(),
            codec.l_msg()
        )));
    }
    let chosen = select_indices(benign_train, gamma, target_label, exclude_target_class, seed)?;
    let chosen_set: std::collections::HashSet<usize> = chosen.iter().copied().collect();

    let encoded: Vec<(usize, Array3<u8>)> = chosen
        .par_iter()
        .map(|&i| -> Result<(usize, Array3<u8>)> {
            let px = codec.encode(&benign_train.samples[i].pixels, message)?;
            Ok((i, px))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut replacement: std::collections::HashMap<usize, Array3<u8>> =
        encoded.into_iter().collect();

    let mut samples = Vec::with_capacity(benign_train.n());
    let mut flags = Vec::with_capacity(benign_train.n());
    for (i, s) in benign_train.samples.iter().enumerate() {
        if chosen_set.contains(&i) {
            samples.push(Sample {
                id: s.id.clone(),
                label: target_label,
                pixels: replacement.remove(&i).expect("encoded"),
            });
            flags.push(true);
        } else {
            samples.push(s.clone());
            flags.push(false);
        }
    }

    let plan = PoisonPlan {
        gamma,
        target_label,
        trigger: TriggerKind::Stego {
            message: message.clone(),
        },
        selected_ids: chosen
            .iter()
            .map(|&i| benign_train.samples[i].id.clone())
            .collect(),
        seed,
        exclude_target_class,
    };
    Ok(PoisonedSet {
        dataset: LabeledImageSet {
            name: format!("{}-poisoned", benign_train.name),
            k: benign_train.k,
            split: benign_train.split,
            shape: benign_train.shape,
            samples,
        },
        plan,
        poisoned_flags: flags,
    })
}

/// Fixed-patch baseline (stamped or blended) with the same plan mechanics.
pub fn make_badnets_baseline(
    benign_train: &LabeledImageSet,
    gamma: f64,
    target_label: u32,
    patch: PatchSpec,
    seed: u64,
    exclude_target_class: bool,
) -> Result<PoisonedSet> {
    let (mask, pattern) = patch.render(benign_train.shape)?;
    let chosen = select_indices(benign_train, gamma, target_label, exclude_target_class, seed)?;
    let chosen_set: std::collections::HashSet<usize> = chosen.iter().copied().collect();

    let mut samples = Vec::with_capacity(benign_train.n());
    let mut flags = Vec::with_capacity(benign_train.n());
    for (i, s) in benign_train.samples.iter().enumerate() {
        if chosen_set.contains(&i) {
            samples.push(Sample {
                id: s.id.clone(),
                label: target_label,
                pixels: apply_patch(&s.pixels, &mask, &pattern),
            });
            flags.push(true);
        } else {
            samples.push(s.clone());
            flags.push(false);
        }
    }
    let plan = PoisonPlan {
        gamma,
        target_label,
        trigger: TriggerKind::Patch(patch),
        selected_ids: chosen
            .iter()
            .map(|&i| benign_train.samples[i].id.clone())
            .collect(),
        seed,
        exclude_target_class,
    };
    Ok(PoisonedSet {
        dataset: LabeledImageSet {
            name: format!("{}-patched", benign_train.name),
            k: benign_train.k,
            split: benign_train.split,
            shape: benign_train.shape,
            samples,
        },
        plan,
        poisoned_flags: flags,
    })
}

/// `(1-mask)*x + mask*pattern`, rounded back to `u8`.
pub fn apply_patch(pixels: &Array3<u8>, mask: &Array3<f64>, pattern: &Array3<f64>) -> Array3<u8> {
    let mut out = pixels.clone();
    ndarray::Zip::from(&mut out)
        .and(mask)
        .and(pattern)
        .for_each(|o, &m, &p| {
            if m > 0.0 {
                let v = (1.0 - m) * (*o as f64) + m * p;
                *o = v.round().clamp(0.0, 255.0) as u8;
            }
        });
    out
}

/// Signed elementwise residual `poisoned - benign`.
pub fn extract_trigger(poisoned: &Array3<u8>, benign: &Array3<u8>) -> Result<Array3<i16>> {
    if poisoned.dim() != benign.dim() {
        return Err(Error::shape(format!(
            "trigger extraction: {:?} vs {:?}",
            poisoned.dim(),
            benign.dim()
        )));
    }
    let mut out = Array3::<i16>::zeros(poisoned.dim());
    ndarray::Zip::from(&mut out)
        .and(poisoned)
        .and(benign)
        .for_each(|t, &p, &b| *t = p as i16 - b as i16);
    Ok(out)
}

/// Result of a sample-specificity audit over random poisoned pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecificityReport {
    pub n_pairs: usize,
    /// Fraction of pairs whose triggers differ (exact tensor inequality).
    pub distinct_fraction: f64,
    /// Minimum l-infinity distance between the two triggers of a pair.
    pub min_pair_distance: f64,
}

/// Sample `n_pairs` random pairs of poisoned samples and compare their
/// triggers. The trigger of a stego sample is its residual against the
/// benign original; the trigger of a patch sample is the fixed
/// mask-weighted pattern.
pub fn audit_sample_specificity(
    poisoned: &PoisonedSet,
    benign: &LabeledImageSet,
    n_pairs: usize,
    seed: u64,
) -> Result<SpecificityReport> {
    let poisoned_idx: Vec<usize> = poisoned
        .poisoned_flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect();
    if poisoned_idx.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "specificity audit needs at least 2 poisoned samples, got {}",
            poisoned_idx.len()
        )));
    }
    if benign.n() != poisoned.dataset.n() {
        return Err(Error::shape(
            "benign set does not align with poisoned set".into(),
        ));
    }

    let trigger_of = |i: usize| -> Result<Array3<i16>> {
        match &poisoned.plan.trigger {
            TriggerKind::Stego { .. } => extract_trigger(
                &poisoned.dataset.samples[i].pixels,
                &benign.samples[i].pixels,
            ),
            TriggerKind::Patch(spec) => {
                // the visible trigger is the mask-weighted pattern itself
                let (mask, pattern) = spec.render(benign.shape)?;
                let mut t = Array3::<i16>::zeros(pattern.dim());
                ndarray::Zip::from(&mut t)
                    .and(&mask)
                    .and(&pattern)
                    .for_each(|o, &m, &p| *o = (m * p).round() as i16);
                Ok(t)
            }
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut distinct = 0usize;
    let mut min_dist = f64::INFINITY;
    for _ in 0..n_pairs {
        let a = poisoned_idx[rng.random_range(0..poisoned_idx.len())];
        let b = loop {
            let b = poisoned_idx[rng.random_range(0..poisoned_idx.len())];
            if b != a {
                break b;
            }
        };
        let ta = trigger_of(a)?;
        let tb = trigger_of(b)?;
        if ta != tb {
            distinct += 1;
        }
        let dist = ta
            .iter()
            .zip(tb.iter())
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .fold(0.0, f64::max);
        min_dist = min_dist.min(dist);
    }
    Ok(SpecificityReport {
        n_pairs,
        distinct_fraction: distinct as f64 / n_pairs as f64,
        min_pair_distance: min_dist,
    })
}

/// Build evaluation inputs: encode every test sample whose ground truth is
/// not the target label. Returns the poisoned images and their originals.
pub fn encode_test_inputs(
    test: &LabeledImageSet,
    codec: &StegoCodec,
    message: &Message,
    target_label: u32,
    limit: Option<usize>,
) -> Result<Vec<(Array3<u8>, Array3<u8>)>> {
    let idx: Vec<usize> = test
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| (s.label != target_label).then_some(i))
        .take(limit.unwrap_or(usize::MAX))
        .collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument(
            "no eligible test samples (all carry the target label)".into(),
        ));
    }
    idx.par_iter()
        .map(|&i| -> Result<(Array3<u8>, Array3<u8>)> {
            let benign = benign_pixels(test, i);
            let enc = codec.encode(&benign, message)?;
            Ok((enc, benign))
        })
        .collect()
}

/// Same, for the patch baselines.
pub fn patch_test_inputs(
    test: &LabeledImageSet,
    patch: &PatchSpec,
    target_label: u32,
    limit: Option<usize>,
) -> Result<Vec<(Array3<u8>, Array3<u8>)>> {
    let (mask, pattern) = patch.render(test.shape)?;
    let out: Vec<(Array3<u8>, Array3<u8>)> = test
        .samples
        .iter()
        .filter(|s| s.label != target_label)
        .take(limit.unwrap_or(usize::MAX))
        .map(|s| (apply_patch(&s.pixels, &mask, &pattern), s.pixels.clone()))
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidArgument(
            "no eligible test samples (all carry the target label)".into(),
        ));
    }
    Ok(out)
}

fn benign_pixels(set: &LabeledImageSet, i: usize) -> Array3<u8> {
    set.samples[i].pixels.clone()
}
