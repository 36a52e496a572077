//! Scalar evaluation quantities: attack success rate, benign accuracy,
//! PSNR, l-infinity, prediction entropy, and the MAD-based anomaly index.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Neural-Cleanse style convention: an anomaly index above this flags a
/// backdoor (calibrated on the planted-patch baseline).
pub const ANOMALY_FLAG_THRESHOLD: f64 = 2.0;

/// Effectiveness summary of one attacked model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackEvalResult {
    pub ba: f64,
    pub asr: f64,
    pub n_benign: usize,
    pub n_poisoned: usize,
    /// Per-class benign accuracy as `(class, total, correct)`.
    pub per_class: Vec<(usize, usize, usize)>,
}

/// Stealthiness summary over poisoned/benign image pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StealthResult {
    pub mean_psnr: f64,
    pub mean_linf: f64,
    pub max_linf: f64,
    pub per_sample_psnr: Vec<f64>,
    pub per_sample_linf: Vec<f64>,
}

/// Fraction of predictions equal to the target label.
pub fn asr(predictions: &[usize], target_label: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("asr over empty set".into()));
    }
    let hits = predictions.iter().filter(|&&p| p == target_label).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Top-1 accuracy.
pub fn benign_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("accuracy over empty set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Peak signal-to-noise ratio between two `u8` images, in dB, capped at
/// 100 dB for identical inputs.
pub fn psnr(a: &Array3<u8>, b: &Array3<u8>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "psnr: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let n = a.len() as f64;
    let mse: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * (255.0_f64 * 255.0 / mse).log10()).min(100.0))
}

/// Maximum absolute pixel difference.
pub fn linf(a: &Array3<u8>, b: &Array3<u8>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "linf: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max))
}

/// PSNR/l-infinity summary over pairs of (modified, original) images.
pub fn stealth(pairs: &[(Array3<u8>, Array3<u8>)]) -> Result<StealthResult> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("stealth over empty set".into()));
    }
    let mut per_sample_psnr = Vec::with_capacity(pairs.len());
    let mut per_sample_linf = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        per_sample_psnr.push(psnr(a, b)?);
        per_sample_linf.push(linf(a, b)?);
    }
    let n = pairs.len() as f64;
    Ok(StealthResult {
        mean_psnr: per_sample_psnr.iter().sum::<f64>() / n,
        mean_linf: per_sample_linf.iter().sum::<f64>() / n,
        max_linf: per_sample_linf.iter().copied().fold(0.0, f64::max),
        per_sample_psnr,
        per_sample_linf,
    })
}

/// Shannon entropy in bits of each probability row, with `0·log 0 = 0`.
pub fn prediction_entropy(probs: &Array2<f64>) -> Result<(Vec<f64>, f64)> {
    if probs.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidArgument(
            "negative probability in entropy input".into(),
        ));
    }
    let per_sample: Vec<f64> = probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.log2())
                .sum()
        })
        .collect();
    if per_sample.is_empty() {
        return Err(Error::InvalidArgument("entropy over empty set".into()));
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((per_sample, mean))
}

/// MAD-normalized outlier score of the minimum value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnomalyIndex {
    pub value: f64,
    /// True when MAD collapsed to zero and the value is a convention.
    pub degenerate: bool,
}

impl AnomalyIndex {
    pub fn flags_backdoor(&self) -> bool {
        self.value > ANOMALY_FLAG_THRESHOLD
    }
}

/// `|min - median| / (1.4826 * MAD)` with `MAD = median(|v - median|)`.
///
/// Degenerate `MAD = 0`: index 0 when `min == median`, infinity otherwise.
pub fn anomaly_index(values: &[f64]) -> Result<AnomalyIndex> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "anomaly index needs at least 3 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "anomaly index values must be finite and nonnegative".into(),
        ));
    }
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&deviations);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if mad == 0.0 {
        return Ok(AnomalyIndex {
            value: if min == med { 0.0 } else { f64::INFINITY },
            degenerate: true,
        });
    }
    Ok(AnomalyIndex {
        value: (min - med).abs() / (1.4826 * mad),
        degenerate: false,
    })
}

/// Median with the even-length average convention.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    let n = values.len() as f64;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Welch z statistic for the one-sided hypothesis `mean(a) > mean(b)`.
pub fn welch_z(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (std_dev(a).powi(2), std_dev(b).powi(2));
    (ma - mb) / (va / a.len() as f64 + vb / b.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array3};

    fn img(fill: u8) -> Array3<u8> {
        Array3::from_elem((3, 4, 4), fill)
    }

    #[test]
    fn psnr_identical_is_capped() {
        assert_eq!(psnr(&img(7), &img(7)).unwrap(), 100.0);
    }

    #[test]
    fn psnr_all_ones_difference() {
        let got = psnr(&img(100), &img(101)).unwrap();
        assert!((got - 48.1308).abs() < 1e-3, "got {got}");
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let p1 = psnr(&img(100), &img(101)).unwrap();
        let p2 = psnr(&img(100), &img(103)).unwrap();
        let p3 = psnr(&img(100), &img(110)).unwrap();
        assert!(p1 > p2 && p2 > p3);
    }

    #[test]
    fn linf_basics() {
        assert_eq!(linf(&img(9), &img(9)).unwrap(), 0.0);
        let mut b = img(9);
        b[[1, 2, 3]] = 14;
        assert_eq!(linf(&img(9), &b).unwrap(), 5.0);
        assert!(linf(&img(0), &Array3::from_elem((3, 2, 2), 0u8)).is_err());
    }

    #[test]
    fn linf_triangle_inequality() {
        let a = img(10);
        let mut b = img(10);
        b[[0, 0, 0]] = 40;
        let mut c = img(10);
        c[[0, 0, 0]] = 90;
        c[[2, 3, 3]] = 0;
        let ab = linf(&a, &b).unwrap();
        let bc = linf(&b, &c).unwrap();
        let ac = linf(&a, &c).unwrap();
        assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn entropy_reference_values() {
        let uniform = arr2(&[[0.1; 10]]);
        let (_, mean) = prediction_entropy(&uniform).unwrap();
        assert!((mean - 3.3219).abs() < 1e-4, "got {mean}");

        let onehot = arr2(&[[1.0, 0.0, 0.0]]);
        let (per, _) = prediction_entropy(&onehot).unwrap();
        assert_eq!(per[0], 0.0);

        let half = arr2(&[[0.5, 0.5, 0.0, 0.0]]);
        let (per, _) = prediction_entropy(&half).unwrap();
        assert!((per[0] - 1.0).abs() < 1e-12);

        assert!(prediction_entropy(&arr2(&[[-0.1, 1.1]])).is_err());
    }

    #[test]
    fn entropy_permutation_invariant_and_maximal_at_uniform() {
        let p = arr2(&[[0.7, 0.2, 0.1]]);
        let q = arr2(&[[0.1, 0.7, 0.2]]);
        let (hp, _) = prediction_entropy(&p).unwrap();
        let (hq, _) = prediction_entropy(&q).unwrap();
        assert!((hp[0] - hq[0]).abs() < 1e-12);
        let u = arr2(&[[1.0 / 3.0; 3]]);
        let (hu, _) = prediction_entropy(&u).unwrap();
        assert!(hu[0] > hp[0]);
    }

    #[test]
    fn anomaly_index_hand_example() {
        // median 2.5, MAD 1.5, index 2.4 / (1.4826 * 1.5)
        let got = anomaly_index(&[0.1, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(!got.degenerate);
        assert!((got.value - 1.0792).abs() < 1e-3, "got {}", got.value);
    }

    #[test]
    fn anomaly_index_degenerate_and_scale_invariance() {
        let equal = anomaly_index(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert!(equal.degenerate);
        assert_eq!(equal.value, 0.0);

        let base = anomaly_index(&[0.5, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let scaled = anomaly_index(&[1.5, 9.0, 12.0, 15.0, 18.0]).unwrap();
        assert!((base.value - scaled.value).abs() < 1e-12);

        assert!(anomaly_index(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn counting_metrics_exact() {
        assert_eq!(asr(&[0, 0, 0, 0], 0).unwrap(), 1.0);
        assert_eq!(asr(&[1, 2, 3, 4], 0).unwrap(), 0.0);
        assert_eq!(asr(&[0, 1, 0, 1], 0).unwrap(), 0.5);
        assert!(asr(&[], 0).is_err());

        let preds = vec![0, 1, 2, 2];
        let labels = vec![0, 1, 1, 2];
        assert_eq!(benign_accuracy(&preds, &labels).unwrap(), 0.75);
        assert!(benign_accuracy(&[], &[]).is_err());

        // asr + fraction-not-target == 1 exactly
        let preds = vec![3, 0, 3, 1, 3];
        let a = asr(&preds, 3).unwrap();
        let not = preds.iter().filter(|&&p| p != 3).count() as f64 / preds.len() as f64;
        assert_eq!(a + not, 1.0);
    }
}
