//! Estimation, selection, and prediction metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// `sum |est - truth| / sum |truth|`.
pub fn relative_error(est: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    est.check_same_dims(truth)?;
    let denom: f64 = truth.data().iter().map(|v| v.abs()).sum();
    if denom == 0.0 {
        return Err(Error::Undefined("relative error of an all-zero truth".into()));
    }
    let num: f64 = est.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(num / denom)
}

pub fn rmse(est: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    est.check_same_dims(truth)?;
    let ss: f64 = est.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Pearson correlation over cells; undefined when either side is constant.
pub fn correlation(est: &DenseTensor, truth: &DenseTensor) -> Result<f64> {
    est.check_same_dims(truth)?;
    let n = est.len() as f64;
    let (a, b) = (est.data(), truth.data());
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation with a constant tensor".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Confusion counts and derived rates. A rate whose denominator is zero is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
}

/// Positives are the nonzero truth cells.
pub fn selection_metrics(selected: &[bool], truth_support: &[bool]) -> Result<SelectionMetrics> {
    if selected.len() != truth_support.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![truth_support.len()],
            actual: vec![selected.len()],
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in selected.iter().zip(truth_support) {
        match (s, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let (tpf, fpf, tnf, fnf) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let mcc_den = ((tpf + fpf) * (tpf + fnf) * (tnf + fpf) * (tnf + fnf)).sqrt();
    Ok(SelectionMetrics {
        tp,
        fp,
        tn,
        fn_,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        mcc: (mcc_den > 0.0).then(|| (tpf * tnf - fpf * fnf) / mcc_den),
    })
}

/// Pinball loss: `q |y - q_hat|` above the prediction, `(1 - q) |y - q_hat|` otherwise.
pub fn check_loss(y: f64, q_hat: f64, q: f64) -> f64 {
    let d = (y - q_hat).abs();
    if y > q_hat {
        q * d
    } else {
        (1.0 - q) * d
    }
}

pub fn mean_check_loss(y: &[f64], q_hat: &[f64], q: f64) -> Result<f64> {
    if y.len() != q_hat.len() || y.is_empty() {
        return Err(Error::invalid("check loss needs equal-length, nonempty inputs"));
    }
    Ok(y.iter().zip(q_hat).map(|(&a, &b)| check_loss(a, b, q)).sum::<f64>() / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: Vec<f64>) -> DenseTensor {
        let n = v.len();
        DenseTensor::new(vec![1, n], v).unwrap()
    }

    #[test]
    fn relative_error_cases() {
        let truth = t(vec![1.0, -2.0, 0.0, 3.0]);
        assert_eq!(relative_error(&truth, &truth).unwrap(), 0.0);
        assert_eq!(relative_error(&t(vec![0.0; 4]), &truth).unwrap(), 1.0);
        assert_eq!(relative_error(&truth.scale(2.0), &truth).unwrap(), 1.0);
        assert!(matches!(relative_error(&truth, &t(vec![0.0; 4])), Err(Error::Undefined(_))));
    }

    #[test]
    fn rmse_cases() {
        let truth = t(vec![1.0, -2.0, 0.5]);
        assert_eq!(rmse(&truth, &truth).unwrap(), 0.0);
        let shifted = t(truth.data().iter().map(|v| v - 0.7).collect());
        assert!((rmse(&shifted, &truth).unwrap() - 0.7).abs() < 1e-12);
        let other = t(vec![0.0, 1.0, 2.0]);
        let direct = ((1.0f64 + 9.0 + 2.25) / 3.0).sqrt();
        assert!((rmse(&other, &truth).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn correlation_cases() {
        let a = t(vec![1.0, 4.0, -2.0, 0.5, 3.0]);
        assert!((correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((correlation(&a.scale(-1.0), &a).unwrap() + 1.0).abs() < 1e-12);
        let b = t(vec![3.0, 0.5, 1.0, -2.0, 4.0]);
        // textbook: r = (n sxy - sx sy) / sqrt((n sxx - sx^2)(n syy - sy^2))
        let (x, y) = (a.data(), b.data());
        let n = 5.0;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let sxx: f64 = x.iter().map(|p| p * p).sum();
        let syy: f64 = y.iter().map(|p| p * p).sum();
        let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((correlation(&b, &a).unwrap() - r).abs() < 1e-12);
        assert!(correlation(&t(vec![1.0; 5]), &a).is_err());
    }

    #[test]
    fn selection_cases() {
        let truth = [true, true, false, false, false];
        let m = selection_metrics(&truth, &truth).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.f1, m.mcc), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        let comp: Vec<bool> = truth.iter().map(|b| !b).collect();
        let m = selection_metrics(&comp, &truth).unwrap();
        assert_eq!((m.sensitivity, m.specificity), (Some(0.0), Some(0.0)));
        let none = selection_metrics(&[false; 3], &[false; 3]).unwrap();
        assert_eq!((none.sensitivity, none.mcc, none.f1), (None, None, None));
        assert_eq!(none.specificity, Some(1.0));
    }

    #[test]
    fn selection_matches_tally_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let s: Vec<bool> = (0..20).map(|_| rng.random::<bool>()).collect();
            let tr: Vec<bool> = (0..20).map(|_| rng.random::<bool>()).collect();
            let m = selection_metrics(&s, &tr).unwrap();
            let tp = (0..20).filter(|&i| s[i] && tr[i]).count() as f64;
            let fp = (0..20).filter(|&i| s[i] && !tr[i]).count() as f64;
            let tn = (0..20).filter(|&i| !s[i] && !tr[i]).count() as f64;
            let fn_ = (0..20).filter(|&i| !s[i] && tr[i]).count() as f64;
            if tp + fn_ > 0.0 {
                assert_eq!(m.sensitivity.unwrap(), tp / (tp + fn_));
            }
            if let Some(mcc) = m.mcc {
                let expect = (tp * tn - fp * fn_) / ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
                assert!((mcc - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn check_loss_cases() {
        assert_eq!(check_loss(1.3, 1.3, 0.3), 0.0);
        assert_eq!(check_loss(2.0, 1.0, 0.5), 0.5);
        assert!((check_loss(0.0, 1.0, 0.2) - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn check_loss_reflection(y in -50.0..50.0f64, qh in -50.0..50.0f64, q in 0.01..0.99f64) {
            let a = check_loss(y, qh, q);
            let b = check_loss(-y, -qh, 1.0 - q);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn relative_error_sign_flip(v in proptest::collection::vec(-5.0..5.0f64, 1..20), w in proptest::collection::vec(-5.0..5.0f64, 20)) {
            let n = v.len();
            let truth = t(v.clone());
            prop_assume!(truth.data().iter().any(|x| *x != 0.0));
            let est = t(w[..n].to_vec());
            let a = relative_error(&est, &truth).unwrap();
            let b = relative_error(&est.scale(-1.0), &truth.scale(-1.0)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }

        #[test]
        fn mcc_and_f1_ranges(s in proptest::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr: Vec<bool> = s.iter().map(|_| rng.random::<bool>()).collect();
            let m = selection_metrics(&s, &tr).unwrap();
            if let Some(mcc) = m.mcc { prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&mcc)); }
            if let Some(f1) = m.f1 { prop_assert!((0.0..=1.0).contains(&f1)); }
        }
    }
}
