//! Scalar loss functions on plain values, used for reporting and as oracles
//! for the differentiable versions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, ProbDist};
use crate::tape::{smooth_l1_value, PROB_FLOOR};

/// Default `[lm, teacher, smooth]` weights.
pub const DEFAULT_LOSS_WEIGHTS: [f64; 3] = [0.1, 1.0, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub teacher: f64,
    pub smooth: f64,
    pub total: f64,
    pub weights: [f64; 3],
}

/// Mean negative log-likelihood of `labels` under `pred`.
pub fn loss_lm(pred: &[ProbDist], labels: &[u32]) -> Result<f64> {
    if pred.is_empty() || pred.len() != labels.len() {
        return Err(Error::shape(format!("{} distributions for {} labels", pred.len(), labels.len())));
    }
    let mut sum = 0.0;
    for (p, &y) in pred.iter().zip(labels) {
        if y as usize >= p.len() {
            return Err(Error::arg(format!("label {y} outside vocabulary {}", p.len())));
        }
        sum -= p.prob(y).max(PROB_FLOOR).ln();
    }
    Ok(sum / pred.len() as f64)
}

/// Mean cross-entropy of the draft distributions against the target's.
pub fn loss_teacher(draft: &[ProbDist], target: &[ProbDist]) -> Result<f64> {
    if draft.is_empty() || draft.len() != target.len() {
        return Err(Error::shape(format!("{} draft rows for {} target rows", draft.len(), target.len())));
    }
    let mut sum = 0.0;
    for (q, p) in draft.iter().zip(target) {
        if q.len() != p.len() {
            return Err(Error::shape(format!("vocab {} vs {}", q.len(), p.len())));
        }
        sum -= p.probs().iter().zip(q.probs()).map(|(pi, qi)| pi * qi.max(PROB_FLOOR).ln()).sum::<f64>();
    }
    Ok(sum / draft.len() as f64)
}

/// Smooth-L1 (beta 1) averaged over every coordinate.
pub fn loss_smooth(draft: &Matrix, target: &Matrix) -> Result<f64> {
    if draft.shape() != target.shape() || draft.data().is_empty() {
        return Err(Error::shape(format!("features {:?} vs {:?}", draft.shape(), target.shape())));
    }
    let sum: f64 = draft.data().iter().zip(target.data()).map(|(a, b)| smooth_l1_value(a - b)).sum();
    Ok(sum / draft.data().len() as f64)
}

pub fn total_loss(lm: f64, teacher: f64, smooth: f64, weights: [f64; 3]) -> LossBreakdown {
    let total = weights[0] * lm + weights[1] * teacher + weights[2] * smooth;
    LossBreakdown { lm, teacher, smooth, total, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lm_loss_of_certain_prediction_is_zero() {
        let p = vec![ProbDist::one_hot(4, 2)];
        assert_eq!(loss_lm(&p, &[2]).unwrap(), 0.0);
        let u = vec![ProbDist::uniform(4)];
        assert!((loss_lm(&u, &[1]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let half = vec![ProbDist::new(vec![0.5, 0.5]).unwrap()];
        assert!((loss_lm(&half, &[0]).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn teacher_loss_is_entropy_when_equal() {
        let p = ProbDist::new(vec![0.5, 0.25, 0.25]).unwrap();
        let h = -(0.5 * 0.5f64.ln() + 0.5 * 0.25f64.ln());
        assert!((loss_teacher(&[p.clone()], &[p]).unwrap() - h).abs() < 1e-12);
        let hot = ProbDist::one_hot(2, 0);
        assert_eq!(loss_teacher(&[hot.clone()], &[hot.clone()]).unwrap(), 0.0);
        let even = ProbDist::uniform(2);
        assert!((loss_teacher(&[even], &[hot]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let u4 = ProbDist::uniform(4);
        assert!((loss_teacher(&[u4.clone()], &[u4]).unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smooth_loss_quadratic_and_linear_parts() {
        let a = Matrix::row_vector(vec![0.0, 0.0]);
        let b = Matrix::row_vector(vec![0.5, 3.0]);
        assert!((loss_smooth(&a, &b).unwrap() - (0.125 + 2.5) / 2.0).abs() < 1e-15);
        let one = |v: f64| Matrix::row_vector(vec![v]);
        assert_eq!(loss_smooth(&one(0.5), &one(0.0)).unwrap(), 0.125);
        assert_eq!(loss_smooth(&one(2.0), &one(0.0)).unwrap(), 1.5);
        assert_eq!(loss_smooth(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let l = total_loss(2.0, 0.5, 0.3, DEFAULT_LOSS_WEIGHTS);
        assert_eq!(l.total, 0.1 * 2.0 + 1.0 * 0.5 + 0.1 * 0.3);
        assert!((l.total - 0.73).abs() < 1e-12);
        assert!((total_loss(1.0, 2.0, 3.0, DEFAULT_LOSS_WEIGHTS).total - 2.4).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, DEFAULT_LOSS_WEIGHTS).total, 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, [0.0, 1.0, 0.0]).total, 2.0);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let p = vec![ProbDist::uniform(3)];
        assert!(loss_lm(&p, &[0, 1]).is_err());
        assert!(loss_lm(&p, &[3]).is_err());
        assert!(loss_smooth(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }
}
