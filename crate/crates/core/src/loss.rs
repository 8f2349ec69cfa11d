//! Pairwise log-sum-exp metric loss and the look-up-table softmax baseline.
//!
//! For an anchor with positive similarities `s_p` (K of them) and negative
//! similarities `s_n` (J of them) the pairwise loss is
//!
//! ```text
//! L = log(1 + sum_i sum_j exp(gamma * (s_n[j] - s_p[i])))
//! ```
//!
//! The double sum factorizes into `(sum_j e^{gamma s_n[j]}) * (sum_i e^{-gamma s_p[i]})`,
//! so both factors are evaluated as max-shifted sums and combined in log
//! space. That keeps the cost at O(K + J) and avoids overflow for exponents
//! far beyond the f64 range.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Embedding};
use crate::memory::LookupTable;
use crate::IdentityId;

pub const DEFAULT_GAMMA: f64 = 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityPairSet {
    positives: Vec<f64>,
    negatives: Vec<f64>,
    gamma: f64,
}

impl SimilarityPairSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive and finite"));
        }
        if positives.iter().chain(&negatives).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("similarities"));
        }
        Ok(SimilarityPairSet {
            positives,
            negatives,
            gamma,
        })
    }

    pub fn positives(&self) -> &[f64] {
        &self.positives
    }

    pub fn negatives(&self) -> &[f64] {
        &self.negatives
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub value: f64,
    /// dL/ds_p, all entries <= 0.
    pub grad_positives: Vec<f64>,
    /// dL/ds_n, all entries >= 0.
    pub grad_negatives: Vec<f64>,
}

/// Max-shifted `sum exp(x)`: returns `(max, sum exp(x - max))`.
fn shifted_sum(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum = values.map(|v| libm::exp(v - max)).sum();
    (max, sum)
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + libm::exp(-u))
    } else {
        let e = libm::exp(u);
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + libm::log1p(libm::exp(-u.abs()))
}

pub fn pairwise_loss(pairs: &SimilarityPairSet) -> LossResult {
    let (k, j) = (pairs.positives.len(), pairs.negatives.len());
    if k == 0 || j == 0 {
        return LossResult {
            value: 0.0,
            grad_positives: vec![0.0; k],
            grad_negatives: vec![0.0; j],
        };
    }
    let gamma = pairs.gamma;
    let neg = pairs.negatives.iter().map(|s| gamma * s);
    let pos = pairs.positives.iter().map(|s| -gamma * s);
    let (neg_max, neg_sum) = shifted_sum(neg.clone());
    let (pos_max, pos_sum) = shifted_sum(pos.clone());

    // log of the double sum
    let log_total = neg_max + pos_max + libm::log(neg_sum) + libm::log(pos_sum);
    let value = softplus(log_total);
    // Fraction of (1 + total) carried by the pair terms.
    let share = gamma * sigmoid(log_total);

    LossResult {
        value,
        grad_positives: pos
            .map(|v| -share * libm::exp(v - pos_max) / pos_sum)
            .collect(),
        grad_negatives: neg
            .map(|v| share * libm::exp(v - neg_max) / neg_sum)
            .collect(),
    }
}

/// Chains similarity gradients back to the anchor embedding through
/// `s = dot(anchor, entry)`. Memory entries are constants.
pub fn anchor_gradient(
    loss: &LossResult,
    positives: &[&Embedding],
    negatives: &[&Embedding],
) -> Result<Vec<f64>> {
    if positives.len() != loss.grad_positives.len() {
        return Err(Error::LengthMismatch {
            expected: loss.grad_positives.len(),
            found: positives.len(),
        });
    }
    if negatives.len() != loss.grad_negatives.len() {
        return Err(Error::LengthMismatch {
            expected: loss.grad_negatives.len(),
            found: negatives.len(),
        });
    }
    let dim = positives
        .iter()
        .chain(negatives)
        .map(|e| e.dim())
        .next()
        .unwrap_or(0);
    let mut grad = vec![0.0; dim];
    let pairs = positives
        .iter()
        .zip(&loss.grad_positives)
        .chain(negatives.iter().zip(&loss.grad_negatives));
    for (entry, g) in pairs {
        if entry.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: entry.dim(),
            });
        }
        axpy(*g, entry.as_slice(), &mut grad);
    }
    Ok(grad)
}

/// Softmax cross-entropy over `dot(anchor, proxy) / temperature` for every
/// table identity (ascending id order) followed by every unlabeled entry,
/// with `target` as the label. Returns `(value, dL/d anchor)`.
pub fn oim_loss(
    anchor: &Embedding,
    table: &LookupTable,
    unlabeled: &[&Embedding],
    target: IdentityId,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature", "must be positive and finite"));
    }
    if table.dim() != anchor.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim(),
            found: anchor.dim(),
        });
    }
    if let Some(bad) = unlabeled.iter().find(|e| e.dim() != anchor.dim()) {
        return Err(Error::DimensionMismatch {
            expected: anchor.dim(),
            found: bad.dim(),
        });
    }
    let mut target_index = None;
    let mut classes: Vec<&Embedding> = Vec::with_capacity(table.len() + unlabeled.len());
    for (id, proxy) in table.iter() {
        if id == target {
            target_index = Some(classes.len());
        }
        classes.push(proxy);
    }
    let target_index = target_index.ok_or(Error::UnknownIdentity(target))?;
    classes.extend_from_slice(unlabeled);

    let logits: Vec<f64> = classes
        .iter()
        .map(|c| dot(anchor.as_slice(), c.as_slice()) / temperature)
        .collect();
    let (max, sum) = shifted_sum(logits.iter().copied());
    let log_norm = max + libm::log(sum);
    let value = log_norm - logits[target_index];

    let mut grad = vec![0.0; anchor.dim()];
    for (idx, (class, logit)) in classes.iter().zip(&logits).enumerate() {
        let prob = libm::exp(logit - log_norm);
        let coeff = prob - if idx == target_index { 1.0 } else { 0.0 };
        axpy(coeff / temperature, class.as_slice(), &mut grad);
    }
    Ok((value.max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(p: &[f64], n: &[f64], gamma: f64) -> SimilarityPairSet {
        SimilarityPairSet::new(p.to_vec(), n.to_vec(), gamma).unwrap()
    }

    #[test]
    fn zero_margin_is_log_two() {
        for gamma in [0.5, 16.0, 300.0] {
            let r = pairwise_loss(&pairs(&[0.3], &[0.3], gamma));
            assert!((r.value - core::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_sides_give_zero() {
        let r = pairwise_loss(&pairs(&[], &[0.1, 0.5, -0.2], 16.0));
        assert_eq!(r.value, 0.0);
        assert_eq!(r.grad_negatives, [0.0; 3]);
        let r = pairwise_loss(&pairs(&[0.9], &[], 16.0));
        assert_eq!((r.value, r.grad_positives.as_slice()), (0.0, &[0.0][..]));
    }

    #[test]
    fn separated_pair_matches_log1p() {
        let r = pairwise_loss(&pairs(&[0.9], &[0.1], 16.0));
        let expect = libm::log1p(libm::exp(-12.8));
        assert!(((r.value - expect) / expect).abs() < 1e-14);
    }

    #[test]
    fn rejects_nan_and_bad_gamma() {
        assert!(SimilarityPairSet::new(vec![f64::NAN], vec![0.0], 1.0).is_err());
        assert!(SimilarityPairSet::new(vec![0.0], vec![0.0], 0.0).is_err());
        assert!(SimilarityPairSet::new(vec![0.0], vec![0.0], -2.0).is_err());
    }

    #[test]
    fn extreme_exponents_stay_finite() {
        // gamma * (s_n - s_p) = +/- 1e4
        let hi = pairwise_loss(&pairs(&[-1.0], &[1.0], 5000.0));
        assert!((hi.value - 1e4).abs() < 1e-9);
        assert!(hi.grad_positives[0].is_finite() && hi.grad_negatives[0].is_finite());
        let lo = pairwise_loss(&pairs(&[1.0], &[-1.0], 5000.0));
        assert!(lo.value >= 0.0 && lo.value.is_finite());
        assert!(lo.grad_positives[0].is_finite());
    }

    #[test]
    fn anchor_gradient_edges() {
        let e = Embedding::from_vec(vec![1.0, 0.0, 0.0]);
        let zero = LossResult {
            value: 0.0,
            grad_positives: vec![0.0],
            grad_negatives: vec![0.0],
        };
        assert_eq!(anchor_gradient(&zero, &[&e], &[&e]).unwrap(), [0.0; 3]);
        let single = pairwise_loss(&pairs(&[0.4], &[], 16.0));
        assert_eq!(anchor_gradient(&single, &[&e], &[]).unwrap(), [0.0; 3]);
        assert!(matches!(
            anchor_gradient(&single, &[], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn oim_singleton_and_orthogonal_examples() {
        let e1 = Embedding::from_vec(vec![1.0, 0.0]);
        let e2 = Embedding::from_vec(vec![0.0, 1.0]);
        let mut table = LookupTable::new(2, 0.5).unwrap();
        table.update(IdentityId(1), &e1).unwrap();
        let (v, g) = oim_loss(&e1, &table, &[], IdentityId(1), 1.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, [0.0, 0.0]);

        table.update(IdentityId(2), &e2).unwrap();
        let (v, _) = oim_loss(&e1, &table, &[], IdentityId(1), 1.0).unwrap();
        let expect = libm::log1p(libm::exp(-1.0));
        assert!((v - expect).abs() < 1e-15);

        assert_eq!(
            oim_loss(&e1, &table, &[], IdentityId(9), 1.0),
            Err(Error::UnknownIdentity(IdentityId(9)))
        );
    }
}
