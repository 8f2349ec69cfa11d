//! Queue-style feature memory and the per-identity look-up-table baseline.
//!
//! [`MemoryBank`] holds two FIFO queues of recently encoded person features:
//! a labeled queue (entries carry an identity) and an unlabeled queue. Queues
//! start empty, grow until they reach capacity, and from then on every new
//! entry displaces the oldest one. For an anchor identity the bank yields
//! every labeled entry of that identity as a positive and everything else as
//! a negative.
//!
//! [`LookupTable`] is the classic alternative: one exponentially averaged
//! proxy per identity.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Embedding};
use crate::IdentityId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub embedding: Embedding,
    /// `None` for persons without an identity annotation.
    pub identity: Option<IdentityId>,
    /// Training iteration that produced the feature.
    pub iteration_tag: u64,
}

impl FeatureEntry {
    pub fn labeled(embedding: Embedding, identity: IdentityId, iteration_tag: u64) -> Self {
        FeatureEntry {
            embedding,
            identity: Some(identity),
            iteration_tag,
        }
    }

    pub fn unlabeled(embedding: Embedding, iteration_tag: u64) -> Self {
        FeatureEntry {
            embedding,
            identity: None,
            iteration_tag,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    dim: usize,
    labeled_capacity: usize,
    unlabeled_capacity: usize,
    labeled: VecDeque<FeatureEntry>,
    unlabeled: VecDeque<FeatureEntry>,
}

/// Positives and negatives for one anchor, borrowed from a bank snapshot.
#[derive(Clone, Debug, Default)]
pub struct PairSplit<'a> {
    pub positives: Vec<&'a Embedding>,
    pub negatives: Vec<&'a Embedding>,
}

impl MemoryBank {
    pub fn new(dim: usize, labeled_capacity: usize, unlabeled_capacity: usize) -> Self {
        MemoryBank {
            dim,
            labeled_capacity,
            unlabeled_capacity,
            labeled: VecDeque::with_capacity(labeled_capacity),
            unlabeled: VecDeque::with_capacity(unlabeled_capacity),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labeled_capacity(&self) -> usize {
        self.labeled_capacity
    }

    pub fn unlabeled_capacity(&self) -> usize {
        self.unlabeled_capacity
    }

    /// Labeled queue, oldest first.
    pub fn labeled(&self) -> impl ExactSizeIterator<Item = &FeatureEntry> + '_ {
        self.labeled.iter()
    }

    /// Unlabeled queue, oldest first.
    pub fn unlabeled(&self) -> impl ExactSizeIterator<Item = &FeatureEntry> + '_ {
        self.unlabeled.iter()
    }

    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends entries to the queue matching their label presence, dropping
    /// the oldest entries of a full queue.
    ///
    /// The whole batch is validated before anything is inserted, so a
    /// rejected call leaves the bank untouched. Norms within
    /// [`UNIT_NORM_TOLERANCE`](crate::linalg::UNIT_NORM_TOLERANCE) of 1 are
    /// snapped to exactly 1.
    pub fn enqueue<I>(&mut self, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = FeatureEntry>,
    {
        let mut checked = Vec::new();
        let mut last_labeled = self.labeled.back().map(|e| e.iteration_tag);
        let mut last_unlabeled = self.unlabeled.back().map(|e| e.iteration_tag);
        for entry in entries {
            if entry.embedding.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: entry.embedding.dim(),
                });
            }
            let last = if entry.identity.is_some() {
                &mut last_labeled
            } else {
                &mut last_unlabeled
            };
            if let Some(prev) = *last {
                if entry.iteration_tag < prev {
                    return Err(Error::OutOfOrder {
                        last: prev,
                        found: entry.iteration_tag,
                    });
                }
            }
            *last = Some(entry.iteration_tag);
            let embedding = entry.embedding.validated()?;
            checked.push(FeatureEntry { embedding, ..entry });
        }
        for entry in checked {
            let (queue, capacity) = if entry.identity.is_some() {
                (&mut self.labeled, self.labeled_capacity)
            } else {
                (&mut self.unlabeled, self.unlabeled_capacity)
            };
            if capacity == 0 {
                continue;
            }
            if queue.len() == capacity {
                queue.pop_front();
            }
            queue.push_back(entry);
        }
        Ok(())
    }

    /// Labeled entries of `anchor` are positives; all other labeled entries
    /// and every unlabeled entry are negatives.
    pub fn split_pairs(&self, anchor: IdentityId) -> PairSplit<'_> {
        let mut split = PairSplit::default();
        for entry in &self.labeled {
            if entry.identity == Some(anchor) {
                split.positives.push(&entry.embedding);
            } else {
                split.negatives.push(&entry.embedding);
            }
        }
        split
            .negatives
            .extend(self.unlabeled.iter().map(|e| &e.embedding));
        split
    }

    /// Drops every stored feature; capacities are kept.
    pub fn clear(&mut self) {
        self.labeled.clear();
        self.unlabeled.clear();
    }
}

/// Dot products of `anchor` with each entry, clamped to `[-1, 1]`.
pub fn cosine_similarities<'a, I>(anchor: &Embedding, entries: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    entries
        .into_iter()
        .map(|e| {
            if e.dim() != anchor.dim() {
                return Err(Error::DimensionMismatch {
                    expected: anchor.dim(),
                    found: e.dim(),
                });
            }
            Ok(dot(anchor.as_slice(), e.as_slice()).clamp(-1.0, 1.0))
        })
        .collect()
}

/// One exponentially averaged proxy per identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    dim: usize,
    momentum: f64,
    proxies: BTreeMap<IdentityId, Embedding>,
}

impl LookupTable {
    pub const DEFAULT_MOMENTUM: f64 = 0.5;

    pub fn new(dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::invalid("table momentum", "must lie in [0, 1]"));
        }
        Ok(LookupTable {
            dim,
            momentum,
            proxies: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn get(&self, identity: IdentityId) -> Option<&Embedding> {
        self.proxies.get(&identity)
    }

    /// Proxies in ascending identity order.
    pub fn iter(&self) -> impl Iterator<Item = (IdentityId, &Embedding)> + '_ {
        self.proxies.iter().map(|(id, e)| (*id, e))
    }

    /// `proxy <- normalize(momentum * proxy + (1 - momentum) * feature)`;
    /// an unseen identity starts at `feature`.
    pub fn update(&mut self, identity: IdentityId, feature: &Embedding) -> Result<()> {
        if feature.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: feature.dim(),
            });
        }
        let feature = feature.clone().validated()?;
        let lambda = self.momentum;
        let next = match self.proxies.get(&identity) {
            None => feature,
            Some(proxy) => {
                let mixed = proxy
                    .as_slice()
                    .iter()
                    .zip(feature.as_slice())
                    .map(|(p, f)| lambda * p + (1.0 - lambda) * f)
                    .collect();
                // Antipodal proxy and feature cancel exactly at lambda = 0.5; keep the newer one.
                Embedding::normalized(mixed).unwrap_or(feature)
            }
        };
        self.proxies.insert(identity, next);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Embedding::from_vec(v)
    }

    fn labeled(axis: usize, id: u32, tag: u64) -> FeatureEntry {
        FeatureEntry::labeled(unit(4, axis), IdentityId(id), tag)
    }

    fn tags(bank: &MemoryBank) -> Vec<u64> {
        bank.labeled().map(|e| e.iteration_tag).collect()
    }

    #[test]
    fn full_queue_displaces_oldest() {
        let mut bank = MemoryBank::new(4, 3, 0);
        bank.enqueue([labeled(0, 1, 0), labeled(1, 1, 1), labeled(2, 1, 2)])
            .unwrap();
        bank.enqueue([labeled(3, 1, 3)]).unwrap();
        assert_eq!(tags(&bank), [1, 2, 3]);
    }

    #[test]
    fn cold_start_grows() {
        let mut bank = MemoryBank::new(4, 3, 0);
        bank.enqueue([labeled(0, 1, 0)]).unwrap();
        bank.enqueue([labeled(1, 1, 1)]).unwrap();
        assert_eq!(tags(&bank), [0, 1]);
        assert_eq!(bank.labeled().len(), 2);
    }

    #[test]
    fn unlabeled_batch_larger_than_remaining_room() {
        let mut bank = MemoryBank::new(4, 0, 2);
        let u = |tag| FeatureEntry::unlabeled(unit(4, 0), tag);
        bank.enqueue([u(1), u(2)]).unwrap();
        bank.enqueue([u(3), u(4)]).unwrap();
        let kept: Vec<u64> = bank.unlabeled().map(|e| e.iteration_tag).collect();
        assert_eq!(kept, [3, 4]);
    }

    #[test]
    fn zero_capacity_queue_stays_empty() {
        let mut bank = MemoryBank::new(4, 2, 0);
        bank.enqueue([FeatureEntry::unlabeled(unit(4, 0), 0)])
            .unwrap();
        assert_eq!(bank.unlabeled().len(), 0);
    }

    #[test]
    fn rejects_bad_dimension_and_norm_atomically() {
        let mut bank = MemoryBank::new(4, 3, 3);
        let bad_dim = FeatureEntry::labeled(unit(3, 0), IdentityId(1), 0);
        assert_eq!(
            bank.enqueue([labeled(0, 1, 0), bad_dim]),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 3
            })
        );
        assert!(bank.is_empty());
        let long = FeatureEntry::unlabeled(Embedding::from_vec(vec![2.0, 0.0, 0.0, 0.0]), 0);
        assert!(matches!(
            bank.enqueue([long]),
            Err(Error::NotUnitNorm { .. })
        ));
        assert!(bank.is_empty());
    }

    #[test]
    fn rejects_out_of_order_tags() {
        let mut bank = MemoryBank::new(4, 3, 3);
        bank.enqueue([labeled(0, 1, 5)]).unwrap();
        assert_eq!(
            bank.enqueue([labeled(0, 1, 4)]),
            Err(Error::OutOfOrder { last: 5, found: 4 })
        );
    }

    fn bank_with(ids: &[u32], unlabeled: usize) -> MemoryBank {
        let mut bank = MemoryBank::new(4, 16, 16);
        bank.enqueue(ids.iter().map(|&id| labeled(0, id, 0)))
            .unwrap();
        bank.enqueue((0..unlabeled).map(|_| FeatureEntry::unlabeled(unit(4, 1), 0)))
            .unwrap();
        bank
    }

    #[test]
    fn split_counts() {
        let s = bank_with(&[1, 1, 2], 2);
        let split = s.split_pairs(IdentityId(1));
        assert_eq!((split.positives.len(), split.negatives.len()), (2, 3));

        let s = bank_with(&[2, 3], 0);
        let split = s.split_pairs(IdentityId(1));
        assert_eq!((split.positives.len(), split.negatives.len()), (0, 2));

        // Enumerated by hand: entries 2 and 4 match; 1, 3 and three unlabeled do not.
        let s = bank_with(&[1, 2, 1, 2], 3);
        let split = s.split_pairs(IdentityId(2));
        assert_eq!((split.positives.len(), split.negatives.len()), (2, 5));
    }

    #[test]
    fn similarity_examples() {
        let v = Embedding::normalized(vec![0.3, -0.4, 0.5, 0.1]).unwrap();
        let s = cosine_similarities(&v, [&v]).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);

        let s = cosine_similarities(&unit(4, 0), [&unit(4, 1)]).unwrap();
        assert_eq!(s, [0.0]);

        let h = core::f64::consts::FRAC_1_SQRT_2;
        let s = cosine_similarities(&unit(2, 0), [&Embedding::from_vec(vec![h, h])]).unwrap();
        assert!((s[0] - 0.707_106_781_186_547_5).abs() < 1e-15);

        assert!(cosine_similarities(&unit(2, 0), [&unit(3, 0)]).is_err());
    }

    #[test]
    fn lut_update_examples() {
        let mut t = LookupTable::new(2, 0.5).unwrap();
        let e1 = Embedding::from_vec(vec![1.0, 0.0]);
        let e2 = Embedding::from_vec(vec![0.0, 1.0]);
        t.update(IdentityId(7), &e1).unwrap();
        assert_eq!(t.get(IdentityId(7)), Some(&e1));
        t.update(IdentityId(7), &e2).unwrap();
        let p = t.get(IdentityId(7)).unwrap().as_slice();
        let h = core::f64::consts::FRAC_1_SQRT_2;
        assert!((p[0] - h).abs() < 1e-15 && (p[1] - h).abs() < 1e-15);

        let mut t0 = LookupTable::new(2, 0.0).unwrap();
        t0.update(IdentityId(1), &e1).unwrap();
        t0.update(IdentityId(1), &e2).unwrap();
        assert_eq!(t0.get(IdentityId(1)), Some(&e2));
        assert_eq!(t0.len(), 1);
    }

    #[test]
    fn lut_rejects_bad_momentum() {
        assert!(LookupTable::new(2, 1.5).is_err());
        assert!(LookupTable::new(2, -0.1).is_err());
    }
}
