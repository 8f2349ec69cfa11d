//! IoU-gated person-search evaluation.
//!
//! For each query, every detection in the query's gallery is ranked by
//! cosine similarity to the query feature (ties broken by scene id, then box
//! index). A detection is a true positive when its scene contains the query
//! identity, its IoU with that identity's ground-truth box is strictly above
//! the threshold, and no higher-ranked detection already claimed the same
//! ground-truth box. AP is the non-interpolated area under the
//! precision/recall curve: the sum of precision at each true-positive rank
//! divided by the number of ground-truth instances in the gallery, so missed
//! detections cost recall.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Detection;
use crate::error::{Error, Result};
use crate::linalg::Embedding;
use crate::model::{Annotation, BBox, SceneImage};
use crate::rng;
use crate::{IdentityId, SceneId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub cmc_ks: Vec<usize>,
    pub gallery_sizes: Vec<usize>,
}

impl Default for EvalConfig {
    /// Full-scale protocol defaults.
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            cmc_ks: vec![1, 5, 10],
            gallery_sizes: vec![50, 100, 500, 1000, 2000, 4000],
        }
    }
}

impl EvalConfig {
    /// Sizes that fit the desk-scale synthetic gallery.
    pub fn desk() -> Self {
        EvalConfig {
            gallery_sizes: vec![10, 20, 50, 100],
            ..EvalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::invalid("iou_threshold", "must lie in (0, 1)"));
        }
        if !strictly_ascending_positive(&self.cmc_ks) {
            return Err(Error::invalid("cmc_ks", "must be positive and ascending"));
        }
        if !strictly_ascending_positive(&self.gallery_sizes) {
            return Err(Error::invalid(
                "gallery_sizes",
                "must be positive and ascending",
            ));
        }
        Ok(())
    }
}

fn strictly_ascending_positive(v: &[usize]) -> bool {
    v.first().is_none_or(|f| *f > 0) && v.windows(2).all(|w| w[0] < w[1])
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Non-interpolated AP of a ranked list of `(score, is_true_positive)`
/// sorted by descending score. `None` when there is nothing to find.
pub fn average_precision(ranked: &[(f64, bool)], total_positives: usize) -> Option<f64> {
    if total_positives == 0 {
        return None;
    }
    debug_assert!(ranked.windows(2).all(|w| w[0].0 >= w[1].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, _) in ranked.iter().enumerate().filter(|(_, (_, tp))| *tp) {
        hits += 1;
        sum += hits as f64 / (rank + 1) as f64;
    }
    Some((sum / total_positives as f64).min(1.0))
}

/// Ground-truth annotations keyed by scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    scenes: BTreeMap<SceneId, Vec<Annotation>>,
}

impl GroundTruth {
    pub fn from_scenes<'a>(scenes: impl IntoIterator<Item = &'a SceneImage>) -> Self {
        GroundTruth {
            scenes: scenes
                .into_iter()
                .map(|s| (s.id, s.annotations.clone()))
                .collect(),
        }
    }

    pub fn insert(&mut self, scene: SceneId, annotations: Vec<Annotation>) {
        self.scenes.insert(scene, annotations);
    }

    pub fn box_of(&self, scene: SceneId, identity: IdentityId) -> Option<BBox> {
        self.scenes
            .get(&scene)?
            .iter()
            .find(|a| a.identity == Some(identity))
            .map(|a| a.bbox)
    }

    pub fn contains(&self, scene: SceneId, identity: IdentityId) -> bool {
        self.box_of(scene, identity).is_some()
    }
}

/// A query person: feature taken from its ground-truth box.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryItem {
    pub index: usize,
    pub identity: IdentityId,
    pub feature: Embedding,
}

/// One gallery scene's detections with a feature per detection.
#[derive(Clone, Debug, PartialEq)]
pub struct GalleryItem {
    pub scene: SceneId,
    pub detections: Vec<Detection>,
    pub features: Vec<Embedding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub index: usize,
    /// `None` when the gallery holds no instance of the query identity.
    pub ap: Option<f64>,
    /// 1-based rank of the first true positive.
    pub first_hit: Option<usize>,
}

struct Ranked {
    similarity: f64,
    scene: SceneId,
    box_index: usize,
    bbox: BBox,
}

pub fn evaluate_query(
    query: &QueryItem,
    gallery: &[&GalleryItem],
    gt: &GroundTruth,
    config: &EvalConfig,
) -> Result<QueryOutcome> {
    let mut ranked = Vec::new();
    for item in gallery {
        if item.detections.len() != item.features.len() {
            return Err(Error::LengthMismatch {
                expected: item.detections.len(),
                found: item.features.len(),
            });
        }
        for (box_index, (det, feature)) in item.detections.iter().zip(&item.features).enumerate() {
            if feature.dim() != query.feature.dim() {
                return Err(Error::DimensionMismatch {
                    expected: query.feature.dim(),
                    found: feature.dim(),
                });
            }
            ranked.push(Ranked {
                similarity: query.feature.dot(feature),
                scene: item.scene,
                box_index,
                bbox: det.bbox,
            });
        }
    }
    ranked.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.scene.cmp(&b.scene))
            .then(a.box_index.cmp(&b.box_index))
    });

    let total_positives = gallery
        .iter()
        .filter(|g| gt.contains(g.scene, query.identity))
        .count();
    let mut claimed: Vec<SceneId> = Vec::new();
    let labels: Vec<(f64, bool)> = ranked
        .iter()
        .map(|r| {
            let hit = gt.box_of(r.scene, query.identity).is_some_and(|truth| {
                !claimed.contains(&r.scene) && iou(&r.bbox, &truth) > config.iou_threshold
            });
            if hit {
                claimed.push(r.scene);
            }
            (r.similarity, hit)
        })
        .collect();
    Ok(QueryOutcome {
        index: query.index,
        ap: average_precision(&labels, total_positives),
        first_hit: labels.iter().position(|(_, tp)| *tp).map(|p| p + 1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gallery_size: usize,
    pub map: f64,
    /// Rank `k` -> fraction of evaluated queries with a hit in the top `k`.
    pub cmc: BTreeMap<usize, f64>,
    pub per_query_ap: BTreeMap<usize, f64>,
    /// 1-based rank of the first true positive, for evaluated queries with a hit.
    pub first_hit: BTreeMap<usize, usize>,
    /// Queries whose gallery held no instance of their identity.
    pub excluded: Vec<usize>,
}

impl EvalReport {
    pub fn from_outcomes(
        gallery_size: usize,
        outcomes: &[QueryOutcome],
        config: &EvalConfig,
    ) -> Self {
        let mut per_query_ap = BTreeMap::new();
        let mut excluded = Vec::new();
        let mut first_hit = BTreeMap::new();
        for o in outcomes {
            match o.ap {
                Some(ap) => {
                    per_query_ap.insert(o.index, ap);
                    if let Some(rank) = o.first_hit {
                        first_hit.insert(o.index, rank);
                    }
                }
                None => excluded.push(o.index),
            }
        }
        let n = per_query_ap.len();
        let map = if n == 0 {
            0.0
        } else {
            per_query_ap.values().sum::<f64>() / n as f64
        };
        let cmc = config
            .cmc_ks
            .iter()
            .map(|&k| {
                let hits = first_hit.values().filter(|&&r| r <= k).count();
                (k, if n == 0 { 0.0 } else { hits as f64 / n as f64 })
            })
            .collect();
        EvalReport {
            gallery_size,
            map,
            cmc,
            per_query_ap,
            first_hit,
            excluded,
        }
    }

    pub fn rank1(&self) -> f64 {
        self.cmc.get(&1).copied().unwrap_or(0.0)
    }
}

/// Evaluates every query against the whole gallery.
pub fn evaluate(
    queries: &[QueryItem],
    gallery: &[GalleryItem],
    gt: &GroundTruth,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let all: Vec<&GalleryItem> = gallery.iter().collect();
    let outcomes = queries
        .iter()
        .map(|q| evaluate_query(q, &all, gt, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_outcomes(gallery.len(), &outcomes, config))
}

/// Per-query gallery sampler. Scenes holding the query identity are always
/// included; the remaining slots are the prefix of a per-query seeded
/// permutation of the other scenes, so galleries of growing size are nested.
pub struct GallerySampler<'a> {
    gallery: &'a [GalleryItem],
    gt: &'a GroundTruth,
    seed: u64,
}

impl<'a> GallerySampler<'a> {
    pub fn new(gallery: &'a [GalleryItem], gt: &'a GroundTruth, seed: u64) -> Self {
        GallerySampler { gallery, gt, seed }
    }

    pub fn sample(&self, query: &QueryItem, size: usize) -> Result<Vec<&'a GalleryItem>> {
        if size > self.gallery.len() {
            return Err(Error::Infeasible(format!(
                "gallery size {size} exceeds the {} available scenes",
                self.gallery.len()
            )));
        }
        let (mut chosen, mut others): (Vec<&GalleryItem>, Vec<&GalleryItem>) = self
            .gallery
            .iter()
            .partition(|g| self.gt.contains(g.scene, query.identity));
        let mut rng = rng::stream(
            rng::derive_seed(self.seed, rng::STREAM_GALLERY_SAMPLER),
            query.index as u64,
        );
        others.shuffle(&mut rng);
        let fill = size.saturating_sub(chosen.len());
        chosen.extend(others.into_iter().take(fill));
        Ok(chosen)
    }
}

/// One report per gallery size, using [`GallerySampler`].
pub fn gallery_sweep(
    queries: &[QueryItem],
    gallery: &[GalleryItem],
    gt: &GroundTruth,
    sizes: &[usize],
    seed: u64,
    config: &EvalConfig,
) -> Result<Vec<EvalReport>> {
    config.validate()?;
    if let Some(&too_big) = sizes.iter().find(|&&s| s > gallery.len() || s == 0) {
        return Err(Error::Infeasible(format!(
            "gallery size {too_big} not in 1..={}",
            gallery.len()
        )));
    }
    let sampler = GallerySampler::new(gallery, gt, seed);
    sizes
        .iter()
        .map(|&size| {
            let outcomes = queries
                .iter()
                .map(|q| evaluate_query(q, &sampler.sample(q, size)?, gt, config))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalReport::from_outcomes(size, &outcomes, config))
        })
        .collect()
}
