//! Seeded synthetic person-search datasets.
//!
//! Every person is rendered from an appearance code `[identity part; nuisance
//! part]` pushed through one fixed random linear map into a low-resolution
//! colour grid, squashed by a sigmoid and bilinearly upsampled to the person
//! box. The identity part is the identity's unit latent plus isotropic noise
//! of norm about `appearance_noise`; the nuisance part is pure noise of norm
//! about `appearance_noise * nuisance_gain` standing in for pose and
//! lighting. With `appearance_noise = 0` two renderings of one identity are
//! pixel-identical.
//!
//! Identities are split three ways: training identities appear only in
//! training scenes, query identities get one query scene plus
//! `gallery_appearances` gallery scenes, and gallery-only identities fill the
//! remaining labeled gallery slots. Unlabeled distractors never carry an
//! identity; training scenes and query/gallery scenes draw them from two
//! disjoint latent pools.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bilinear_resample, Annotation, BBox, Image, SceneImage};
use crate::rng::{self, gaussian, Rng};
use crate::{IdentityId, SceneId};

/// Low-resolution appearance grid, upsampled to the person box.
const APPEARANCE_ROWS: usize = 8;
const APPEARANCE_COLS: usize = 4;
const BACKGROUND_LEVEL: f64 = 0.5;
const BACKGROUND_NOISE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Query,
    GalleryOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub id: IdentityId,
    /// Unit-norm appearance code.
    pub latent: Vec<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Labeled identities across all splits.
    pub n_identities: usize,
    pub n_query_identities: usize,
    pub n_gallery_only_identities: usize,
    /// Distractor latents available to training scenes.
    pub n_unlabeled_distractors: usize,
    /// Distractor latents available to query and gallery scenes.
    pub n_test_distractors: usize,
    /// Training scenes.
    pub n_scenes: usize,
    pub n_gallery_scenes: usize,
    pub persons_per_scene: usize,
    /// Labeled persons per training/gallery scene; the rest are distractors.
    pub labeled_per_scene: usize,
    /// Gallery scenes each query identity appears in.
    pub gallery_appearances: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub person_height: usize,
    pub person_width: usize,
    pub latent_dim: usize,
    pub nuisance_dim: usize,
    /// Appearance noise sigma.
    pub appearance_noise: f64,
    pub nuisance_gain: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    /// Desk-scale profile.
    fn default() -> Self {
        DatasetSpec {
            n_identities: 250,
            n_query_identities: 100,
            n_gallery_only_identities: 30,
            n_unlabeled_distractors: 400,
            n_test_distractors: 400,
            n_scenes: 400,
            n_gallery_scenes: 120,
            persons_per_scene: 6,
            labeled_per_scene: 4,
            gallery_appearances: 2,
            image_height: 80,
            image_width: 128,
            channels: 3,
            person_height: 32,
            person_width: 16,
            latent_dim: 16,
            nuisance_dim: 16,
            appearance_noise: 0.5,
            nuisance_gain: 3.0,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn n_train_identities(&self) -> usize {
        self.n_identities
            .saturating_sub(self.n_query_identities + self.n_gallery_only_identities)
    }

    fn cell(&self) -> (usize, usize) {
        (
            self.person_height + self.person_height / 4,
            self.person_width + self.person_width / 2,
        )
    }

    /// Non-overlapping person slots per scene.
    pub fn slots_per_scene(&self) -> usize {
        let (ch, cw) = self.cell();
        if ch == 0 || cw == 0 {
            return 0;
        }
        (self.image_height / ch) * (self.image_width / cw)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_identities", self.n_identities),
            ("n_query_identities", self.n_query_identities),
            ("n_scenes", self.n_scenes),
            ("n_gallery_scenes", self.n_gallery_scenes),
            ("persons_per_scene", self.persons_per_scene),
            ("labeled_per_scene", self.labeled_per_scene),
            ("gallery_appearances", self.gallery_appearances),
            ("image_height", self.image_height),
            ("image_width", self.image_width),
            ("channels", self.channels),
            ("person_height", self.person_height),
            ("person_width", self.person_width),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !(self.appearance_noise >= 0.0 && self.appearance_noise.is_finite()) {
            return Err(Error::invalid(
                "appearance_noise",
                "must be finite and >= 0",
            ));
        }
        if !(self.nuisance_gain >= 0.0 && self.nuisance_gain.is_finite()) {
            return Err(Error::invalid("nuisance_gain", "must be finite and >= 0"));
        }
        let n_train = self.n_train_identities();
        if n_train == 0 {
            return Err(Error::Infeasible(
                "no identities left for training after query/gallery splits".into(),
            ));
        }
        let slots = self.slots_per_scene();
        if self.persons_per_scene > slots {
            return Err(Error::Infeasible(format!(
                "{} persons per scene but only {slots} fit in {}x{}",
                self.persons_per_scene, self.image_height, self.image_width
            )));
        }
        if self.labeled_per_scene > self.persons_per_scene {
            return Err(Error::Infeasible(
                "labeled_per_scene exceeds persons_per_scene".into(),
            ));
        }
        if self.labeled_per_scene > n_train {
            return Err(Error::Infeasible(format!(
                "{} labeled persons per scene but only {n_train} training identities",
                self.labeled_per_scene
            )));
        }
        let unlabeled = self.persons_per_scene - self.labeled_per_scene;
        let query_scene_unlabeled = self.persons_per_scene
            - 1
            - (self.labeled_per_scene - 1).min(self.n_gallery_only_identities);
        if unlabeled > self.n_unlabeled_distractors
            || query_scene_unlabeled.max(unlabeled) > self.n_test_distractors
        {
            return Err(Error::Infeasible(
                "not enough unlabeled distractors to fill a scene".into(),
            ));
        }
        if self.gallery_appearances > self.n_gallery_scenes {
            return Err(Error::Infeasible(
                "gallery_appearances exceeds n_gallery_scenes".into(),
            ));
        }
        if self.n_query_identities * self.gallery_appearances
            > self.n_gallery_scenes * self.labeled_per_scene
        {
            return Err(Error::Infeasible(
                "gallery scenes cannot host every query identity".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub scene: SceneImage,
    pub bbox: BBox,
    pub identity: IdentityId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub identities: Vec<IdentitySpec>,
    pub train: Vec<SceneImage>,
    pub queries: Vec<Query>,
    pub gallery: Vec<SceneImage>,
}

impl Dataset {
    pub fn identities_in(&self, split: Split) -> impl Iterator<Item = &IdentitySpec> + '_ {
        self.identities.iter().filter(move |i| i.split == split)
    }
}

fn unit_latent(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = crate::linalg::norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

struct Renderer<'a> {
    spec: &'a DatasetSpec,
    /// `[grid value][code component]`, row-major.
    map: Vec<f64>,
    code_len: usize,
}

enum Person<'a> {
    Labeled(&'a IdentitySpec),
    Distractor(&'a [f64]),
}

impl<'a> Renderer<'a> {
    fn new(spec: &'a DatasetSpec) -> Self {
        let code_len = spec.latent_dim + spec.nuisance_dim;
        let grid = APPEARANCE_ROWS * APPEARANCE_COLS * spec.channels;
        let mut rng = rng::stream(spec.seed, rng::STREAM_RENDER_MAP);
        let map = (0..grid * code_len).map(|_| gaussian(&mut rng)).collect();
        Renderer {
            spec,
            map,
            code_len,
        }
    }

    fn appearance(&self, latent: &[f64], rng: &mut Rng) -> Vec<f64> {
        let s = self.spec;
        let sigma = s.appearance_noise;
        let mut code = Vec::with_capacity(self.code_len);
        let id_scale = sigma / libm::sqrt(s.latent_dim as f64);
        code.extend(latent.iter().map(|v| v + id_scale * gaussian(rng)));
        if s.nuisance_dim > 0 {
            let nuisance_scale = sigma * s.nuisance_gain / libm::sqrt(s.nuisance_dim as f64);
            code.extend((0..s.nuisance_dim).map(|_| nuisance_scale * gaussian(rng)));
        }
        let grid = self
            .map
            .chunks_exact(self.code_len)
            .map(|row| {
                let a = crate::linalg::dot(row, &code);
                1.0 / (1.0 + libm::exp(-a))
            })
            .collect::<Vec<_>>();
        bilinear_resample(
            |y, x, c| grid[(y * APPEARANCE_COLS + x) * s.channels + c],
            (APPEARANCE_ROWS, APPEARANCE_COLS, s.channels),
            &BBox::new(0.0, 0.0, APPEARANCE_COLS as f64, APPEARANCE_ROWS as f64),
            s.person_height,
            s.person_width,
        )
    }

    fn scene(&self, id: SceneId, persons: &[Person<'_>], rng: &mut Rng) -> SceneImage {
        let s = self.spec;
        let mut pixels = Image::filled(s.image_height, s.image_width, s.channels, 0.0);
        for v in &mut pixels.data {
            *v = (BACKGROUND_LEVEL + BACKGROUND_NOISE * gaussian(rng)).clamp(0.0, 1.0) as f32;
        }
        let (ch, cw) = s.cell();
        let cols = s.image_width / cw;
        let slots = sample(rng, s.slots_per_scene(), persons.len());
        let mut annotations = Vec::with_capacity(persons.len());
        for (person, slot) in persons.iter().zip(slots.iter()) {
            let top = (slot / cols) * ch + rng.gen_range(0..=ch - s.person_height);
            let left = (slot % cols) * cw + rng.gen_range(0..=cw - s.person_width);
            let (latent, identity) = match person {
                Person::Labeled(spec) => (spec.latent.as_slice(), Some(spec.id)),
                Person::Distractor(latent) => (*latent, None),
            };
            let patch = self.appearance(latent, rng);
            for y in 0..s.person_height {
                for x in 0..s.person_width {
                    for c in 0..s.channels {
                        let v = patch[(y * s.person_width + x) * s.channels + c];
                        pixels.set(top + y, left + x, c, v as f32);
                    }
                }
            }
            annotations.push(Annotation {
                bbox: BBox::new(
                    left as f64,
                    top as f64,
                    (left + s.person_width) as f64,
                    (top + s.person_height) as f64,
                ),
                identity,
            });
        }
        SceneImage {
            id,
            pixels,
            annotations,
        }
    }
}

fn distractors<'a>(pool: &'a [Vec<f64>], count: usize, rng: &mut Rng) -> Vec<Person<'a>> {
    sample(rng, pool.len(), count)
        .iter()
        .map(|i| Person::Distractor(&pool[i]))
        .collect()
}

/// Generates a complete dataset; identical specs give bit-identical output.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let n_train = spec.n_train_identities();

    let mut id_rng = rng::stream(spec.seed, rng::STREAM_IDENTITIES);
    let identities: Vec<IdentitySpec> = (0..spec.n_identities)
        .map(|i| IdentitySpec {
            id: IdentityId(i as u32),
            latent: unit_latent(&mut id_rng, spec.latent_dim),
            split: if i < n_train {
                Split::Train
            } else if i < n_train + spec.n_query_identities {
                Split::Query
            } else {
                Split::GalleryOnly
            },
        })
        .collect();
    let mut pool_rng = rng::stream(spec.seed, rng::STREAM_DISTRACTORS);
    let pool: Vec<Vec<f64>> = (0..spec.n_unlabeled_distractors)
        .map(|_| unit_latent(&mut pool_rng, spec.latent_dim))
        .collect();
    let test_pool: Vec<Vec<f64>> = (0..spec.n_test_distractors)
        .map(|_| unit_latent(&mut pool_rng, spec.latent_dim))
        .collect();

    let renderer = Renderer::new(spec);
    let train_ids = &identities[..n_train];
    let query_ids = &identities[n_train..n_train + spec.n_query_identities];
    let gallery_only = &identities[n_train + spec.n_query_identities..];
    let n_unlabeled = spec.persons_per_scene - spec.labeled_per_scene;

    let mut next_scene = 0u32;
    let mut scene_id = || {
        next_scene += 1;
        SceneId(next_scene - 1)
    };

    let mut rng = rng::stream(spec.seed, rng::STREAM_TRAIN_SCENES);
    let mut train = Vec::with_capacity(spec.n_scenes);
    for _ in 0..spec.n_scenes {
        let mut persons: Vec<Person<'_>> = sample(&mut rng, n_train, spec.labeled_per_scene)
            .iter()
            .map(|i| Person::Labeled(&train_ids[i]))
            .collect();
        persons.extend(distractors(&pool, n_unlabeled, &mut rng));
        train.push(renderer.scene(scene_id(), &persons, &mut rng));
    }

    let mut rng = rng::stream(spec.seed, rng::STREAM_QUERY_SCENES);
    let mut queries = Vec::with_capacity(query_ids.len());
    for q in query_ids {
        let extra = (spec.labeled_per_scene - 1).min(gallery_only.len());
        let mut persons = vec![Person::Labeled(q)];
        persons.extend(
            sample(&mut rng, gallery_only.len(), extra)
                .iter()
                .map(|i| Person::Labeled(&gallery_only[i])),
        );
        let fill = spec.persons_per_scene - persons.len();
        persons.extend(distractors(&test_pool, fill, &mut rng));
        let scene = renderer.scene(scene_id(), &persons, &mut rng);
        let bbox = scene.box_of(q.id).expect("query person was placed");
        queries.push(Query {
            scene,
            bbox,
            identity: q.id,
        });
    }

    // Place each query identity into distinct gallery scenes with free labeled slots.
    let mut rng = rng::stream(spec.seed, rng::STREAM_GALLERY_SCENES);
    let mut members: Vec<Vec<&IdentitySpec>> = vec![Vec::new(); spec.n_gallery_scenes];
    for q in query_ids {
        let open: Vec<usize> = (0..spec.n_gallery_scenes)
            .filter(|&s| members[s].len() < spec.labeled_per_scene)
            .collect();
        if open.len() < spec.gallery_appearances {
            return Err(Error::Infeasible(format!(
                "no room left in the gallery for identity {}",
                q.id.0
            )));
        }
        for i in sample(&mut rng, open.len(), spec.gallery_appearances).iter() {
            members[open[i]].push(q);
        }
    }
    let mut gallery = Vec::with_capacity(spec.n_gallery_scenes);
    for scene_members in members {
        let room = (spec.labeled_per_scene - scene_members.len()).min(gallery_only.len());
        let mut persons: Vec<Person<'_>> = scene_members.into_iter().map(Person::Labeled).collect();
        persons.extend(
            sample(&mut rng, gallery_only.len(), room)
                .iter()
                .map(|i| Person::Labeled(&gallery_only[i])),
        );
        let fill = spec.persons_per_scene - persons.len();
        persons.extend(distractors(&test_pool, fill, &mut rng));
        gallery.push(renderer.scene(scene_id(), &persons, &mut rng));
    }

    Ok(Dataset {
        spec: spec.clone(),
        identities,
        train,
        queries,
        gallery,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionNoise {
    /// Std-dev in pixels added independently to each box coordinate.
    pub box_jitter: f64,
    pub miss_rate: f64,
    /// Expected false positives per scene.
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise {
            box_jitter: 1.5,
            miss_rate: 0.05,
            false_positive_rate: 0.5,
            seed: 11,
        }
    }
}

impl DetectionNoise {
    pub fn noiseless() -> Self {
        DetectionNoise {
            box_jitter: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.box_jitter >= 0.0 && self.box_jitter.is_finite()) {
            return Err(Error::invalid("box_jitter", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::invalid("miss_rate", "must lie in [0, 1]"));
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return Err(Error::invalid(
                "false_positive_rate",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    /// In `(0, 1]`.
    pub score: f64,
}

/// Stands in for a detector: drops, jitters and clips ground-truth boxes and
/// adds random false positives. The random stream is keyed by the noise seed
/// and the scene id, so results do not depend on call order.
pub fn simulate_detections(scene: &SceneImage, noise: &DetectionNoise) -> Vec<Detection> {
    let mut rng = rng::stream(
        rng::derive_seed(noise.seed, rng::STREAM_DETECTIONS),
        u64::from(scene.id.0),
    );
    let (w, h) = (scene.pixels.width, scene.pixels.height);
    let mut out = Vec::new();
    for ann in &scene.annotations {
        if rng.gen::<f64>() < noise.miss_rate {
            continue;
        }
        let b = ann.bbox;
        let mut j = || noise.box_jitter * gaussian(&mut rng);
        let (x1, y1, x2, y2) = (b.x1 + j(), b.y1 + j(), b.x2 + j(), b.y2 + j());
        let jittered = BBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)).clip(w, h);
        if !jittered.is_valid() {
            continue;
        }
        out.push(Detection {
            bbox: jittered,
            score: 1.0 - 0.5 * rng.gen::<f64>(),
        });
    }
    let rate = noise.false_positive_rate;
    let whole = libm::floor(rate);
    let n_fp = whole as usize + usize::from(rng.gen::<f64>() < rate - whole);
    let (bw, bh) = scene
        .annotations
        .first()
        .map(|a| (a.bbox.width(), a.bbox.height()))
        .unwrap_or((w as f64 / 4.0, h as f64 / 4.0));
    for _ in 0..n_fp {
        let x1 = rng.gen::<f64>() * (w as f64 - bw).max(0.0);
        let y1 = rng.gen::<f64>() * (h as f64 - bh).max(0.0);
        let bbox = BBox::new(x1, y1, x1 + bw, y1 + bh).clip(w, h);
        if bbox.is_valid() {
            out.push(Detection {
                bbox,
                score: 0.5 * (1.0 - rng.gen::<f64>()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            n_identities: 20,
            n_query_identities: 5,
            n_gallery_only_identities: 3,
            n_unlabeled_distractors: 10,
            n_test_distractors: 10,
            n_scenes: 6,
            n_gallery_scenes: 8,
            image_height: 80,
            image_width: 128,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = gen_dataset(&small()).unwrap();
        let b = gen_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = gen_dataset(&DatasetSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.train[0].pixels, c.train[0].pixels);
    }

    fn crop(scene: &SceneImage, b: &BBox) -> Vec<f32> {
        let mut out = Vec::new();
        for y in b.y1 as usize..b.y2 as usize {
            for x in b.x1 as usize..b.x2 as usize {
                for c in 0..scene.pixels.channels {
                    out.push(scene.pixels.at(y, x, c));
                }
            }
        }
        out
    }

    #[test]
    fn zero_noise_renders_identical_patches() {
        let spec = DatasetSpec {
            appearance_noise: 0.0,
            ..small()
        };
        let ds = gen_dataset(&spec).unwrap();
        let q = &ds.queries[0];
        let g = ds
            .gallery
            .iter()
            .find(|s| s.box_of(q.identity).is_some())
            .unwrap();
        assert_eq!(
            crop(&q.scene, &q.bbox),
            crop(g, &g.box_of(q.identity).unwrap())
        );
    }

    #[test]
    fn infeasible_specs_rejected() {
        let crowded = DatasetSpec {
            persons_per_scene: 11,
            labeled_per_scene: 4,
            ..small()
        };
        assert!(matches!(gen_dataset(&crowded), Err(Error::Infeasible(_))));
        let no_train = DatasetSpec {
            n_identities: 8,
            ..small()
        };
        assert!(matches!(gen_dataset(&no_train), Err(Error::Infeasible(_))));
        let negative = DatasetSpec {
            appearance_noise: -1.0,
            ..small()
        };
        assert!(gen_dataset(&negative).is_err());
    }

    #[test]
    fn labels_are_hygienic() {
        let ds = gen_dataset(&small()).unwrap();
        let all = ds
            .train
            .iter()
            .chain(&ds.gallery)
            .chain(ds.queries.iter().map(|q| &q.scene));
        for scene in all {
            let mut ids: Vec<u32> = scene
                .annotations
                .iter()
                .filter_map(|a| a.identity.map(|i| i.0))
                .collect();
            let n = ids.len();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), n, "identity repeated in scene {:?}", scene.id);
            assert_eq!(scene.annotations.len(), ds.spec.persons_per_scene);
        }
        for scene in &ds.train {
            for a in &scene.annotations {
                if let Some(id) = a.identity {
                    assert_eq!(ds.identities[id.0 as usize].split, Split::Train);
                }
            }
        }
    }

    #[test]
    fn noiseless_detections_equal_ground_truth() {
        let ds = gen_dataset(&small()).unwrap();
        let scene = &ds.gallery[0];
        let dets = simulate_detections(scene, &DetectionNoise::noiseless());
        let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
        let gt: Vec<BBox> = scene.annotations.iter().map(|a| a.bbox).collect();
        assert_eq!(boxes, gt);
        assert!(dets.iter().all(|d| d.score > 0.0 && d.score <= 1.0));
    }

    #[test]
    fn full_miss_rate_drops_everything() {
        let ds = gen_dataset(&small()).unwrap();
        let noise = DetectionNoise {
            miss_rate: 1.0,
            ..DetectionNoise::noiseless()
        };
        assert!(simulate_detections(&ds.gallery[1], &noise).is_empty());
    }

    #[test]
    fn jittered_boxes_match_monte_carlo_iou() {
        use crate::eval::iou;
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};

        let truth = BBox::new(32.0, 32.0, 96.0, 96.0);
        let noise = DetectionNoise {
            box_jitter: 2.0,
            ..DetectionNoise::noiseless()
        };
        let draws = 1000;
        let simulated: f64 = (0..draws)
            .map(|i| {
                let scene = SceneImage {
                    id: SceneId(i),
                    pixels: Image::filled(128, 128, 1, 0.0),
                    annotations: vec![Annotation {
                        bbox: truth,
                        identity: None,
                    }],
                };
                let dets = simulate_detections(&scene, &noise);
                iou(&dets[0].bbox, &truth)
            })
            .sum::<f64>()
            / f64::from(draws);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = Normal::new(0.0, 2.0).unwrap();
        let oracle: f64 = (0..20_000)
            .map(|_| {
                let mut d = || n.sample(&mut rng);
                let b = BBox::new(32.0 + d(), 32.0 + d(), 96.0 + d(), 96.0 + d());
                iou(&b, &truth)
            })
            .sum::<f64>()
            / 20_000.0;
        // Standard error of the 1000-draw mean is about 1e-3.
        assert!((simulated - oracle).abs() < 5e-3, "{simulated} vs {oracle}");
    }

    #[test]
    fn every_query_identity_is_covered() {
        let spec = DatasetSpec {
            n_identities: 20,
            n_query_identities: 10,
            n_gallery_only_identities: 4,
            n_scenes: 6,
            n_gallery_scenes: 50,
            ..small()
        };
        let ds = gen_dataset(&spec).unwrap();
        assert_eq!(ds.queries.len(), 10);
        for q in &ds.queries {
            assert_eq!(ds.identities[q.identity.0 as usize].split, Split::Query);
            assert_eq!(q.scene.box_of(q.identity), Some(q.bbox));
            let hits = ds
                .gallery
                .iter()
                .filter(|g| g.box_of(q.identity).is_some())
                .count();
            assert_eq!(hits, spec.gallery_appearances);
        }
    }
}
