//! Training loop, evaluation wiring and ablation driver.
//!
//! One training iteration over a batch of scenes:
//!
//! 1. crop every ground-truth box; labeled persons become anchors and are
//!    encoded with the online parameters (activations kept for backprop);
//! 2. every person is encoded with the averaged parameters for the memory;
//! 3. each anchor is scored against the bank (pairwise loss) or the look-up
//!    table (baseline), the mean loss is backpropagated and one SGD step is
//!    taken;
//! 4. the averaged parameters move toward the online ones;
//! 5. the features from step 2 are enqueued.
//!
//! Anchors are scored before their own features enter the bank. The
//! baseline path never touches the averaged encoder: it updates table
//! proxies and the unlabeled queue with online features.

mod ablation;
mod report;
mod schedule;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, run_cell, AblationGrid, AblationRow, CellKey};
pub use report::{summarize, Summary, Table};
pub use schedule::LrSchedule;

use crate::data::{simulate_detections, Dataset, DetectionNoise};
use crate::ema::{DualEncoderState, ParameterVector};
use crate::error::{Error, Result};
use crate::eval::{gallery_sweep, EvalConfig, EvalReport, GalleryItem, GroundTruth, QueryItem};
use crate::linalg::Embedding;
use crate::loss::{anchor_gradient, oim_loss, pairwise_loss, SimilarityPairSet, DEFAULT_GAMMA};
use crate::memory::{cosine_similarities, FeatureEntry, LookupTable, MemoryBank};
use crate::model::{roi_extract, Encoder, EncoderConfig, Patch, SceneImage};
use crate::rng;
use crate::IdentityId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Memory queues + averaged encoder + pairwise loss.
    Pairwise,
    /// Per-identity look-up table + softmax (baseline).
    Oim,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Pairwise => "pairwise",
            LossKind::Oim => "oim",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    /// Labeled queue capacity L.
    pub labeled_queue: usize,
    /// Unlabeled queue capacity U.
    pub unlabeled_queue: usize,
    /// Averaging momentum m.
    pub momentum: f64,
    /// Pairwise loss scale.
    pub gamma: f64,
    /// Scenes per batch.
    pub batch_size: usize,
    pub epochs: u64,
    pub schedule: LrSchedule,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Baseline softmax temperature; `None` means `1 / gamma`.
    pub oim_temperature: Option<f64>,
    pub table_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Laptop-sized profile used by the tests and the default CLI config:
    /// 2000 iterations over the default 400-scene dataset.
    pub fn desk() -> Self {
        TrainConfig {
            encoder: EncoderConfig::default(),
            labeled_queue: 256,
            unlabeled_queue: 256,
            momentum: 0.999,
            gamma: DEFAULT_GAMMA,
            batch_size: 8,
            epochs: 40,
            schedule: LrSchedule {
                base: 0.0,
                warmup_iters: 100,
                warmup_target: 0.02,
                milestones: vec![27, 37],
                factors: vec![0.1, 0.1],
            },
            sgd_momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            loss: LossKind::Pairwise,
            oim_temperature: None,
            table_momentum: LookupTable::DEFAULT_MOMENTUM,
        }
    }

    /// Full-scale CUHK-SYSU settings (L = U = 4096, batch 3, 12 epochs).
    pub fn cuhk_scale() -> Self {
        TrainConfig {
            labeled_queue: 4096,
            unlabeled_queue: 4096,
            momentum: 0.999,
            gamma: DEFAULT_GAMMA,
            batch_size: 3,
            epochs: 12,
            schedule: LrSchedule::default(),
            ..TrainConfig::desk()
        }
    }

    /// Full-scale PRW settings (L = 1024, U = 0).
    pub fn prw_scale() -> Self {
        TrainConfig {
            labeled_queue: 1024,
            unlabeled_queue: 0,
            ..TrainConfig::cuhk_scale()
        }
    }

    pub fn temperature(&self) -> f64 {
        self.oim_temperature.unwrap_or(1.0 / self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::invalid("sgd_momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay", "must be finite and >= 0"));
        }
        if !(self.temperature() > 0.0 && self.temperature().is_finite()) {
            return Err(Error::invalid("oim_temperature", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.table_momentum) {
            return Err(Error::invalid("table_momentum", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- mu * v + (g + wd * theta)`, `theta <- theta - lr * v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.velocity) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= lr * *v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub state: DualEncoderState,
    pub bank: MemoryBank,
    pub table: Option<LookupTable>,
    pub iterations: u64,
}

/// Everything a run produced except wall-clock time, which the caller adds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub seed: u64,
    /// Mean anchor loss per iteration.
    pub losses: Vec<f64>,
    pub iterations: u64,
    /// Batches without a labeled person.
    pub skipped_batches: u64,
    pub reports: Vec<EvalReport>,
}

impl RunRecord {
    /// Report for the largest gallery evaluated.
    pub fn headline(&self) -> Option<&EvalReport> {
        self.reports.iter().max_by_key(|r| r.gallery_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainError {
    pub error: Error,
    /// State of the run when it stopped.
    pub record: Box<RunRecord>,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "training aborted after {} iterations: {}",
            self.record.iterations, self.error
        )
    }
}

impl core::error::Error for TrainError {}

struct Person {
    patch: Patch,
    identity: Option<IdentityId>,
}

fn crop_persons(scene: &SceneImage, encoder: &EncoderConfig) -> Result<Vec<Person>> {
    scene
        .annotations
        .iter()
        .map(|a| {
            Ok(Person {
                patch: roi_extract(
                    &scene.pixels,
                    &a.bbox,
                    encoder.roi_height,
                    encoder.roi_width,
                )?,
                identity: a.identity,
            })
        })
        .collect()
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    encoder: Encoder,
    state: DualEncoderState,
    sgd: Sgd,
    bank: MemoryBank,
    table: Option<LookupTable>,
    grad: Vec<f64>,
    iteration: u64,
}

impl<'a> Trainer<'a> {
    fn new(config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.encoder.clone())?;
        let theta = encoder.init_params(config.seed);
        let n = theta.len();
        let dim = config.encoder.dim;
        let (labeled, table) = match config.loss {
            LossKind::Pairwise => (config.labeled_queue, None),
            LossKind::Oim => (0, Some(LookupTable::new(dim, config.table_momentum)?)),
        };
        Ok(Trainer {
            config,
            encoder,
            state: DualEncoderState::new(theta, config.momentum)?,
            sgd: Sgd::new(n, config.sgd_momentum, config.weight_decay),
            bank: MemoryBank::new(dim, labeled, config.unlabeled_queue),
            table,
            grad: vec![0.0; n],
            iteration: 0,
        })
    }

    /// Returns `None` for a batch without labeled persons.
    fn step(&mut self, persons: &[&Person], epoch: u64) -> Result<Option<f64>> {
        let anchors: Vec<(IdentityId, &Patch)> = persons
            .iter()
            .filter_map(|p| p.identity.map(|id| (id, &p.patch)))
            .collect();
        if anchors.is_empty() {
            return Ok(None);
        }
        let online = self.state.online();
        let traced = anchors
            .iter()
            .map(|(_, patch)| self.encoder.encode_traced(online, patch))
            .collect::<Result<Vec<_>>>()?;

        let memory_features = match self.config.loss {
            LossKind::Pairwise => persons
                .iter()
                .map(|p| self.encoder.encode_with_average(&self.state, &p.patch))
                .collect::<Result<Vec<_>>>()?,
            LossKind::Oim => persons
                .iter()
                .filter(|p| p.identity.is_none())
                .map(|p| self.encoder.encode(online, &p.patch))
                .collect::<Result<Vec<_>>>()?,
        };

        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / anchors.len() as f64;
        let mut total = 0.0;
        for ((identity, _), (embedding, trace)) in anchors.iter().zip(&traced) {
            let (value, grad) = self.anchor_loss(*identity, embedding)?;
            total += value;
            if let Some(mut g) = grad {
                g.iter_mut().for_each(|v| *v *= scale);
                self.encoder.backward(online, trace, &g, &mut self.grad)?;
            }
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
            });
        }

        let lr = self.config.schedule.lr_at(self.iteration, epoch);
        self.sgd
            .step(self.state.online_mut().as_mut_slice(), &self.grad, lr);
        self.state.advance_average()?;

        let tag = self.iteration;
        match self.config.loss {
            LossKind::Pairwise => {
                let entries = persons
                    .iter()
                    .zip(memory_features)
                    .map(|(p, e)| FeatureEntry {
                        embedding: e,
                        identity: p.identity,
                        iteration_tag: tag,
                    });
                self.bank.enqueue(entries)?;
            }
            LossKind::Oim => {
                let table = self.table.as_mut().expect("baseline keeps a table");
                for ((identity, _), (embedding, _)) in anchors.iter().zip(&traced) {
                    table.update(*identity, embedding)?;
                }
                self.bank.enqueue(
                    memory_features
                        .into_iter()
                        .map(|e| FeatureEntry::unlabeled(e, tag)),
                )?;
            }
        }
        self.iteration += 1;
        Ok(Some(loss))
    }

    fn anchor_loss(
        &self,
        identity: IdentityId,
        anchor: &Embedding,
    ) -> Result<(f64, Option<Vec<f64>>)> {
        match self.config.loss {
            LossKind::Pairwise => {
                let split = self.bank.split_pairs(identity);
                if split.positives.is_empty() || split.negatives.is_empty() {
                    return Ok((0.0, None));
                }
                let pairs = SimilarityPairSet::new(
                    cosine_similarities(anchor, split.positives.iter().copied())?,
                    cosine_similarities(anchor, split.negatives.iter().copied())?,
                    self.config.gamma,
                )?;
                let result = pairwise_loss(&pairs);
                let grad = anchor_gradient(&result, &split.positives, &split.negatives)?;
                Ok((result.value, Some(grad)))
            }
            LossKind::Oim => {
                let table = self.table.as_ref().expect("baseline keeps a table");
                if table.get(identity).is_none() {
                    return Ok((0.0, None));
                }
                let unlabeled: Vec<&Embedding> =
                    self.bank.unlabeled().map(|e| &e.embedding).collect();
                let (value, grad) = oim_loss(
                    anchor,
                    table,
                    &unlabeled,
                    identity,
                    self.config.temperature(),
                )?;
                Ok((value, Some(grad)))
            }
        }
    }

    fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            encoder: self.config.encoder.clone(),
            state: self.state,
            bank: self.bank,
            table: self.table,
            iterations: self.iteration,
        }
    }
}

/// Trains on `dataset.train`. `(config, dataset)` fully determine the result.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
) -> core::result::Result<(Checkpoint, RunRecord), TrainError> {
    let mut record = RunRecord {
        config: config.clone(),
        seed: config.seed,
        losses: Vec::new(),
        iterations: 0,
        skipped_batches: 0,
        reports: Vec::new(),
    };
    let fail = |error: Error, record: &RunRecord| TrainError {
        error,
        record: Box::new(record.clone()),
    };
    let mut trainer = Trainer::new(config).map_err(|e| fail(e, &record))?;
    let crops = dataset
        .train
        .iter()
        .map(|s| crop_persons(s, &config.encoder))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| fail(e, &record))?;

    let mut order: Vec<usize> = (0..crops.len()).collect();
    let mut shuffle = rng::stream(config.seed, rng::STREAM_SHUFFLE);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(config.batch_size) {
            let persons: Vec<&Person> = batch.iter().flat_map(|&i| crops[i].iter()).collect();
            match trainer.step(&persons, epoch) {
                Ok(Some(loss)) => record.losses.push(loss),
                Ok(None) => record.skipped_batches += 1,
                Err(e) => {
                    record.iterations = trainer.iteration;
                    return Err(fail(e, &record));
                }
            }
        }
    }
    record.iterations = trainer.iteration;
    Ok((trainer.into_checkpoint(), record))
}

/// How a trained encoder is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSetup {
    pub protocol: EvalConfig,
    pub detections: DetectionNoise,
    pub sweep_seed: u64,
}

impl Default for EvalSetup {
    fn default() -> Self {
        EvalSetup {
            protocol: EvalConfig::desk(),
            detections: DetectionNoise::default(),
            sweep_seed: 3,
        }
    }
}

/// Query features from ground-truth boxes and gallery features from
/// simulated detections, both with `params`.
pub fn extract_features(
    encoder: &Encoder,
    params: &ParameterVector,
    dataset: &Dataset,
    noise: &DetectionNoise,
) -> Result<(Vec<QueryItem>, Vec<GalleryItem>, GroundTruth)> {
    noise.validate()?;
    let cfg = encoder.config();
    let queries = dataset
        .queries
        .iter()
        .enumerate()
        .map(|(index, q)| {
            let patch = roi_extract(&q.scene.pixels, &q.bbox, cfg.roi_height, cfg.roi_width)?;
            Ok(QueryItem {
                index,
                identity: q.identity,
                feature: encoder.encode(params, &patch)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gallery = dataset
        .gallery
        .iter()
        .map(|scene| {
            let detections = simulate_detections(scene, noise);
            let features = detections
                .iter()
                .map(|d| {
                    let patch = roi_extract(&scene.pixels, &d.bbox, cfg.roi_height, cfg.roi_width)?;
                    encoder.encode(params, &patch)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GalleryItem {
                scene: scene.id,
                detections,
                features,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((queries, gallery, GroundTruth::from_scenes(&dataset.gallery)))
}

/// Gallery sweep of the online encoder stored in `checkpoint`.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    setup: &EvalSetup,
) -> Result<Vec<EvalReport>> {
    let encoder = Encoder::new(checkpoint.encoder.clone())?;
    let (queries, gallery, gt) = extract_features(
        &encoder,
        checkpoint.state.online(),
        dataset,
        &setup.detections,
    )?;
    gallery_sweep(
        &queries,
        &gallery,
        &gt,
        &setup.protocol.gallery_sizes,
        setup.sweep_seed,
        &setup.protocol,
    )
}

/// [`train`] followed by [`evaluate_checkpoint`]; reports land in the record.
pub fn train_and_evaluate(
    config: &TrainConfig,
    dataset: &Dataset,
    setup: &EvalSetup,
) -> core::result::Result<(Checkpoint, RunRecord), TrainError> {
    let (checkpoint, mut record) = train(config, dataset)?;
    match evaluate_checkpoint(&checkpoint, dataset, setup) {
        Ok(reports) => {
            record.reports = reports;
            Ok((checkpoint, record))
        }
        Err(error) => Err(TrainError {
            error,
            record: Box::new(record),
        }),
    }
}
