//! On-disk dataset: `dataset.json` plus one image container per scene.
//!
//! ```text
//! <dir>/dataset.json
//! <dir>/images/scene_00000.psim
//! ...
//! ```
//!
//! `dataset.json` (schema `persearch-dataset/1`):
//!
//! - `schema`: the version string;
//! - `spec`: the generator parameters;
//! - `identities`: `{ id, latent, split }` with split `train | query | gallery-only`;
//! - `scenes`: `{ id, split, image, annotations }` where split is
//!   `train | query | gallery`, `image` is relative to `<dir>` and each
//!   annotation is `{ box: [x1, y1, x2, y2], identity }` (`identity` is
//!   `null` for unlabeled persons);
//! - `queries`: `{ scene, box, identity }`, one per query scene.

use std::fs;
use std::path::Path;

use persearch_core::data::{Dataset, DatasetSpec, IdentitySpec, Query};
use persearch_core::model::{Annotation, BBox, SceneImage};
use persearch_core::{IdentityId, SceneId};
use serde::{Deserialize, Serialize};

use super::{image, read_json, write_json};
use crate::error::{CliError, Result};

pub const SCHEMA: &str = "persearch-dataset/1";
pub const INDEX_FILE: &str = "dataset.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneSplit {
    Train,
    Query,
    Gallery,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub schema: String,
    pub spec: DatasetSpec,
    pub identities: Vec<IdentitySpec>,
    pub scenes: Vec<SceneRecord>,
    pub queries: Vec<QueryRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub id: SceneId,
    pub split: SceneSplit,
    pub image: String,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub identity: Option<IdentityId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub scene: SceneId,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub identity: IdentityId,
}

fn to_array(b: &BBox) -> [f64; 4] {
    [b.x1, b.y1, b.x2, b.y2]
}

fn from_array(a: [f64; 4]) -> BBox {
    BBox::new(a[0], a[1], a[2], a[3])
}

fn image_name(id: SceneId) -> String {
    format!("images/scene_{:05}.psim", id.0)
}

pub fn save(dir: &Path, dataset: &Dataset) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    let mut scenes = Vec::new();
    let mut record = |scene: &SceneImage, split: SceneSplit| -> Result<()> {
        let name = image_name(scene.id);
        image::write(&dir.join(&name), &scene.pixels)?;
        scenes.push(SceneRecord {
            id: scene.id,
            split,
            image: name,
            annotations: scene
                .annotations
                .iter()
                .map(|a| AnnotationRecord {
                    bbox: to_array(&a.bbox),
                    identity: a.identity,
                })
                .collect(),
        });
        Ok(())
    };
    for s in &dataset.train {
        record(s, SceneSplit::Train)?;
    }
    for q in &dataset.queries {
        record(&q.scene, SceneSplit::Query)?;
    }
    for s in &dataset.gallery {
        record(s, SceneSplit::Gallery)?;
    }
    let file = DatasetFile {
        schema: SCHEMA.to_string(),
        spec: dataset.spec.clone(),
        identities: dataset.identities.clone(),
        scenes,
        queries: dataset
            .queries
            .iter()
            .map(|q| QueryRecord {
                scene: q.scene.id,
                bbox: to_array(&q.bbox),
                identity: q.identity,
            })
            .collect(),
    };
    write_json(&dir.join(INDEX_FILE), &file)
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let index = dir.join(INDEX_FILE);
    let file: DatasetFile = read_json(&index)?;
    if file.schema != SCHEMA {
        return Err(CliError::format(
            &index,
            format!("schema `{}`, expected `{SCHEMA}`", file.schema),
        ));
    }
    let mut train = Vec::new();
    let mut query_scenes = std::collections::BTreeMap::new();
    let mut gallery = Vec::new();
    for rec in file.scenes {
        let annotations = rec
            .annotations
            .into_iter()
            .map(|a| {
                let bbox = from_array(a.bbox);
                if !bbox.is_valid() {
                    return Err(CliError::format(
                        &index,
                        format!("invalid box in scene {}", rec.id.0),
                    ));
                }
                Ok(Annotation {
                    bbox,
                    identity: a.identity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = SceneImage {
            id: rec.id,
            pixels: image::read(&dir.join(&rec.image))?,
            annotations,
        };
        match rec.split {
            SceneSplit::Train => train.push(scene),
            SceneSplit::Query => {
                query_scenes.insert(scene.id, scene);
            }
            SceneSplit::Gallery => gallery.push(scene),
        }
    }
    let queries = file
        .queries
        .into_iter()
        .map(|q| {
            let scene = query_scenes.remove(&q.scene).ok_or_else(|| {
                CliError::format(
                    &index,
                    format!("query scene {} missing or reused", q.scene.0),
                )
            })?;
            Ok(Query {
                scene,
                bbox: from_array(q.bbox),
                identity: q.identity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: file.spec,
        identities: file.identities,
        train,
        queries,
        gallery,
    })
}
