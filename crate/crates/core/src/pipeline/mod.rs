//! End-to-end experiment runner: scenes to patches, training, and scoring on
//! the held-out lower rows of every scene.

use serde::{Deserialize, Serialize};

use crate::autonet::{predict_full, train_with, Checkpoint, EpochRecord, History, ModelParams, ModelSpec, TrainConfig};
use crate::dataset::{augment, extract_patches, split_area, AreaSplit, AugmentMode, PatchSet};
use crate::error::{Error, Result};
use crate::eval::{binarize, confusion, metrics, ConfusionCounts, Metrics};
use crate::groundtruth::{make_tolerant, rasterize_roads, BinaryMask, RoadVectorSet};
use crate::par;
use crate::raster::{compute_stats_in, normalize, read_pgm, NormStats, Raster};
use crate::synthscene::{generate_scene, ManifestEntry, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub augment: AugmentMode,
    /// Share of each scene's rows, from the top, used for training.
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            patch_size: 256,
            stride: 256,
            augment: AugmentMode::Rotations,
            train_fraction: 0.8,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("dataset.patch_size", "must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::config("dataset.stride", "must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("dataset.train_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Inference tile edge; must suit the model's downsampling.
    pub tile: usize,
    pub overlap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: crate::eval::DEFAULT_THRESHOLD,
            tile: 256,
            overlap: 32,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("eval.threshold", "must lie in [0, 1]"));
        }
        if self.tile == 0 || self.tile < 2 * self.overlap {
            return Err(Error::config("eval.tile", "must be positive and at least twice eval.overlap"));
        }
        Ok(())
    }
}

/// Everything one train-and-score cell needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneConfig,
    pub n_scenes: usize,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            n_scenes: 8,
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.n_scenes == 0 {
            return Err(Error::config("n_scenes", "must be at least 1"));
        }
        self.dataset.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }
}

/// A scene reduced to what training and scoring consume.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub id: String,
    pub image: Raster,
    pub truth: BinaryMask,
    pub valid: BinaryMask,
}

impl SceneData {
    pub fn new(id: String, image: Raster, truth: BinaryMask, valid: BinaryMask) -> Result<Self> {
        if image.width() != truth.width() || image.height() != truth.height() || !truth.same_dims(&valid) {
            return Err(Error::Shape(format!("scene {id}: image, roads and valid mask differ in size")));
        }
        Ok(Self { id, image, truth, valid })
    }

    /// Loads the files a scene manifest entry points to.
    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        let image = read_pgm(&entry.image)?;
        let roads = RoadVectorSet::read(&entry.roads, Some((image.width(), image.height())))?;
        let valid = BinaryMask::from_raster(&read_pgm(&entry.valid)?);
        Self::new(entry.scene_id.clone(), image, rasterize_roads(&roads), valid)
    }

    pub fn split(&self, fraction: f64) -> Result<AreaSplit> {
        split_area(self.image.width(), self.image.height(), fraction)
    }
}

/// Scenes `0..n` with seeds `config.seed + i`, named like the dataset files.
pub fn synth_scenes(config: &SceneConfig, n: usize) -> Result<Vec<SceneData>> {
    par::map_indexed(n, |i| {
        let s = generate_scene(&config.with_seed(config.seed.wrapping_add(i as u64)))?;
        SceneData::new(format!("scene_{i:04}"), s.image, rasterize_roads(&s.roads), s.valid)
    })
    .into_iter()
    .collect()
}

/// Z-score statistics over the training rows of all scenes.
pub fn training_stats(scenes: &[SceneData], ds: &DatasetConfig) -> Result<NormStats> {
    let regions = scenes
        .iter()
        .map(|s| Ok((&s.image, s.split(ds.train_fraction)?.train)))
        .collect::<Result<Vec<_>>>()?;
    compute_stats_in(regions)
}

/// Tiles and augments the training rows of every scene, in scene order.
pub fn training_patches(scenes: &[SceneData], ds: &DatasetConfig, t_max: u32, stats: NormStats) -> Result<PatchSet> {
    ds.validate()?;
    let sets = scenes
        .iter()
        .map(|s| {
            let gt = make_tolerant(&s.truth, t_max, &s.valid)?;
            extract_patches(&s.id, &s.image, &gt, s.split(ds.train_fraction)?.train, ds.patch_size, ds.stride, stats)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = PatchSet::merge(sets)?;
    Ok(augment(&set, ds.augment))
}

/// Confusion counts of a model over the held-out rows of every scene.
pub fn evaluate(
    spec: &ModelSpec,
    params: &ModelParams<f32>,
    stats: NormStats,
    scenes: &[SceneData],
    ds: &DatasetConfig,
    ev: &EvalConfig,
) -> Result<ConfusionCounts> {
    let mut total = ConfusionCounts::default();
    for s in scenes {
        let r = s.split(ds.train_fraction)?.test;
        let image = normalize(&s.image.crop(r.x0, r.y0, r.width, r.height)?, stats);
        let pred = predict_full(spec, params, &image, ev.tile, ev.overlap)?;
        let c = confusion(
            &binarize(&pred, ev.threshold),
            &s.truth.crop(r.x0, r.y0, r.width, r.height)?,
            &s.valid.crop(r.x0, r.y0, r.width, r.height)?,
        )?;
        total = total.merge(c);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub checkpoint: Checkpoint,
    pub history: History,
    pub metrics: Metrics,
}

/// Trains on the scenes' upper rows and scores on their lower rows.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    scenes: &[SceneData],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Outcome> {
    cfg.validate()?;
    let stats = training_stats(scenes, &cfg.dataset)?;
    let patches = training_patches(scenes, &cfg.dataset, cfg.train.t_max, stats)?;
    let spec = cfg.train.model.build();
    let (params, history) = train_with(&spec, &patches, &cfg.train, on_epoch)?;
    let counts = evaluate(&spec, &params, stats, scenes, &cfg.dataset, &cfg.eval)?;
    Ok(Outcome {
        checkpoint: Checkpoint { spec, params, stats },
        history,
        metrics: metrics(counts),
    })
}
