//! Area splitting, patch tiling, augmentation and epoch assembly.

mod store;

pub use store::{read_patch_set, write_patch_set, PATCH_MANIFEST};

use serde::{Deserialize, Serialize};

use crate::autonet::{Real, Targets, Tensor4};
use crate::d4::D4;
use crate::error::{Error, Result};
use crate::groundtruth::{BinaryMask, TolerantGroundTruth};
use crate::par;
use crate::raster::{normalize, FloatRaster, NormStats, Raster};
use crate::rng::SplitMix64;

/// Axis-aligned pixel rectangle `[x0, x0+width) x [y0, y0+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width,
            height,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

/// Upper rows for training, the rest for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaSplit {
    pub train: Rect,
    pub test: Rect,
}

pub fn split_area(width: usize, height: usize, train_fraction: f64) -> Result<AreaSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let rows = (train_fraction * height as f64).round() as usize;
    if rows == 0 || rows >= height || width == 0 {
        return Err(Error::Empty(format!(
            "fraction {train_fraction} of {height} rows leaves an empty region"
        )));
    }
    Ok(AreaSplit {
        train: Rect {
            x0: 0,
            y0: 0,
            width,
            height: rows,
        },
        test: Rect {
            x0: 0,
            y0: rows,
            width,
            height: height - rows,
        },
    })
}

fn check_tiling(width: usize, height: usize, patch: usize, stride: usize) -> Result<()> {
    if patch == 0 || stride == 0 {
        return Err(Error::Domain("patch size and stride must be positive".into()));
    }
    if width < patch || height < patch {
        return Err(Error::Shape(format!(
            "region {width}x{height} is smaller than patch {patch}"
        )));
    }
    Ok(())
}

/// Number of whole patches on the tiling grid of a `width x height` region.
/// Pure index arithmetic.
pub fn grid_count(width: usize, height: usize, patch: usize, stride: usize) -> Result<usize> {
    check_tiling(width, height, patch, stride)?;
    Ok(((width - patch) / stride + 1) * ((height - patch) / stride + 1))
}

/// Absolute `(x, y)` offsets of whole patches in row-major order.
pub fn grid_offsets(region: Rect, patch: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    check_tiling(region.width, region.height, patch, stride)?;
    let mut out = Vec::new();
    for y in (0..=region.height - patch).step_by(stride) {
        for x in (0..=region.width - patch).step_by(stride) {
            out.push((region.x0 + x, region.y0 + y));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    /// The four quarter-turn rotations.
    #[default]
    Rotations,
    /// All eight grid symmetries.
    RotationsAndFlips,
}

impl AugmentMode {
    pub fn transforms(self) -> &'static [D4] {
        match self {
            AugmentMode::Rotations => &D4::ROTATIONS,
            AugmentMode::RotationsAndFlips => &D4::ALL,
        }
    }

    pub fn factor(self) -> usize {
        self.transforms().len()
    }
}

/// Epoch size of a region tiled and augmented; no pixels are touched.
pub fn epoch_size(width: usize, height: usize, patch: usize, stride: usize, mode: AugmentMode) -> Result<usize> {
    Ok(grid_count(width, height, patch, stride)? * mode.factor())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene: String,
    pub x: usize,
    pub y: usize,
    pub transform: D4,
}

/// One training sample. The image is z-scored; `y_tol` holds 16-bit
/// quantized targets so in-memory and on-disk sets train identically.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEntry {
    pub image: FloatRaster,
    pub y_tol: FloatRaster,
    pub y_bin: BinaryMask,
    pub valid: BinaryMask,
    pub provenance: Provenance,
}

impl PatchEntry {
    pub fn transformed(&self, t: D4) -> Self {
        let s = self.image.width();
        let tf = |r: &FloatRaster| FloatRaster::new(s, s, t.apply(r.values(), s, s)).expect("permutation");
        Self {
            image: tf(&self.image),
            y_tol: tf(&self.y_tol),
            y_bin: self.y_bin.transformed(t),
            valid: self.valid.transformed(t),
            provenance: Provenance {
                transform: self.provenance.transform.then(t),
                ..self.provenance.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub t_max: u32,
    pub stats: NormStats,
    pub entries: Vec<PatchEntry>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Concatenates sets built with identical patch size, tolerance and statistics.
    pub fn merge(sets: Vec<PatchSet>) -> Result<PatchSet> {
        let mut it = sets.into_iter();
        let mut first = it.next().ok_or_else(|| Error::Empty("no patch sets to merge".into()))?;
        for s in it {
            if s.patch_size != first.patch_size || s.t_max != first.t_max || s.stats != first.stats {
                return Err(Error::Structural("patch sets differ in size, t_max or statistics".into()));
            }
            first.entries.extend(s.entries);
        }
        Ok(first)
    }
}

fn quantize_unit(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0
}

/// Tiles `region` of a scene. Patches without a single valid pixel are dropped.
pub fn extract_patches(
    scene: &str,
    image: &Raster,
    gt: &TolerantGroundTruth,
    region: Rect,
    patch: usize,
    stride: usize,
    stats: NormStats,
) -> Result<PatchSet> {
    if image.width() != gt.width() || image.height() != gt.height() {
        return Err(Error::Shape("image and ground truth differ in size".into()));
    }
    if region.x0 + region.width > image.width() || region.y0 + region.height > image.height() {
        return Err(Error::Shape("region exceeds the scene".into()));
    }
    let offsets = grid_offsets(region, patch, stride)?;
    let entries = par::map_slice(&offsets, |&(x, y)| -> Result<Option<PatchEntry>> {
        let valid = gt.valid.crop(x, y, patch, patch)?;
        if valid.count() == 0 {
            return Ok(None);
        }
        let y_tol = gt.y_tol.crop(x, y, patch, patch)?;
        let y_tol = FloatRaster::new(patch, patch, y_tol.values().iter().map(|&v| quantize_unit(v)).collect())?;
        Ok(Some(PatchEntry {
            image: normalize(&image.crop(x, y, patch, patch)?, stats),
            y_tol,
            y_bin: gt.y_bin.crop(x, y, patch, patch)?,
            valid,
            provenance: Provenance {
                scene: scene.to_string(),
                x,
                y,
                transform: D4::Rot0,
            },
        }))
    });
    let mut kept = Vec::new();
    for e in entries {
        if let Some(e) = e? {
            kept.push(e);
        }
    }
    Ok(PatchSet {
        patch_size: patch,
        t_max: gt.t_max,
        stats,
        entries: kept,
    })
}

/// Every entry under each transform of `mode`, entry-major: the transforms
/// of entry 0 first, in group order.
pub fn augment(set: &PatchSet, mode: AugmentMode) -> PatchSet {
    let ts = mode.transforms();
    let entries = par::map_indexed(set.len() * ts.len(), |i| set.entries[i / ts.len()].transformed(ts[i % ts.len()]));
    PatchSet {
        entries,
        ..set.clone_header()
    }
}

impl PatchSet {
    fn clone_header(&self) -> PatchSet {
        PatchSet {
            patch_size: self.patch_size,
            t_max: self.t_max,
            stats: self.stats,
            entries: Vec::new(),
        }
    }
}

/// Road pixels over valid pixels, counted on `Y_bin`.
pub fn road_frequency<'a, I>(masks: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>,
{
    let (mut road, mut valid) = (0usize, 0usize);
    for (bin, val) in masks {
        for (&b, &v) in bin.bits().iter().zip(val.bits()) {
            if v {
                valid += 1;
                road += usize::from(b);
            }
        }
    }
    if valid == 0 {
        return Err(Error::Empty("no valid pixels for the road frequency".into()));
    }
    Ok(road as f64 / valid as f64)
}

pub fn patch_road_frequency(set: &PatchSet) -> Result<f64> {
    road_frequency(set.entries.iter().map(|e| (&e.y_bin, &e.valid)))
}

/// Admissible road weights `[1, 1/f_road]`; just `{1}` without roads.
pub fn weight_interval(f_road: f64) -> (f64, f64) {
    if f_road > 0.0 {
        (1.0, 1.0 / f_road)
    } else {
        (1.0, 1.0)
    }
}

/// A seeded permutation of `0..len` cut into batches; the last may be short.
pub fn epoch_iter(len: usize, batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Empty("cannot iterate an empty patch set".into()));
    }
    if batch_size == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    SplitMix64::new(epoch_seed).shuffle(&mut order);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Network input and targets for a set of entries.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub input: Tensor4<T>,
    pub targets: Targets<T>,
}

pub fn assemble_batch<T: Real>(set: &PatchSet, indices: &[usize]) -> Result<Batch<T>> {
    if indices.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let s = set.patch_size;
    let n = indices.len();
    let mut input = Vec::with_capacity(n * s * s);
    let mut y = Vec::with_capacity(n * s * s);
    let mut road = Vec::with_capacity(n * s * s);
    let mut valid = Vec::with_capacity(n * s * s);
    for &i in indices {
        let e = set
            .entries
            .get(i)
            .ok_or_else(|| Error::Shape(format!("patch index {i} out of range")))?;
        input.extend(e.image.values().iter().map(|&v| T::from_f64(v)));
        y.extend(e.y_tol.values().iter().map(|&v| T::from_f64(v)));
        road.extend_from_slice(e.y_bin.bits());
        valid.extend_from_slice(e.valid.bits());
    }
    Ok(Batch {
        input: Tensor4::from_vec(n, 1, s, s, input)?,
        targets: Targets {
            y_tol: Tensor4::from_vec(n, 1, s, s, y)?,
            road,
            valid,
        },
    })
}
