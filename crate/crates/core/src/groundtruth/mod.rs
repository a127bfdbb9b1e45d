//! Road vectors to binary masks, exact Euclidean distances, and the smooth
//! tolerance-banded regression targets derived from them.

mod edt;
pub(crate) mod roads;
mod tolerant;

pub use edt::{euclidean_distance_transform, DistanceField, UNREACHABLE};
pub use roads::{
    point_segment_dist_sq, rasterize_roads, Road, RoadClass, RoadVectorSet,
};
pub use tolerant::{make_tolerant, TolerantGroundTruth};

use crate::d4::D4;
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Row-major boolean grid; `true` marks a road (or a valid pixel, for masks
/// that gate the loss and the metrics).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let bits = crate::raster::crop_grid(&self.bits, self.width, self.height, x0, y0, w, h)?;
        Self::new(w, h, bits)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<Self> {
        if !self.same_dims(other) {
            return Err(Error::Shape("mask dimensions differ".into()));
        }
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        Self::new(self.width, self.height, bits)
    }

    pub fn transformed(&self, t: D4) -> Self {
        let (w, h) = t.dims(self.width, self.height);
        Self {
            width: w,
            height: h,
            bits: t.apply(&self.bits, self.width, self.height),
        }
    }

    /// 0 / 255 grayscale rendering.
    pub fn to_raster(&self) -> Raster {
        let s = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        Raster::new(self.width, self.height, s).expect("mask dims are non-empty")
    }

    /// Non-zero samples are `true`.
    pub fn from_raster(r: &Raster) -> Self {
        Self {
            width: r.width(),
            height: r.height(),
            bits: r.samples().iter().map(|&s| s != 0).collect(),
        }
    }
}
