//! Grayscale rasters, normalization statistics and the non-local-means
//! pre-filter.

mod nlmeans;
mod pnm;

pub use nlmeans::{estimate_noise_sigma, nl_means, NlMeansParams};
pub use pnm::{
    decode_pgm, encode_pgm, encode_ppm, read_pgm, write_pgm, write_ppm, RgbImage,
};

use crate::error::{Error, Result};

/// Row-major grid of 16-bit samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    samples: Vec<u16>,
}

impl Raster {
    pub fn new(width: usize, height: usize, samples: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("raster must be non-empty, got {width}x{height}")));
        }
        if samples.len() != width * height {
            return Err(Error::Shape(format!(
                "raster {width}x{height} needs {} samples, got {}",
                width * height,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u16> {
        self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.samples[y * self.width + x]
    }

    pub fn max_sample(&self) -> u16 {
        self.samples.iter().copied().max().unwrap_or(0)
    }

    pub fn min_sample(&self) -> u16 {
        self.samples.iter().copied().min().unwrap_or(0)
    }

    /// Copies the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let samples = crop_grid(&self.samples, self.width, self.height, x0, y0, w, h)?;
        Self::new(w, h, samples)
    }
}

/// Row-major grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl FloatRaster {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("raster must be non-empty, got {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "raster {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let values = crop_grid(&self.values, self.width, self.height, x0, y0, w, h)?;
        Self::new(w, h, values)
    }

    /// Quantizes values in [0, 1] to 16-bit samples, `round(v * 65535)`.
    pub fn to_unit_raster(&self) -> Raster {
        let samples = self
            .values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            samples,
        }
    }

    /// Inverse of [`FloatRaster::to_unit_raster`].
    pub fn from_unit_raster(raster: &Raster) -> Self {
        let values = raster
            .samples
            .iter()
            .map(|&s| f64::from(s) / 65535.0)
            .collect();
        Self {
            width: raster.width,
            height: raster.height,
            values,
        }
    }
}

pub(crate) fn crop_grid<T: Copy>(
    data: &[T],
    width: usize,
    height: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
) -> Result<Vec<T>> {
    if x0 + w > width || y0 + h > height {
        return Err(Error::Shape(format!(
            "crop {w}x{h} at ({x0},{y0}) exceeds {width}x{height}"
        )));
    }
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        out.extend_from_slice(&data[y * width + x0..y * width + x0 + w]);
    }
    Ok(out)
}

/// Mirror (half-sample symmetric) index: `-1 -> 0`, `n -> n-1`, periodic in `2n`.
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Global z-score parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation over every pixel of every raster.
///
/// Accumulates exact integer moments `sum(x)` and `sum(x^2)`, so the result
/// is the two-pass value up to the final conversion to reals.
pub fn compute_stats<'a, I>(rasters: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a Raster>,
{
    let mut n: u128 = 0;
    let mut s1: u128 = 0;
    let mut s2: u128 = 0;
    for r in rasters {
        for &x in &r.samples {
            let x = u128::from(x);
            n += 1;
            s1 += x;
            s2 += x * x;
        }
    }
    stats_from_moments(n, s1, s2)
}

/// Same as [`compute_stats`] restricted to a rectangle of each raster.
pub fn compute_stats_in<'a, I>(regions: I) -> Result<NormStats>
where
    I: IntoIterator<Item = (&'a Raster, crate::dataset::Rect)>,
{
    let mut n: u128 = 0;
    let mut s1: u128 = 0;
    let mut s2: u128 = 0;
    for (r, rect) in regions {
        for y in rect.y0..rect.y0 + rect.height {
            for &x in &r.samples[y * r.width + rect.x0..y * r.width + rect.x0 + rect.width] {
                let x = u128::from(x);
                n += 1;
                s1 += x;
                s2 += x * x;
            }
        }
    }
    stats_from_moments(n, s1, s2)
}

fn stats_from_moments(n: u128, s1: u128, s2: u128) -> Result<NormStats> {
    if n == 0 {
        return Err(Error::Empty("no pixels to compute statistics over".into()));
    }
    // n * s2 - s1^2 is n^2 times the population variance, exactly.
    let spread = n * s2 - s1 * s1;
    if spread == 0 {
        return Err(Error::DegenerateStats("all samples are equal".into()));
    }
    let nf = n as f64;
    let mean = s1 as f64 / nf;
    let std = (spread as f64).sqrt() / nf;
    Ok(NormStats { mean, std })
}

/// `(sample - mean) / std` per pixel.
pub fn normalize(raster: &Raster, stats: NormStats) -> FloatRaster {
    assert!(stats.std > 0.0, "normalize requires std > 0");
    let inv = 1.0 / stats.std;
    let values = raster
        .samples
        .iter()
        .map(|&s| (f64::from(s) - stats.mean) * inv)
        .collect();
    FloatRaster {
        width: raster.width,
        height: raster.height,
        values,
    }
}
