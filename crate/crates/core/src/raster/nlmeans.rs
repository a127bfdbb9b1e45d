//! Non-local-means filtering.
//!
//! Every output pixel is a weighted average over a square search window.
//! The weight of a candidate is `exp(-max(0, d2 - 2 sigma^2) / h^2)`, where
//! `d2` is the mean squared difference between the two surrounding patches.
//! Patches and windows reach past the borders by mirroring. The noise level
//! sigma is estimated from the image itself (see [`estimate_noise_sigma`]).

use serde::{Deserialize, Serialize};

use super::{mirror_index, Raster};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlMeansParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    /// Smoothing strength in sample units.
    pub h: f64,
}

impl NlMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 1 {
            return Err(Error::config("patch_radius", "must be >= 1"));
        }
        if self.search_radius < self.patch_radius {
            return Err(Error::config("search_radius", "must be >= patch_radius"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config("h", "must be a positive finite number"));
        }
        Ok(())
    }
}

impl Default for NlMeansParams {
    fn default() -> Self {
        Self {
            patch_radius: 1,
            search_radius: 5,
            h: 2048.0,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust noise level: MAD of horizontal first differences, over sqrt(2) and 0.6745.
pub fn estimate_noise_sigma(raster: &Raster) -> f64 {
    let w = raster.width();
    if w < 2 {
        return 0.0;
    }
    let mut diffs: Vec<f64> = raster
        .samples()
        .chunks_exact(w)
        .flat_map(|row| row.windows(2).map(|p| f64::from(p[1]) - f64::from(p[0])))
        .collect();
    let med = median(&mut diffs);
    let mut dev: Vec<f64> = diffs.iter().map(|d| (d - med).abs()).collect();
    median(&mut dev) / 0.6745 / std::f64::consts::SQRT_2
}

pub fn nl_means(raster: &Raster, params: &NlMeansParams) -> Result<Raster> {
    params.validate()?;
    let (w, h) = (raster.width(), raster.height());
    let span = 2 * params.search_radius + 1;
    if w < span || h < span {
        return Err(Error::Shape(format!(
            "nl_means needs at least {span}x{span} pixels, got {w}x{h}"
        )));
    }
    let sigma = estimate_noise_sigma(raster);
    let two_sigma2 = 2.0 * sigma * sigma;
    let inv_h2 = 1.0 / (params.h * params.h);
    let pr = params.patch_radius as isize;
    let sr = params.search_radius as isize;
    let pad = pr + sr;

    // Mirror-padded copy so the inner loops never branch on borders.
    let pw = w + 2 * pad as usize;
    let ph = h + 2 * pad as usize;
    let mut padded = vec![0f64; pw * ph];
    for py in 0..ph {
        let sy = mirror_index(py as isize - pad, h);
        for px in 0..pw {
            let sx = mirror_index(px as isize - pad, w);
            padded[py * pw + px] = f64::from(raster.get(sx, sy));
        }
    }
    let patch_len = ((2 * pr + 1) * (2 * pr + 1)) as f64;
    let lo = f64::from(raster.min_sample());
    let hi = f64::from(raster.max_sample());

    let mut out = vec![0u16; w * h];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        let cy = y as isize + pad;
        for (x, dst) in row.iter_mut().enumerate() {
            let cx = x as isize + pad;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for dy in -sr..=sr {
                for dx in -sr..=sr {
                    let (qy, qx) = (cy + dy, cx + dx);
                    let mut d2 = 0.0;
                    for oy in -pr..=pr {
                        let a = ((cy + oy) as usize) * pw;
                        let b = ((qy + oy) as usize) * pw;
                        for ox in -pr..=pr {
                            let diff = padded[a + (cx + ox) as usize] - padded[b + (qx + ox) as usize];
                            d2 += diff * diff;
                        }
                    }
                    d2 /= patch_len;
                    let wgt = (-(d2 - two_sigma2).max(0.0) * inv_h2).exp();
                    acc += wgt * padded[qy as usize * pw + qx as usize];
                    norm += wgt;
                }
            }
            *dst = (acc / norm).round().clamp(lo, hi) as u16;
        }
    });
    Raster::new(w, h, out)
}
