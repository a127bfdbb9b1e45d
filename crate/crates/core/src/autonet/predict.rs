//! Whole-image inference by overlapping tiles.

use super::network::{forward, Mode};
use super::params::ModelParams;
use super::spec::ModelSpec;
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::raster::{mirror_index, FloatRaster};

/// Tiles pushed through the network per forward call.
const TILES_PER_PASS: usize = 4;

fn tile_starts(len: usize, tile: usize, step: usize) -> Vec<usize> {
    let last = len.saturating_sub(tile);
    let mut out: Vec<usize> = (0..=last).step_by(step).collect();
    if *out.last().expect("at least one start") != last {
        out.push(last);
    }
    out
}

/// Predicts every pixel of `image` with `tile x tile` windows whose
/// neighbours overlap by at least `overlap` pixels; overlapping predictions
/// are averaged. Images smaller than a tile are mirror-padded.
pub fn predict_full(
    spec: &ModelSpec,
    params: &ModelParams<f32>,
    image: &FloatRaster,
    tile: usize,
    overlap: usize,
) -> Result<FloatRaster> {
    if tile == 0 || tile < 2 * overlap {
        return Err(Error::Domain(format!(
            "tile {tile} must be positive and at least twice the overlap {overlap}"
        )));
    }
    spec.check_input(tile, tile)?;
    let (w, h) = (image.width(), image.height());
    let (pw, ph) = (w.max(tile), h.max(tile));
    let step = tile - overlap;
    let xs = tile_starts(pw, tile, step);
    let ys = tile_starts(ph, tile, step);
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();

    let src = image.values();
    let mut sum = vec![0.0f64; pw * ph];
    let mut count = vec![0u32; pw * ph];
    for group in origins.chunks(TILES_PER_PASS) {
        let mut data = Vec::with_capacity(group.len() * tile * tile);
        for &(x0, y0) in group {
            for ty in 0..tile {
                let sy = mirror_index((y0 + ty) as isize, h);
                for tx in 0..tile {
                    let sx = mirror_index((x0 + tx) as isize, w);
                    data.push(src[sy * w + sx] as f32);
                }
            }
        }
        let batch = Tensor4::from_vec(group.len(), 1, tile, tile, data)?;
        let (pred, _) = forward(spec, params, &batch, Mode::Infer)?;
        for (b, &(x0, y0)) in group.iter().enumerate() {
            let p = pred.item(b);
            for ty in 0..tile {
                let row = (y0 + ty) * pw + x0;
                for tx in 0..tile {
                    sum[row + tx] += f64::from(p[ty * tile + tx]);
                    count[row + tx] += 1;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(sum[y * pw + x] / f64::from(count[y * pw + x]));
        }
    }
    FloatRaster::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::params::init_params;
    use crate::rng::SplitMix64;

    #[test]
    fn starts_cover_the_axis() {
        assert_eq!(tile_starts(64, 32, 24), vec![0, 24, 32]);
        assert_eq!(tile_starts(32, 32, 24), vec![0]);
        assert_eq!(tile_starts(20, 32, 24), vec![0]);
    }

    #[test]
    fn single_tile_equals_direct_forward() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f32>(&spec, 3).unwrap();
        let mut r = SplitMix64::new(1);
        let vals: Vec<f64> = (0..32 * 32).map(|_| r.normal()).collect();
        let img = FloatRaster::new(32, 32, vals.clone()).unwrap();
        let out = predict_full(&spec, &p, &img, 32, 8).unwrap();
        let x = Tensor4::from_vec(1, 1, 32, 32, vals.iter().map(|&v| v as f32).collect()).unwrap();
        let (y, _) = forward(&spec, &p, &x, Mode::Infer).unwrap();
        for (a, b) in out.values().iter().zip(&y.data) {
            assert_eq!(*a, f64::from(*b));
        }
    }

    #[test]
    fn any_size_maps_to_same_size() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f32>(&spec, 3).unwrap();
        for (w, h) in [(10, 7), (50, 33), (16, 40)] {
            let img = FloatRaster::filled(w, h, 0.3).unwrap();
            let out = predict_full(&spec, &p, &img, 16, 4).unwrap();
            assert_eq!((out.width(), out.height()), (w, h));
        }
    }

    #[test]
    fn constant_image_repeats_the_small_forward() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f32>(&spec, 5).unwrap();
        let img = FloatRaster::filled(64, 48, 0.7).unwrap();
        let tiled = predict_full(&spec, &p, &img, 16, 0).unwrap();
        let x = Tensor4::from_vec(1, 1, 16, 16, vec![0.7f32; 256]).unwrap();
        let (y, _) = forward(&spec, &p, &x, Mode::Infer).unwrap();
        for yy in 0..48 {
            for xx in 0..64 {
                assert_eq!(tiled.get(xx, yy), f64::from(y.data[(yy % 16) * 16 + xx % 16]));
            }
        }
    }

    #[test]
    fn rejects_bad_tiles() {
        let spec = ModelSpec::mini_fcn();
        let p = init_params::<f32>(&spec, 3).unwrap();
        let img = FloatRaster::filled(40, 40, 0.0).unwrap();
        assert!(predict_full(&spec, &p, &img, 16, 9).is_err());
        assert!(predict_full(&spec, &p, &img, 20, 2).is_err());
    }
}
