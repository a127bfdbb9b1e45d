use super::{euclidean_distance_transform, BinaryMask, UNREACHABLE};
use crate::d4::D4;
use crate::error::{Error, Result};
use crate::raster::FloatRaster;

/// Binary road mask, its smooth tolerance-banded target, and the mask of
/// pixels that take part in loss and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TolerantGroundTruth {
    pub t_max: u32,
    pub y_tol: FloatRaster,
    pub y_bin: BinaryMask,
    pub valid: BinaryMask,
}

impl TolerantGroundTruth {
    pub fn width(&self) -> usize {
        self.y_bin.width()
    }

    pub fn height(&self) -> usize {
        self.y_bin.height()
    }

    pub fn transformed(&self, t: D4) -> Self {
        let (w, h) = (self.width(), self.height());
        let (nw, nh) = t.dims(w, h);
        Self {
            t_max: self.t_max,
            y_tol: FloatRaster::new(nw, nh, t.apply(self.y_tol.values(), w, h))
                .expect("permutation keeps values finite"),
            y_bin: self.y_bin.transformed(t),
            valid: self.valid.transformed(t),
        }
    }
}

/// Target value for a background pixel at squared distance `sq` from the
/// nearest road: `1 - t / (t_max + 1)` inside the band, 0 beyond it.
pub fn tolerance_value(sq: u64, t_max: u32) -> f64 {
    if sq == 0 {
        return 1.0;
    }
    if sq == UNREACHABLE || sq > u64::from(t_max) * u64::from(t_max) {
        return 0.0;
    }
    1.0 - (sq as f64).sqrt() / (f64::from(t_max) + 1.0)
}

pub fn make_tolerant(mask: &BinaryMask, t_max: u32, valid: &BinaryMask) -> Result<TolerantGroundTruth> {
    if !mask.same_dims(valid) {
        return Err(Error::Shape(format!(
            "road mask {}x{} and valid mask {}x{} differ",
            mask.width(),
            mask.height(),
            valid.width(),
            valid.height()
        )));
    }
    let dist = euclidean_distance_transform(mask);
    let values = dist
        .squared()
        .iter()
        .map(|&sq| tolerance_value(sq, t_max))
        .collect();
    Ok(TolerantGroundTruth {
        t_max,
        y_tol: FloatRaster::new(mask.width(), mask.height(), values)?,
        y_bin: mask.clone(),
        valid: valid.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point_mask(w: usize, h: usize, pts: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::filled(w, h, false);
        for &(x, y) in pts {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn zero_tolerance_is_binary() {
        let m = point_mask(9, 7, &[(1, 1), (5, 4)]);
        let gt = make_tolerant(&m, 0, &BinaryMask::filled(9, 7, true)).unwrap();
        for (v, b) in gt.y_tol.values().iter().zip(m.bits()) {
            assert_eq!(*v, if *b { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn band_values() {
        let m = point_mask(11, 11, &[(5, 5)]);
        let gt = make_tolerant(&m, 4, &BinaryMask::filled(11, 11, true)).unwrap();
        assert_eq!(gt.y_tol.get(6, 5), 1.0 - 1.0 / 5.0);
        assert!((gt.y_tol.get(6, 5) - 0.8).abs() < 1e-15);
        assert_eq!(gt.y_tol.get(6, 6), 1.0 - 2f64.sqrt() / 5.0);
        assert!((gt.y_tol.get(6, 6) - 0.71716).abs() < 1e-5);
        assert!((gt.y_tol.get(9, 5) - 0.2).abs() < 1e-15);
        assert_eq!(gt.y_tol.get(10, 5), 0.0);
        assert_eq!(gt.y_tol.get(5, 5), 1.0);
    }

    #[test]
    fn no_roads_all_zero() {
        let m = BinaryMask::filled(4, 4, false);
        let gt = make_tolerant(&m, 8, &BinaryMask::filled(4, 4, true)).unwrap();
        assert!(gt.y_tol.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_valid_rejected() {
        let m = BinaryMask::filled(4, 4, false);
        assert!(make_tolerant(&m, 1, &BinaryMask::filled(4, 5, true)).is_err());
    }

    fn random_mask(seed: u64) -> BinaryMask {
        let mut r = crate::rng::SplitMix64::new(seed);
        BinaryMask::new(24, 20, (0..480).map(|_| r.uniform() < 0.03).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn values_in_unit_interval_and_exact_on_roads(seed in any::<u64>(), t_max in 0u32..10) {
            let m = random_mask(seed);
            let gt = make_tolerant(&m, t_max, &BinaryMask::filled(24, 20, true)).unwrap();
            for (v, b) in gt.y_tol.values().iter().zip(m.bits()) {
                prop_assert!((0.0..=1.0).contains(v));
                prop_assert_eq!(*v == 1.0, *b);
            }
        }

        #[test]
        fn monotone_in_tolerance(seed in any::<u64>(), t_max in 0u32..9) {
            let m = random_mask(seed);
            let valid = BinaryMask::filled(24, 20, true);
            let a = make_tolerant(&m, t_max, &valid).unwrap();
            let b = make_tolerant(&m, t_max + 1, &valid).unwrap();
            for (x, y) in a.y_tol.values().iter().zip(b.y_tol.values()) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn commutes_with_rotation(seed in any::<u64>(), t_max in 0u32..9) {
            let m = random_mask(seed);
            let valid = BinaryMask::filled(24, 20, true);
            let gt = make_tolerant(&m, t_max, &valid).unwrap();
            for t in D4::ALL {
                let lhs = make_tolerant(&m.transformed(t), t_max, &valid.transformed(t)).unwrap();
                prop_assert_eq!(&lhs, &gt.transformed(t));
            }
        }
    }
}
