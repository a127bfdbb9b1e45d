//! Exact Euclidean distance transform.
//!
//! Two separable passes of the lower-envelope-of-parabolas algorithm
//! (Felzenszwalb & Huttenlocher), carried out entirely on integers: squared
//! distances are exact and parabola intersections are compared as
//! rationals, so the result equals a brute-force nearest-pixel search.

use super::BinaryMask;
use crate::par;

/// Squared distance reported when the mask has no road pixel.
pub const UNREACHABLE: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    sq: Vec<u64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Squared pixel distances, [`UNREACHABLE`] when there is no road.
    pub fn squared(&self) -> &[u64] {
        &self.sq
    }

    /// Euclidean distance at `(x, y)`; `+inf` when unreachable.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        to_distance(self.sq[y * self.width + x])
    }

    pub fn distances(&self) -> Vec<f64> {
        self.sq.iter().map(|&s| to_distance(s)).collect()
    }
}

fn to_distance(sq: u64) -> f64 {
    if sq == UNREACHABLE {
        f64::INFINITY
    } else {
        (sq as f64).sqrt()
    }
}

/// `a_num / a_den <= b_num / b_den` for positive denominators.
fn rational_le(a_num: i128, a_den: i128, b_num: i128, b_den: i128) -> bool {
    a_num * b_den <= b_num * a_den
}

/// 1-D squared distance transform of a sampled function; `UNREACHABLE`
/// entries are absent sites.
fn transform_1d(f: &[u64], out: &mut [u64]) {
    let n = f.len();
    let mut sites: Vec<i64> = Vec::with_capacity(n);
    // boundary k separates sites k-1 and k; stored as (num, den)
    let mut bounds: Vec<(i128, i128)> = Vec::with_capacity(n);
    let height = |p: i64| f[p as usize] as i128 + (p as i128) * (p as i128);

    for q in 0..n as i64 {
        if f[q as usize] == UNREACHABLE {
            continue;
        }
        loop {
            let Some(&p) = sites.last() else {
                sites.push(q);
                bounds.push((i128::MIN, 1));
                break;
            };
            let num = height(q) - height(p);
            let den = 2 * (q - p) as i128;
            let k = sites.len() - 1;
            if k > 0 && rational_le(num, den, bounds[k].0, bounds[k].1) {
                sites.pop();
                bounds.pop();
                continue;
            }
            sites.push(q);
            bounds.push((num, den));
            break;
        }
    }

    if sites.is_empty() {
        out.fill(UNREACHABLE);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let q = q as i64;
        // advance while the next boundary lies strictly left of q
        while k + 1 < sites.len() && bounds[k + 1].0 < q as i128 * bounds[k + 1].1 {
            k += 1;
        }
        let p = sites[k];
        let d = (q - p).unsigned_abs();
        *o = d * d + f[p as usize];
    }
}

pub fn euclidean_distance_transform(mask: &BinaryMask) -> DistanceField {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();

    // Columns: vertical distances, stored column-major.
    let mut cols = vec![0u64; w * h];
    par::for_each_chunk_mut(&mut cols, h, |x, col| {
        let f: Vec<u64> = (0..h)
            .map(|y| if bits[y * w + x] { 0 } else { UNREACHABLE })
            .collect();
        transform_1d(&f, col);
    });

    let mut sq = vec![0u64; w * h];
    par::for_each_chunk_mut(&mut sq, w, |y, row| {
        let f: Vec<u64> = (0..w).map(|x| cols[x * h + y]).collect();
        transform_1d(&f, row);
    });

    DistanceField {
        width: w,
        height: h,
        sq,
    }
}
