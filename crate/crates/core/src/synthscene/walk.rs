//! Smoothed random walks clipped to the canvas.

use crate::groundtruth::roads::point_segment_dist_sq;
use crate::groundtruth::BinaryMask;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy)]
pub(crate) struct WalkParams {
    pub step: f64,
    /// Standard deviation of the curvature innovation per step (radians).
    pub turn_sd: f64,
    /// AR(1) coefficient of the curvature.
    pub persistence: f64,
    /// Pull of the heading back toward the initial one per step.
    pub pull: f64,
}

pub(crate) fn polyline_length(p: &[[f64; 2]]) -> f64 {
    p.windows(2).map(|s| ((s[1][0] - s[0][0]).powi(2) + (s[1][1] - s[0][1]).powi(2)).sqrt()).sum()
}

/// True when any pixel center within `clearance` of segment `a`-`b` is set.
fn touches(mask: &BinaryMask, a: [f64; 2], b: [f64; 2], clearance: f64) -> bool {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let x0 = ((a[0].min(b[0]) - clearance).floor() as isize).max(0);
    let x1 = ((a[0].max(b[0]) + clearance).ceil() as isize).min(w - 1);
    let y0 = ((a[1].min(b[1]) - clearance).floor() as isize).max(0);
    let y1 = ((a[1].max(b[1]) + clearance).ceil() as isize).min(h - 1);
    let c2 = clearance * clearance;
    (y0..=y1).any(|y| {
        (x0..=x1).any(|x| mask.get(x as usize, y as usize) && point_segment_dist_sq([x as f64, y as f64], a, b) <= c2)
    })
}

/// Walks from `start` until it leaves `[0, w-1] x [0, h-1]` (the final vertex
/// is the exit point on the border), reaches `max_len`, or would come within
/// `clearance` of a set pixel of `avoid` (the walk then ends before that step).
#[allow(clippy::too_many_arguments)]
pub(crate) fn random_walk(
    rng: &mut SplitMix64,
    start: [f64; 2],
    heading0: f64,
    params: &WalkParams,
    w: usize,
    h: usize,
    max_len: f64,
    avoid: Option<&BinaryMask>,
    clearance: f64,
) -> Vec<[f64; 2]> {
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let mut pts = vec![start];
    if let Some(m) = avoid {
        if touches(m, start, start, clearance) {
            return pts;
        }
    }
    let (mut heading, mut curv, mut len) = (heading0, 0.0, 0.0);
    let mut p = start;
    while len < max_len {
        curv = params.persistence * curv + params.turn_sd * rng.normal();
        heading += curv + params.pull * (heading0 - heading);
        let step = params.step.min(max_len - len);
        let mut q = [p[0] + step * libm::cos(heading), p[1] + step * libm::sin(heading)];
        let mut t = 1.0f64;
        for (axis, hi) in [(0, xmax), (1, ymax)] {
            let d = q[axis] - p[axis];
            if q[axis] < 0.0 {
                t = t.min(-p[axis] / d);
            } else if q[axis] > hi {
                t = t.min((hi - p[axis]) / d);
            }
        }
        let leaving = t < 1.0;
        if leaving {
            q = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
        }
        if let Some(m) = avoid {
            if touches(m, p, q, clearance) {
                break;
            }
        }
        len += step * t;
        pts.push(q);
        p = q;
        if leaving {
            break;
        }
    }
    pts
}
