//! The eight rigid symmetries of the pixel grid (rotations by quarter turns,
//! optionally followed by a horizontal flip), applied to row-major grids.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D4 {
    Rot0,
    Rot90,
    Rot180,
    Rot270,
    FlipRot0,
    FlipRot90,
    FlipRot180,
    FlipRot270,
}

impl D4 {
    pub const ROTATIONS: [D4; 4] = [D4::Rot0, D4::Rot90, D4::Rot180, D4::Rot270];
    pub const ALL: [D4; 8] = [
        D4::Rot0,
        D4::Rot90,
        D4::Rot180,
        D4::Rot270,
        D4::FlipRot0,
        D4::FlipRot90,
        D4::FlipRot180,
        D4::FlipRot270,
    ];

    /// Number of clockwise quarter turns and whether a horizontal flip follows.
    fn parts(self) -> (u8, bool) {
        match self {
            D4::Rot0 => (0, false),
            D4::Rot90 => (1, false),
            D4::Rot180 => (2, false),
            D4::Rot270 => (3, false),
            D4::FlipRot0 => (0, true),
            D4::FlipRot90 => (1, true),
            D4::FlipRot180 => (2, true),
            D4::FlipRot270 => (3, true),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            D4::Rot0 => "r0",
            D4::Rot90 => "r90",
            D4::Rot180 => "r180",
            D4::Rot270 => "r270",
            D4::FlipRot0 => "f0",
            D4::FlipRot90 => "f90",
            D4::FlipRot180 => "f180",
            D4::FlipRot270 => "f270",
        }
    }

    pub fn from_tag(tag: &str) -> Option<D4> {
        D4::ALL.into_iter().find(|t| t.tag() == tag)
    }

    /// Output dimensions for a `w x h` input.
    pub fn dims(self, w: usize, h: usize) -> (usize, usize) {
        if self.parts().0 % 2 == 1 {
            (h, w)
        } else {
            (w, h)
        }
    }

    /// Where the source pixel `(x, y)` of a `w x h` grid lands.
    pub fn map_point(self, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
        let (turns, flip) = self.parts();
        let (mut x, mut y, mut w, mut h) = (x, y, w, h);
        for _ in 0..turns {
            // clockwise quarter turn: (x, y) -> (h-1-y, x), dims swap
            let nx = h - 1 - y;
            let ny = x;
            x = nx;
            y = ny;
            std::mem::swap(&mut w, &mut h);
        }
        if flip {
            x = w - 1 - x;
        }
        (x, y)
    }

    /// The single symmetry equal to applying `self` and then `next`.
    pub fn then(self, next: D4) -> D4 {
        // A 3x2 probe with distinct values identifies every element.
        let probe: Vec<u8> = (0..6).collect();
        let (w1, h1) = self.dims(3, 2);
        let composed = next.apply(&self.apply(&probe, 3, 2), w1, h1);
        D4::ALL
            .into_iter()
            .find(|t| t.apply(&probe, 3, 2) == composed)
            .expect("D4 is closed under composition")
    }

    pub fn apply<T: Copy + Default>(self, data: &[T], w: usize, h: usize) -> Vec<T> {
        assert_eq!(data.len(), w * h);
        if self == D4::Rot0 {
            return data.to_vec();
        }
        let (ow, _) = self.dims(w, h);
        let mut out = vec![T::default(); data.len()];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = self.map_point(x, y, w, h);
                out[ny * ow + nx] = data[y * w + x];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn quarter_turn_layout() {
        // 2x1 grid [a b] turns into a 1x2 column [a; b] clockwise
        let out = D4::Rot90.apply(&[1, 2], 2, 1);
        assert_eq!(out, vec![1, 2]);
        // 2x2: [1 2; 3 4] -> [3 1; 4 2]
        assert_eq!(D4::Rot90.apply(&[1, 2, 3, 4], 2, 2), vec![3, 1, 4, 2]);
        assert_eq!(D4::FlipRot0.apply(&[1, 2, 3, 4], 2, 2), vec![2, 1, 4, 3]);
    }

    #[test]
    fn group_elements_are_distinct() {
        let data: Vec<u32> = (0..9).collect();
        let outs: HashSet<Vec<u32>> = D4::ALL.iter().map(|t| t.apply(&data, 3, 3)).collect();
        assert_eq!(outs.len(), 8);
    }

    #[test]
    fn composition_matches_sequential_application() {
        let data: Vec<u32> = (0..12).collect();
        for a in D4::ALL {
            for b in D4::ALL {
                let (w, h) = a.dims(4, 3);
                let seq = b.apply(&a.apply(&data, 4, 3), w, h);
                assert_eq!(a.then(b).apply(&data, 4, 3), seq);
            }
        }
        assert_eq!(D4::Rot90.then(D4::Rot270), D4::Rot0);
    }

    #[test]
    fn four_turns_is_identity() {
        let data: Vec<u32> = (0..12).collect();
        let mut cur = data.clone();
        let (mut w, mut h) = (4, 3);
        for _ in 0..4 {
            cur = D4::Rot90.apply(&cur, w, h);
            std::mem::swap(&mut w, &mut h);
        }
        assert_eq!(cur, data);
    }

    #[test]
    fn tags_round_trip() {
        for t in D4::ALL {
            assert_eq!(D4::from_tag(t.tag()), Some(t));
        }
    }
}
