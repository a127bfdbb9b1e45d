use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    Major,
    Country,
    Dirt,
}

impl RoadClass {
    pub const ALL: [RoadClass; 3] = [RoadClass::Major, RoadClass::Country, RoadClass::Dirt];

    /// Label thickness in pixels.
    pub fn thickness(self) -> f64 {
        match self {
            RoadClass::Major => 7.0,
            RoadClass::Country => 5.0,
            RoadClass::Dirt => 3.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadClass::Major => "major",
            RoadClass::Country => "country",
            RoadClass::Dirt => "dirt",
        }
    }

    /// Largest thickness over all classes; vertices may sit this far off-canvas.
    pub fn margin() -> f64 {
        RoadClass::Major.thickness()
    }
}

impl FromStr for RoadClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoadClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown road class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Road {
    pub class: RoadClass,
    /// Vertices in pixel coordinates; pixel `(i, j)` has its center at `(i, j)`.
    pub points: Vec<[f64; 2]>,
}

/// Typed polylines on a fixed canvas.
///
/// Text form: an optional `# canvas <width> <height>` line, then one road per
/// line as `class x0,y0 x1,y1 ...`. Other `#` lines are comments.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadVectorSet {
    pub width: usize,
    pub height: usize,
    pub roads: Vec<Road>,
}

impl RoadVectorSet {
    pub fn new(width: usize, height: usize, roads: Vec<Road>) -> Result<Self> {
        let set = Self {
            width,
            height,
            roads,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            roads: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Shape("road canvas must be non-empty".into()));
        }
        let m = RoadClass::margin();
        for (i, road) in self.roads.iter().enumerate() {
            if road.points.len() < 2 {
                return Err(Error::Domain(format!("road {i} has fewer than 2 vertices")));
            }
            for p in &road.points {
                let ok_x = p[0].is_finite() && p[0] >= -m && p[0] <= self.width as f64 + m;
                let ok_y = p[1].is_finite() && p[1] >= -m && p[1] <= self.height as f64 + m;
                if !(ok_x && ok_y) {
                    return Err(Error::Domain(format!(
                        "road {i} vertex ({}, {}) is outside the canvas margin",
                        p[0], p[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# canvas {} {}\n", self.width, self.height);
        for road in &self.roads {
            s.push_str(road.class.name());
            for p in &road.points {
                let _ = write!(s, " {},{}", p[0], p[1]);
            }
            s.push('\n');
        }
        s
    }

    /// Parses the text form. `canvas` supplies dimensions when the text has no
    /// `# canvas` line.
    pub fn parse(text: &str, canvas: Option<(usize, usize)>) -> Result<Self> {
        let mut dims = None;
        let mut roads = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("canvas") {
                    let w = it.next().and_then(|t| t.parse().ok());
                    let h = it.next().and_then(|t| t.parse().ok());
                    match (w, h) {
                        (Some(w), Some(h)) => dims = Some((w, h)),
                        _ => {
                            return Err(Error::Format(format!(
                                "line {}: malformed canvas line",
                                lineno + 1
                            )))
                        }
                    }
                }
                continue;
            }
            let mut tokens = line.split_whitespace();
            let class: RoadClass = tokens.next().unwrap_or_default().parse()?;
            let mut points = Vec::new();
            for tok in tokens {
                let (x, y) = tok.split_once(',').ok_or_else(|| {
                    Error::Format(format!("line {}: bad vertex token `{tok}`", lineno + 1))
                })?;
                let parse = |v: &str| {
                    v.parse::<f64>().map_err(|_| {
                        Error::Format(format!("line {}: bad coordinate `{v}`", lineno + 1))
                    })
                };
                points.push([parse(x)?, parse(y)?]);
            }
            roads.push(Road { class, points });
        }
        let (width, height) = dims
            .or(canvas)
            .ok_or_else(|| Error::Format("road file has no `# canvas` line".into()))?;
        Self::new(width, height, roads)
    }

    pub fn read(path: impl AsRef<Path>, canvas: Option<(usize, usize)>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, canvas)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Squared distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_dist_sq(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    qx * qx + qy * qy
}

/// Marks every pixel whose center lies within half the class thickness of a
/// road segment. Classes are merged into a single mask.
pub fn rasterize_roads(roads: &RoadVectorSet) -> BinaryMask {
    let mut mask = BinaryMask::filled(roads.width, roads.height, false);
    for road in &roads.roads {
        stamp_polyline(&mut mask, &road.points, road.class.thickness() / 2.0);
    }
    mask
}

/// Sets all pixels within `radius` of the polyline.
pub(crate) fn stamp_polyline(mask: &mut BinaryMask, points: &[[f64; 2]], radius: f64) {
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let r2 = radius * radius;
    for seg in points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = ((a[0].min(b[0]) - radius).floor() as isize).max(0);
        let x1 = ((a[0].max(b[0]) + radius).ceil() as isize).min(w - 1);
        let y0 = ((a[1].min(b[1]) - radius).floor() as isize).max(0);
        let y1 = ((a[1].max(b[1]) + radius).ceil() as isize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if point_segment_dist_sq([x as f64, y as f64], a, b) <= r2 {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
}
