//! Synthetic SAR-like scenes with known road vectors.
//!
//! Reflectivity is a low-frequency background modulated by dark roads with
//! bright embankment rims, dark wide rivers and thin bright hedges; the image
//! is that field under multiplicative Gamma speckle. Every random draw comes
//! from [`SplitMix64`] streams derived from the scene seed, one stream per
//! component, so a config reproduces the same bytes on every platform.

mod walk;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groundtruth::roads::stamp_polyline;
use crate::groundtruth::{euclidean_distance_transform, rasterize_roads, BinaryMask, Road, RoadClass, RoadVectorSet};
use crate::par;
use crate::raster::{write_pgm, FloatRaster, Raster};
use crate::rng::SplitMix64;

use walk::{polyline_length, random_walk, WalkParams};

/// Fixed factor mapping unit reflectivity to 16-bit samples.
pub const SPECKLE_SCALE: f64 = 1024.0;
/// Width of the bright embankment around every road, in pixels.
pub const RIM_WIDTH: u64 = 2;
/// Reflectivity multiplier inside rivers.
pub const RIVER_GAIN: f64 = 0.12;
/// Reflectivity multiplier on hedges.
pub const HEDGE_GAIN: f64 = 2.5;
pub const MIN_RIVER_WIDTH: u32 = 11;

const STREAM_BACKGROUND: u64 = 1;
const STREAM_RIVERS: u64 = 2;
const STREAM_ROADS: u64 = 3;
const STREAM_HEDGES: u64 = 4;
const STREAM_SPECKLE: u64 = 5;
/// Placement retries per object before giving up.
const MAX_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_major: usize,
    pub n_country: usize,
    pub n_dirt: usize,
    pub n_rivers: usize,
    pub n_hedges: usize,
    pub looks: u32,
    pub contrast: f64,
    pub embankment_gain: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 1024,
            height: 1024,
            n_major: 4,
            n_country: 4,
            n_dirt: 2,
            n_rivers: 1,
            n_hedges: 6,
            looks: 1,
            contrast: 0.3,
            embankment_gain: 2.0,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 128 {
            return Err(Error::config("scene.width", format!("must be >= 128, got {}", self.width)));
        }
        if self.height < 128 {
            return Err(Error::config("scene.height", format!("must be >= 128, got {}", self.height)));
        }
        if self.looks < 1 {
            return Err(Error::config("scene.looks", "must be >= 1"));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::config("scene.contrast", format!("must lie in (0, 1), got {}", self.contrast)));
        }
        if !(self.embankment_gain >= 1.0 && self.embankment_gain.is_finite()) {
            return Err(Error::config(
                "scene.embankment_gain",
                format!("must be finite and >= 1, got {}", self.embankment_gain),
            ));
        }
        Ok(())
    }

    /// The same scene parameters under another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Non-road linear feature: rivers (dark, wide) or hedges (bright, thin).
#[derive(Debug, Clone, PartialEq)]
pub struct Distractor {
    pub points: Vec<[f64; 2]>,
    /// Footprint covers pixel centers within this distance of the polyline.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Raster,
    pub roads: RoadVectorSet,
    pub valid: BinaryMask,
    /// Pre-speckle field in unit reflectivity.
    pub reflectivity: FloatRaster,
    pub rivers: Vec<Distractor>,
    pub hedges: Vec<Distractor>,
}

fn footprint(width: usize, height: usize, items: &[Distractor]) -> BinaryMask {
    let mut m = BinaryMask::filled(width, height, false);
    for d in items {
        stamp_polyline(&mut m, &d.points, d.half_width);
    }
    m
}

impl Scene {
    pub fn river_footprint(&self) -> BinaryMask {
        footprint(self.roads.width, self.roads.height, &self.rivers)
    }

    pub fn hedge_footprint(&self) -> BinaryMask {
        footprint(self.roads.width, self.roads.height, &self.hedges)
    }
}

/// Smooth value noise in [0, 1]: random lattice values every `cell` pixels,
/// blended with a smoothstep.
fn value_noise(rng: &mut SplitMix64, width: usize, height: usize, cell: usize) -> Vec<f64> {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.uniform()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y / cell;
        let ty = smooth((y % cell) as f64 / cell as f64);
        for x in 0..width {
            let gx = x / cell;
            let tx = smooth((x % cell) as f64 / cell as f64);
            let v00 = lattice[gy * gw + gx];
            let v10 = lattice[gy * gw + gx + 1];
            let v01 = lattice[(gy + 1) * gw + gx];
            let v11 = lattice[(gy + 1) * gw + gx + 1];
            let top = v00 + (v10 - v00) * tx;
            let bottom = v01 + (v11 - v01) * tx;
            out.push(top + (bottom - top) * ty);
        }
    }
    out
}

/// Background reflectivity in [0.55, 1.0].
fn background(cfg: &SceneConfig) -> Vec<f64> {
    let mut rng = SplitMix64::derive(cfg.seed, STREAM_BACKGROUND);
    let coarse = value_noise(&mut rng, cfg.width, cfg.height, 128);
    let fine = value_noise(&mut rng, cfg.width, cfg.height, 32);
    coarse.iter().zip(&fine).map(|(c, f)| 0.55 + 0.3 * c + 0.15 * f).collect()
}

fn road_walk(class: RoadClass) -> WalkParams {
    match class {
        RoadClass::Major => WalkParams { step: 16.0, turn_sd: 0.015, persistence: 0.9, pull: 0.05 },
        RoadClass::Country => WalkParams { step: 12.0, turn_sd: 0.03, persistence: 0.85, pull: 0.03 },
        RoadClass::Dirt => WalkParams { step: 8.0, turn_sd: 0.05, persistence: 0.8, pull: 0.02 },
    }
}

const RIVER_WALK: WalkParams = WalkParams { step: 20.0, turn_sd: 0.01, persistence: 0.9, pull: 0.05 };
const HEDGE_WALK: WalkParams = WalkParams { step: 10.0, turn_sd: 0.02, persistence: 0.5, pull: 0.2 };

fn edge_start(rng: &mut SplitMix64, w: f64, h: f64) -> ([f64; 2], f64) {
    use std::f64::consts::{FRAC_PI_2, PI};
    let jitter = rng.uniform_range(-0.5, 0.5);
    match rng.below(4) {
        0 => ([rng.uniform_range(0.0, w - 1.0), 0.0], FRAC_PI_2 + jitter),
        1 => ([rng.uniform_range(0.0, w - 1.0), h - 1.0], -FRAC_PI_2 + jitter),
        2 => ([0.0, rng.uniform_range(0.0, h - 1.0)], jitter),
        _ => ([w - 1.0, rng.uniform_range(0.0, h - 1.0)], PI + jitter),
    }
}

fn place<F>(what: &str, mut attempt: F) -> Result<Vec<[f64; 2]>>
where
    F: FnMut() -> Option<Vec<[f64; 2]>>,
{
    for _ in 0..MAX_ATTEMPTS {
        if let Some(p) = attempt() {
            return Ok(p);
        }
    }
    Err(Error::Domain(format!("could not place {what} after {MAX_ATTEMPTS} attempts")))
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let (wf, hf) = (w as f64, h as f64);
    let max_len = 4.0 * (wf + hf);

    let mut rng = SplitMix64::derive(cfg.seed, STREAM_RIVERS);
    let mut rivers = Vec::with_capacity(cfg.n_rivers);
    let mut river_mask = BinaryMask::filled(w, h, false);
    for _ in 0..cfg.n_rivers {
        let width = MIN_RIVER_WIDTH + rng.below(7) as u32;
        let points = place("a river", || {
            let (start, heading) = edge_start(&mut rng, wf, hf);
            let p = random_walk(&mut rng, start, heading, &RIVER_WALK, w, h, max_len, None, 0.0);
            (polyline_length(&p) >= 0.5 * wf.min(hf)).then_some(p)
        })?;
        let d = Distractor { points, half_width: f64::from(width) / 2.0 };
        stamp_polyline(&mut river_mask, &d.points, d.half_width);
        rivers.push(d);
    }

    let mut rng = SplitMix64::derive(cfg.seed, STREAM_ROADS);
    let classes = [(RoadClass::Major, cfg.n_major), (RoadClass::Country, cfg.n_country), (RoadClass::Dirt, cfg.n_dirt)];
    let mut roads = Vec::new();
    for (class, n) in classes {
        // roads end at a river bank; the clearance keeps rims off the water too
        let clearance = class.thickness() / 2.0 + RIM_WIDTH as f64 + 1.0;
        for _ in 0..n {
            let points = place(class.name(), || {
                let (start, heading) = edge_start(&mut rng, wf, hf);
                let p = random_walk(&mut rng, start, heading, &road_walk(class), w, h, max_len, Some(&river_mask), clearance);
                (polyline_length(&p) >= 64.0).then_some(p)
            })?;
            roads.push(Road { class, points });
        }
    }
    let roads = RoadVectorSet::new(w, h, roads)?;
    let road_mask = rasterize_roads(&roads);

    let mut rng = SplitMix64::derive(cfg.seed, STREAM_HEDGES);
    let blocked = river_mask.union(&road_mask)?;
    let mut hedges = Vec::with_capacity(cfg.n_hedges);
    for _ in 0..cfg.n_hedges {
        let half_width = if rng.below(2) == 0 { 0.5 } else { 1.0 };
        let target = rng.uniform_range(80.0, 320.0);
        let clearance = half_width + RIM_WIDTH as f64 + 2.0;
        let points = place("a hedge", || {
            let start = [rng.uniform_range(0.0, wf - 1.0), rng.uniform_range(0.0, hf - 1.0)];
            let heading = rng.uniform_range(-std::f64::consts::PI, std::f64::consts::PI);
            let p = random_walk(&mut rng, start, heading, &HEDGE_WALK, w, h, target, Some(&blocked), clearance);
            (polyline_length(&p) >= 40.0).then_some(p)
        })?;
        hedges.push(Distractor { points, half_width });
    }
    let hedge_mask = footprint(w, h, &hedges);

    let mut refl = background(cfg);
    let rim = euclidean_distance_transform(&road_mask);
    for (i, r) in refl.iter_mut().enumerate() {
        if river_mask.bits()[i] {
            *r *= RIVER_GAIN;
        }
        if hedge_mask.bits()[i] {
            *r *= HEDGE_GAIN;
        }
        if road_mask.bits()[i] {
            *r *= cfg.contrast;
        } else if rim.squared()[i] <= RIM_WIDTH * RIM_WIDTH {
            *r *= cfg.embankment_gain;
        }
    }
    let reflectivity = FloatRaster::new(w, h, refl)?;
    let image = add_speckle(&reflectivity, cfg.looks, cfg.seed)?;
    Ok(Scene {
        image,
        roads,
        valid: BinaryMask::filled(w, h, true),
        reflectivity,
        rivers,
        hedges,
    })
}

/// Multiplies each pixel by unit-mean Gamma(L, 1/L) speckle and maps to
/// 16-bit samples as `round(value * SPECKLE_SCALE)`, saturating at 65535.
pub fn add_speckle(reflectivity: &FloatRaster, looks: u32, seed: u64) -> Result<Raster> {
    if looks < 1 {
        return Err(Error::Domain("looks must be >= 1".into()));
    }
    if let Some(i) = reflectivity.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::Domain(format!("reflectivity must be positive, found {} at index {i}", reflectivity.values()[i])));
    }
    let mut rng = SplitMix64::derive(seed, STREAM_SPECKLE);
    let shape = f64::from(looks);
    let scale = 1.0 / shape;
    let samples = reflectivity
        .values()
        .iter()
        .map(|&r| {
            let v = libm::round(r * rng.gamma(shape, scale) * SPECKLE_SCALE);
            v.min(f64::from(u16::MAX)) as u16
        })
        .collect();
    Raster::new(reflectivity.width(), reflectivity.height(), samples)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub image: PathBuf,
    pub roads: PathBuf,
    pub valid: PathBuf,
    pub seed: u64,
}

pub const SCENE_MANIFEST: &str = "manifest.txt";

/// Writes `n_scenes` scenes into `out_dir` (created if missing) plus
/// `manifest.txt`. Scene `i` uses seed `config.seed + i`. Manifest lines read
/// `scene_id image roads valid seed` with paths relative to the manifest; a
/// leading `# config` comment records the base configuration as JSON.
pub fn generate_dataset(config: &SceneConfig, n_scenes: usize, out_dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    config.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let written = par::map_indexed(n_scenes, |i| -> Result<ManifestEntry> {
        let seed = config.seed.wrapping_add(i as u64);
        let scene = generate_scene(&config.with_seed(seed))?;
        let id = format!("scene_{i:04}");
        let entry = ManifestEntry {
            image: PathBuf::from(format!("{id}.pgm")),
            roads: PathBuf::from(format!("{id}.roads")),
            valid: PathBuf::from(format!("{id}_valid.pgm")),
            scene_id: id,
            seed,
        };
        write_pgm(&scene.image, out.join(&entry.image))?;
        scene.roads.write(out.join(&entry.roads))?;
        write_pgm(&scene.valid.to_raster(), out.join(&entry.valid))?;
        Ok(entry)
    });
    let entries = written.into_iter().collect::<Result<Vec<_>>>()?;
    let json = serde_json::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
    let mut text = format!("# config {json}\n");
    for e in &entries {
        text.push_str(&format!(
            "{} {} {} {} {}\n",
            e.scene_id,
            e.image.display(),
            e.roads.display(),
            e.valid.display(),
            e.seed
        ));
    }
    let path = out.join(SCENE_MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

/// Parses a scene manifest; returned paths are resolved against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("{}:{}: expected 5 fields, found {}", path.display(), ln + 1, f.len())));
        }
        let seed = f[4]
            .parse()
            .map_err(|_| Error::Format(format!("{}:{}: bad seed `{}`", path.display(), ln + 1, f[4])))?;
        out.push(ManifestEntry {
            scene_id: f[0].to_string(),
            image: base.join(f[1]),
            roads: base.join(f[2]),
            valid: base.join(f[3]),
            seed,
        });
    }
    Ok(out)
}
