//! On-disk patch sets: one PGM per grid plus a JSON manifest.
//!
//! Images are stored as their raw 16-bit samples and re-normalized on load,
//! targets as `round(y_tol * 65535)`, masks as 0/255.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PatchEntry, PatchSet, Provenance};
use crate::error::{Error, Result};
use crate::groundtruth::BinaryMask;
use crate::raster::{normalize, read_pgm, write_pgm, FloatRaster, NormStats, Raster};

pub const PATCH_MANIFEST: &str = "patches.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    patch_size: usize,
    t_max: u32,
    stats: NormStats,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    stem: String,
    provenance: Provenance,
}

fn raw_image(image: &FloatRaster, stats: NormStats) -> Result<Raster> {
    let samples = image
        .values()
        .iter()
        .map(|&v| (v * stats.std + stats.mean).round().clamp(0.0, 65535.0) as u16)
        .collect();
    Raster::new(image.width(), image.height(), samples)
}

pub fn write_patch_set(set: &PatchSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, e) in set.entries.iter().enumerate() {
        let stem = format!("p{i:06}");
        write_pgm(&raw_image(&e.image, set.stats)?, dir.join(format!("{stem}_image.pgm")))?;
        write_pgm(&e.y_tol.to_unit_raster(), dir.join(format!("{stem}_ytol.pgm")))?;
        write_pgm(&e.y_bin.to_raster(), dir.join(format!("{stem}_ybin.pgm")))?;
        write_pgm(&e.valid.to_raster(), dir.join(format!("{stem}_valid.pgm")))?;
        entries.push(ManifestEntry {
            stem,
            provenance: e.provenance.clone(),
        });
    }
    let manifest = Manifest {
        patch_size: set.patch_size,
        t_max: set.t_max,
        stats: set.stats,
        entries,
    };
    let path = dir.join(PATCH_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_patch_set(dir: impl AsRef<Path>) -> Result<PatchSet> {
    let dir = dir.as_ref();
    let path = dir.join(PATCH_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let s = m.patch_size;
    let mut entries = Vec::with_capacity(m.entries.len());
    for me in m.entries {
        let load = |suffix: &str| -> Result<Raster> {
            let r = read_pgm(dir.join(format!("{}_{suffix}.pgm", me.stem)))?;
            if r.width() != s || r.height() != s {
                return Err(Error::Shape(format!("{}_{suffix}.pgm is not {s}x{s}", me.stem)));
            }
            Ok(r)
        };
        entries.push(PatchEntry {
            image: normalize(&load("image")?, m.stats),
            y_tol: FloatRaster::from_unit_raster(&load("ytol")?),
            y_bin: BinaryMask::from_raster(&load("ybin")?),
            valid: BinaryMask::from_raster(&load("valid")?),
            provenance: me.provenance,
        });
    }
    Ok(PatchSet {
        patch_size: s,
        t_max: m.t_max,
        stats: m.stats,
        entries,
    })
}
