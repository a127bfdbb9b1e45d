//! One function per subcommand. Each reads its inputs from the config's `io`
//! section, writes into `io.out`, and records a run manifest there.

use std::fs;
use std::path::{Path, PathBuf};

use sartol::autonet::{read_checkpoint, train_with, write_checkpoint, Checkpoint};
use sartol::dataset::{read_patch_set, write_patch_set};
use sartol::eval::{binarize, confusion, metrics, overlay, sweep_report, MetricsReport};
use sartol::groundtruth::{make_tolerant, rasterize_roads, BinaryMask, RoadVectorSet};
use sartol::pipeline::{run_experiment, synth_scenes, training_patches, training_stats, SceneData};
use sartol::raster::{normalize, read_pgm, write_pgm, write_ppm, FloatRaster};
use sartol::synthscene::{generate_dataset, read_manifest, SCENE_MANIFEST};
use sartol::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::Recorder;

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(key, "path is required for this command"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.io.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    Ok(out)
}

fn valid_or_full(path: &Option<PathBuf>, w: usize, h: usize, rec: &mut Recorder) -> Result<BinaryMask> {
    match path {
        Some(p) => {
            rec.input(p)?;
            let m = BinaryMask::from_raster(&read_pgm(p)?);
            if m.width() != w || m.height() != h {
                return Err(Error::Shape(format!("{} is {}x{}, expected {w}x{h}", p.display(), m.width(), m.height())));
            }
            Ok(m)
        }
        None => Ok(BinaryMask::filled(w, h, true)),
    }
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("synth", cfg);
    generate_dataset(&cfg.scene, cfg.synth.n_scenes, out)?;
    let manifest = out.join(SCENE_MANIFEST);
    for e in read_manifest(&manifest)? {
        for p in [e.image, e.roads, e.valid] {
            rec.output(&p)?;
        }
    }
    rec.output(&manifest)?;
    rec.finish(out)?;
    Ok(())
}

pub fn gt(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("gt", cfg);
    let roads_path = required(&cfg.io.roads, "io.roads")?;
    rec.input(roads_path)?;
    let roads = RoadVectorSet::read(roads_path, None)?;
    let valid = valid_or_full(&cfg.io.valid, roads.width, roads.height, &mut rec)?;
    let gt = make_tolerant(&rasterize_roads(&roads), cfg.train.t_max, &valid)?;
    let files = [
        ("ybin.pgm", gt.y_bin.to_raster()),
        ("ytol.pgm", gt.y_tol.to_unit_raster()),
        ("valid.pgm", gt.valid.to_raster()),
    ];
    for (name, raster) in files {
        let p = out.join(name);
        write_pgm(&raster, &p)?;
        rec.output(&p)?;
    }
    rec.finish(out)?;
    Ok(())
}

fn load_scenes(manifest: &Path, rec: &mut Recorder) -> Result<Vec<SceneData>> {
    rec.input(manifest)?;
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Empty(format!("{} lists no scenes", manifest.display())));
    }
    entries
        .iter()
        .map(|e| {
            for p in [&e.image, &e.roads, &e.valid] {
                rec.input(p)?;
            }
            SceneData::load(e)
        })
        .collect()
}

pub fn tile(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("tile", cfg);
    let scenes = load_scenes(required(&cfg.io.manifest, "io.manifest")?, &mut rec)?;
    let stats = training_stats(&scenes, &cfg.dataset)?;
    let set = training_patches(&scenes, &cfg.dataset, cfg.train.t_max, stats)?;
    let dir = out.join("patches");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    }
    write_patch_set(&set, &dir)?;
    rec.output_dir(&dir)?;
    rec.finish(out)?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("train", cfg);
    let dir = required(&cfg.io.patches, "io.patches")?;
    rec.input_dir(dir)?;
    let set = read_patch_set(dir)?;
    let spec = cfg.train.model.build();
    let (params, history) = train_with(&spec, &set, &cfg.train, |r| {
        eprintln!("epoch {}: lr {:.3e}, mean loss {:.6}", r.epoch, r.lr, r.mean_loss)
    })?;
    let ck = out.join("model.ckpt");
    write_checkpoint(&Checkpoint { spec, params, stats: set.stats }, &ck)?;
    let hist = out.join("history.csv");
    write_text(&hist, &history.to_csv())?;
    rec.output(&ck)?;
    rec.output(&hist)?;
    rec.finish(out)?;
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("predict", cfg);
    let ck_path = required(&cfg.io.checkpoint, "io.checkpoint")?;
    let img_path = required(&cfg.io.image, "io.image")?;
    rec.input(ck_path)?;
    rec.input(img_path)?;
    let ck = read_checkpoint(ck_path)?;
    let image = normalize(&read_pgm(img_path)?, ck.stats);
    let pred = sartol::autonet::predict_full(&ck.spec, &ck.params, &image, cfg.eval.tile, cfg.eval.overlap)?;
    let p = out.join("prediction.pgm");
    write_pgm(&pred.to_unit_raster(), &p)?;
    rec.output(&p)?;
    rec.finish(out)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("eval", cfg);
    let pred_path = required(&cfg.io.prediction, "io.prediction")?;
    let truth_path = required(&cfg.io.truth, "io.truth")?;
    rec.input(pred_path)?;
    rec.input(truth_path)?;
    let pred = FloatRaster::from_unit_raster(&read_pgm(pred_path)?);
    let truth = BinaryMask::from_raster(&read_pgm(truth_path)?);
    if truth.width() != pred.width() || truth.height() != pred.height() {
        return Err(Error::Shape(format!(
            "prediction is {}x{} but truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let valid = valid_or_full(&cfg.io.valid, pred.width(), pred.height(), &mut rec)?;
    let mask = binarize(&pred, cfg.eval.threshold);
    let report = MetricsReport {
        area: pred_path.file_stem().map_or_else(|| "area".into(), |s| s.to_string_lossy().into_owned()),
        model: cfg.train.model.name().into(),
        t_max: cfg.train.t_max,
        lambda: cfg.train.lambda,
        metrics: metrics(confusion(&mask, &truth, &valid)?),
    };
    let csv = out.join("metrics.csv");
    write_text(&csv, &sweep_report(&[report])?)?;
    let ppm = out.join("overlay.ppm");
    write_ppm(&overlay(&mask, &truth, &valid)?, &ppm)?;
    rec.output(&csv)?;
    rec.output(&ppm)?;
    rec.finish(out)?;
    Ok(())
}

/// Trains one model per (t_max, lambda) cell on the same scenes and writes
/// `sweep.csv` plus each cell's history. Scenes come from `io.manifest`, or
/// are synthesized in memory from the `scene` and `synth` sections.
pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg)?;
    let mut rec = Recorder::new("sweep", cfg);
    let (scenes, area) = match &cfg.io.manifest {
        Some(m) => (load_scenes(m, &mut rec)?, "scenes".to_string()),
        None => (synth_scenes(&cfg.scene, cfg.synth.n_scenes)?, format!("synthetic_seed{}", cfg.scene.seed)),
    };
    let mut reports = Vec::new();
    for &t_max in &cfg.sweep.t_max {
        for &lambda in &cfg.sweep.lambda {
            let mut exp = cfg.experiment();
            exp.train.t_max = t_max;
            exp.train.lambda = lambda;
            eprintln!("cell t_max={t_max} lambda={lambda}");
            let o = run_experiment(&exp, &scenes, |r| eprintln!("  epoch {}: mean loss {:.6}", r.epoch, r.mean_loss))?;
            let hist = out.join(format!("history_t{t_max}_l{lambda}.csv"));
            write_text(&hist, &o.history.to_csv())?;
            rec.output(&hist)?;
            reports.push(MetricsReport {
                area: area.clone(),
                model: exp.train.model.name().into(),
                t_max,
                lambda,
                metrics: o.metrics,
            });
        }
    }
    let csv = out.join("sweep.csv");
    write_text(&csv, &sweep_report(&reports)?)?;
    rec.output(&csv)?;
    rec.finish(out)?;
    Ok(())
}
