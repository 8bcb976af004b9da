//! Subcommand implementations. Every output file is written to a temporary
//! sibling and renamed into place, so a failed run never leaves a partial
//! artifact behind.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sinnet_core::blob::detect_both;
use sinnet_core::fsutil::write_atomic;
use sinnet_core::label::{load_annotations, rasterize, save_annotations};
use sinnet_core::model::{load_model, save_model, train_with, EpochLog, Sample};
use sinnet_core::score::{aggregate, render_table, score_image};
use sinnet_core::{synth, BlobParams, GrayImage, ScoreReport, SinNet, SingularPoint, TrainConfig, TrainLog};

use crate::manifest::{load_pairs, write_manifest, Manifest};
use crate::overlay::{render, OverlayStyle};
use crate::{imageio, io_err, CliError, RunConfig, Result};

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_file_name(format!("{}{suffix}", file_stem(path)))
}

/// Paths of the core and delta mask images written for `image`.
pub fn mask_paths(image: &Path) -> (PathBuf, PathBuf) {
    (sibling(image, ".core.png"), sibling(image, ".delta.png"))
}

/// Renders `count` synthetic images into `out_dir` together with their
/// annotations and a `manifest.tsv` listing them. Returns the manifest path.
pub fn synth(out_dir: &Path, count: usize, seed: u64, size: usize) -> Result<PathBuf> {
    if size < sinnet_core::model::SIZE_MULTIPLE {
        return Err(CliError::Usage(format!(
            "size must be at least {}",
            sinnet_core::model::SIZE_MULTIPLE
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let s = synth::generate_one(seed, i, size);
        let image = format!("synth_{i:03}.pgm");
        let annotation = format!("synth_{i:03}.txt");
        imageio::save_gray(&s.image, &out_dir.join(&image))?;
        save_annotations(&s.points, &out_dir.join(&annotation))?;
        rows.push((image, annotation));
    }
    let manifest = out_dir.join("manifest.tsv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

fn label_entry(image: &Path, annotation: &Path) -> Result<(PathBuf, PathBuf)> {
    let img = imageio::load_gray(image)?;
    let points = load_annotations(annotation)?;
    let masks = rasterize(&points, img.width(), img.height())?;
    let (core, delta) = mask_paths(image);
    imageio::save_mask(&masks.core, &core)?;
    imageio::save_mask(&masks.delta, &delta)?;
    Ok((core, delta))
}

/// Writes core and delta label masks next to every manifest image. Entries
/// that fail are reported together after all others have been processed.
pub fn label(manifest: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let pairs = crate::manifest::parse_pairs(
        &std::fs::read_to_string(manifest).map_err(io_err(manifest))?,
        manifest,
    )?;
    let mut written = Vec::new();
    let mut failures = Vec::new();
    for (image, annotation) in &pairs {
        match label_entry(image, annotation) {
            Ok(p) => written.push(p),
            Err(e) => failures.push(format!("{}: {e}", image.display())),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Manifest {
            path: manifest.to_path_buf(),
            reason: format!("{} of {} entries failed:\n  {}", failures.len(), pairs.len(), failures.join("\n  ")),
        });
    }
    Ok(written)
}

/// Loads every manifest entry as a padded training sample. All images must
/// share one size.
pub fn load_dataset(manifest: &Manifest) -> Result<Vec<Sample<f32>>> {
    let mut samples = Vec::with_capacity(manifest.entries.len());
    let mut dims = None;
    for e in &manifest.entries {
        let img = imageio::load_gray(&e.image)?;
        let d = (img.width(), img.height());
        match dims {
            None => dims = Some(d),
            Some(first) if first != d => {
                return Err(CliError::Usage(format!(
                    "{} is {}x{}, earlier images are {}x{}",
                    e.image.display(),
                    d.0,
                    d.1,
                    first.0,
                    first.1
                )))
            }
            Some(_) => {}
        }
        let points = load_annotations(&e.annotation)?;
        let masks = rasterize(&points, img.width(), img.height())?;
        samples.push(Sample::from_image(&img, &masks.core, &masks.delta)?);
    }
    Ok(samples)
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    config: &'a TrainConfig,
    deterministic_mode: bool,
    #[serde(flatten)]
    log: &'a TrainLog,
}

/// Initializes a model from `config.train.seed`, trains it on the manifest and
/// writes the model file and, if configured, the JSON log.
pub fn train(
    manifest: &Path,
    config: &RunConfig,
    on_epoch: impl FnMut(&EpochLog, &SinNet<f32>),
) -> Result<(SinNet<f32>, TrainLog)> {
    config.validate()?;
    let model_path = config
        .paths
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("no model output path configured".into()))?;
    let dataset = load_dataset(&Manifest::load(manifest)?)?;
    let mut model = SinNet::<f32>::new(config.train.width_divisor)?;
    model.init_weights(config.train.seed);
    let log = train_with(&mut model, &dataset, &config.train, on_epoch)?;
    save_model(&model, model_path)?;
    if let Some(path) = &config.paths.train_log {
        let record = TrainRecord {
            config: &config.train,
            deterministic_mode: config.deterministic_mode,
            log: &log,
        };
        let json = serde_json::to_string_pretty(&record).expect("log serializes");
        write_atomic(path, json.as_bytes()).map_err(io_err(path))?;
    }
    Ok((model, log))
}

/// Probability maps and detected points for one image.
pub struct Detection {
    pub points: Vec<SingularPoint>,
    pub core_map: GrayImage,
    pub delta_map: GrayImage,
}

pub fn detect_image(model: &SinNet<f32>, image: &GrayImage, params: &BlobParams) -> Result<Detection> {
    params.validate()?;
    let (core_map, delta_map) = model.probability_maps(image)?;
    let points = detect_both(&core_map, &delta_map, params);
    Ok(Detection {
        points,
        core_map,
        delta_map,
    })
}

fn dump_maps(det: &Detection, image: &Path, maps_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(maps_dir).map_err(io_err(maps_dir))?;
    let stem = file_stem(image);
    imageio::save_gray(&det.core_map, &maps_dir.join(format!("{stem}.core_map.png")))?;
    imageio::save_gray(&det.delta_map, &maps_dir.join(format!("{stem}.delta_map.png")))
}

/// Runs detection on a single image, writing the points to `out` (or
/// returning them only) and optionally dumping the probability maps.
pub fn detect_one(
    model_path: &Path,
    image: &Path,
    params: &BlobParams,
    out: Option<&Path>,
    maps_dir: Option<&Path>,
) -> Result<Vec<SingularPoint>> {
    let model = load_model(model_path)?;
    let img = imageio::load_gray(image)?;
    let det = detect_image(&model, &img, params)?;
    if let Some(dir) = maps_dir {
        dump_maps(&det, image, dir)?;
    }
    if let Some(out) = out {
        save_annotations(&det.points, out)?;
    }
    Ok(det.points)
}

/// Runs detection on every manifest image. Writes `<stem>.det.txt` per image
/// into `out_dir` plus `detections.tsv`, which pairs each detection file with
/// the entry's ground truth and is ready for [`score`]. Returns its path.
pub fn detect_manifest(
    model_path: &Path,
    manifest: &Path,
    params: &BlobParams,
    out_dir: &Path,
    maps_dir: Option<&Path>,
) -> Result<PathBuf> {
    let model = load_model(model_path)?;
    let m = Manifest::load(manifest)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let out_abs = std::path::absolute(out_dir).map_err(io_err(out_dir))?;
    let mut rows = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let img = imageio::load_gray(&e.image)?;
        let det = detect_image(&model, &img, params)?;
        if let Some(dir) = maps_dir {
            dump_maps(&det, &e.image, dir)?;
        }
        let name = format!("{}.det.txt", file_stem(&e.image));
        save_annotations(&det.points, &out_dir.join(&name))?;
        let truth = std::path::absolute(&e.annotation).map_err(io_err(&e.annotation))?;
        let truth = truth
            .strip_prefix(&out_abs)
            .map(Path::to_path_buf)
            .unwrap_or(truth);
        rows.push((name, truth.to_string_lossy().into_owned()));
    }
    let pairs = out_dir.join("detections.tsv");
    write_manifest(&pairs, &rows)?;
    Ok(pairs)
}

/// Scores a `detections<TAB>truth` pair file.
pub fn score(pairs: &Path) -> Result<ScoreReport> {
    let mut results = Vec::new();
    for (det, truth) in load_pairs(pairs)? {
        results.push(score_image(&load_annotations(&det)?, &load_annotations(&truth)?));
    }
    Ok(aggregate(&results)?)
}

pub fn write_report(report: &ScoreReport, algorithm: &str, text: Option<&Path>, json: Option<&Path>) -> Result<()> {
    if let Some(path) = text {
        write_atomic(path, render_table(report, algorithm).as_bytes()).map_err(io_err(path))?;
    }
    if let Some(path) = json {
        let s = serde_json::to_string_pretty(report).expect("report serializes");
        write_atomic(path, s.as_bytes()).map_err(io_err(path))?;
    }
    Ok(())
}

/// Renders an overlay and returns the points that fell outside the image.
pub fn overlay(
    image: &Path,
    detections: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
    style: &OverlayStyle,
) -> Result<Vec<SingularPoint>> {
    let img = imageio::load_gray(image)?;
    let load = |p: Option<&Path>| p.map_or_else(|| Ok(Vec::new()), load_annotations);
    let det = load(detections)?;
    let gt = load(truth)?;
    let o = render(&img, &det, &gt, style);
    imageio::save_rgb(&o.image, out)?;
    Ok(o.clipped)
}
