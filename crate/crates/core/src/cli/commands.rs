use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::celldetect::{
    complete_cell_tile, detect_cells, detection_metrics, match_circles, read_circles_csv,
    write_hits_csv, CircleHit, DetectionReport, TruthCircle,
};
use crate::dataset::{
    class_counts, load_annotations, stratified_holdout, synth_smear, tile_file_name, write_labels_csv,
    LabeledTile, Side,
};
use crate::error::{Error, Result};
use crate::eval::{
    export_curves, run_experiment, score, sub_seed, train_model, ComparisonReport, Experiment,
    ExperimentOptions,
};
use crate::imagecore::{load_raster, tile_grid, FloatPlane, Label, Raster, Tile};
use crate::nn::{grad_check, load_checkpoint, save_checkpoint, GradCheckConfig, Network, Tensor};

use super::PipelineConfig;

pub(super) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Format(format!("serialising {}: {e}", path.display())))?;
    write_text(path, &text)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn image_seed(seed: u64, index: usize) -> u64 {
    sub_seed(seed, 1_000 + index as u64)
}

fn save_tile(dir: &Path, stem: &str, tile: &Tile, depth: u8) -> Result<String> {
    let name = tile_file_name(stem, tile.origin);
    crate::imagecore::save_raster(&tile.plane.to_raster_unit(depth)?, dir.join(&name))?;
    Ok(name)
}

fn print_detection(stem: &str, r: &DetectionReport) {
    println!(
        "{stem}: tp {} fp {} fn {}  precision {:.4}  recall {:.4}  (fp+fn)/(tp+fp) {:.4}",
        r.true_pos, r.false_pos, r.false_neg, r.precision, r.recall, r.paper_ratio
    );
}

pub(super) fn synth(cfg: &PipelineConfig) -> Result<i32> {
    let out = cfg.out_dir();
    let params = cfg.synth_params();
    for i in 0..cfg.usize("synth.images") {
        let smear = synth_smear(&params, image_seed(cfg.seed(), i))?;
        let [image, ..] = smear.write(&out, &format!("smear_{i:03}"))?;
        println!("{} ({} cells)", image.display(), smear.cells.len());
    }
    Ok(0)
}

/// What detection on one image produced.
struct Detected {
    hits: Vec<CircleHit>,
    report: Option<DetectionReport>,
    /// Tiles written, with the truth label of the matched cell if any.
    tiles: Vec<(String, Option<Label>)>,
}

fn detect_image(
    cfg: &PipelineConfig,
    raster: &Raster,
    stem: &str,
    truth: Option<&[TruthCircle]>,
    tile_dir: Option<&Path>,
) -> Result<Detected> {
    let plane: FloatPlane = raster.to_float();
    let params = cfg.detect_params();
    params.hough.validate(plane.width(), plane.height())?;
    let hits = detect_cells(&plane, &params)?;
    let mut labels = vec![None; hits.len()];
    let report = match truth {
        Some(truth) => {
            let truth_hits: Vec<CircleHit> = truth.iter().map(TruthCircle::as_hit).collect();
            for (p, t) in match_circles(&hits, &truth_hits, params.match_tol) {
                labels[p] = truth[t].label;
            }
            Some(detection_metrics(&hits, &truth_hits, params.match_tol)?)
        }
        None => None,
    };
    let mut tiles = Vec::new();
    if let Some(dir) = tile_dir {
        let size = cfg.usize("tile.size");
        let mut seen = BTreeSet::new();
        for (hit, label) in hits.iter().zip(&labels) {
            if let Some(tile) = complete_cell_tile(&plane, hit, size, params.margin) {
                if seen.insert(tile.origin) {
                    tiles.push((save_tile(dir, stem, &tile, raster.depth())?, *label));
                }
            }
        }
    }
    Ok(Detected { hits, report, tiles })
}

pub(super) fn detect(cfg: &PipelineConfig) -> Result<i32> {
    let out = cfg.out_dir();
    let path = cfg.input("input.image")?;
    let raster = load_raster(&path)?;
    let truth = cfg.path("input.truth").map(read_circles_csv).transpose()?;
    let tile_dir = cfg.bool("detect.write_tiles").then(|| out.join("tiles"));
    if let Some(dir) = &tile_dir {
        create_dir(dir)?;
    }
    let stem = stem_of(&path);
    let d = detect_image(cfg, &raster, &stem, truth.as_deref(), tile_dir.as_deref())?;
    let hits_path = out.join(format!("{stem}_hits.csv"));
    write_hits_csv(&hits_path, &d.hits)?;
    println!("{}: {} hits", hits_path.display(), d.hits.len());
    if let Some(r) = &d.report {
        write_toml(&out.join(format!("{stem}_detection.toml")), r)?;
        print_detection(&stem, r);
    }
    if let Some(dir) = &tile_dir {
        let labelled: Vec<(String, Label)> =
            d.tiles.iter().filter_map(|(f, l)| l.map(|l| (f.clone(), l))).collect();
        if truth.is_some() {
            write_labels_csv(dir.join("labels.csv"), &labelled)?;
        }
        println!("{}: {} complete-cell tiles", dir.display(), d.tiles.len());
    }
    Ok(0)
}

pub(super) fn tile(cfg: &PipelineConfig) -> Result<i32> {
    let path = cfg.input("input.image")?;
    let raster = load_raster(&path)?;
    let tiles = tile_grid(&raster.to_float(), cfg.usize("tile.size"), cfg.usize("tile.stride"))?;
    let dir = cfg.out_dir().join("tiles");
    create_dir(&dir)?;
    let stem = stem_of(&path);
    for t in &tiles {
        save_tile(&dir, &stem, t, raster.depth())?;
    }
    println!("{}: {} tiles", dir.display(), tiles.len());
    Ok(0)
}

fn load_tiles(cfg: &PipelineConfig, size: usize) -> Result<Vec<LabeledTile>> {
    let tiles = load_annotations(cfg.input("input.tiles")?, cfg.input("input.labels")?, size)?;
    let [h, i] = class_counts(&tiles);
    eprintln!("loaded {} tiles ({h} healthy, {i} infected)", tiles.len());
    Ok(tiles)
}

pub(super) fn train(cfg: &PipelineConfig) -> Result<i32> {
    let out = cfg.out_dir();
    let spec = cfg.arch()?;
    let tiles = load_tiles(cfg, cfg.usize("tile.size"))?;
    let v = cfg.f64("dataset.val_fraction");
    let split = stratified_holdout(&tiles, (1.0 - v, v), cfg.seed())?;
    let mut train_side = split.select(&tiles, Side::Train);
    // rounding may leave a tile on the test side; it trains
    train_side.extend(split.select(&tiles, Side::Test));
    let val_side = split.select(&tiles, Side::Val);
    if val_side.is_empty() {
        return Err(Error::invalid("validation side is empty; raise --val-fraction"));
    }
    let balance = cfg.bool("dataset.balance").then(|| sub_seed(cfg.seed(), 100));
    let model = train_model(&train_side, &val_side, &spec, &cfg.train_config(), balance, sub_seed(cfg.seed(), 200))?;
    save_checkpoint(&model.net, &model.stats, out.join("model.smnn"))?;
    export_curves(&model.outcome.stats, out.join("curve.csv"))?;
    let best = &model.outcome.stats[model.outcome.best_epoch - 1];
    println!(
        "{}: {} epochs, kept epoch {} (val loss {:.4}, val accuracy {:.4})",
        out.join("model.smnn").display(),
        model.outcome.stats.len(),
        model.outcome.best_epoch,
        best.val_loss,
        best.val_accuracy
    );
    Ok(0)
}

fn experiment_options(cfg: &PipelineConfig) -> Result<ExperimentOptions> {
    Ok(ExperimentOptions {
        protocol: cfg.protocol()?,
        seed: cfg.seed(),
        balance: cfg.bool("dataset.balance"),
    })
}

/// Runs the configured protocol with architecture `arch` and writes the
/// report, per-fold curves and per-fold checkpoints under `dir`.
fn run_protocol(cfg: &PipelineConfig, tiles: &[LabeledTile], arch: &str, dir: &Path) -> Result<Experiment> {
    let spec = cfg.arch_named(arch)?;
    let opts = experiment_options(cfg)?;
    eprintln!("running {} with {arch}", opts.protocol.name());
    let exp = run_experiment(tiles, &spec, &cfg.train_config(), &opts)?;
    let (curves, models) = (dir.join("curves"), dir.join("models"));
    create_dir(&curves)?;
    create_dir(&models)?;
    for (i, fold) in exp.folds.iter().enumerate() {
        if !fold.curve.is_empty() {
            export_curves(&fold.curve, curves.join(format!("fold_{i}.csv")))?;
        }
        if let Some((net, stats)) = &fold.model {
            save_checkpoint(net, stats, models.join(format!("fold_{i}.smnn")))?;
        }
    }
    exp.report.write(dir.join("report.toml"))?;
    Ok(exp)
}

/// Exit code for a finished experiment: 2 if any fold failed, after
/// naming the failures.
fn experiment_status(exp: &Experiment) -> i32 {
    let mut code = 0;
    for f in &exp.report.folds {
        if let Some(e) = &f.error {
            eprintln!("fold {} failed: {e}", f.fold_index);
            code = 2;
        }
    }
    code
}

pub(super) fn cv(cfg: &PipelineConfig) -> Result<i32> {
    let tiles = load_tiles(cfg, cfg.usize("tile.size"))?;
    let exp = run_protocol(cfg, &tiles, cfg.str("train.arch"), &cfg.out_dir())?;
    println!("{}", exp.report);
    Ok(experiment_status(&exp))
}

pub(super) fn compare(cfg: &PipelineConfig) -> Result<i32> {
    let tiles = load_tiles(cfg, cfg.usize("tile.size"))?;
    let out = cfg.out_dir();
    let (mut runs, mut code) = (Vec::new(), 0);
    for arch in cfg.compare_archs() {
        let dir = out.join(&arch);
        create_dir(&dir)?;
        let exp = run_protocol(cfg, &tiles, &arch, &dir)?;
        code = code.max(experiment_status(&exp));
        runs.push(exp.report);
    }
    let comparison = ComparisonReport { runs };
    comparison.write(out.join("comparison.toml"))?;
    println!("{comparison}");
    Ok(code)
}

pub(super) fn eval(cfg: &PipelineConfig) -> Result<i32> {
    let (net, stats) = load_checkpoint(cfg.input("input.model")?)?;
    let tiles = load_tiles(cfg, net.spec().input[1])?;
    let m = score(&net, &stats, &tiles.iter().collect::<Vec<_>>())?;
    write_toml(&cfg.out_dir().join("metrics.toml"), &m)?;
    println!("{m}");
    Ok(0)
}

pub(super) fn inspect(cfg: &PipelineConfig) -> Result<i32> {
    let (net, stats) = load_checkpoint(cfg.input("input.model")?)?;
    let raw = load_raster(cfg.input("input.tile")?)?.to_float();
    let plane = FloatPlane::new(
        raw.width(),
        raw.height(),
        raw.values().iter().map(|v| v - stats.mean).collect(),
    )?;
    let layer = cfg.usize("inspect.layer");
    let path = cfg.out_dir().join(format!("featuremaps_layer{layer}.png"));
    let grid = crate::eval::dump_feature_maps(&net, &plane, layer, &path)?;
    println!("{}: {}x{}", path.display(), grid.width(), grid.height());
    Ok(0)
}

#[derive(Serialize)]
struct GradCheckSummary {
    arch: String,
    max_rel_error: f64,
    tolerance: f64,
    passed: bool,
    checked: usize,
    skipped_kinks: usize,
    loss: f64,
    worst_layer: Option<usize>,
}

pub(super) fn gradcheck(cfg: &PipelineConfig) -> Result<i32> {
    let spec = cfg.arch()?;
    let net = Network::build(spec.clone(), sub_seed(cfg.seed(), 200))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed(), 400));
    let batch = cfg.usize("gradcheck.batch");
    let [c, h, w] = spec.input;
    let x = Tensor::new(
        vec![batch, c, h, w],
        (0..batch * c * h * w).map(|_| rng.gen::<f64>() - 0.5).collect(),
    )?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..2)).collect();
    let check = GradCheckConfig {
        epsilon: cfg.f64("gradcheck.epsilon"),
        samples_per_block: cfg.usize("gradcheck.samples"),
        seed: sub_seed(cfg.seed(), 500),
    };
    let r = grad_check(&net, &x, &labels, &check)?;
    let tolerance = cfg.f64("gradcheck.tolerance");
    let summary = GradCheckSummary {
        arch: spec.name.clone(),
        max_rel_error: r.max_rel_error,
        tolerance,
        passed: r.max_rel_error < tolerance,
        checked: r.checked,
        skipped_kinks: r.skipped_kinks,
        loss: r.loss,
        worst_layer: r.worst.map(|w| w.layer),
    };
    write_toml(&cfg.out_dir().join("gradcheck.toml"), &summary)?;
    println!(
        "{}: max relative error {:.3e} over {} parameters ({} skipped at kinks): {}",
        summary.arch,
        summary.max_rel_error,
        summary.checked,
        summary.skipped_kinks,
        if summary.passed { "pass" } else { "FAIL" }
    );
    Ok(if summary.passed { 0 } else { 2 })
}

#[derive(Serialize)]
struct PipelineSummary {
    images: usize,
    hits: usize,
    tiles_written: usize,
    tiles_labelled: usize,
    healthy: usize,
    infected: usize,
    detection: DetectionReport,
}

pub(super) fn pipeline(cfg: &PipelineConfig) -> Result<i32> {
    let out = cfg.out_dir();
    let (smears, tile_dir) = (out.join("smears"), out.join("tiles"));
    create_dir(&smears)?;
    create_dir(&tile_dir)?;
    let params = cfg.synth_params();
    let n_images = cfg.usize("synth.images");
    let mut reports = Vec::with_capacity(n_images);
    let mut labelled: Vec<(String, Label)> = Vec::new();
    let (mut hits, mut written) = (0, 0);
    for i in 0..n_images {
        let stem = format!("smear_{i:03}");
        let smear = synth_smear(&params, image_seed(cfg.seed(), i))?;
        smear.write(&smears, &stem)?;
        let d = detect_image(cfg, &smear.raster, &stem, Some(&smear.cells), Some(&tile_dir))?;
        write_hits_csv(smears.join(format!("{stem}_hits.csv")), &d.hits)?;
        let report = d.report.expect("truth given");
        eprintln!(
            "{stem}: {} hits, recall {:.4}, precision {:.4}, {} tiles",
            d.hits.len(),
            report.recall,
            report.precision,
            d.tiles.len()
        );
        hits += d.hits.len();
        written += d.tiles.len();
        labelled.extend(d.tiles.into_iter().filter_map(|(f, l)| l.map(|l| (f, l))));
        reports.push(report);
    }
    let labels_csv = out.join("labels.csv");
    write_labels_csv(&labels_csv, &labelled)?;
    let detection = DetectionReport::pooled(&reports);
    print_detection("detection (pooled)", &detection);
    let tiles = load_annotations(&tile_dir, &labels_csv, cfg.usize("tile.size"))?;
    let [healthy, infected] = class_counts(&tiles);
    write_toml(
        &out.join("pipeline.toml"),
        &PipelineSummary {
            images: n_images,
            hits,
            tiles_written: written,
            tiles_labelled: tiles.len(),
            healthy,
            infected,
            detection,
        },
    )?;
    println!("{} labelled tiles ({healthy} healthy, {infected} infected)", tiles.len());
    let exp = run_protocol(cfg, &tiles, cfg.str("train.arch"), &out)?;
    println!("{}", exp.report);
    Ok(experiment_status(&exp))
}
