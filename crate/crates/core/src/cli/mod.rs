//! The `smearnet` command-line driver.
//!
//! Exit codes: 0 on success, 1 on a usage or validation error, 2 when the
//! work itself fails (and when `gradcheck` exceeds its tolerance).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use config::{DefaultValue, Field, PipelineConfig, Source, Value, FIELDS};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "smearnet", version, about = "Malaria blood-smear tile screening", propagate_version = true)]
struct Cli {
    /// Config file: `key = value` lines under `[section]` headers.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for all artifacts, including `manifest.toml`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic smears with ground-truth circles and labels.
    Synth(SynthArgs),
    /// Detect cells in one image; write hits and optionally tiles.
    Detect(DetectArgs),
    /// Cut an image into a regular grid of tiles.
    Tile(TileArgs),
    /// Train one model on labelled tiles.
    Train(TrainArgs),
    /// Cross-validate (or holdout-evaluate) an architecture.
    Cv(CvArgs),
    /// Score a checkpoint on labelled tiles.
    Eval(EvalArgs),
    /// Dump the feature maps of one conv layer for one tile.
    Inspect(InspectArgs),
    /// Check analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// synth, detect, tile and cv in one run.
    Pipeline(PipelineArgs),
    /// Run the same protocol for several architectures.
    Compare(CompareArgs),
}

type Flags = Vec<(&'static str, Value)>;

fn put<T: Clone + Into<Value>>(flags: &mut Flags, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        flags.push((key, v.clone().into()));
    }
}

#[derive(Debug, Args)]
struct SynthFlags {
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    infected_fraction: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    cell_rmin: Option<f64>,
    #[arg(long)]
    cell_rmax: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

impl SynthFlags {
    fn collect(&self, f: &mut Flags) {
        put(f, "synth.images", &self.images);
        put(f, "synth.cells", &self.cells);
        put(f, "synth.infected_fraction", &self.infected_fraction);
        put(f, "synth.width", &self.width);
        put(f, "synth.height", &self.height);
        put(f, "synth.r_min", &self.cell_rmin);
        put(f, "synth.r_max", &self.cell_rmax);
        put(f, "synth.noise", &self.noise);
    }
}

#[derive(Debug, Args)]
struct DetectFlags {
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    rmin: Option<usize>,
    #[arg(long)]
    rmax: Option<usize>,
    #[arg(long)]
    vote_threshold: Option<f64>,
    #[arg(long)]
    nms: Option<f64>,
    #[arg(long)]
    margin: Option<usize>,
    #[arg(long)]
    match_tol: Option<f64>,
    #[arg(long)]
    tile_size: Option<usize>,
}

impl DetectFlags {
    fn collect(&self, f: &mut Flags) {
        put(f, "detect.sigma", &self.sigma);
        put(f, "detect.r_min", &self.rmin);
        put(f, "detect.r_max", &self.rmax);
        put(f, "detect.vote_threshold", &self.vote_threshold);
        put(f, "detect.nms_radius", &self.nms);
        put(f, "detect.margin", &self.margin);
        put(f, "detect.match_tol", &self.match_tol);
        put(f, "tile.size", &self.tile_size);
    }
}

#[derive(Debug, Args)]
struct DatasetFlags {
    /// kfold or holdout
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    holdout_train: Option<f64>,
    #[arg(long)]
    holdout_val: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    balance: Option<bool>,
}

impl DatasetFlags {
    fn collect(&self, f: &mut Flags) {
        put(f, "dataset.protocol", &self.protocol);
        put(f, "dataset.k", &self.k);
        put(f, "dataset.val_fraction", &self.val_fraction);
        put(f, "dataset.holdout_train", &self.holdout_train);
        put(f, "dataset.holdout_val", &self.holdout_val);
        put(f, "dataset.balance", &self.balance);
    }
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    early_stop: Option<bool>,
    #[arg(long)]
    patience: Option<usize>,
}

impl TrainFlags {
    fn collect(&self, f: &mut Flags) {
        put(f, "train.arch", &self.arch);
        put(f, "train.epochs", &self.epochs);
        put(f, "train.learning_rate", &self.lr);
        put(f, "train.momentum", &self.momentum);
        put(f, "train.batch_size", &self.batch_size);
        put(f, "train.dropout_rate", &self.dropout);
        put(f, "train.early_stop", &self.early_stop);
        put(f, "train.patience", &self.patience);
    }
}

#[derive(Debug, Args)]
struct TileInput {
    /// Directory holding the tile images.
    #[arg(long)]
    tiles: Option<PathBuf>,
    /// `tile_file,label` CSV; file names resolve against `--tiles`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    tile_size: Option<usize>,
}

impl TileInput {
    fn collect(&self, f: &mut Flags) {
        put(f, "input.tiles", &self.tiles);
        put(f, "input.labels", &self.labels);
        put(f, "tile.size", &self.tile_size);
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    synth: SynthFlags,
}

#[derive(Debug, Args)]
struct DetectArgs {
    image: Option<PathBuf>,
    /// Ground-truth circles CSV (`cx,cy,r[,label]`) to score against.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write one tile per complete cell under `<out>/tiles`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    write_tiles: Option<bool>,
    #[command(flatten)]
    detect: DetectFlags,
}

#[derive(Debug, Args)]
struct TileArgs {
    image: Option<PathBuf>,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    input: TileInput,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    balance: Option<bool>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    input: TileInput,
    #[command(flatten)]
    dataset: DatasetFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tiles: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    tile: Option<PathBuf>,
    /// Index of a conv layer in the architecture.
    #[arg(long)]
    layer: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    tile_size: Option<usize>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    detect: DetectFlags,
    #[command(flatten)]
    dataset: DatasetFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    input: TileInput,
    /// Comma-separated architecture presets.
    #[arg(long)]
    archs: Option<String>,
    #[command(flatten)]
    dataset: DatasetFlags,
    #[command(flatten)]
    train: TrainFlags,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Detect(_) => "detect",
            Command::Tile(_) => "tile",
            Command::Train(_) => "train",
            Command::Cv(_) => "cv",
            Command::Eval(_) => "eval",
            Command::Inspect(_) => "inspect",
            Command::Gradcheck(_) => "gradcheck",
            Command::Pipeline(_) => "pipeline",
            Command::Compare(_) => "compare",
        }
    }

    fn collect(&self, f: &mut Flags) {
        match self {
            Command::Synth(a) => a.synth.collect(f),
            Command::Detect(a) => {
                put(f, "input.image", &a.image);
                put(f, "input.truth", &a.truth);
                put(f, "detect.write_tiles", &a.write_tiles);
                a.detect.collect(f);
            }
            Command::Tile(a) => {
                put(f, "input.image", &a.image);
                put(f, "tile.size", &a.tile_size);
                put(f, "tile.stride", &a.stride);
            }
            Command::Train(a) => {
                a.input.collect(f);
                put(f, "dataset.val_fraction", &a.val_fraction);
                put(f, "dataset.balance", &a.balance);
                a.train.collect(f);
            }
            Command::Cv(a) => {
                a.input.collect(f);
                a.dataset.collect(f);
                a.train.collect(f);
            }
            Command::Eval(a) => {
                put(f, "input.model", &a.model);
                put(f, "input.tiles", &a.tiles);
                put(f, "input.labels", &a.labels);
            }
            Command::Inspect(a) => {
                put(f, "input.model", &a.model);
                put(f, "input.tile", &a.tile);
                put(f, "inspect.layer", &a.layer);
            }
            Command::Gradcheck(a) => {
                put(f, "train.arch", &a.arch);
                put(f, "gradcheck.epsilon", &a.epsilon);
                put(f, "gradcheck.samples", &a.samples);
                put(f, "gradcheck.batch", &a.batch);
                put(f, "gradcheck.tolerance", &a.tolerance);
                put(f, "tile.size", &a.tile_size);
            }
            Command::Pipeline(a) => {
                a.synth.collect(f);
                a.detect.collect(f);
                a.dataset.collect(f);
                a.train.collect(f);
            }
            Command::Compare(a) => {
                a.input.collect(f);
                put(f, "compare.archs", &a.archs);
                a.dataset.collect(f);
                a.train.collect(f);
            }
        }
    }

    /// Config sections whose preconditions the command relies on, and the
    /// input paths it needs.
    fn requirements(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Command::Synth(_) => (&["synth"], &[]),
            Command::Detect(_) => (&["detect", "tile", "cells"], &["input.image"]),
            Command::Tile(_) => (&["tile"], &["input.image"]),
            Command::Train(_) => (&["tile", "dataset", "train"], &["input.tiles", "input.labels"]),
            Command::Cv(_) => (&["tile", "dataset", "train"], &["input.tiles", "input.labels"]),
            Command::Eval(_) => (&[], &["input.model", "input.tiles", "input.labels"]),
            Command::Inspect(_) => (&[], &["input.model", "input.tile"]),
            Command::Gradcheck(_) => (&["tile", "gradcheck"], &[]),
            Command::Pipeline(_) => (&["synth", "detect", "tile", "cells", "dataset", "train"], &[]),
            Command::Compare(_) => (&["tile", "dataset", "train", "compare"], &["input.tiles", "input.labels"]),
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let mut flags = Flags::new();
    put(&mut flags, "run.out", &cli.out);
    put(&mut flags, "run.seed", &cli.seed);
    cli.command.collect(&mut flags);
    let cfg = PipelineConfig::load(cli.config.as_deref(), &flags)?;
    let (sections, inputs) = cli.command.requirements();
    cfg.validate(sections)?;
    for key in inputs {
        cfg.input(key)?;
    }
    if matches!(cli.command, Command::Detect(_)) && cfg.path("input.truth").is_some() {
        cfg.input("input.truth")?;
    }
    let out = cfg.out_dir();
    commands::create_dir(&out)?;
    let manifest = out.join("manifest.toml");
    std::fs::write(&manifest, cfg.manifest(cli.command.name()))
        .map_err(|e| crate::Error::Io { path: manifest, source: e })?;
    match cli.command {
        Command::Synth(_) => commands::synth(&cfg),
        Command::Detect(_) => commands::detect(&cfg),
        Command::Tile(_) => commands::tile(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Cv(_) => commands::cv(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Inspect(_) => commands::inspect(&cfg),
        Command::Gradcheck(_) => commands::gradcheck(&cfg),
        Command::Pipeline(_) => commands::pipeline(&cfg),
        Command::Compare(_) => commands::compare(&cfg),
    }
}
