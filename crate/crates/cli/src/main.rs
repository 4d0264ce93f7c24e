//! `srunet`: synthetic data generation, training, evaluation, tiled
//! prediction, vectorization and change diffing.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "srunet", version, about = "Road extraction and map updating from imagery and historical maps")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (overrides the config file).
    #[arg(long, global = true, env = "SRUNET_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (images, historical maps, labels, index).
    GenSynth(GenSynthArgs),
    /// Train a student/teacher pair and keep the best teacher checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or a directory of predicted masks against labels.
    Eval(EvalArgs),
    /// Predict a whole scene: probability raster and binary mask.
    Predict(PredictArgs),
    /// Convert a road mask into GeoJSON polylines.
    Vectorize(VectorizeArgs),
    /// Classify new road polylines against a historical road mask.
    Diff(DiffArgs),
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tiles: Option<usize>,
    /// Tile side in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    masked_ratio: Option<f64>,
    #[arg(long)]
    val_ratio: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Tiny,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Optim {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints and the metrics log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    lab_ratio: Option<f64>,
    #[arg(long)]
    alpha_unsup: Option<f64>,
    #[arg(long)]
    alpha_ctr: Option<f64>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long, value_enum)]
    optimizer: Option<Optim>,
    /// Drop the historical-map branch.
    #[arg(long)]
    no_map: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint whose teacher is evaluated.
    #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
    ckpt: Option<PathBuf>,
    /// Directory of predicted masks named `<tile_id>.png`.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Tiles to score: `val`, `test`, `train` or `all`.
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    map: PathBuf,
    /// Output directory for `prob.png` and `mask.png`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct PostprocessFlags {
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    spur_px: Option<usize>,
}

#[derive(Debug, Args)]
struct VectorizeArgs {
    #[arg(long)]
    mask: PathBuf,
    /// GeoJSON output file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    post: PostprocessFlags,
}

#[derive(Debug, Args)]
struct DiffArgs {
    /// New road mask.
    #[arg(long)]
    new: PathBuf,
    /// Historical road mask.
    #[arg(long, required_unless_present = "hist_map", conflicts_with = "hist_map")]
    hist: Option<PathBuf>,
    /// Historical map raster; road pixels are taken by colour.
    #[arg(long)]
    hist_map: Option<PathBuf>,
    /// Output directory for `changes.geojson` and `summary.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    buffer_px: Option<f64>,
    #[arg(long)]
    unchanged_fraction: Option<f64>,
    #[arg(long)]
    removed_fraction: Option<f64>,
    #[command(flatten)]
    post: PostprocessFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
