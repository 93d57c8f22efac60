mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pixelcritic::train::Preset;
use pixelcritic::ErrorKind;

use config::ExtractorKind;

/// Marks an error as a usage or configuration problem (exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser, Debug)]
#[command(
    name = "pixelcritic",
    version,
    about = "Pixel-level real/generated detection and PD scoring"
)]
pub struct Cli {
    /// JSON run configuration with sections synth, arch, loss, train, eval.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; every component derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write toy real/generated sets and a collage training set.
    Synth(SynthArgs),
    /// Train the detector, or the encoder used for Fréchet features.
    Train(TrainArgs),
    /// Score images with a trained detector.
    Score(ScoreArgs),
    /// Sort scores by PD and cut them into splits.
    Rank(RankArgs),
    /// Fréchet distance of every split to a real reference set.
    Splits(SplitsArgs),
    /// Overlay an error map on its image.
    Heatmap(HeatmapArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of collages.
    #[arg(long)]
    pub count: Option<usize>,
    /// Collage these real images instead of writing a toy set.
    #[arg(long, requires = "generated")]
    pub real: Option<PathBuf>,
    /// Collage these generated images instead of writing a toy set.
    #[arg(long, requires = "real")]
    pub generated: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Detector,
    Encoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PresetArg {
    Quality,
    ModeCollapse,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Quality => Preset::Quality,
            PresetArg::ModeCollapse => Preset::ModeCollapse,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Collage manifest for the detector, real manifest with classes for the encoder.
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "detector")]
    pub target: Target,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Held-out collage manifest; writes a detection report.
    #[arg(long)]
    pub val: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    pub checkpoint: PathBuf,
    /// Manifests (`.jsonl`) or PNG files.
    pub inputs: Vec<PathBuf>,
    /// Also write each error map as an 8-bit grayscale PNG.
    #[arg(long)]
    pub save_maps: bool,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Score CSV written by `score`.
    pub scores: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub per_class: bool,
}

#[derive(Args, Debug)]
pub struct SplitsArgs {
    pub scores: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub per_class: bool,
    /// Manifests resolving score ids to image files.
    #[arg(long, num_args = 1..)]
    pub images: Vec<PathBuf>,
    /// Manifest of the real reference images.
    #[arg(long, required_unless_present = "reference_features")]
    pub real: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorKind>,
    /// Trained encoder checkpoint.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Precomputed features, one row per score row.
    #[arg(long, requires = "reference_features")]
    pub features: Option<PathBuf>,
    /// Precomputed features of the reference set.
    #[arg(long, requires = "features")]
    pub reference_features: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    pub image: PathBuf,
    pub error_map: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output file, default `<out>/heatmap.png`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<pixelcritic::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
