use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lightformer::datakit::Scenario;
use lightformer::{ErrorKind, Result};

mod commands;
mod runconfig;

use commands::ShapeChoice;
use runconfig::RunConfig;

/// Right-of-way recognition from buffers of traffic-light frames.
///
/// Exit status: 0 success, 2 usage error, 3 data error, 4 numeric error.
/// LIGHTFORMER_THREADS caps the worker threads used for loading, training
/// and evaluation.
#[derive(Parser)]
#[command(name = "lightformer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic drives as PPM frames with a frames.csv annotation file.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "day", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 4)]
        drives: usize,
        /// Frames per drive.
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        /// Left-turn indicator shape.
        #[arg(long, value_enum, default_value = "circle")]
        left_shape: ShapeChoice,
        /// Chance that a frame's light box is occluded.
        #[arg(long, default_value_t = 0.0)]
        occlusion: f64,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Window annotated frames into a sequence manifest.
    Prepare {
        /// Frame annotation CSV (drive,frame,path,straight,left).
        #[arg(long)]
        frames: PathBuf,
        /// Frames per buffer.
        #[arg(long)]
        n: usize,
        /// Frame-index spacing inside a buffer.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// Manifest to write. With --split, NAME.train.EXT and NAME.val.EXT.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of samples for the training manifest.
        #[arg(long)]
        split: Option<f64>,
        /// Seed of the split.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write its checkpoint; prints epoch, loss, train_acc.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// `key = value` run config; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Remove temporal self-attention.
        #[arg(long)]
        ablate_tsa: bool,
        /// Cluster centres per class.
        #[arg(long)]
        w: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the training history to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Predict right-of-way for one buffer of frames, oldest first.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        frames: Vec<PathBuf>,
    },
    /// Compare analytic gradients with finite differences for every operation.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Print a commented run config with every accepted key.
    Config {
        /// Start from this file instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: lightformer::Error| e.to_string())
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            scenario,
            drives,
            frames,
            seed,
            width,
            height,
            left_shape,
            occlusion,
            force,
        } => commands::synth(&commands::SynthArgs {
            out,
            scenario,
            drives,
            frames,
            seed,
            width,
            height,
            left_shape,
            occlusion,
            force,
        }),
        Command::Prepare {
            frames,
            n,
            stride,
            out,
            split,
            seed,
        } => commands::prepare(&frames, n, stride, &out, split, seed),
        Command::Train {
            manifest,
            config,
            out,
            ablate_tsa,
            w,
            epochs,
            lr,
            batch_size,
            seed,
            log,
        } => {
            let mut cfg = load_config(config.as_ref())?;
            if ablate_tsa {
                cfg.model.ablate_tsa = true;
            }
            if let Some(w) = w {
                cfg.model.centres_per_class = w;
            }
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = lr {
                cfg.train.lr = v;
            }
            if let Some(v) = batch_size {
                cfg.train.batch_size = v;
            }
            if let Some(v) = seed {
                cfg.train.seed = v;
            }
            commands::train(&manifest, &cfg, &out, log.as_deref())
        }
        Command::Eval { manifest, ckpt } => commands::eval(&manifest, &ckpt),
        Command::Predict { ckpt, frames } => commands::predict(&ckpt, &frames),
        Command::Gradcheck { seeds } => commands::gradcheck(seeds),
        Command::Config { config } => {
            let cfg = load_config(config.as_ref())?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
