mod commands;
mod config;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use voxelcodec::geometry::synth::Shape;
use voxelcodec::model::{TrainConfig, VoxelDnnConfig};

use config::{parse_bool, parse_model_arg, CodecConfig};

/// Lossless point-cloud geometry codec with a learned occupancy model.
#[derive(Parser)]
#[command(name = "voxelcodec", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CodecFlags {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bit depth for voxelization or of the input grid.
    #[arg(long)]
    depth: Option<u32>,
    /// Maximum partitioning level, 1 (block 64) to 5 (block 4).
    #[arg(long)]
    max_lv: Option<u8>,
    /// Context extension on or off.
    #[arg(long, value_parser = parse_bool)]
    extension: Option<bool>,
    /// Code small blocks with the 64 model.
    #[arg(long, value_parser = parse_bool)]
    single_model: Option<bool>,
    /// Model weights as SIZE=PATH; repeatable.
    #[arg(long = "model", value_parser = parse_model_arg)]
    models: Vec<(usize, PathBuf)>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CodecFlags {
    fn resolve(&self) -> Result<CodecConfig> {
        let mut c = match &self.config {
            Some(p) => CodecConfig::load(p)?,
            None => CodecConfig::default(),
        };
        if self.depth.is_some() {
            c.depth = self.depth;
        }
        if let Some(v) = self.max_lv {
            c.max_lv = v;
        }
        if let Some(v) = self.extension {
            c.extension = v;
        }
        if let Some(v) = self.single_model {
            c.single_model = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        for (size, path) in &self.models {
            c.models.insert(*size, path.clone());
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a PLY cloud to a 2^depth grid.
    Voxelize {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        depth: u32,
    },
    /// Split voxelized clouds into blocks and write augmented variants.
    Augment {
        input_dir: PathBuf,
        output_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        block_size: usize,
        #[command(flatten)]
        codec: CodecFlags,
    },
    /// Generate a synthetic block corpus.
    Synth {
        output_dir: PathBuf,
        /// plane, tilted-plane, sphere, cube or noise.
        #[arg(long, default_value = "plane")]
        shape: Shape,
        #[arg(long, default_value_t = 8)]
        block_size: usize,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a directory of block PLYs.
    Train {
        blocks_dir: PathBuf,
        output: PathBuf,
        #[arg(long)]
        block_size: usize,
        #[arg(long, default_value_t = 80)]
        epochs: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        /// Default depends on the block size.
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Architecture preset: full or desk.
        #[arg(long, default_value = "full")]
        preset: String,
        /// Overrides the preset's filter count.
        #[arg(long)]
        filters: Option<usize>,
    },
    /// Encode a cloud.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        codec: CodecFlags,
    },
    /// Decode a stream to a PLY.
    Decode {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        codec: CodecFlags,
    },
    /// Encode clouds and print a CSV table of rates.
    Eval {
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        codec: CodecFlags,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Decode every stream and check it.
        #[arg(long)]
        verify: bool,
    },
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        voxelcodec::par::set_threads(n).map_err(anyhow::Error::msg)?;
    }
    match cli.command {
        Command::Voxelize { input, output, depth } => commands::voxelize_cmd(&input, &output, depth),
        Command::Augment {
            input_dir,
            output_dir,
            block_size,
            codec,
        } => commands::augment_cmd(&input_dir, &output_dir, block_size, &codec.resolve()?).map(|_| ()),
        Command::Synth {
            output_dir,
            shape,
            block_size,
            count,
            seed,
        } => commands::synth_cmd(&output_dir, shape, block_size, count, seed),
        Command::Train {
            blocks_dir,
            output,
            block_size,
            epochs,
            lr,
            batch,
            seed,
            preset,
            filters,
        } => {
            let mut config = match preset.as_str() {
                "full" => VoxelDnnConfig::full(block_size),
                "desk" => VoxelDnnConfig::desk(block_size),
                p => anyhow::bail!("unknown preset '{p}' (full or desk)"),
            };
            if let Some(f) = filters {
                config.filters = f;
            }
            config.validate()?;
            let defaults = TrainConfig::defaults_for(block_size);
            commands::train_cmd(&commands::TrainArgs {
                blocks: blocks_dir,
                output,
                block_size,
                config,
                train: TrainConfig {
                    lr,
                    epochs,
                    batch_size: batch.unwrap_or(defaults.batch_size),
                    seed,
                },
            })
        }
        Command::Encode { input, output, codec } => {
            let report = commands::encode_cmd(&input, &output, &codec.resolve()?)?;
            print!("{report}");
            Ok(())
        }
        Command::Decode { input, output, codec } => commands::decode_cmd(&input, &output, &codec.resolve()?),
        Command::Eval {
            inputs,
            codec,
            csv,
            verify,
        } => {
            let table = commands::eval_cmd(&inputs, &codec.resolve()?, verify)?;
            write_or_print(csv.as_deref(), &table)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
