//! `obbkit` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use crate::commands::{AnchorsArgs, DenoiseArgs, EvalArgs, IouArgs, LandscapeArgs, MergeArgs, NmsArgs, TileArgs};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "obbkit", version, about = "Oriented object detection toolkit", arg_required_else_help = true)]
struct Cli {
    /// File of key=value lines using the subcommand's long flag names.
    /// Flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rotated IoU of two boxes.
    #[command(args_override_self = true)]
    Iou(IouArgs),
    /// Greedy NMS over a CSV of boxes.
    #[command(args_override_self = true)]
    Nms(NmsArgs),
    /// Dump pyramid anchors as CSV.
    #[command(args_override_self = true)]
    Anchors(AnchorsArgs),
    /// Plan tiles for an image and optionally crop its labels.
    #[command(args_override_self = true)]
    Tile(TileArgs),
    /// Merge per-tile submission files into per-image detections.
    #[command(args_override_self = true)]
    Merge(MergeArgs),
    /// Evaluate submission files against DOTA labels.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Smooth-L1 and IoU-smooth L1 over a sweep of predicted angles.
    #[command(name = "loss-landscape", args_override_self = true)]
    LossLandscape(LandscapeArgs),
    /// Run the denoising operators on a seeded synthetic feature map.
    #[command(name = "denoise-demo", args_override_self = true)]
    DenoiseDemo(DenoiseArgs),
}

fn run(argv: Vec<OsString>) -> u8 {
    let argv = match config::config_path(&argv) {
        Some(path) => match config::apply_config(&Cli::command(), argv, path.as_ref()) {
            Ok(a) => a,
            Err(config::ConfigError::Usage(e)) => {
                eprintln!("error: {e:#}");
                return EXIT_USAGE;
            }
            Err(config::ConfigError::Io(e)) => {
                eprintln!("error: {e:#}");
                return EXIT_DATA;
            }
        },
        None => argv,
    };

    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };

    let result = match cli.command {
        Command::Iou(a) => commands::iou(a),
        Command::Nms(a) => commands::nms(a),
        Command::Anchors(a) => commands::anchors(a),
        Command::Tile(a) => commands::tile(a),
        Command::Merge(a) => commands::merge(a),
        Command::Eval(a) => commands::eval(a),
        Command::LossLandscape(a) => commands::loss_landscape(a),
        Command::DenoiseDemo(a) => commands::denoise_demo(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args_os().collect()))
}
