//! `dynsplat`: runs the reconstruction pipeline one stage at a time.
//!
//! Failures print a single line `error: <code>: <message>` on stderr and
//! exit with status 1 (2 for usage errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dynsplat::pipeline::{self, OrbitSpec, PipelineConfig};
use log::info;

#[derive(Parser)]
#[command(name = "dynsplat", version, about = "Dynamic-scene reconstruction from monocular priors")]
struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Prior directory (cameras, images, segments, flows, depth).
    #[arg(long)]
    input: PathBuf,
    /// Work directory shared by the stages.
    #[arg(long)]
    out: PathBuf,
    /// Pipeline configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic prior directory from a scene file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Motion masks and dynamic-object selection.
    Masks(StageArgs),
    /// Depth refinement on the selected objects.
    Depth(StageArgs),
    /// Track sampling and re-identification.
    Tracks(StageArgs),
    /// Scaffold lifting and Gaussian optimization.
    Reconstruct(StageArgs),
    /// Render a checkpoint along a camera file or an orbit.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Camera file: the trajectory itself, or the orbit's reference.
        #[arg(long)]
        cameras: PathBuf,
        /// Orbit description (`[orbit]` section); renders the camera file when omitted.
        #[arg(long)]
        orbit: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR, SSIM and depth error of renders against a prior directory.
    Eval {
        #[arg(long)]
        render: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
    },
    /// Every stage in order, from a scene file to an evaluation table.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Root that receives `prior/`, `work/` and `render/`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| dynsplat::Error::Io { path: p.to_path_buf(), source: e })?;
            Ok(PipelineConfig::from_ini(&text)?)
        }
        None => Ok(PipelineConfig::default()),
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth { spec, out } => {
            let manifest = pipeline::cmd_synth(&spec, &out)?;
            info!("wrote {}", manifest.display());
        }
        Command::Masks(a) => {
            let summary = pipeline::cmd_masks(&load_config(a.config.as_deref())?, &a.input, &a.out)?;
            info!("selected segments {:?}", summary.selected_segments);
        }
        Command::Depth(a) => {
            let objective = pipeline::cmd_depth(&load_config(a.config.as_deref())?, &a.input, &a.out)?;
            info!("depth objective {:?} -> {:?}", objective.first(), objective.last());
        }
        Command::Tracks(a) => {
            let tracks = pipeline::cmd_tracks(&load_config(a.config.as_deref())?, &a.input, &a.out)?;
            info!("{} tracks", tracks.tracks.len());
        }
        Command::Reconstruct(a) => {
            let state = pipeline::cmd_reconstruct(&load_config(a.config.as_deref())?, &a.input, &a.out)?;
            info!("{} Gaussians", state.cloud.gaussians.len());
        }
        Command::Render { checkpoint, cameras, orbit, out } => {
            let orbit = match orbit {
                Some(p) => Some(OrbitSpec::from_ini(&std::fs::read_to_string(&p).map_err(|e| dynsplat::Error::Io { path: p.clone(), source: e })?)?),
                None => None,
            };
            let frames = pipeline::cmd_render(&checkpoint, &cameras, orbit.as_ref(), &out)?;
            info!("rendered {} views", frames.len());
        }
        Command::Eval { render, oracle } => {
            pipeline::cmd_eval(&render, &oracle)?;
            print!("{}", std::fs::read_to_string(render.join(pipeline::EVAL)).context("reading the evaluation table")?);
        }
        Command::Run { spec, out, config } => {
            pipeline::run_all(&load_config(config.as_deref())?, &spec, &out)?;
            print!("{}", std::fs::read_to_string(out.join("render").join(pipeline::EVAL)).context("reading the evaluation table")?);
        }
    }
    Ok(())
}

/// `error: <code>: <message>` with the whole cause chain on one line.
fn error_line(err: &anyhow::Error) -> String {
    let code = err.downcast_ref::<dynsplat::Error>().map_or("Cli", dynsplat::Error::code);
    let msg = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    format!("error: {code}: {}", msg.replace(['\n', '\r'], " "))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_owned();
            eprintln!("error: Usage: {first}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: Cli: cannot start {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
