use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use splatsr::frame::VideoClip;
use splatsr::metrics::psnr;
use splatsr::pipeline::{self, load_config};
use splatsr::plugin::{self, Manifest};
use splatsr::upsample::{upsample_frame, Filter};
use splatsr::{Error, Result};

/// Render, upsample and re-fit Gaussian-splat scenes.
#[derive(Parser)]
#[command(name = "splatsr", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set optim.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load<T: DeserializeOwned>(&self) -> Result<T> {
        load_config(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Downsample a posed image set, optionally fitting a budget-capped scene to it.
    Degrade(ConfigArgs),
    /// Render a scene along a trajectory.
    Render(ConfigArgs),
    /// Upsample a frame directory.
    Upsample(ConfigArgs),
    /// Fit a scene to a posed image set.
    Reconstruct(ConfigArgs),
    /// Compare two frame directories.
    Evaluate(ConfigArgs),
    /// Run the whole pipeline into a run directory.
    Run(ConfigArgs),
    /// Built-in implementations of the plugin protocols.
    #[command(subcommand, hide = true)]
    Plugin(PluginCommand),
}

#[derive(Subcommand)]
enum PluginCommand {
    /// Upsampler plugin using a built-in filter.
    Upsample {
        #[arg(long, default_value = "bicubic")]
        filter: String,
        in_dir: PathBuf,
        out_dir: PathBuf,
    },
    /// Metric plugin emitting `psnr_plugin`.
    Psnr { in_dir: PathBuf, out_dir: PathBuf },
}

fn parse_filter(name: &str) -> Result<Filter> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| Error::Config(format!("unknown filter `{name}`")))
}

fn plugin_upsample(filter: &str, in_dir: &Path, out_dir: &Path) -> Result<()> {
    let filter = parse_filter(filter)?;
    let m = Manifest::read(in_dir)?;
    let frames = plugin::read_frames(in_dir, m.frame_count, m.width, m.height)?;
    let up = frames.iter().map(|f| upsample_frame(f, filter, m.factor)).collect::<Result<Vec<_>>>()?;
    plugin::write_frames(out_dir, &up)
}

fn plugin_psnr(in_dir: &Path, out_dir: &Path) -> Result<()> {
    let m = Manifest::read(in_dir)?;
    let pred = plugin::read_frames(&in_dir.join("pred"), m.frame_count, m.width, m.height)?;
    let gt = plugin::read_frames(&in_dir.join("gt"), m.frame_count, m.width, m.height)?;
    let values = pred.iter().zip(&gt).map(|(p, g)| psnr(p, g)).collect::<Result<Vec<_>>>()?;
    let out = BTreeMap::from([("psnr_plugin", values)]);
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("metrics.json"), serde_json::to_vec(&out)?)?;
    Ok(())
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn clip_summary(clip: &VideoClip) -> serde_json::Value {
    let (w, h) = clip.dims().unwrap_or((0, 0));
    serde_json::json!({"frames": clip.len(), "width": w, "height": h})
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Degrade(a) => {
            let out = pipeline::cmd_degrade(&a.load()?)?;
            let mut v = clip_summary(&out.clip);
            if let Some((scene, _)) = &out.scene {
                v["splats"] = scene.len().into();
            }
            print_json(&v)
        }
        Command::Render(a) => print_json(&clip_summary(&pipeline::cmd_render(&a.load()?)?)),
        Command::Upsample(a) => print_json(&clip_summary(&pipeline::cmd_upsample(&a.load()?)?)),
        Command::Reconstruct(a) => {
            let (scene, report) = pipeline::cmd_reconstruct(&a.load()?)?;
            print_json(&serde_json::json!({"splats": scene.len(), "mean_psnr": report.mean_final_psnr()}))
        }
        Command::Evaluate(a) => print_json(&pipeline::cmd_evaluate(&a.load()?)?),
        Command::Run(a) => {
            let out = pipeline::cmd_run(&a.load()?)?;
            let means: BTreeMap<_, _> = out.metrics.metrics.iter().map(|(k, v)| (k.clone(), v.mean)).collect();
            print_json(&serde_json::json!({"splats": out.scene.len(), "metrics": means, "ran": out.ran}))
        }
        Command::Plugin(PluginCommand::Upsample { filter, in_dir, out_dir }) => {
            plugin_upsample(&filter, &in_dir, &out_dir)
        }
        Command::Plugin(PluginCommand::Psnr { in_dir, out_dir }) => plugin_psnr(&in_dir, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!("\n  caused by: {s}"));
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
