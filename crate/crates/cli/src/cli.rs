//! Argument parsing and dispatch.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nnfdk_core::phantoms::Family;

use crate::commands::{self, metrics_header};
use crate::config::{Config, Method};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "nnfdk",
    version,
    about = "Cone-beam CT reconstruction with learned FDK filters"
)]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a phantom with clean and noisy projections.
    Generate(GenerateArgs),
    /// Reconstruct a volume from projections.
    Reconstruct(ReconstructArgs),
    /// Fit an NN-FDK network on generated datasets.
    Train(TrainArgs),
    /// Score reconstructions against a reference volume.
    Evaluate(EvaluateArgs),
    /// Label shell, empty space and kernel in a volume.
    Segment(SegmentArgs),
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    #[arg(long = "n")]
    pub n_voxels: Option<usize>,
    #[arg(long = "angles")]
    pub n_angles: Option<usize>,
    #[arg(long)]
    pub source_factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub family: Option<Family>,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Emitted photon count; omit for noise-free data.
    #[arg(long)]
    pub i0: Option<f64>,
    #[arg(long)]
    pub oversample: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Projection array (path without extension).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub network: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Output name inside the output directory (default: the method).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directories written by `generate`.
    #[arg(long = "data", num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Separate validation datasets; without them each dataset is split.
    #[arg(long = "val-data", num_args = 1..)]
    pub val_data: Vec<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long, default_value = "network")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hq: PathBuf,
    #[arg(long = "recon", num_args = 1.., required = true)]
    pub recons: Vec<PathBuf>,
    /// Reference label volume; enables segmentation metrics.
    #[arg(long)]
    pub gold_seg: Option<PathBuf>,
    #[arg(long)]
    pub no_png: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "segmentation")]
    pub name: String,
}

impl Cli {
    /// The configuration file (or defaults) with command-line overrides.
    pub fn resolve_config(&self) -> Result<Config, CliError> {
        let mut c = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        match &self.command {
            Command::Generate(a) => {
                if let Some(f) = a.family {
                    c.phantom.family = f;
                }
                let g = &a.geometry;
                c.geometry.n_voxels = g.n_voxels.unwrap_or(c.geometry.n_voxels);
                c.geometry.n_angles = g.n_angles.unwrap_or(c.geometry.n_angles);
                c.geometry.source_radius_factor =
                    g.source_factor.unwrap_or(c.geometry.source_radius_factor);
                if a.i0.is_some() {
                    c.phantom.i0 = a.i0;
                }
                c.phantom.oversample = a.oversample.unwrap_or(c.phantom.oversample);
            }
            Command::Reconstruct(a) => {
                c.reconstruct.method = a.method.unwrap_or(c.reconstruct.method);
                c.reconstruct.sirt_iterations =
                    a.iterations.unwrap_or(c.reconstruct.sirt_iterations);
            }
            Command::Train(a) => {
                c.train.n_hidden = a.hidden.unwrap_or(c.train.n_hidden);
                c.train.n_train = a.n_train.unwrap_or(c.train.n_train);
                c.train.n_val = a.n_val.unwrap_or(c.train.n_val);
            }
            Command::Evaluate(_) | Command::Segment(_) => {}
        }
        c.validate()?;
        Ok(c)
    }
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Runs the parsed command and returns the text to print.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = cli.resolve_config()?;
    let dir = &cli.out_dir;
    match &cli.command {
        Command::Generate(_) => {
            let files = commands::cmd_generate(&config, dir)?;
            Ok(files
                .iter()
                .map(|f| format!("wrote {}\n", f.display()))
                .collect())
        }
        Command::Reconstruct(a) => {
            let name = a
                .name
                .clone()
                .unwrap_or_else(|| config.reconstruct.method.name().replace('+', "_plus"));
            let target = out(dir, &name);
            let ops = commands::cmd_reconstruct(&config, &a.input, a.network.as_deref(), &target)?;
            Ok(format!(
                "method\tforward\tback\tfilter\tprojector_calls\tsetup_calls\tseconds\n{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\n",
                ops.method,
                ops.forward_projections,
                ops.backprojections,
                ops.filter_passes,
                ops.projector_calls,
                ops.setup_projector_calls,
                ops.seconds
            ))
        }
        Command::Train(a) => {
            let target = out(dir, &format!("{}.json", a.name));
            let h = commands::cmd_train(&config, &a.data, &a.val_data, &target)?;
            Ok(format!(
                "wrote {}\nsteps\t{}\nbest_val_loss\t{:e}\nstop\t{:?}\n",
                target.display(),
                h.steps.len(),
                h.best_val_loss,
                h.stop
            ))
        }
        Command::Evaluate(a) => {
            let rows = commands::cmd_evaluate(
                &config,
                &a.hq,
                &a.recons,
                a.gold_seg.as_deref(),
                dir,
                !a.no_png,
            )?;
            let mut text = metrics_header(a.gold_seg.is_some()) + "\n";
            for r in rows {
                text.push_str(&r.to_line());
                text.push('\n');
            }
            Ok(text)
        }
        Command::Segment(a) => {
            let target = out(dir, &a.name);
            let seg = commands::cmd_segment(&config, &a.input, &target)?;
            let mut text = format!("wrote {}\n", target.display());
            for l in nnfdk_core::metrics::Label::ALL {
                let count = seg.labels.iter().filter(|&&x| x == l).count();
                text.push_str(&format!("{}\t{count}\n", l.name()));
            }
            Ok(text)
        }
    }
}
