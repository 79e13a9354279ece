use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrisynth::eval::GenEvalReport;
use mrisynth::harness::{self, ExperimentConfig, RunReport};
use mrisynth::models::{ArchConfig, ProganStage};

#[derive(Parser)]
#[command(name = "mrisynth", version, about = "U-net segmentation and GAN synthesis benchmarks")]
struct Cli {
    /// Overrides the config seed (or seeds evaluation sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a U-net from a config file.
    TrainSeg { config: PathBuf },
    /// Train a fixed-resolution GAN from a config file.
    TrainGan { config: PathBuf },
    /// Train a progressively growing GAN from a config file.
    TrainProgan { config: PathBuf },
    /// Score a generator checkpoint against a training corpus.
    Evaluate {
        checkpoint: PathBuf,
        corpus: PathBuf,
        /// Images to generate; defaults to the corpus size.
        #[arg(long)]
        n: Option<usize>,
        /// Also append the CSV row to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write latent interpolation rows as PGM files.
    Interpolate {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        pairs: usize,
        #[arg(long, default_value_t = 6)]
        steps: usize,
        #[arg(long, default_value = "interpolation")]
        out: PathBuf,
    },
    /// Print parameter counts.
    Params {
        arch: String,
        #[command(flatten)]
        b: BuilderFlags,
    },
    /// Print per-row output shapes.
    Shapes {
        arch: String,
        #[command(flatten)]
        b: BuilderFlags,
    },
}

#[derive(Args)]
struct BuilderFlags {
    /// U-net base filter count.
    #[arg(long)]
    filters: Option<usize>,
    /// U-net batch normalization on.
    #[arg(long, conflicts_with = "no_bn")]
    bn: bool,
    /// U-net batch normalization off.
    #[arg(long)]
    no_bn: bool,
    /// Input (U-net) or target (GAN) resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Any builder parameter, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// ProGAN stage resolution; defaults to the target.
    #[arg(long)]
    stage: Option<usize>,
    /// ProGAN fade-in weight; selects the transition phase.
    #[arg(long)]
    alpha: Option<f64>,
}

impl BuilderFlags {
    fn arch(&self, id: &str) -> Result<(ArchConfig, Option<ProganStage>), String> {
        let mut a = ArchConfig::from_id(id).ok_or_else(|| format!("unknown architecture `{id}`"))?;
        let mut set = |k: &str, v: &str| a.set(k, v).map_err(|e| format!("{k}: {e}"));
        if let Some(f) = self.filters {
            set("filters", &f.to_string())?;
        }
        if self.bn || self.no_bn {
            set("bn", if self.bn { "true" } else { "false" })?;
        }
        if let Some(r) = self.resolution {
            let key = if id == "unet" { "resolution" } else { "target_res" };
            set(key, &r.to_string())?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{kv}`"))?;
            set(k.trim(), v.trim())?;
        }
        let stage = match (self.stage, self.alpha) {
            (None, None) => None,
            (r, None) => Some(ProganStage::stabilize(r.unwrap_or(a.resolution()))),
            (r, Some(alpha)) => Some(ProganStage::transition(r.unwrap_or(a.resolution()), alpha)),
        };
        Ok((a, stage))
    }
}

enum Outcome {
    Done,
    Diverged,
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> mrisynth::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn finish_training(r: RunReport) -> Outcome {
    print!("{}", r.to_text());
    println!("out_dir = {}", r.out_dir.display());
    if r.diverged {
        Outcome::Diverged
    } else {
        Outcome::Done
    }
}

fn print_eval(r: &GenEvalReport, out: Option<&PathBuf>) -> mrisynth::Result<()> {
    println!("{}", GenEvalReport::CSV_HEADER);
    println!("{}", r.csv_row());
    if let Some(path) = out {
        use std::io::Write as _;
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{}", GenEvalReport::CSV_HEADER)?;
        }
        writeln!(f, "{}", r.csv_row())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome, String> {
    let err = |e: mrisynth::Error| e.to_string();
    match cli.cmd {
        Cmd::TrainSeg { config } => {
            let cfg = load_config(&config, cli.seed).map_err(err)?;
            if cfg.arch.is_gan() {
                return Err(format!("{} is a GAN; use train-gan", cfg.arch.id()));
            }
            harness::train_segmentation(&cfg).map(finish_training).map_err(err)
        }
        Cmd::TrainGan { config } | Cmd::TrainProgan { config } => {
            let cfg = load_config(&config, cli.seed).map_err(err)?;
            if !cfg.arch.is_gan() {
                return Err(format!("{} is not a GAN; use train-seg", cfg.arch.id()));
            }
            harness::train_gan(&cfg).map(finish_training).map_err(err)
        }
        Cmd::Evaluate { checkpoint, corpus, n, out } => {
            let r = harness::evaluate(&checkpoint, &corpus, n, cli.seed.unwrap_or(0)).map_err(err)?;
            print_eval(&r, out.as_ref()).map_err(err)?;
            Ok(Outcome::Done)
        }
        Cmd::Interpolate {
            checkpoint,
            pairs,
            steps,
            out,
        } => {
            let files = harness::interpolate(&checkpoint, pairs, steps, &out, cli.seed.unwrap_or(0)).map_err(err)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(Outcome::Done)
        }
        Cmd::Params { arch, b } => {
            let (a, stage) = b.arch(&arch)?;
            print!("{}", harness::params_report(&a, stage).map_err(err)?);
            Ok(Outcome::Done)
        }
        Cmd::Shapes { arch, b } => {
            let (a, stage) = b.arch(&arch)?;
            print!("{}", harness::shapes_report(&a, stage).map_err(err)?);
            Ok(Outcome::Done)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
