//! Config-driven training loops, checkpoints, logs and the commands behind
//! the CLI.

mod checkpoint;
mod commands;
mod config;
mod gan;
mod seg;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub use checkpoint::{decode_records, encode_records, pack_u64, unpack_u64, Checkpoint, Record, MAGIC, VERSION};
pub use commands::{evaluate, evaluate_loaded, interpolate, params_report, shapes_report, write_pgm_grid};
pub use config::{CorpusSource, ExperimentConfig, OptimConfig};
pub use gan::{alpha_at, train_gan, train_progressive, GanTrainer, StepRecord};
pub use seg::{train_segmentation, EpochRecord, SegTrainer};

use crate::data::{derive_rng, synthetic_blobs, ImageCorpus};
use crate::error::{Error, Result};

pub const STEP_LOG_HEADER: &str = "step,epoch,d_loss,g_loss,gp_term,wall_ms";
/// Consecutive bad steps before a run is declared diverged.
pub const DIVERGENCE_PATIENCE: usize = 10;
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const CORPUS_TAG: u64 = 0xC0;

/// Loads or generates the corpus named by the config, at the config's
/// resolution. Larger power-of-two multiples are average-pooled down.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<ImageCorpus> {
    let c = match &cfg.corpus {
        CorpusSource::Synthetic { n, res, modes } => {
            let mut rng = derive_rng(cfg.seed, &[CORPUS_TAG]);
            synthetic_blobs(*n, *res, *modes, cfg.range, &mut rng)?
        }
        CorpusSource::Path(p) => ImageCorpus::load(p, cfg.range)?,
    };
    fit_resolution(c, cfg.arch.resolution())
}

/// Average-pools a corpus down to `want`×`want`; the source size must be
/// a multiple of it.
pub fn fit_resolution(mut c: ImageCorpus, want: usize) -> Result<ImageCorpus> {
    let (h, w) = c.shape().ok_or_else(|| Error::InvalidArgument("empty corpus".into()))?;
    if (h, w) == (want, want) {
        return Ok(c);
    }
    if h != w || want == 0 || h % want != 0 {
        return Err(Error::InvalidArgument(format!(
            "corpus images are {h}x{w}; the model expects {want}x{want}"
        )));
    }
    let f = h / want;
    c.images = c.images.iter().map(|i| i.downsample_avg(f)).collect::<Result<_>>()?;
    if let Some(masks) = &mut c.masks {
        *masks = masks
            .iter()
            .map(|m| m.downsample_avg(f).map(|m| crate::data::binarize(&m)))
            .collect::<Result<_>>()?;
    }
    Ok(c)
}

/// Outcome of a training command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub diverged: bool,
    pub detail: String,
    pub steps: u64,
    pub out_dir: PathBuf,
    /// Largest trainable |w| seen right after any clipped critic step.
    pub max_abs_after_clip: Option<f64>,
    pub final_d_loss: Option<f64>,
    pub final_g_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub test_dice: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// `(resolution, wall milliseconds)` per progressive stage.
    pub stage_wall_ms: Vec<(usize, f64)>,
}

impl RunReport {
    pub fn status(&self) -> &'static str {
        if self.diverged {
            "diverged"
        } else {
            "completed"
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status = {}", self.status());
        if !self.detail.is_empty() {
            let _ = writeln!(s, "detail = {}", self.detail);
        }
        let _ = writeln!(s, "steps = {}", self.steps);
        let mut opt = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v}");
            }
        };
        opt("final_d_loss", self.final_d_loss);
        opt("final_g_loss", self.final_g_loss);
        opt("max_abs_after_clip", self.max_abs_after_clip);
        opt("best_val_loss", self.best_val_loss);
        opt("test_dice", self.test_dice);
        opt("test_accuracy", self.test_accuracy);
        if let Some(e) = self.best_epoch {
            let _ = writeln!(s, "best_epoch = {e}");
        }
        for (r, ms) in &self.stage_wall_ms {
            let _ = writeln!(s, "stage_{r}_wall_ms = {ms}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("report.txt"), self.to_text())?;
        Ok(())
    }
}

/// Line-buffered CSV file with a fixed header.
pub(crate) struct CsvLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl CsvLog {
    pub(crate) fn create(path: &Path, header: &str) -> Result<Self> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{header}")?;
        Ok(Self { file })
    }

    pub(crate) fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.file, "{line}")?;
        Ok(())
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

pub(crate) fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.resolved"), cfg.resolved())?;
    Ok(())
}

/// Tracks consecutive non-finite or exploding losses.
#[derive(Clone, Debug, Default)]
pub(crate) struct DivergenceWatch {
    streak: usize,
}

impl DivergenceWatch {
    pub(crate) fn observe(&mut self, step: u64, losses: &[f64]) -> Result<()> {
        let bad = losses.iter().any(|l| !l.is_finite() || l.abs() > DIVERGENCE_LIMIT);
        self.streak = if bad { self.streak + 1 } else { 0 };
        if self.streak >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                step: step as usize,
                detail: format!("{DIVERGENCE_PATIENCE} consecutive steps with NaN or |loss| > {DIVERGENCE_LIMIT:e}"),
            });
        }
        Ok(())
    }
}
