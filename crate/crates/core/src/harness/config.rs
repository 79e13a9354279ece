//! `key = value` experiment configs with dotted keys and `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{AugmentProfile, ValueRange};
use crate::error::{Error, Result};
use crate::eval::LatentKind;
use crate::losses::{LossKind, LossSpec, DEFAULT_CLIP, DEFAULT_EPS_DRIFT};
use crate::models::{ArchConfig, Head};
use crate::optim::{OptimKind, OptimizerState};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub momentum: f64,
}

impl OptimConfig {
    pub fn adam(lr: f64, beta1: f64) -> Self {
        Self {
            kind: OptimKind::Adam,
            lr,
            beta1,
            momentum: 0.9,
        }
    }

    pub fn state(&self) -> OptimizerState {
        match self.kind {
            OptimKind::Adam => OptimizerState::adam(self.lr, self.beta1),
            OptimKind::SgdNesterov => OptimizerState::sgd_nesterov(self.lr, self.momentum),
        }
    }

    fn validate(&self, prefix: &str) -> std::result::Result<(), String> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(format!("{prefix}.lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("{prefix}.beta1 and {prefix}.momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum CorpusSource {
    /// Directory of PGM files or a manifest, relative paths resolved
    /// against the config file.
    Path(PathBuf),
    /// Generated blob corpus.
    Synthetic { n: usize, res: usize, modes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub arch: ArchConfig,
    pub loss: LossSpec,
    /// Segmenter optimizer.
    pub optim: OptimConfig,
    pub optim_g: OptimConfig,
    pub optim_d: OptimConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: Option<usize>,
    /// Generator steps per discriminator step.
    pub gen_disc_rate: usize,
    pub latent: LatentKind,
    pub augment: String,
    pub corpus: CorpusSource,
    pub range: ValueRange,
    pub stabilize_epochs: usize,
    pub transition_epochs: usize,
    pub input_noise_std: f64,
    pub sample_grid: usize,
    /// Measured `wall_ms` in the step log. Off keeps logs bit-reproducible.
    pub log_wall_time: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults for an architecture id, from the published hyperparameter
    /// lists where they exist.
    pub fn for_arch(arch: ArchConfig) -> Self {
        let gan = arch.is_gan();
        let progan = matches!(arch, ArchConfig::Progan(_));
        let loss = if !gan {
            LossSpec::new(LossKind::Dice)
        } else if progan {
            LossSpec::new(LossKind::WganGp)
        } else {
            let mut l = LossSpec::new(LossKind::Dragan);
            l.one_sided_smoothing = true;
            l
        };
        let gan_opt = if progan {
            OptimConfig::adam(1e-3, 0.0)
        } else {
            OptimConfig::adam(2e-4, 0.5)
        };
        let mut c = Self {
            loss,
            optim: OptimConfig::adam(1e-3, 0.9),
            optim_g: gan_opt.clone(),
            optim_d: gan_opt,
            batch_size: if gan { 64 } else { 8 },
            epochs: if gan { 20 } else { 10 },
            steps_per_epoch: if gan { None } else { Some(250) },
            gen_disc_rate: if progan { 1 } else { 3 },
            latent: LatentKind::Uniform,
            augment: if gan { "none" } else { "segmentation" }.into(),
            corpus: CorpusSource::Synthetic {
                n: 200,
                res: arch.resolution(),
                modes: 2,
            },
            range: if gan { ValueRange::Signed } else { ValueRange::Unit },
            stabilize_epochs: 1,
            transition_epochs: 1,
            input_noise_std: 0.0,
            sample_grid: 16,
            log_wall_time: false,
            seed: 0,
            out_dir: PathBuf::from("runs").join(arch.id()),
            arch,
        };
        c.sync_head();
        c
    }

    fn sync_head(&mut self) {
        if self.arch.is_gan() {
            let head = if self.loss.kind.is_wasserstein() { Head::Linear } else { Head::Sigmoid };
            self.arch.set_head(head);
        }
    }

    pub fn augment_profile(&self) -> AugmentProfile {
        AugmentProfile::parse(&self.augment).expect("validated at parse time")
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse_str(&text)?;
        if let CorpusSource::Path(p) = &mut cfg.corpus {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses config text. `model.arch` must be present; every other key
    /// falls back to the defaults of that architecture.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                key: line.into(),
                detail: "expected `key = value`".into(),
            })?;
            lines.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let (arch_line, arch_id) = lines
            .iter()
            .find(|(_, k, _)| k == "model.arch")
            .map(|(n, _, v)| (*n, v.clone()))
            .ok_or_else(|| Error::Config {
                line: 0,
                key: "model.arch".into(),
                detail: "missing; one of unet, dcgan, dcgan-mini, srresgan, progan".into(),
            })?;
        let arch = ArchConfig::from_id(&arch_id).ok_or_else(|| Error::Config {
            line: arch_line,
            key: "model.arch".into(),
            detail: format!("unknown architecture `{arch_id}`"),
        })?;
        let mut cfg = Self::for_arch(arch);
        let mut seen = std::collections::HashMap::new();
        let mut kind_line = None;
        let mut head_line = None;
        let mut clip_line = None;
        for (n, k, v) in &lines {
            if let Some(prev) = seen.insert(k.clone(), *n) {
                return Err(Error::Config {
                    line: *n,
                    key: k.clone(),
                    detail: format!("duplicate of line {prev}"),
                });
            }
            let err = |detail: String| Error::Config {
                line: *n,
                key: k.clone(),
                detail,
            };
            match k.as_str() {
                "model.arch" => {}
                "loss.kind" => {
                    let kind = LossKind::parse(v).ok_or_else(|| err(format!("unknown loss `{v}`")))?;
                    let smoothing = cfg.loss.one_sided_smoothing && !kind.is_wasserstein();
                    cfg.loss = LossSpec {
                        one_sided_smoothing: smoothing,
                        ..LossSpec::new(kind)
                    };
                    kind_line = Some(*n);
                }
                _ => {}
            }
            if k == "model.head" {
                head_line = Some(*n);
            }
            if k == "loss.clip" {
                clip_line = Some(*n);
            }
        }
        // loss.kind resets the loss block, so it is applied first; the
        // head follows the loss unless given explicitly
        cfg.sync_head();
        for (n, k, v) in &lines {
            if k == "model.arch" || k == "loss.kind" {
                continue;
            }
            cfg.set(k, v).map_err(|detail| Error::Config {
                line: *n,
                key: k.clone(),
                detail,
            })?;
        }
        if cfg.loss.kind == LossKind::Wgan && cfg.loss.clip_threshold.is_none() {
            cfg.loss.clip_threshold = Some(DEFAULT_CLIP);
        }
        let at = |l: Option<usize>| l.unwrap_or(kind_line.unwrap_or(0));
        cfg.validate().map_err(|(key, detail)| Error::Config {
            line: match key {
                "loss.clip" => at(clip_line),
                "model.head" => at(head_line),
                _ => at(seen.get(key).copied()),
            },
            key: key.into(),
            detail,
        })?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
        }
        fn flag(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("expected true or false, got `{v}`")),
            }
        }
        fn opt_num<T: std::str::FromStr>(v: &str) -> std::result::Result<Option<T>, String> {
            if v == "none" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        }
        if let Some(rest) = key.strip_prefix("model.") {
            return self.arch.set(rest, v);
        }
        for (prefix, which) in [("optim.g.", 1), ("optim.d.", 2), ("optim.", 0)] {
            if let Some(field) = key.strip_prefix(prefix) {
                let o = match which {
                    1 => &mut self.optim_g,
                    2 => &mut self.optim_d,
                    _ => &mut self.optim,
                };
                match field {
                    "kind" => o.kind = OptimKind::parse(v).ok_or_else(|| format!("unknown optimizer `{v}`"))?,
                    "lr" => o.lr = num(v)?,
                    "beta1" => o.beta1 = num(v)?,
                    "momentum" => o.momentum = num(v)?,
                    _ => return Err("unknown key".into()),
                }
                return Ok(());
            }
        }
        match key {
            "loss.lambda_adv" => self.loss.lambda_adv = num(v)?,
            "loss.lambda_gp" => self.loss.lambda_gp = num(v)?,
            "loss.smoothing" => self.loss.one_sided_smoothing = flag(v)?,
            "loss.clip" => self.loss.clip_threshold = opt_num(v)?,
            "loss.eps_drift" => {
                self.loss.eps_drift = match v {
                    "true" => Some(DEFAULT_EPS_DRIFT),
                    "false" => None,
                    _ => opt_num(v)?,
                }
            }
            "train.batch_size" => self.batch_size = num(v)?,
            "train.epochs" => self.epochs = num(v)?,
            "train.steps_per_epoch" => self.steps_per_epoch = opt_num(v)?,
            "train.gen_disc_rate" => self.gen_disc_rate = num(v)?,
            "train.latent" => self.latent = LatentKind::parse(v).ok_or_else(|| format!("unknown latent `{v}`"))?,
            "train.augment" => {
                AugmentProfile::parse(v).ok_or_else(|| format!("unknown profile `{v}` (none, light, segmentation)"))?;
                self.augment = v.into();
            }
            "train.sample_grid" => self.sample_grid = num(v)?,
            "progan.stabilize_epochs" => self.stabilize_epochs = num(v)?,
            "progan.transition_epochs" => self.transition_epochs = num(v)?,
            "data.corpus" => {
                if v != "synthetic" {
                    self.corpus = CorpusSource::Path(PathBuf::from(v));
                } else if !matches!(self.corpus, CorpusSource::Synthetic { .. }) {
                    self.corpus = CorpusSource::Synthetic {
                        n: 200,
                        res: self.arch.resolution(),
                        modes: 2,
                    };
                }
            }
            "data.synthetic.n" | "data.synthetic.res" | "data.synthetic.modes" => match &mut self.corpus {
                CorpusSource::Synthetic { n, res, modes } => {
                    let slot = match key {
                        "data.synthetic.n" => n,
                        "data.synthetic.res" => res,
                        _ => modes,
                    };
                    *slot = num(v)?;
                }
                CorpusSource::Path(_) => return Err("only valid with data.corpus = synthetic".into()),
            },
            "data.range" => self.range = ValueRange::parse(v).ok_or_else(|| format!("unknown range `{v}` (unit, signed)"))?,
            "disc.input_noise_std" => self.input_noise_std = num(v)?,
            "log.wall_time" => self.log_wall_time = flag(v)?,
            "seed" => self.seed = num(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        self.loss.validate().map_err(|e| {
            let key = if e.to_string().contains("clip") {
                "loss.clip"
            } else if e.to_string().contains("smoothing") {
                "loss.smoothing"
            } else {
                "loss.kind"
            };
            (key, e.to_string())
        })?;
        if self.arch.is_gan() != self.loss.kind.is_adversarial() {
            return Err((
                "loss.kind",
                format!("{} does not apply to {}", self.loss.kind.name(), self.arch.id()),
            ));
        }
        if self.arch.head() == Some(Head::Sigmoid) && self.loss.kind.is_wasserstein() {
            return Err(("model.head", "a Wasserstein critic needs a linear head".into()));
        }
        if self.arch.head() == Some(Head::Linear) && matches!(self.loss.kind, LossKind::GanOriginal | LossKind::Dragan) {
            return Err(("model.head", "cross-entropy losses need a sigmoid head".into()));
        }
        for (key, o) in [("optim", &self.optim), ("optim.g", &self.optim_g), ("optim.d", &self.optim_d)] {
            o.validate(key).map_err(|e| ("optim", e))?;
        }
        if self.gen_disc_rate < 1 {
            return Err(("train.gen_disc_rate", "must be at least 1".into()));
        }
        for (key, v) in [
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("progan.stabilize_epochs", self.stabilize_epochs),
            ("progan.transition_epochs", self.transition_epochs),
        ] {
            if v < 1 {
                return Err((key, "must be at least 1".into()));
            }
        }
        if self.steps_per_epoch == Some(0) {
            return Err(("train.steps_per_epoch", "must be positive or none".into()));
        }
        if !(self.input_noise_std >= 0.0) {
            return Err(("disc.input_noise_std", "must be non-negative".into()));
        }
        Ok(())
    }

    /// Every setting, one `key = value` line each; parses back to `self`.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model.arch", self.arch.id().into());
        for (k, v) in self.arch.entries() {
            kv(&format!("model.{k}"), v);
        }
        kv("loss.kind", self.loss.kind.name().into());
        kv("loss.lambda_adv", self.loss.lambda_adv.to_string());
        kv("loss.lambda_gp", self.loss.lambda_gp.to_string());
        kv("loss.smoothing", self.loss.one_sided_smoothing.to_string());
        kv("loss.clip", opt(self.loss.clip_threshold));
        kv("loss.eps_drift", opt(self.loss.eps_drift));
        for (p, o) in [("optim", &self.optim), ("optim.g", &self.optim_g), ("optim.d", &self.optim_d)] {
            kv(&format!("{p}.kind"), o.kind.name().into());
            kv(&format!("{p}.lr"), o.lr.to_string());
            kv(&format!("{p}.beta1"), o.beta1.to_string());
            kv(&format!("{p}.momentum"), o.momentum.to_string());
        }
        kv("train.batch_size", self.batch_size.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.steps_per_epoch", opt(self.steps_per_epoch));
        kv("train.gen_disc_rate", self.gen_disc_rate.to_string());
        kv("train.latent", self.latent.name().into());
        kv("train.augment", self.augment.clone());
        kv("train.sample_grid", self.sample_grid.to_string());
        kv("progan.stabilize_epochs", self.stabilize_epochs.to_string());
        kv("progan.transition_epochs", self.transition_epochs.to_string());
        match &self.corpus {
            CorpusSource::Path(p) => kv("data.corpus", p.display().to_string()),
            CorpusSource::Synthetic { n, res, modes } => {
                kv("data.corpus", "synthetic".into());
                kv("data.synthetic.n", n.to_string());
                kv("data.synthetic.res", res.to_string());
                kv("data.synthetic.modes", modes.to_string());
            }
        }
        kv("data.range", self.range.name().into());
        kv("disc.input_noise_std", self.input_noise_std.to_string());
        kv("log.wall_time", self.log_wall_time.to_string());
        kv("seed", self.seed.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_materializes_defaults() {
        let c = ExperimentConfig::parse_str("model.arch = dcgan-mini\nseed = 7\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.loss.kind, LossKind::Dragan);
        assert_eq!(c.gen_disc_rate, 3);
        let text = c.resolved();
        assert!(text.contains("loss.lambda_gp = 0.25"));
        assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), c);
    }

    #[test]
    fn wgan_gets_default_clip_and_linear_head() {
        let c = ExperimentConfig::parse_str("model.arch = dcgan-mini\nloss.kind = wgan\n").unwrap();
        assert_eq!(c.loss.clip_threshold, Some(0.01));
        assert_eq!(c.arch.head(), Some(Head::Linear));
        assert!(c.resolved().contains("loss.clip = 0.01"));
        assert!(!c.loss.one_sided_smoothing);
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = ExperimentConfig::parse_str("model.arch = unet\n# c\ntrain.epoch = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, ref key, .. } if key == "train.epoch"), "{e}");
        let e = ExperimentConfig::parse_str("model.arch = unet\nmodel.filters = many\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = ExperimentConfig::parse_str("model.arch = dcgan\nloss.clip = 0.1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, ref key, .. } if key == "loss.clip"), "{e}");
        assert!(ExperimentConfig::parse_str("seed = 1\n").is_err());
        assert!(ExperimentConfig::parse_str("model.arch = unet\nloss.kind = wgan\n").is_err());
    }
}
