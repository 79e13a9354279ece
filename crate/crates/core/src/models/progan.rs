//! Progressive GAN. Networks are built per stage; parameter names are
//! stable across stages so weights carry over by name when the resolution
//! doubles.

use super::{conv_row, is_pow2, Head, Model, Row, Step};
use crate::error::{Error, Result};
use crate::layers::{Activation, Padding, PoolKind};
use crate::optim::{InitKind, InitScheme};
use crate::Rng;

pub const PROGAN_MIN_RES: usize = 4;
pub const PROGAN_MAX_RES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Stabilize,
    Transition,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Stabilize => "stabilize",
            Self::Transition => "transition",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProganStage {
    pub resolution: usize,
    pub phase: Phase,
    pub alpha: f64,
}

impl ProganStage {
    pub fn stabilize(resolution: usize) -> Self {
        Self {
            resolution,
            phase: Phase::Stabilize,
            alpha: 1.0,
        }
    }

    pub fn transition(resolution: usize, alpha: f64) -> Self {
        Self {
            resolution,
            phase: Phase::Transition,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if !is_pow2(r) || !(PROGAN_MIN_RES..=PROGAN_MAX_RES).contains(&r) {
            return Err(Error::InvalidArgument(format!(
                "progan stage resolution {r} must be a power of two in [{PROGAN_MIN_RES}, {PROGAN_MAX_RES}]"
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("fade weight {} outside [0, 1]", self.alpha)));
        }
        match self.phase {
            Phase::Stabilize if self.alpha != 1.0 => {
                Err(Error::InvalidArgument("stabilize phase requires alpha = 1".into()))
            }
            Phase::Transition if r == PROGAN_MIN_RES => {
                Err(Error::InvalidArgument("the first stage has no transition".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Resolutions visited when growing up to `target`: `[4, 8, ..., target]`.
pub fn progan_ladder(target: usize) -> Result<Vec<usize>> {
    ProganStage::stabilize(target).validate()?;
    let mut out = vec![PROGAN_MIN_RES];
    while *out.last().expect("non-empty") < target {
        out.push(out.last().expect("non-empty") * 2);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProganConfig {
    pub latent: usize,
    pub target_res: usize,
    pub fmap_base: usize,
    pub fmap_max: usize,
    pub kernel: usize,
    pub minibatch_std: bool,
    pub head: Head,
    pub init: InitScheme,
}

impl Default for ProganConfig {
    fn default() -> Self {
        Self {
            latent: 512,
            target_res: 256,
            fmap_base: 4096,
            fmap_max: 512,
            kernel: 5,
            minibatch_std: true,
            head: Head::Sigmoid,
            init: InitScheme::new(InitKind::DynamicScaled),
        }
    }
}

impl ProganConfig {
    /// Feature maps at resolution `r`.
    pub fn fmap(&self, r: usize) -> usize {
        (self.fmap_base / r).clamp(1, self.fmap_max)
    }

    fn check(&self, stage: &ProganStage) -> Result<()> {
        stage.validate()?;
        ProganStage::stabilize(self.target_res).validate()?;
        if stage.resolution > self.target_res {
            return Err(Error::InvalidArgument(format!(
                "stage {} beyond target resolution {}",
                stage.resolution, self.target_res
            )));
        }
        if self.latent == 0 || self.kernel % 2 == 0 || self.fmap_max == 0 {
            return Err(Error::InvalidArgument("progan latent and fmap must be positive, kernel odd".into()));
        }
        Ok(())
    }
}

pub fn progan_generator_layout(cfg: &ProganConfig, stage: &ProganStage) -> Result<Model> {
    cfg.check(stage)?;
    let init = cfg.init;
    let big = stage.resolution;
    let fading = stage.phase == Phase::Transition;
    let k = cfg.kernel;
    let conv = |name: &str, ci: usize, co: usize, k: usize| conv_row(name, ci, co, k, 1, init.runtime_scale(co, ci * k * k));
    let lrelu = Step::Act(Activation::LeakyRelu);
    let torgb = |r: usize| conv(&format!("g.torgb{r}"), cfg.fmap(r), 1, 1);

    let mut m = Model::new("progan.g", vec![cfg.latent]);
    m.alpha = stage.alpha;
    m.push(Row::new("Latent vector", "-", vec![]));
    let f4 = cfg.fmap(4);
    m.push(Row::new(
        "Conv 4×4",
        "LReLU",
        vec![
            Step::Reshape(vec![cfg.latent, 1, 1]),
            Step::ConvTranspose {
                name: "g.base.conv4".into(),
                in_c: cfg.latent,
                out_c: f4,
                k: 4,
                stride: 1,
                padding: Padding::Valid,
                scale: init.runtime_scale(f4, cfg.latent * 16),
            },
            lrelu.clone(),
        ],
    ));
    m.push(Row::new(
        "Conv 3×3",
        "PN+LReLU",
        vec![conv("g.base.conv3", f4, f4, 3), Step::PixelNorm, lrelu.clone()],
    ));
    let mut r = 8;
    while r <= big {
        let (ci, co) = (cfg.fmap(r / 2), cfg.fmap(r));
        let mut up = Vec::new();
        if fading && r == big {
            // old path: toRGB at the previous resolution, then upsample
            up.extend([
                Step::Save(0),
                torgb(r / 2),
                Step::Act(Activation::Tanh),
                Step::Upsample,
                Step::Save(1),
                Step::Restore(0),
            ]);
        }
        up.push(Step::Upsample);
        m.push(Row::new("Upsample", "-", up));
        let label = format!("Conv {k}×{k}");
        m.push(Row::new(
            label.clone(),
            "PN+LReLU",
            vec![conv(&format!("g.b{r}.conv0"), ci, co, k), Step::PixelNorm, lrelu.clone()],
        ));
        m.push(Row::new(
            label,
            "PN+LReLU",
            vec![conv(&format!("g.b{r}.conv1"), co, co, k), Step::PixelNorm, lrelu.clone()],
        ));
        r *= 2;
    }
    let mut out = vec![torgb(big), Step::Act(Activation::Tanh)];
    if fading {
        out.push(Step::Blend {
            slot: 1,
            saved_is_new: false,
        });
    }
    m.push(Row::new("Conv 1×1", "Tanh", out));
    Ok(m)
}

pub fn progan_discriminator_layout(cfg: &ProganConfig, stage: &ProganStage) -> Result<Model> {
    cfg.check(stage)?;
    let init = cfg.init;
    let big = stage.resolution;
    let fading = stage.phase == Phase::Transition;
    let k = cfg.kernel;
    let conv = |name: &str, ci: usize, co: usize, k: usize| conv_row(name, ci, co, k, 1, init.runtime_scale(co, ci * k * k));
    let lrelu = Step::Act(Activation::LeakyRelu);
    let fromrgb = |r: usize| conv(&format!("d.fromrgb{r}"), 1, cfg.fmap(r), 1);

    let mut m = Model::new("progan.d", vec![1, big, big]);
    m.alpha = stage.alpha;
    m.push(Row::new("Input image", "-", if fading { vec![Step::Save(0)] } else { vec![] }));
    m.push(Row::new("Conv 1×1", "LReLU", vec![fromrgb(big), lrelu.clone()]));
    let mut r = big;
    while r >= 8 {
        let (ci, co) = (cfg.fmap(r), cfg.fmap(r / 2));
        let label = format!("Conv {k}×{k}");
        m.push(Row::new(
            label.clone(),
            "LReLU",
            vec![conv(&format!("d.b{r}.conv0"), ci, ci, k), lrelu.clone()],
        ));
        m.push(Row::new(label, "-", vec![conv(&format!("d.b{r}.conv1"), ci, co, k)]));
        let mut down = vec![Step::Pool(PoolKind::Avg), lrelu.clone()];
        if fading && r == big {
            // old path: downsample the image, then fromRGB at half resolution
            down.extend([
                Step::Save(1),
                Step::Restore(0),
                Step::Pool(PoolKind::Avg),
                fromrgb(r / 2),
                lrelu.clone(),
                Step::Blend {
                    slot: 1,
                    saved_is_new: true,
                },
            ]);
        }
        m.push(Row::new("Downsample", "LReLU", down));
        r /= 2;
    }
    let f4 = cfg.fmap(4);
    let mut c = f4;
    if cfg.minibatch_std {
        m.push(Row::new("Minibatch std", "-", vec![Step::MinibatchStd]));
        c += 1;
    }
    m.push(Row::new("Conv 3×3", "LReLU", vec![conv("d.head.conv3", c, f4, 3), lrelu.clone()]));
    m.push(Row::new(
        "Conv 4×4",
        "LReLU",
        vec![
            Step::Conv {
                name: "d.head.conv4".into(),
                in_c: f4,
                out_c: f4,
                k: 4,
                stride: 1,
                padding: Padding::Valid,
                scale: init.runtime_scale(f4, f4 * 16),
            },
            lrelu,
        ],
    ));
    let mut steps = vec![
        Step::Flatten,
        Step::Dense {
            name: "d.head.dense".into(),
            in_f: f4,
            out_f: 1,
            scale: init.runtime_scale(1, f4),
        },
    ];
    let act = match cfg.head {
        Head::Sigmoid => {
            steps.push(Step::Act(Activation::Sigmoid));
            "Sigmoid"
        }
        Head::Linear => "-",
    };
    m.push(Row::new("Dense", act, steps));
    Ok(m)
}

pub fn build_progan(cfg: &ProganConfig, stage: &ProganStage, rng: &mut Rng) -> Result<(Model, Model)> {
    let mut g = progan_generator_layout(cfg, stage)?;
    let mut d = progan_discriminator_layout(cfg, stage)?;
    g.init_params(cfg.init, rng);
    d.init_params(cfg.init, rng);
    Ok((g, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(m: &Model) -> Vec<String> {
        m.table_rows().unwrap().iter().map(|r| r.shape_text()).collect()
    }

    #[test]
    fn canonical_discriminator_has_24_rows() {
        let d = progan_discriminator_layout(&ProganConfig::default(), &ProganStage::stabilize(256)).unwrap();
        let s = shapes(&d);
        assert_eq!(s.len(), 24);
        assert_eq!(s[1], "16 × 256 × 256");
        assert_eq!(s[3], "32 × 256 × 256");
        assert_eq!(s[20], "513 × 4 × 4");
        assert_eq!(s[22], "512 × 1 × 1");
    }

    #[test]
    fn canonical_generator() {
        let g = progan_generator_layout(&ProganConfig::default(), &ProganStage::stabilize(256)).unwrap();
        let s = shapes(&g);
        assert_eq!(s.len(), 3 + 18 + 1);
        assert_eq!(s[1], "512 × 4 × 4");
        assert_eq!(s[7], "256 × 16 × 16");
        assert_eq!(s[21], "1 × 256 × 256");
    }

    #[test]
    fn stage_four_and_transitions() {
        let cfg = ProganConfig::default();
        let g = progan_generator_layout(&cfg, &ProganStage::stabilize(4)).unwrap();
        assert_eq!(shapes(&g), ["512 × 1 × 1", "512 × 4 × 4", "512 × 4 × 4", "1 × 4 × 4"]);
        assert!(progan_generator_layout(&cfg, &ProganStage::transition(4, 0.5)).is_err());
        assert!(progan_generator_layout(&cfg, &ProganStage::stabilize(512)).is_err());
        let t = progan_generator_layout(&cfg, &ProganStage::transition(8, 0.3)).unwrap();
        assert_eq!(shapes(&t).last().unwrap(), "1 × 8 × 8");
        let d = progan_discriminator_layout(&cfg, &ProganStage::transition(8, 0.3)).unwrap();
        assert!(d.declared().iter().any(|p| p.name == "d.fromrgb4.w"));
        assert_eq!(progan_ladder(32).unwrap(), [4, 8, 16, 32]);
    }
}
