//! Architecture selection by id plus `key = value` builder parameters,
//! shared by the config parser, the CLI and checkpoint metadata.

use super::dcgan::{dcgan_discriminator_layout, dcgan_generator_layout};
use super::progan::{progan_discriminator_layout, progan_generator_layout};
use super::srresgan::{srresgan_discriminator_layout, srresgan_generator_layout};
use super::{
    build_dcgan, build_progan, build_srresgan, build_unet, unet_layout, DcganConfig, Head, Model, ProganConfig,
    ProganStage, SrresganConfig, UnetConfig,
};
use crate::error::{Error, Result};
use crate::optim::{InitKind, InitScheme};
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum ArchConfig {
    Unet(UnetConfig),
    Dcgan(DcganConfig),
    Srresgan(SrresganConfig),
    Progan(ProganConfig),
}

/// Freshly built networks.
#[derive(Clone, Debug)]
pub enum Built {
    Segmenter(Model),
    Gan { g: Model, d: Model },
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn parse_head(v: &str) -> std::result::Result<Head, String> {
    Head::parse(v).ok_or_else(|| format!("unknown head `{v}` (sigmoid, linear)"))
}

impl ArchConfig {
    /// Canonical configuration for an architecture id. `dcgan-mini` is the
    /// desk-scale DCGAN.
    pub fn from_id(id: &str) -> Option<Self> {
        Some(match id {
            "unet" => Self::Unet(UnetConfig::default()),
            "dcgan" => Self::Dcgan(DcganConfig::default()),
            "dcgan-mini" => Self::Dcgan(DcganConfig::mini()),
            "srresgan" => Self::Srresgan(SrresganConfig::default()),
            "progan" => Self::Progan(ProganConfig::default()),
            _ => return None,
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Unet(_) => "unet",
            Self::Dcgan(_) => "dcgan",
            Self::Srresgan(_) => "srresgan",
            Self::Progan(_) => "progan",
        }
    }

    pub fn init(&self) -> InitScheme {
        match self {
            Self::Unet(c) => c.init,
            Self::Dcgan(c) => c.init,
            Self::Srresgan(c) => c.init,
            Self::Progan(c) => c.init,
        }
    }

    fn init_mut(&mut self) -> &mut InitScheme {
        match self {
            Self::Unet(c) => &mut c.init,
            Self::Dcgan(c) => &mut c.init,
            Self::Srresgan(c) => &mut c.init,
            Self::Progan(c) => &mut c.init,
        }
    }

    pub fn is_gan(&self) -> bool {
        !matches!(self, Self::Unet(_))
    }

    /// Output resolution of the generator (or the segmenter's input).
    pub fn resolution(&self) -> usize {
        match self {
            Self::Unet(c) => c.resolution,
            Self::Dcgan(c) => c.target_res,
            Self::Srresgan(c) => c.target_res,
            Self::Progan(c) => c.target_res,
        }
    }

    pub fn latent(&self) -> Option<usize> {
        match self {
            Self::Unet(_) => None,
            Self::Dcgan(c) => Some(c.latent),
            Self::Srresgan(c) => Some(c.latent),
            Self::Progan(c) => Some(c.latent),
        }
    }

    pub fn set_head(&mut self, head: Head) {
        match self {
            Self::Unet(_) => {}
            Self::Dcgan(c) => c.head = head,
            Self::Srresgan(c) => c.head = head,
            Self::Progan(c) => c.head = head,
        }
    }

    pub fn head(&self) -> Option<Head> {
        match self {
            Self::Unet(_) => None,
            Self::Dcgan(c) => Some(c.head),
            Self::Srresgan(c) => Some(c.head),
            Self::Progan(c) => Some(c.head),
        }
    }

    /// Sets one builder parameter. Returns a message on unknown keys or
    /// unparsable values.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "init" => {
                self.init_mut().kind =
                    InitKind::parse(v).ok_or_else(|| format!("unknown init `{v}` (normal_002, he_normal_literal, dynamic_scaled)"))?;
                return Ok(());
            }
            "init_fan_in" => {
                self.init_mut().standard_fan_in = parse_bool(v)?;
                return Ok(());
            }
            _ => {}
        }
        let unknown = || Err(format!("unknown parameter `{key}` for this architecture"));
        match self {
            Self::Unet(c) => match key {
                "filters" => c.base_filters = parse_num(v)?,
                "resolution" => c.resolution = parse_num(v)?,
                "in_channels" => c.in_channels = parse_num(v)?,
                "bn" => c.use_bn = parse_bool(v)?,
                "dropout" => c.dropout = parse_num(v)?,
                _ => return unknown(),
            },
            Self::Dcgan(c) => match key {
                "latent" => c.latent = parse_num(v)?,
                "base_res" => c.base_res = parse_num(v)?,
                "target_res" => c.target_res = parse_num(v)?,
                "g_width" => c.g_width = parse_num(v)?,
                "d_base" => c.d_base = parse_num(v)?,
                "d_dense" => c.d_dense = parse_num(v)?,
                "kernel" => c.kernel = parse_num(v)?,
                "minibatch_std" => c.minibatch_std = parse_bool(v)?,
                "head" => c.head = parse_head(v)?,
                _ => return unknown(),
            },
            Self::Srresgan(c) => match key {
                "latent" => c.latent = parse_num(v)?,
                "n_res_blocks" => c.n_res_blocks = parse_num(v)?,
                "target_res" => c.target_res = parse_num(v)?,
                "g_width" => c.g_width = parse_num(v)?,
                "kernel" => c.kernel = parse_num(v)?,
                "d_base" => c.d_base = parse_num(v)?,
                "d_res_blocks" => c.d_res_blocks = parse_num(v)?,
                "minibatch_std" => c.minibatch_std = parse_bool(v)?,
                "head" => c.head = parse_head(v)?,
                _ => return unknown(),
            },
            Self::Progan(c) => match key {
                "latent" => c.latent = parse_num(v)?,
                "target_res" => c.target_res = parse_num(v)?,
                "fmap_base" => c.fmap_base = parse_num(v)?,
                "fmap_max" => c.fmap_max = parse_num(v)?,
                "kernel" => c.kernel = parse_num(v)?,
                "minibatch_std" => c.minibatch_std = parse_bool(v)?,
                "head" => c.head = parse_head(v)?,
                _ => return unknown(),
            },
        }
        Ok(())
    }

    /// Every builder parameter with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = match self {
            Self::Unet(c) => vec![
                ("filters", c.base_filters.to_string()),
                ("resolution", c.resolution.to_string()),
                ("in_channels", c.in_channels.to_string()),
                ("bn", c.use_bn.to_string()),
                ("dropout", c.dropout.to_string()),
            ],
            Self::Dcgan(c) => vec![
                ("latent", c.latent.to_string()),
                ("base_res", c.base_res.to_string()),
                ("target_res", c.target_res.to_string()),
                ("g_width", c.g_width.to_string()),
                ("d_base", c.d_base.to_string()),
                ("d_dense", c.d_dense.to_string()),
                ("kernel", c.kernel.to_string()),
                ("minibatch_std", c.minibatch_std.to_string()),
                ("head", c.head.name().to_string()),
            ],
            Self::Srresgan(c) => vec![
                ("latent", c.latent.to_string()),
                ("n_res_blocks", c.n_res_blocks.to_string()),
                ("target_res", c.target_res.to_string()),
                ("g_width", c.g_width.to_string()),
                ("kernel", c.kernel.to_string()),
                ("d_base", c.d_base.to_string()),
                ("d_res_blocks", c.d_res_blocks.to_string()),
                ("minibatch_std", c.minibatch_std.to_string()),
                ("head", c.head.name().to_string()),
            ],
            Self::Progan(c) => vec![
                ("latent", c.latent.to_string()),
                ("target_res", c.target_res.to_string()),
                ("fmap_base", c.fmap_base.to_string()),
                ("fmap_max", c.fmap_max.to_string()),
                ("kernel", c.kernel.to_string()),
                ("minibatch_std", c.minibatch_std.to_string()),
                ("head", c.head.name().to_string()),
            ],
        };
        let init = self.init();
        e.push(("init", init.kind.name().to_string()));
        e.push(("init_fan_in", init.standard_fan_in.to_string()));
        e
    }

    /// Single-line form `id key=value ...` stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let mut s = self.id().to_string();
        for (k, v) in self.entries() {
            s.push(' ');
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
        }
        s
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let id = parts.next().unwrap_or_default();
        let mut arch = Self::from_id(id).ok_or_else(|| Error::Checkpoint(format!("unknown architecture `{id}`")))?;
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed architecture field `{kv}`")))?;
            arch.set(k, v).map_err(Error::Checkpoint)?;
        }
        Ok(arch)
    }

    fn stage_or_final(&self, stage: Option<ProganStage>) -> ProganStage {
        stage.unwrap_or_else(|| ProganStage::stabilize(self.resolution()))
    }

    /// Parameter-free layouts: the segmenter, or generator then discriminator.
    pub fn layouts(&self, stage: Option<ProganStage>) -> Result<Vec<Model>> {
        Ok(match self {
            Self::Unet(c) => vec![unet_layout(c)?],
            Self::Dcgan(c) => vec![dcgan_generator_layout(c)?, dcgan_discriminator_layout(c)?],
            Self::Srresgan(c) => vec![srresgan_generator_layout(c)?, srresgan_discriminator_layout(c)?],
            Self::Progan(c) => {
                let st = self.stage_or_final(stage);
                vec![progan_generator_layout(c, &st)?, progan_discriminator_layout(c, &st)?]
            }
        })
    }

    pub fn build(&self, stage: Option<ProganStage>, rng: &mut Rng) -> Result<Built> {
        Ok(match self {
            Self::Unet(c) => Built::Segmenter(build_unet(c, rng)?),
            Self::Dcgan(c) => {
                let (g, d) = build_dcgan(c, rng)?;
                Built::Gan { g, d }
            }
            Self::Srresgan(c) => {
                let (g, d) = build_srresgan(c, rng)?;
                Built::Gan { g, d }
            }
            Self::Progan(c) => {
                let (g, d) = build_progan(c, &self.stage_or_final(stage), rng)?;
                Built::Gan { g, d }
            }
        })
    }
}
