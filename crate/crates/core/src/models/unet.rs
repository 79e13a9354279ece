//! U-net segmentation network: four 2×2 max-pool levels, `f·2^i` filters
//! at level `i`, batch norm after every 3×3 convolution.

use super::{conv_row, Model, Row, Step};
use crate::error::{Error, Result};
use crate::layers::{Activation, Padding, PoolKind};
use crate::optim::{InitKind, InitScheme};
use crate::Rng;

pub const UNET_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct UnetConfig {
    pub base_filters: usize,
    pub resolution: usize,
    pub in_channels: usize,
    pub use_bn: bool,
    pub dropout: f64,
    pub init: InitScheme,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            base_filters: 32,
            resolution: 128,
            in_channels: 1,
            use_bn: true,
            dropout: 0.0,
            init: InitScheme::new(InitKind::HeNormalLiteral),
        }
    }
}

fn conv_bn_relu(name: &str, in_c: usize, out_c: usize, cfg: &UnetConfig) -> Vec<Step> {
    let mut steps = vec![conv_row(name, in_c, out_c, 3, 1, cfg.init.runtime_scale(out_c, in_c * 9))];
    if cfg.use_bn {
        steps.push(Step::BatchNorm {
            name: format!("{name}.bn"),
            channels: out_c,
        });
    }
    steps.push(Step::Act(Activation::Relu));
    steps
}

pub fn build_unet(cfg: &UnetConfig, rng: &mut Rng) -> Result<Model> {
    let mut m = unet_layout(cfg)?;
    m.init_params(cfg.init, rng);
    Ok(m)
}

/// Rows of the network without any parameter storage.
pub fn unet_layout(cfg: &UnetConfig) -> Result<Model> {
    let f = cfg.base_filters;
    let res = cfg.resolution;
    if f == 0 || cfg.in_channels == 0 {
        return Err(Error::InvalidArgument("unet needs positive filters and channels".into()));
    }
    if res == 0 || res % (1 << UNET_LEVELS) != 0 {
        return Err(Error::InvalidArgument(format!(
            "unet resolution {res} must be a positive multiple of {}",
            1 << UNET_LEVELS
        )));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::InvalidArgument(format!("dropout rate {} outside [0, 1)", cfg.dropout)));
    }
    let init = cfg.init;
    let act = if cfg.use_bn { "BN+ReLU" } else { "ReLU" };
    let mut m = Model::new("unet", vec![cfg.in_channels, res, res]);
    m.push(Row::new("Input image", "-", vec![]));

    let mut c_in = cfg.in_channels;
    for lvl in 0..UNET_LEVELS {
        let c = f << lvl;
        m.push(Row::new("Conv 3×3", act, conv_bn_relu(&format!("unet.enc{lvl}.conv0"), c_in, c, cfg)));
        let mut steps = conv_bn_relu(&format!("unet.enc{lvl}.conv1"), c, c, cfg);
        steps.push(Step::Save(lvl));
        m.push(Row::new("Conv 3×3", act, steps));
        m.push(Row::new("Downsample", "-", vec![Step::Pool(PoolKind::Max)]));
        c_in = c;
    }

    let cb = f << UNET_LEVELS;
    m.push(Row::new("Conv 3×3", act, conv_bn_relu("unet.mid.conv0", c_in, cb, cfg)));
    let mut steps = conv_bn_relu("unet.mid.conv1", cb, cb, cfg);
    if cfg.dropout > 0.0 {
        steps.push(Step::Dropout(cfg.dropout));
    }
    m.push(Row::new("Conv 3×3", act, steps));

    let mut c_in = cb;
    for lvl in (0..UNET_LEVELS).rev() {
        let c = f << lvl;
        let name = format!("unet.dec{lvl}.up");
        m.push(Row::new(
            "Conv Trans 3×3",
            "-",
            vec![Step::ConvTranspose {
                name,
                in_c: c_in,
                out_c: c,
                k: 3,
                stride: 2,
                padding: Padding::Same,
                scale: init.runtime_scale(c, c_in * 9),
            }],
        ));
        m.push(Row::new(format!("Concatenate l{}", lvl + 1), "-", vec![Step::Concat(lvl)]));
        m.push(Row::new("Conv 3×3", act, conv_bn_relu(&format!("unet.dec{lvl}.conv0"), 2 * c, c, cfg)));
        m.push(Row::new("Conv 3×3", act, conv_bn_relu(&format!("unet.dec{lvl}.conv1"), c, c, cfg)));
        c_in = c;
    }
    m.push(Row::new(
        "Conv 1×1",
        "Sigmoid",
        vec![
            Step::Conv {
                name: "unet.out".into(),
                in_c: c_in,
                out_c: 1,
                k: 1,
                stride: 1,
                padding: Padding::Same,
                scale: init.runtime_scale(1, c_in),
            },
            Step::Act(Activation::Sigmoid),
        ],
    ));
    Ok(m)
}
