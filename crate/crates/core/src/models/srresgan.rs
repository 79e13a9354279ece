//! SRResGAN: residual generator upscaled by PixelShuffle, residual
//! discriminator without batch norm.

use super::{conv_row, is_pow2, log2, Head, Model, Row, Step};
use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::optim::{InitKind, InitScheme};
use crate::Rng;

/// Spatial extent right after the generator's dense layer.
pub const SRRES_BASE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SrresganConfig {
    pub latent: usize,
    pub n_res_blocks: usize,
    pub target_res: usize,
    pub g_width: usize,
    pub kernel: usize,
    pub d_base: usize,
    pub d_res_blocks: usize,
    pub minibatch_std: bool,
    pub head: Head,
    pub init: InitScheme,
}

impl Default for SrresganConfig {
    fn default() -> Self {
        Self {
            latent: 256,
            n_res_blocks: 16,
            target_res: 256,
            g_width: 64,
            kernel: 3,
            d_base: 32,
            d_res_blocks: 2,
            minibatch_std: false,
            head: Head::Sigmoid,
            init: InitScheme::new(InitKind::Normal002),
        }
    }
}

impl SrresganConfig {
    fn upscales(&self) -> Result<usize> {
        if self.target_res < SRRES_BASE || self.target_res % SRRES_BASE != 0 || !is_pow2(self.target_res / SRRES_BASE) {
            return Err(Error::InvalidArgument(format!(
                "srresgan target resolution {} must be {SRRES_BASE}·2^u",
                self.target_res
            )));
        }
        if self.latent == 0 || self.g_width == 0 || self.d_base == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument("srresgan widths must be positive and the kernel odd".into()));
        }
        Ok(log2(self.target_res / SRRES_BASE))
    }
}

fn bn(name: &str, channels: usize) -> Step {
    Step::BatchNorm {
        name: format!("{name}.bn"),
        channels,
    }
}

pub fn srresgan_generator_layout(cfg: &SrresganConfig) -> Result<Model> {
    let u = cfg.upscales()?;
    let init = cfg.init;
    let (w, k, b) = (cfg.g_width, cfg.kernel, SRRES_BASE);
    let conv = |name: &str, ci: usize, co: usize, k: usize| conv_row(name, ci, co, k, 1, init.runtime_scale(co, ci * k * k));
    let mut m = Model::new("srresgan.g", vec![cfg.latent]);
    m.push(Row::new("Latent vector", "-", vec![]));
    m.push(Row::new(
        "Dense",
        "BN+ReLU",
        vec![
            Step::Dense {
                name: "g.dense".into(),
                in_f: cfg.latent,
                out_f: w * b * b,
                scale: init.runtime_scale(w * b * b, cfg.latent),
            },
            Step::Reshape(vec![w, b, b]),
            bn("g.dense", w),
            Step::Act(Activation::Relu),
            Step::Save(0),
        ],
    ));
    let label = format!("Conv {k}×{k}");
    let tag = format!("×{}", cfg.n_res_blocks);
    for i in 0..cfg.n_res_blocks {
        let n0 = format!("g.res{i}.conv0");
        let n1 = format!("g.res{i}.conv1");
        m.push(
            Row::new(
                label.clone(),
                "BN+ReLU",
                vec![Step::Save(1), conv(&n0, w, w, k), bn(&n0, w), Step::Act(Activation::Relu)],
            )
            .repeated(&tag, i),
        );
        m.push(Row::new(label.clone(), "BN", vec![conv(&n1, w, w, k), bn(&n1, w)]).repeated(&tag, i));
        m.push(Row::new("Add", "-", vec![Step::AddSaved(1)]).repeated(&tag, i));
    }
    m.push(Row::new("-", "BN+ReLU", vec![bn("g.post", w), Step::Act(Activation::Relu)]));
    m.push(Row::new("Add", "-", vec![Step::AddSaved(0)]));
    for i in 0..u {
        let n = format!("g.up{i}.conv");
        m.push(Row::new(label.clone(), "-", vec![conv(&n, w, 4 * w, k)]));
        m.push(Row::new(
            "PixelShuffle",
            "BN+ReLU",
            vec![Step::PixelShuffle(2), bn(&format!("g.up{i}"), w), Step::Act(Activation::Relu)],
        ));
    }
    m.push(Row::new("Conv 9×9", "Tanh", vec![conv("g.out", w, 1, 9), Step::Act(Activation::Tanh)]));
    Ok(m)
}

pub fn srresgan_discriminator_layout(cfg: &SrresganConfig) -> Result<Model> {
    cfg.upscales()?;
    let init = cfg.init;
    let res = cfg.target_res;
    let stages = log2(res) - 2;
    let conv = |name: &str, ci: usize, co: usize, k: usize, s: usize| conv_row(name, ci, co, k, s, init.runtime_scale(co, ci * k * k));
    let lrelu = Step::Act(Activation::LeakyRelu);
    let mut m = Model::new("srresgan.d", vec![1, res, res]);
    m.push(Row::new("Input image", "-", vec![]));
    let tag = format!("×{}", cfg.d_res_blocks);
    let mut c_in = 1;
    for s in 0..stages {
        let c = cfg.d_base << s;
        m.push(Row::new("Conv 4×4", "LReLU", vec![conv(&format!("d.s{s}.down"), c_in, c, 4, 2), lrelu.clone()]));
        for j in 0..cfg.d_res_blocks {
            let n = format!("d.s{s}.res{j}");
            m.push(
                Row::new("Conv 3×3", "LReLU", vec![Step::Save(0), conv(&format!("{n}.conv0"), c, c, 3, 1), lrelu.clone()])
                    .repeated(&tag, j),
            );
            m.push(Row::new("Conv 3×3", "-", vec![conv(&format!("{n}.conv1"), c, c, 3, 1)]).repeated(&tag, j));
            m.push(Row::new("Add", "LReLU", vec![Step::AddSaved(0), lrelu.clone()]).repeated(&tag, j));
        }
        c_in = c;
    }
    m.push(Row::new("Conv 3×3", "LReLU", vec![conv("d.final", c_in, 2 * c_in, 3, 2), lrelu]));
    let mut flat = 2 * c_in * 2 * 2;
    if cfg.minibatch_std {
        m.push(Row::new("Minibatch std", "-", vec![Step::MinibatchStd]));
        flat += 4;
    }
    let mut steps = vec![
        Step::Flatten,
        Step::Dense {
            name: "d.dense".into(),
            in_f: flat,
            out_f: 1,
            scale: init.runtime_scale(1, flat),
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

pub fn build_srresgan(cfg: &SrresganConfig, rng: &mut Rng) -> Result<(Model, Model)> {
    let mut g = srresgan_generator_layout(cfg)?;
    let mut d = srresgan_discriminator_layout(cfg)?;
    g.init_params(cfg.init, rng);
    d.init_params(cfg.init, rng);
    Ok((g, d))
}
