//! DCGAN: dense-reshape generator with a stack of 5×5 transposed
//! convolutions, strided-convolution discriminator with two dense layers.

use super::{is_pow2, log2, Head, Model, Row, Step};
use crate::error::{Error, Result};
use crate::layers::{Activation, Padding};
use crate::optim::{InitKind, InitScheme};
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct DcganConfig {
    pub latent: usize,
    pub base_res: usize,
    pub target_res: usize,
    /// Generator channels before the last two upscales.
    pub g_width: usize,
    /// Channels of the first discriminator conv, doubled at every stride.
    pub d_base: usize,
    pub d_dense: usize,
    pub kernel: usize,
    pub minibatch_std: bool,
    pub head: Head,
    pub init: InitScheme,
}

impl Default for DcganConfig {
    fn default() -> Self {
        Self {
            latent: 256,
            base_res: 8,
            target_res: 256,
            g_width: 256,
            d_base: 64,
            d_dense: 1024,
            kernel: 5,
            minibatch_std: false,
            head: Head::Sigmoid,
            init: InitScheme::new(InitKind::Normal002),
        }
    }
}

impl DcganConfig {
    /// Desk-scale instance trained by the 16×16 smoke runs.
    pub fn mini() -> Self {
        Self {
            latent: 32,
            base_res: 4,
            target_res: 16,
            g_width: 64,
            d_base: 32,
            d_dense: 64,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<usize> {
        if !is_pow2(self.target_res) || !is_pow2(self.base_res) || self.target_res < 16 {
            return Err(Error::InvalidArgument(format!(
                "dcgan target resolution {} must be a power of two >= 16",
                self.target_res
            )));
        }
        if self.base_res >= self.target_res {
            return Err(Error::InvalidArgument(format!(
                "dcgan base resolution {} must be below the target {}",
                self.base_res, self.target_res
            )));
        }
        if self.latent == 0 || self.g_width < 4 || self.d_base == 0 || self.d_dense == 0 || self.kernel == 0 {
            return Err(Error::InvalidArgument("dcgan widths must be positive".into()));
        }
        Ok(log2(self.target_res / self.base_res))
    }
}

fn bn(name: &str, channels: usize) -> Step {
    Step::BatchNorm {
        name: format!("{name}.bn"),
        channels,
    }
}

/// Generator rows. The leading doublings come in pairs (stride 2, then
/// stride 1) at full width; the last two doublings are single layers that
/// halve the width.
pub fn dcgan_generator_layout(cfg: &DcganConfig) -> Result<Model> {
    let u = cfg.validate()?;
    let init = cfg.init;
    let (w, r0, k) = (cfg.g_width, cfg.base_res, cfg.kernel);
    let mut m = Model::new("dcgan.g", vec![cfg.latent]);
    m.push(Row::new("Latent vector", "-", vec![]));
    m.push(Row::new(
        "Dense",
        "BN+ReLU",
        vec![
            Step::Dense {
                name: "g.dense".into(),
                in_f: cfg.latent,
                out_f: w * r0 * r0,
                scale: init.runtime_scale(w * r0 * r0, cfg.latent),
            },
            Step::Reshape(vec![w, r0, r0]),
            bn("g.dense", w),
            Step::Act(Activation::Relu),
        ],
    ));
    let mut plan: Vec<(usize, usize)> = Vec::new();
    let singles = u.min(2);
    for _ in 0..u - singles {
        plan.push((w, 2));
        plan.push((w, 1));
    }
    for i in 0..singles {
        plan.push((w >> (i + 1), 2));
    }
    let label = format!("Conv Trans {k}×{k}");
    let mut c_in = w;
    for (i, &(c, stride)) in plan.iter().enumerate() {
        let name = format!("g.convt{i}");
        m.push(Row::new(
            label.clone(),
            "BN+ReLU",
            vec![
                Step::ConvTranspose {
                    name: name.clone(),
                    in_c: c_in,
                    out_c: c,
                    k,
                    stride,
                    padding: Padding::Same,
                    scale: init.runtime_scale(c, c_in * k * k),
                },
                bn(&name, c),
                Step::Act(Activation::Relu),
            ],
        ));
        c_in = c;
    }
    m.push(Row::new(
        label,
        "Tanh",
        vec![
            Step::ConvTranspose {
                name: format!("g.convt{}", plan.len()),
                in_c: c_in,
                out_c: 1,
                k,
                stride: 1,
                padding: Padding::Same,
                scale: init.runtime_scale(1, c_in * k * k),
            },
            Step::Act(Activation::Tanh),
        ],
    ));
    Ok(m)
}

pub fn dcgan_discriminator_layout(cfg: &DcganConfig) -> Result<Model> {
    let u = cfg.validate()?;
    let init = cfg.init;
    let (res, k) = (cfg.target_res, cfg.kernel);
    let mut m = Model::new("dcgan.d", vec![1, res, res]);
    m.push(Row::new("Input image", "-", vec![]));
    let label = format!("Conv {k}×{k}");
    let mut c_in = 1;
    for i in 0..u {
        let c = cfg.d_base << i;
        let name = format!("d.conv{i}");
        let mut steps = vec![Step::Conv {
            name: name.clone(),
            in_c: c_in,
            out_c: c,
            k,
            stride: 2,
            padding: Padding::Same,
            scale: init.runtime_scale(c, c_in * k * k),
        }];
        let act = if i == 0 {
            "LReLU"
        } else {
            steps.push(bn(&name, c));
            "BN+LReLU"
        };
        steps.push(Step::Act(Activation::LeakyRelu));
        m.push(Row::new(label.clone(), act, steps));
        c_in = c;
    }
    let mut flat = c_in * cfg.base_res * cfg.base_res;
    if cfg.minibatch_std {
        m.push(Row::new("Minibatch std", "-", vec![Step::MinibatchStd]));
        flat += cfg.base_res * cfg.base_res;
    }
    m.push(Row::new(
        "Dense",
        "LReLU",
        vec![
            Step::Flatten,
            Step::Dense {
                name: "d.dense0".into(),
                in_f: flat,
                out_f: cfg.d_dense,
                scale: init.runtime_scale(cfg.d_dense, flat),
            },
            Step::Act(Activation::LeakyRelu),
        ],
    ));
    let mut steps = vec![Step::Dense {
        name: "d.dense1".into(),
        in_f: cfg.d_dense,
        out_f: 1,
        scale: init.runtime_scale(1, cfg.d_dense),
    }];
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

pub fn build_dcgan(cfg: &DcganConfig, rng: &mut Rng) -> Result<(Model, Model)> {
    let mut g = dcgan_generator_layout(cfg)?;
    let mut d = dcgan_discriminator_layout(cfg)?;
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
    fn canonical_generator_rows() {
        let g = dcgan_generator_layout(&DcganConfig::default()).unwrap();
        let want = [
            "256 × 1 × 1",
            "256 × 8 × 8",
            "256 × 16 × 16",
            "256 × 16 × 16",
            "256 × 32 × 32",
            "256 × 32 × 32",
            "256 × 64 × 64",
            "256 × 64 × 64",
            "128 × 128 × 128",
            "64 × 256 × 256",
            "1 × 256 × 256",
        ];
        assert_eq!(shapes(&g), want);
        let convts = g.rows.iter().filter(|r| r.label.starts_with("Conv Trans")).count();
        assert_eq!(convts, 9);
    }

    #[test]
    fn canonical_discriminator_rows() {
        let d = dcgan_discriminator_layout(&DcganConfig::default()).unwrap();
        let want = [
            "1 × 256 × 256",
            "64 × 128 × 128",
            "128 × 64 × 64",
            "256 × 32 × 32",
            "512 × 16 × 16",
            "1024 × 8 × 8",
            "1024 × 1 × 1",
            "1 × 1 × 1",
        ];
        assert_eq!(shapes(&d), want);
        let acts: Vec<_> = d.rows.iter().map(|r| r.act.as_str()).collect();
        assert_eq!(acts[1], "LReLU");
        assert_eq!(acts[2], "BN+LReLU");
    }

    #[test]
    fn desk_ladder_walks() {
        let cfg = DcganConfig {
            target_res: 16,
            ..Default::default()
        };
        let g = dcgan_generator_layout(&cfg).unwrap();
        assert_eq!(g.table_rows().unwrap().last().unwrap().shape, vec![1, 16, 16]);
        let mini = DcganConfig::mini();
        let d = dcgan_discriminator_layout(&mini).unwrap();
        assert_eq!(shapes(&d)[2], "64 × 4 × 4");
        assert!(dcgan_generator_layout(&DcganConfig {
            target_res: 24,
            ..Default::default()
        })
        .is_err());
    }
}
