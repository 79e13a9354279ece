//! Parameter updates and weight initialization.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    Adam,
    SgdNesterov,
}

impl OptimKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(Self::Adam),
            "sgd_nesterov" => Some(Self::SgdNesterov),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Adam => "adam",
            Self::SgdNesterov => "sgd_nesterov",
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers keyed by
/// parameter name. SGD keeps its velocity in `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl OptimizerState {
    pub fn adam(lr: f64, beta1: f64) -> Self {
        Self {
            kind: OptimKind::Adam,
            lr,
            beta1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            momentum: 0.0,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn sgd_nesterov(lr: f64, momentum: f64) -> Self {
        Self {
            kind: OptimKind::SgdNesterov,
            lr,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            momentum,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient. Nothing
    /// is modified if any gradient is non-finite.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a str, &'a mut Tensor<f32>)>) -> Result<()> {
        let params: Vec<(&str, &mut Tensor<f32>)> = params.into_iter().filter(|(_, p)| p.grad.is_some()).collect();
        for (_, p) in &params {
            let g = p.grad.as_ref().expect("filtered");
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    op: "optimizer",
                    phase: "step",
                });
            }
        }
        self.t += 1;
        match self.kind {
            OptimKind::Adam => self.adam_step(params),
            OptimKind::SgdNesterov => self.sgd_step(params),
        }
        Ok(())
    }

    fn adam_step(&mut self, params: Vec<(&str, &mut Tensor<f32>)>) {
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let n = p.len();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let g = p.grad.take().expect("filtered");
            let data = p.data_mut();
            for i in 0..n {
                let gi = g[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let mh = mi / bc1;
                let vh = vi / bc2;
                data[i] = (data[i] as f64 - self.lr * mh / (vh.sqrt() + self.eps)) as f32;
            }
            p.grad = Some(g);
        }
    }

    fn sgd_step(&mut self, params: Vec<(&str, &mut Tensor<f32>)>) {
        for (name, p) in params {
            let n = p.len();
            let vel = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let g = p.grad.take().expect("filtered");
            let data = p.data_mut();
            for i in 0..n {
                let gi = g[i] as f64;
                let vi = self.momentum * vel[i] as f64 + gi;
                vel[i] = vi as f32;
                data[i] = (data[i] as f64 - self.lr * (self.momentum * vi + gi)) as f32;
            }
            p.grad = Some(g);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// `N(0, 0.02²)`.
    Normal002,
    /// `N(0, σ²)` with `σ = √(2 / (256·256·N_filters))`.
    HeNormalLiteral,
    /// Unit-normal storage; `σ` of [`InitKind::HeNormalLiteral`] applied at
    /// every forward pass.
    DynamicScaled,
}

impl InitKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal_002" => Some(Self::Normal002),
            "he_normal_literal" => Some(Self::HeNormalLiteral),
            "dynamic_scaled" => Some(Self::DynamicScaled),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal002 => "normal_002",
            Self::HeNormalLiteral => "he_normal_literal",
            Self::DynamicScaled => "dynamic_scaled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InitScheme {
    pub kind: InitKind,
    /// Use `√(2 / fan_in)` instead of the `256·256·N_filters` denominator.
    pub standard_fan_in: bool,
}

impl InitScheme {
    pub fn new(kind: InitKind) -> Self {
        Self {
            kind,
            standard_fan_in: false,
        }
    }

    /// He-style standard deviation for a layer with `n_filters` output
    /// filters and `fan_in` inputs per output.
    pub fn he_std(&self, n_filters: usize, fan_in: usize) -> f64 {
        if self.standard_fan_in {
            (2.0 / fan_in.max(1) as f64).sqrt()
        } else {
            (2.0 / (256.0 * 256.0 * n_filters.max(1) as f64)).sqrt()
        }
    }

    /// Standard deviation of the stored weights.
    pub fn storage_std(&self, n_filters: usize, fan_in: usize) -> f64 {
        match self.kind {
            InitKind::Normal002 => 0.02,
            InitKind::HeNormalLiteral => self.he_std(n_filters, fan_in),
            InitKind::DynamicScaled => 1.0,
        }
    }

    /// Multiplier applied to the weights at every forward pass.
    pub fn runtime_scale(&self, n_filters: usize, fan_in: usize) -> Option<f64> {
        (self.kind == InitKind::DynamicScaled).then(|| self.he_std(n_filters, fan_in))
    }
}

pub fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Samples a weight tensor for a layer with `n_filters` output filters and
/// `fan_in` inputs per output.
pub fn init_weights(shape: &[usize], scheme: InitScheme, n_filters: usize, fan_in: usize, rng: &mut Rng) -> Tensor<f32> {
    normal_tensor(shape, scheme.storage_std(n_filters, fan_in), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn param(v: f32, g: f32) -> Tensor<f32> {
        let mut t = Tensor::new(vec![1], vec![v]).unwrap();
        t.grad = Some(vec![g]);
        t
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut opt = OptimizerState::adam(1e-3, 0.9);
        let mut p = param(0.0, 1.0);
        opt.step([("w", &mut p)]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] as f64 - expected).abs() < 1e-9);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut opt = OptimizerState::adam(1e-3, 0.5);
        let mut p = param(0.25, 0.0);
        opt.step([("w", &mut p)]).unwrap();
        assert_eq!(p.data()[0], 0.25);
    }

    #[test]
    fn nesterov_two_steps() {
        let mut opt = OptimizerState::sgd_nesterov(0.1, 0.9);
        let mut p = param(0.0, 1.0);
        opt.step([("w", &mut p)]).unwrap();
        assert!((p.data()[0] as f64 + 0.19).abs() < 1e-6);
        let before = p.data()[0] as f64;
        opt.step([("w", &mut p)]).unwrap();
        assert!((p.data()[0] as f64 - before + 0.271).abs() < 1e-6);
        // velocity alone keeps moving the parameter
        p.grad = Some(vec![0.0]);
        let before = p.data()[0];
        opt.step([("w", &mut p)]).unwrap();
        assert!(p.data()[0] < before);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut opt = OptimizerState::adam(1e-3, 0.9);
        let mut a = param(1.0, 1.0);
        let mut b = param(1.0, f32::NAN);
        assert!(opt.step([("a", &mut a), ("b", &mut b)]).is_err());
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(opt.t, 0);
    }

    #[test]
    fn he_literal_sigma() {
        let s = InitScheme::new(InitKind::HeNormalLiteral);
        assert_eq!(s.storage_std(64, 9), (2.0 / (256.0 * 256.0 * 64.0f64)).sqrt());
        let f = InitScheme {
            kind: InitKind::HeNormalLiteral,
            standard_fan_in: true,
        };
        assert_eq!(f.storage_std(64, 8), 0.5);
    }

    #[test]
    fn normal_002_sample_std() {
        let mut rng = Rng::seed_from_u64(11);
        let t = init_weights(&[1_000_000], InitScheme::new(InitKind::Normal002), 1, 1, &mut rng);
        let m = t.mean_f64();
        let sd = (t.data().iter().map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / t.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.02 * 0.01);
    }
}
