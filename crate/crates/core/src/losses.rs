//! Segmentation and adversarial losses.
//!
//! Adversarial losses take discriminator outputs that are already on the
//! tape. Gradient penalties need the discriminator itself, passed as a
//! closure, because they differentiate its output with respect to an
//! interpolated input and then differentiate that gradient again.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::Rng;

pub const PROB_CLAMP: f64 = 1e-7;
pub const SMOOTH_REAL_TARGET: f64 = 0.9;
pub const DEFAULT_CLIP: f64 = 0.01;
pub const DEFAULT_EPS_DRIFT: f64 = 1e-3;
/// Added under the square root of the gradient norm so its derivative
/// stays finite at a zero gradient.
pub const GRAD_NORM_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Dice,
    GanOriginal,
    Lsgan,
    Wgan,
    WganGp,
    Dragan,
}

impl LossKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "bce" => Self::Bce,
            "dice" => Self::Dice,
            "gan_original" | "original" => Self::GanOriginal,
            "lsgan" => Self::Lsgan,
            "wgan" => Self::Wgan,
            "wgan_gp" => Self::WganGp,
            "dragan" => Self::Dragan,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bce => "bce",
            Self::Dice => "dice",
            Self::GanOriginal => "gan_original",
            Self::Lsgan => "lsgan",
            Self::Wgan => "wgan",
            Self::WganGp => "wgan_gp",
            Self::Dragan => "dragan",
        }
    }

    pub fn is_adversarial(self) -> bool {
        !matches!(self, Self::Bce | Self::Dice)
    }

    /// Wasserstein critics have an unbounded, linear head.
    pub fn is_wasserstein(self) -> bool {
        matches!(self, Self::Wgan | Self::WganGp)
    }

    pub fn has_penalty(self) -> bool {
        matches!(self, Self::WganGp | Self::Dragan)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda_adv: f64,
    pub lambda_gp: f64,
    pub one_sided_smoothing: bool,
    pub clip_threshold: Option<f64>,
    pub eps_drift: Option<f64>,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            lambda_adv: 1.0,
            lambda_gp: if kind.has_penalty() { 0.25 } else { 0.0 },
            one_sided_smoothing: false,
            clip_threshold: (kind == LossKind::Wgan).then_some(DEFAULT_CLIP),
            eps_drift: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_adv > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_adv must be positive, got {}", self.lambda_adv)));
        }
        if !(self.lambda_gp >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_gp must be non-negative, got {}", self.lambda_gp)));
        }
        match (self.kind == LossKind::Wgan, self.clip_threshold) {
            (true, None) => return Err(Error::InvalidArgument("wgan requires a clip threshold".into())),
            (false, Some(_)) => {
                return Err(Error::InvalidArgument(format!(
                    "clip threshold only applies to wgan, not {}",
                    self.kind.name()
                )))
            }
            (true, Some(c)) if !(c > 0.0) => {
                return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {c}")))
            }
            _ => {}
        }
        if self.one_sided_smoothing && self.kind.is_wasserstein() {
            return Err(Error::InvalidArgument("label smoothing has no meaning for a Wasserstein critic".into()));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(tape: &Tape<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

fn check_finite<T: Real>(tape: &Tape<T>, v: Var, op: &'static str) -> Result<()> {
    if !tape.value(v).all_finite() {
        return Err(Error::NonFinite { op, phase: "forward" });
    }
    Ok(())
}

/// `-mean(t·log p + (1 - t)·log(1 - p))` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    same_shape(tape, pred, target, "bce")?;
    let p = tape.clamp(pred, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = tape.log(p)?;
    let np = tape.neg(p);
    let q = tape.add_scalar(np, 1.0);
    let lq = tape.log(q)?;
    let a = tape.mul(target, lp)?;
    let nt = tape.neg(target);
    let omt = tape.add_scalar(nt, 1.0);
    let b = tape.mul(omt, lq)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s)?;
    Ok(tape.neg(m))
}

/// Binary cross-entropy against a constant target for every element.
fn bce_const<T: Real>(tape: &mut Tape<T>, pred: Var, target: f64) -> Result<Var> {
    let t = tape.constant(Tensor::full(tape.shape(pred).to_vec(), T::of_f64(target)));
    bce(tape, pred, t)
}

/// `2·TP / ((TP + FN) + (TP + FP))`.
pub fn dice_from_counts(tp: u64, fp: u64, fn_: u64) -> Result<f64> {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Err(Error::Domain {
            op: "dice_coefficient",
            detail: "both masks are empty (0/0)".into(),
        });
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Dice coefficient of two binary masks (values thresholded at 0.5).
pub fn dice_coefficient(x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "dice_coefficient",
            lhs: vec![x.len()],
            rhs: vec![y.len()],
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&a, &b) in x.iter().zip(y) {
        match (a >= 0.5, b >= 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    dice_from_counts(tp, fp, fn_)
}

/// `1 - (2·Σ(p·t) + s) / (Σp + Σt + s)`.
pub fn dice_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var, smooth: f64) -> Result<Var> {
    same_shape(tape, pred, target, "dice_loss")?;
    let pt = tape.mul(pred, target)?;
    let inter = tape.sum(pt)?;
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, smooth);
    let sp = tape.sum(pred)?;
    let st = tape.sum(target)?;
    let den = tape.add(sp, st)?;
    let den = tape.add_scalar(den, smooth);
    let ratio = tape.div(num, den)?;
    let neg = tape.neg(ratio);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Discriminator loss before any penalty: the adversarial term scaled by
/// `lambda_adv` plus the drift term when enabled.
pub fn d_loss<T: Real>(tape: &mut Tape<T>, spec: &LossSpec, d_real: Var, d_fake: Var) -> Result<Var> {
    check_finite(tape, d_real, "d_loss")?;
    check_finite(tape, d_fake, "d_loss")?;
    let real_target = if spec.one_sided_smoothing { SMOOTH_REAL_TARGET } else { 1.0 };
    let adv = match spec.kind {
        LossKind::GanOriginal | LossKind::Dragan => {
            let r = bce_const(tape, d_real, real_target)?;
            let f = bce_const(tape, d_fake, 0.0)?;
            tape.add(r, f)?
        }
        LossKind::Lsgan => {
            let r = tape.add_scalar(d_real, -real_target);
            let r = tape.square(r);
            let r = tape.mean(r)?;
            let f = tape.square(d_fake);
            let f = tape.mean(f)?;
            tape.add(r, f)?
        }
        LossKind::Wgan | LossKind::WganGp => {
            let r = tape.mean(d_real)?;
            let f = tape.mean(d_fake)?;
            tape.sub(f, r)?
        }
        LossKind::Bce | LossKind::Dice => {
            return Err(Error::InvalidArgument(format!("{} is not an adversarial loss", spec.kind.name())))
        }
    };
    let mut total = tape.scale(adv, spec.lambda_adv);
    if let Some(eps) = spec.eps_drift {
        let sq = tape.square(d_real);
        let m = tape.mean(sq)?;
        let drift = tape.scale(m, eps);
        total = tape.add(total, drift)?;
    }
    Ok(total)
}

/// Generator loss scaled by `lambda_adv`.
pub fn g_loss<T: Real>(tape: &mut Tape<T>, spec: &LossSpec, d_fake: Var) -> Result<Var> {
    check_finite(tape, d_fake, "g_loss")?;
    let adv = match spec.kind {
        LossKind::GanOriginal | LossKind::Dragan => {
            let p = tape.clamp(d_fake, PROB_CLAMP, 1.0 - PROB_CLAMP);
            let l = tape.log(p)?;
            let m = tape.mean(l)?;
            tape.neg(m)
        }
        LossKind::Lsgan => {
            let d = tape.add_scalar(d_fake, -1.0);
            let d = tape.square(d);
            tape.mean(d)?
        }
        LossKind::Wgan | LossKind::WganGp => {
            let m = tape.mean(d_fake)?;
            tape.neg(m)
        }
        LossKind::Bce | LossKind::Dice => {
            return Err(Error::InvalidArgument(format!("{} is not an adversarial loss", spec.kind.name())))
        }
    };
    Ok(tape.scale(adv, spec.lambda_adv))
}

/// `(L_G, L_D)` for one pair of discriminator outputs, without penalties.
pub fn gan_loss<T: Real>(tape: &mut Tape<T>, spec: &LossSpec, d_real: Var, d_fake: Var) -> Result<(Var, Var)> {
    let lg = g_loss(tape, spec, d_fake)?;
    let ld = d_loss(tape, spec, d_real, d_fake)?;
    Ok((lg, ld))
}

/// `mean((‖∇ₓ D(x)‖₂ - 1)²)` over the batch at the given input values.
/// The penalty stays on the tape, differentiable in the discriminator's
/// parameters.
pub fn penalty_at<T, D>(tape: &mut Tape<T>, d: &mut D, x: Tensor<T>) -> Result<Var>
where
    T: Real,
    D: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let shape = x.shape().to_vec();
    let b = shape[0];
    let xm = tape.variable(x);
    let out = d(tape, xm)?;
    let total = tape.sum(out)?;
    let g = tape.gradients(total, &[xm])?[0];
    let g = match g {
        Some(g) => g,
        // D ignores its input: the gradient norm is identically zero
        None => tape.constant(Tensor::zeros(shape.clone())),
    };
    let flat = tape.reshape(g, &[b, shape[1..].iter().product()])?;
    let sq = tape.square(flat);
    let n2 = tape.sum_axes(sq, &[1])?;
    let n2 = tape.add_scalar(n2, GRAD_NORM_GUARD);
    let norm = tape.sqrt(n2)?;
    let dev = tape.add_scalar(norm, -1.0);
    let dev = tape.square(dev);
    tape.mean(dev)
}

fn per_sample_alpha(rng: &mut Rng, batch: usize) -> Vec<f64> {
    (0..batch).map(|_| rng.random::<f64>()).collect()
}

fn interpolate<T: Real>(a: &Tensor<T>, b: &Tensor<T>, alpha: &[f64]) -> Tensor<T> {
    let per = a.len() / alpha.len();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&x, &y))| {
            let t = alpha[i / per];
            T::of_f64(t * x.as_f64() + (1.0 - t) * y.as_f64())
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn check_pair<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() || a.rank() < 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// WGAN-GP penalty at `α·x_real + (1 - α)·x_fake`, one `α ~ U(0, 1)` per sample.
pub fn gradient_penalty_wgan_gp<T, D>(
    tape: &mut Tape<T>,
    d: &mut D,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
    rng: &mut Rng,
) -> Result<Var>
where
    T: Real,
    D: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    check_pair(x_real, x_fake, "gradient_penalty_wgan_gp")?;
    let alpha = per_sample_alpha(rng, x_real.shape()[0]);
    let xm = interpolate(x_real, x_fake, &alpha);
    penalty_at(tape, d, xm)
}

/// DRAGAN penalty at `α·x + (1 - α)·x_p` with `x_p ~ U(0, σ_x / 2)` per
/// element, `σ_x` the standard deviation of the whole real batch.
pub fn gradient_penalty_dragan<T, D>(tape: &mut Tape<T>, d: &mut D, x_real: &Tensor<T>, rng: &mut Rng) -> Result<Var>
where
    T: Real,
    D: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let shape = x_real.shape();
    if shape.len() < 2 || shape[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "dragan needs a real batch of at least 2, got {shape:?}"
        )));
    }
    let sigma = {
        let mean = x_real.mean_f64();
        let var = x_real.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / x_real.len() as f64;
        var.sqrt()
    };
    let alpha = per_sample_alpha(rng, shape[0]);
    let noise: Vec<T> = if sigma > 0.0 {
        let u = Uniform::new(0.0, sigma / 2.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (0..x_real.len()).map(|_| T::of_f64(u.sample(rng))).collect()
    } else {
        vec![T::zero(); x_real.len()]
    };
    let xp = Tensor::new(shape.to_vec(), noise)?;
    let xm = interpolate(x_real, &xp, &alpha);
    penalty_at(tape, d, xm)
}

/// Clamps every element to `[-c, c]`.
pub fn weight_clip<'a>(params: impl IntoIterator<Item = &'a mut Tensor<f32>>, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {c}")));
    }
    let c = c as f32;
    for p in params {
        p.data_mut().iter_mut().for_each(|w| *w = w.clamp(-c, c));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn scalar_tape(v: &[f64]) -> (Tape<f64>, Var) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_f64(vec![v.len(), 1], v).unwrap());
        (tape, x)
    }

    #[test]
    fn bce_half_is_ln2() {
        let (mut tape, p) = scalar_tape(&[0.5, 0.5, 0.5]);
        let t = tape.constant(Tensor::from_f64(vec![3, 1], &[1.0, 0.0, 1.0]).unwrap());
        let l = bce(&mut tape, p, t).unwrap();
        assert!((tape.item(l) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_saturated_is_near_zero() {
        let (mut tape, p) = scalar_tape(&[1.0]);
        let t = tape.constant(Tensor::full(vec![1, 1], 1.0));
        let l = bce(&mut tape, p, t).unwrap();
        assert!(tape.item(l) < 1e-6);
    }

    #[test]
    fn dice_counts() {
        assert_eq!(dice_from_counts(6, 2, 2).unwrap(), 0.75);
        assert!(dice_from_counts(0, 0, 0).is_err());
        assert_eq!(dice_coefficient(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn dice_loss_extremes() {
        let (mut tape, p) = scalar_tape(&[1.0, 0.0, 1.0, 1.0]);
        let t = tape.constant(Tensor::from_f64(vec![4, 1], &[1.0, 0.0, 1.0, 1.0]).unwrap());
        let l = dice_loss(&mut tape, p, t, 1.0).unwrap();
        assert!(tape.item(l).abs() < 1e-12);
        let inv = tape.constant(Tensor::from_f64(vec![4, 1], &[0.0, 1.0, 0.0, 0.0]).unwrap());
        let l = dice_loss(&mut tape, p, inv, 1.0).unwrap();
        assert!((tape.item(l) - (1.0 - 1.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn analytic_adversarial_values() {
        let (mut tape, half) = scalar_tape(&[0.5]);
        let spec = LossSpec::new(LossKind::GanOriginal);
        let lg = g_loss(&mut tape, &spec, half).unwrap();
        assert!((tape.item(lg) - std::f64::consts::LN_2).abs() < 1e-12);

        let spec = LossSpec::new(LossKind::Lsgan);
        let ld = d_loss(&mut tape, &spec, half, half).unwrap();
        assert_eq!(tape.item(ld), 0.5);

        let spec = LossSpec::new(LossKind::Wgan);
        let r = tape.constant(Tensor::from_f64(vec![1, 1], &[2.0]).unwrap());
        let f = tape.constant(Tensor::from_f64(vec![1, 1], &[1.0]).unwrap());
        let (lg, ld) = gan_loss(&mut tape, &spec, r, f).unwrap();
        assert_eq!(tape.item(ld), -1.0);
        assert_eq!(tape.item(lg), -1.0);
    }

    #[test]
    fn nan_discriminator_output_is_rejected() {
        let (mut tape, x) = scalar_tape(&[f64::NAN]);
        let spec = LossSpec::new(LossKind::Wgan);
        assert!(g_loss(&mut tape, &spec, x).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::new(LossKind::Wgan).validate().is_ok());
        assert_eq!(LossSpec::new(LossKind::Wgan).clip_threshold, Some(0.01));
        let mut s = LossSpec::new(LossKind::Dragan);
        s.clip_threshold = Some(0.1);
        assert!(s.validate().is_err());
        let mut s = LossSpec::new(LossKind::WganGp);
        s.one_sided_smoothing = true;
        assert!(s.validate().is_err());
    }

    fn linear_d(w: Vec<f64>) -> impl FnMut(&mut Tape<f64>, Var) -> Result<Var> {
        move |tape: &mut Tape<f64>, x: Var| {
            let n = w.len();
            let wv = tape.constant(Tensor::from_f64(vec![n, 1], &w).unwrap());
            let b = tape.shape(x)[0];
            let flat = tape.reshape(x, &[b, n])?;
            tape.matmul(flat, wv)
        }
    }

    #[test]
    fn penalties_on_linear_discriminator() {
        let mut rng = Rng::seed_from_u64(3);
        let real = Tensor::from_f64(vec![3, 2], &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let fake = Tensor::from_f64(vec![3, 2], &[-1.0, 0.0, 2.0, 0.7, 0.0, 0.1]).unwrap();
        let mut tape = Tape::new();
        let mut d5 = linear_d(vec![3.0, 4.0]);
        let p = gradient_penalty_wgan_gp(&mut tape, &mut d5, &real, &fake, &mut rng).unwrap();
        assert!((tape.item(p) - 16.0).abs() < 1e-9);
        let p = gradient_penalty_dragan(&mut tape, &mut d5, &real, &mut rng).unwrap();
        assert!((tape.item(p) - 16.0).abs() < 1e-9);
        let mut d1 = linear_d(vec![0.6, 0.8]);
        let p = gradient_penalty_dragan(&mut tape, &mut d1, &real, &mut rng).unwrap();
        assert!(tape.item(p).abs() < 1e-9);
        let mut d3 = linear_d(vec![3.0, 0.0]);
        let p = gradient_penalty_dragan(&mut tape, &mut d3, &real, &mut rng).unwrap();
        assert!((tape.item(p) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn clip_clamps() {
        let mut w = Tensor::from_f64(vec![3], &[0.5, -0.5, 0.001]).unwrap();
        weight_clip([&mut w], 0.01).unwrap();
        assert_eq!(w.data(), &[0.01, -0.01, 0.001]);
    }
}
