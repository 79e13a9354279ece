//! Layer forward passes expressed as tape operations.
//!
//! Every function here records its computation on a [`Tape`], so the
//! backward pass (including double backward for gradient penalties) comes
//! for free from the primitive rules. Parameters are passed as tape
//! variables; the model registry in [`crate::models`] owns their storage.

use std::sync::Arc;

use rand::Rng as _;

use crate::autodiff::{ConvGeom, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::Rng;

pub const LRELU_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
pub const PIXELNORM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn label(self) -> &'static str {
        match self {
            Activation::Relu => "ReLU",
            Activation::LeakyRelu => "LReLU",
            Activation::Sigmoid => "Sigmoid",
            Activation::Tanh => "Tanh",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

pub fn activation<T: Real>(tape: &mut Tape<T>, kind: Activation, x: Var) -> Var {
    match kind {
        Activation::Relu => tape.relu(x),
        Activation::LeakyRelu => tape.leaky_relu(x, LRELU_SLOPE),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
    }
}

fn rank_check<T: Real>(tape: &Tape<T>, x: Var, rank: usize, layer: &str) -> Result<()> {
    if tape.shape(x).len() != rank {
        return Err(Error::Layer {
            layer: layer.into(),
            detail: format!("expected a rank-{rank} input, got {:?}", tape.shape(x)),
        });
    }
    Ok(())
}

/// `x · Wᵀ + b` for `x: [B, I]`, `w: [O, I]`, `b: [O]`.
pub fn dense<T: Real>(tape: &mut Tape<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    rank_check(tape, x, 2, "dense")?;
    let wt = tape.transpose(w)?;
    let y = tape.matmul(x, wt).map_err(|e| Error::Layer {
        layer: "dense".into(),
        detail: e.to_string(),
    })?;
    match b {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

fn add_channel_bias<T: Real>(tape: &mut Tape<T>, y: Var, b: Option<Var>) -> Result<Var> {
    let Some(b) = b else { return Ok(y) };
    let c = tape.shape(b)[0];
    let b4 = tape.reshape(b, &[1, c, 1, 1])?;
    tape.add(y, b4)
}

pub fn conv_geom(
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    padding: Padding,
    h: usize,
    w: usize,
) -> Result<ConvGeom> {
    match padding {
        Padding::Same => ConvGeom::same(in_c, out_c, k, stride, h, w),
        Padding::Valid => ConvGeom::valid(in_c, out_c, k, stride, h, w),
    }
}

/// Cross-correlation with weight `[out_c, in_c, k, k]` and optional bias `[out_c]`.
pub fn conv2d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    rank_check(tape, x, 4, "conv2d")?;
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::Layer {
            layer: "conv2d".into(),
            detail: format!("weight must be [out, in, k, k], got {ws:?}"),
        });
    }
    let geom = conv_geom(xs[1], ws[0], ws[2], stride, padding, xs[2], xs[3])?;
    let y = tape.conv2d(x, w, geom)?;
    add_channel_bias(tape, y, b)
}

/// Output spatial extent of a transposed convolution.
pub fn conv_transpose_extent(input: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input * stride,
        Padding::Valid => (input - 1) * stride + k,
    }
}

/// Transposed convolution with weight `[in_c, out_c, k, k]`. With same
/// padding the output extent is exactly `stride * input`.
pub fn conv_transpose2d<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    padding: Padding,
) -> Result<Var> {
    rank_check(tape, x, 4, "conv_transpose2d")?;
    if !(1..=2).contains(&stride) {
        return Err(Error::Layer {
            layer: "conv_transpose2d".into(),
            detail: format!("unsupported stride {stride}"),
        });
    }
    let xs = tape.shape(x).to_vec();
    let ws = tape.shape(w).to_vec();
    if ws.len() != 4 || ws[2] != ws[3] || ws[0] != xs[1] {
        return Err(Error::Layer {
            layer: "conv_transpose2d".into(),
            detail: format!("weight {ws:?} does not fit input {xs:?}"),
        });
    }
    let k = ws[2];
    let (oh, ow) = (
        conv_transpose_extent(xs[2], k, stride, padding),
        conv_transpose_extent(xs[3], k, stride, padding),
    );
    // the forward conv this layer is the adjoint of: big grid -> small grid
    let geom = conv_geom(ws[1], ws[0], k, stride, padding, oh, ow)?;
    debug_assert_eq!((geom.out_h, geom.out_w), (xs[2], xs[3]));
    let y = tape.conv2d_input_grad(x, w, geom)?;
    add_channel_bias(tape, y, b)
}

fn spatial<T: Real>(tape: &Tape<T>, x: Var, layer: &str) -> Result<[usize; 4]> {
    rank_check(tape, x, 4, layer)?;
    let s = tape.shape(x);
    Ok([s[0], s[1], s[2], s[3]])
}

/// 2×2 pooling with stride 2. Max pooling routes the gradient to the first
/// maximal element of each window.
pub fn pool2d<T: Real>(tape: &mut Tape<T>, kind: PoolKind, x: Var) -> Result<Var> {
    let [b, c, h, w] = spatial(tape, x, "pool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Layer {
            layer: "pool2d".into(),
            detail: format!("odd spatial extent {h}x{w}"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let out_shape = [b, c, oh, ow];
    match kind {
        PoolKind::Max => {
            let data = tape.data(x);
            let mut index = Vec::with_capacity(b * c * oh * ow);
            for plane in 0..b * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + 2 * oy * w + 2 * ox;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if data[i] > data[best] {
                                best = i;
                            }
                        }
                        index.push(best);
                    }
                }
            }
            tape.gather(x, Arc::new(index), &out_shape)
        }
        PoolKind::Avg => {
            let mut index = Vec::with_capacity(b * c * h * w);
            for plane in 0..b * c {
                for y in 0..h {
                    for xx in 0..w {
                        index.push((plane * oh + y / 2) * ow + xx / 2);
                    }
                }
            }
            let s = tape.scatter_add(x, Arc::new(index), &out_shape)?;
            Ok(tape.scale(s, 0.25))
        }
    }
}

/// Nearest-neighbour upsampling by `factor`.
pub fn upsample_nearest<T: Real>(tape: &mut Tape<T>, x: Var, factor: usize) -> Result<Var> {
    let [b, c, h, w] = spatial(tape, x, "upsample")?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be positive".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut index = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                index.push((plane * h + y / factor) * w + xx / factor);
            }
        }
    }
    tape.gather(x, Arc::new(index), &[b, c, oh, ow])
}

/// Output of a train-mode batch normalization: the normalized tensor and
/// the batch statistics used, for the caller to fold into moving averages.
pub struct BatchNormOut {
    pub y: Var,
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
}

/// Per-channel batch normalization over `[B, C]` or `[B, C, H, W]`.
///
/// Train mode uses biased batch statistics; eval mode uses the supplied
/// moving statistics.
pub fn batchnorm<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    moving_mean: &[f32],
    moving_var: &[f32],
    mode: Mode,
) -> Result<BatchNormOut> {
    let s = tape.shape(x).to_vec();
    if s.len() != 2 && s.len() != 4 {
        return Err(Error::Layer {
            layer: "batchnorm".into(),
            detail: format!("expected [B, C] or [B, C, H, W], got {s:?}"),
        });
    }
    let c = s[1];
    let bshape: Vec<usize> = if s.len() == 2 { vec![1, c] } else { vec![1, c, 1, 1] };
    let g = tape.reshape(gamma, &bshape)?;
    let b = tape.reshape(beta, &bshape)?;
    match mode {
        Mode::Train => {
            if s[0] < 2 {
                return Err(Error::Layer {
                    layer: "batchnorm".into(),
                    detail: "train mode needs a batch of at least 2".into(),
                });
            }
            let axes: Vec<usize> = if s.len() == 2 { vec![0] } else { vec![0, 2, 3] };
            let mean = tape.mean_axes(x, &axes)?;
            let xc = tape.sub(x, mean)?;
            let sq = tape.square(xc);
            let var = tape.mean_axes(sq, &axes)?;
            let ve = tape.add_scalar(var, BN_EPS);
            let std = tape.sqrt(ve)?;
            let xn = tape.div(xc, std)?;
            let y = tape.mul(xn, g)?;
            let y = tape.add(y, b)?;
            Ok(BatchNormOut {
                y,
                batch_mean: Some(tape.value(mean).to_f64_vec()),
                batch_var: Some(tape.value(var).to_f64_vec()),
            })
        }
        Mode::Eval => {
            if moving_mean.len() != c || moving_var.len() != c {
                return Err(Error::Layer {
                    layer: "batchnorm".into(),
                    detail: format!("moving statistics for {} channels, input has {c}", moving_mean.len()),
                });
            }
            let inv: Vec<f64> = moving_var.iter().map(|&v| 1.0 / (v as f64 + BN_EPS).sqrt()).collect();
            let mm: Vec<f64> = moving_mean.iter().map(|&v| v as f64).collect();
            let m = tape.constant(Tensor::from_f64(bshape.clone(), &mm)?);
            let iv = tape.constant(Tensor::from_f64(bshape, &inv)?);
            let xc = tape.sub(x, m)?;
            let xn = tape.mul(xc, iv)?;
            let y = tape.mul(xn, g)?;
            let y = tape.add(y, b)?;
            Ok(BatchNormOut {
                y,
                batch_mean: None,
                batch_var: None,
            })
        }
    }
}

/// Folds batch statistics into moving averages in place.
pub fn update_moving(moving: &mut [f32], batch: &[f64]) {
    for (m, &b) in moving.iter_mut().zip(batch) {
        *m = (BN_MOMENTUM * *m as f64 + (1.0 - BN_MOMENTUM) * b) as f32;
    }
}

/// `a / sqrt(mean_c(a²) + eps)` at every pixel of `[B, N, H, W]`.
pub fn pixelnorm<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    spatial(tape, x, "pixelnorm")?;
    let sq = tape.square(x);
    let ms = tape.mean_axes(sq, &[1])?;
    let ms = tape.add_scalar(ms, PIXELNORM_EPS);
    let rms = tape.sqrt(ms)?;
    tape.div(x, rms)
}

fn shuffle_index(b: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    // output (n, ch, y, x) reads input channel ch*r*r + (y%r)*r + x%r at (y/r, x/r)
    let (oh, ow) = (h * r, w * r);
    let in_c = c * r * r;
    let mut index = Vec::with_capacity(b * c * oh * ow);
    for n in 0..b {
        for ch in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    let ic = ch * r * r + (y % r) * r + x % r;
                    index.push(((n * in_c + ic) * h + y / r) * w + x / r);
                }
            }
        }
    }
    index
}

/// Depth-to-space: `[B, r²C, H, W] -> [B, C, rH, rW]`. Input channel
/// `c·r² + dy·r + dx` lands on output channel `c` at offset `(dy, dx)`.
pub fn pixelshuffle<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let [b, c, h, w] = spatial(tape, x, "pixelshuffle")?;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::Layer {
            layer: "pixelshuffle".into(),
            detail: format!("{c} channels not divisible by {}", r * r),
        });
    }
    let oc = c / (r * r);
    let index = shuffle_index(b, oc, h, w, r);
    tape.gather(x, Arc::new(index), &[b, oc, h * r, w * r])
}

/// Inverse of [`pixelshuffle`].
pub fn space_to_depth<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var> {
    let [b, c, h, w] = spatial(tape, x, "space_to_depth")?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Layer {
            layer: "space_to_depth".into(),
            detail: format!("{h}x{w} not divisible by {r}"),
        });
    }
    let fwd = shuffle_index(b, c, h / r, w / r, r);
    let mut inv = vec![0; fwd.len()];
    for (out, &src) in fwd.iter().enumerate() {
        inv[src] = out;
    }
    tape.gather(x, Arc::new(inv), &[b, c * r * r, h / r, w / r])
}

/// Appends one constant feature map holding the mean (over C, H, W) of the
/// population standard deviation across the batch.
pub fn minibatch_stddev<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [b, _, h, w] = spatial(tape, x, "minibatch_stddev")?;
    if b < 2 {
        return Err(Error::Layer {
            layer: "minibatch_stddev".into(),
            detail: "needs a batch of at least 2".into(),
        });
    }
    let mean = tape.mean_axes(x, &[0])?;
    let xc = tape.sub(x, mean)?;
    let sq = tape.square(xc);
    let var = tape.mean_axes(sq, &[0])?;
    let std = tape.sqrt(var)?;
    let avg = tape.mean_axes(std, &[1, 2, 3])?;
    let map = tape.broadcast_to(avg, &[b, 1, h, w])?;
    tape.concat(&[x, map], 1)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in train mode.
pub fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, mode: Mode, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::of_f64(1.0 / (1.0 - rate));
    let shape = tape.shape(x).to_vec();
    let mask: Vec<T> = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}
