//! Finite-difference checks for every layer and differentiable loss.
//!
//! Each case draws a random configuration (shapes, strides, data) from a
//! seeded rng and returns the worst relative error over all inputs that
//! carry a gradient.

use mrisynth::autodiff::grad_check;
use mrisynth::layers::{self, Activation, Mode, Padding, PoolKind};
use mrisynth::losses::{self, LossKind, LossSpec};
use mrisynth::{Rng, Tape, Tensor, Var};
use rand::{Rng as _, SeedableRng};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

type R = mrisynth::Result<Var>;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

/// Values in `[-1, 1]` kept at least `0.02` away from zero, so kinks at the
/// origin stay outside the finite-difference stencil.
pub fn off_kink(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let mut t = uniform(shape, 0.02, 1.0, rng);
    for v in t.data_mut() {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// A permutation of evenly spaced values: no ties within any window.
pub fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::from_f64(shape.to_vec(), &vals).unwrap()
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output element matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> R {
    let shape = tape.shape(y).to_vec();
    let mut rng = Rng::seed_from_u64(seed);
    let r = tape.constant(uniform(&shape, -1.0, 1.0, &mut rng));
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

/// Worst error over the listed inputs of `f`, varying one at a time and
/// holding the rest constant.
fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> mrisynth::Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> R,
{
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        let g = |tape: &mut Tape<f64>, v: Var| {
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| if j == i { v } else { tape.constant(t.clone()) })
                .collect();
            f(tape, &vars)
        };
        worst = worst.max(grad_check(g, &inputs[i], STEP)?);
    }
    Ok(worst)
}

pub struct Case {
    pub name: &'static str,
    pub run: fn(&mut Rng) -> mrisynth::Result<f64>,
}

fn dense(rng: &mut Rng) -> mrisynth::Result<f64> {
    let (b, i, o) = (rng.random_range(1..5), rng.random_range(1..7), rng.random_range(1..6));
    let seed = rng.random();
    let inputs = [
        uniform(&[b, i], -1.0, 1.0, rng),
        uniform(&[o, i], -1.0, 1.0, rng),
        uniform(&[o], -1.0, 1.0, rng),
    ];
    check_inputs(&inputs, |t, v| {
        let y = layers::dense(t, v[0], v[1], Some(v[2]))?;
        project(t, y, seed)
    })
}

fn conv(rng: &mut Rng) -> mrisynth::Result<f64> {
    let k = [1, 2, 3, 4, 5][rng.random_range(0..5)];
    let stride = rng.random_range(1..3);
    let padding = if rng.random::<bool>() { Padding::Same } else { Padding::Valid };
    let (b, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let h = rng.random_range(k.max(3)..8);
    let w = rng.random_range(k.max(3)..8);
    let seed = rng.random();
    let inputs = [
        uniform(&[b, ci, h, w], -1.0, 1.0, rng),
        uniform(&[co, ci, k, k], -1.0, 1.0, rng),
        uniform(&[co], -1.0, 1.0, rng),
    ];
    check_inputs(&inputs, |t, v| {
        let y = layers::conv2d(t, v[0], v[1], Some(v[2]), stride, padding)?;
        project(t, y, seed)
    })
}

fn conv_transpose(rng: &mut Rng) -> mrisynth::Result<f64> {
    let k = [1, 2, 3, 4, 5][rng.random_range(0..5)];
    let stride = rng.random_range(1..3);
    let padding = if rng.random::<bool>() { Padding::Same } else { Padding::Valid };
    let (b, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
    let seed = rng.random();
    let inputs = [
        uniform(&[b, ci, h, w], -1.0, 1.0, rng),
        uniform(&[ci, co, k, k], -1.0, 1.0, rng),
        uniform(&[co], -1.0, 1.0, rng),
    ];
    check_inputs(&inputs, |t, v| {
        let y = layers::conv_transpose2d(t, v[0], v[1], Some(v[2]), stride, padding)?;
        project(t, y, seed)
    })
}

fn spatial_shape(rng: &mut Rng, even: bool) -> [usize; 4] {
    let m = if even { 2 } else { 1 };
    [
        rng.random_range(1..4),
        rng.random_range(1..4),
        m * rng.random_range(1..5),
        m * rng.random_range(1..5),
    ]
}

fn pool(kind: PoolKind, rng: &mut Rng) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, true);
    let seed = rng.random();
    let x = distinct(&s, rng);
    check_inputs(&[x], |t, v| {
        let y = layers::pool2d(t, kind, v[0])?;
        project(t, y, seed)
    })
}

fn max_pool(rng: &mut Rng) -> mrisynth::Result<f64> {
    pool(PoolKind::Max, rng)
}

fn avg_pool(rng: &mut Rng) -> mrisynth::Result<f64> {
    pool(PoolKind::Avg, rng)
}

fn upsample(rng: &mut Rng) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, false);
    let f = rng.random_range(1..4);
    let seed = rng.random();
    let x = uniform(&s, -1.0, 1.0, rng);
    check_inputs(&[x], |t, v| {
        let y = layers::upsample_nearest(t, v[0], f)?;
        project(t, y, seed)
    })
}

fn batchnorm(mode: Mode, rng: &mut Rng) -> mrisynth::Result<f64> {
    let flat = rng.random::<bool>();
    let s = spatial_shape(rng, false);
    // at least three values per channel: with two, train-mode outputs are
    // ±1 whatever the input and the gradient vanishes
    let shape: Vec<usize> = if flat {
        vec![s[0] + 2, s[1]]
    } else {
        vec![s[0] + 2, s[1], s[2], s[3]]
    };
    let c = shape[1];
    let seed = rng.random();
    let mean: Vec<f32> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
    let var: Vec<f32> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
    let inputs = [
        uniform(&shape, -2.0, 2.0, rng),
        uniform(&[c], 0.5, 1.5, rng),
        uniform(&[c], -0.5, 0.5, rng),
    ];
    check_inputs(&inputs, |t, v| {
        let out = layers::batchnorm(t, v[0], v[1], v[2], &mean, &var, mode)?;
        project(t, out.y, seed)
    })
}

fn batchnorm_train(rng: &mut Rng) -> mrisynth::Result<f64> {
    batchnorm(Mode::Train, rng)
}

fn batchnorm_eval(rng: &mut Rng) -> mrisynth::Result<f64> {
    batchnorm(Mode::Eval, rng)
}

fn pixelnorm(rng: &mut Rng) -> mrisynth::Result<f64> {
    // one channel degenerates to x / |x|
    let mut s = spatial_shape(rng, false);
    s[1] += 1;
    let seed = rng.random();
    let x = uniform(&s, -1.0, 1.0, rng);
    check_inputs(&[x], |t, v| {
        let y = layers::pixelnorm(t, v[0])?;
        project(t, y, seed)
    })
}

fn pixelshuffle(rng: &mut Rng) -> mrisynth::Result<f64> {
    let r = rng.random_range(1..4);
    let mut s = spatial_shape(rng, false);
    s[1] *= r * r;
    let seed = rng.random();
    let x = uniform(&s, -1.0, 1.0, rng);
    check_inputs(&[x], |t, v| {
        let y = layers::pixelshuffle(t, v[0], r)?;
        project(t, y, seed)
    })
}

fn space_to_depth(rng: &mut Rng) -> mrisynth::Result<f64> {
    let r = rng.random_range(1..3);
    let mut s = spatial_shape(rng, false);
    s[2] *= r;
    s[3] *= r;
    let seed = rng.random();
    let x = uniform(&s, -1.0, 1.0, rng);
    check_inputs(&[x], |t, v| {
        let y = layers::space_to_depth(t, v[0], r)?;
        project(t, y, seed)
    })
}

fn minibatch_std(rng: &mut Rng) -> mrisynth::Result<f64> {
    let mut s = spatial_shape(rng, false);
    s[0] += 1;
    let seed = rng.random();
    let x = uniform(&s, -1.0, 1.0, rng);
    check_inputs(&[x], |t, v| {
        let y = layers::minibatch_stddev(t, v[0])?;
        project(t, y, seed)
    })
}

fn dropout(rng: &mut Rng) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, false);
    let rate = rng.random_range(0.0..0.9);
    let (seed, mask_seed) = (rng.random(), rng.random());
    let x = uniform(&s, -1.0, 1.0, rng);
    check_inputs(&[x], |t, v| {
        let mut mask_rng = Rng::seed_from_u64(mask_seed);
        let y = layers::dropout(t, v[0], rate, Mode::Train, &mut mask_rng)?;
        project(t, y, seed)
    })
}

fn activation(rng: &mut Rng) -> mrisynth::Result<f64> {
    let kind = [Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid, Activation::Tanh][rng.random_range(0..4)];
    let s = spatial_shape(rng, false);
    let seed = rng.random();
    let x = off_kink(&s, rng).data().iter().map(|v| v * 3.0).collect::<Vec<_>>();
    let x = Tensor::from_f64(s.to_vec(), &x).unwrap();
    check_inputs(&[x], |t, v| {
        let y = layers::activation(t, kind, v[0]);
        project(t, y, seed)
    })
}

fn concat_add(rng: &mut Rng) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, false);
    let mut s2 = s;
    s2[1] = rng.random_range(1..4);
    let seed = rng.random();
    let inputs = [
        uniform(&s, -1.0, 1.0, rng),
        uniform(&s2, -1.0, 1.0, rng),
        uniform(&s, -1.0, 1.0, rng),
    ];
    check_inputs(&inputs, |t, v| {
        let skip = t.add(v[0], v[2])?;
        let y = t.concat(&[skip, v[1]], 1)?;
        project(t, y, seed)
    })
}

pub const LAYER_CASES: &[Case] = &[
    Case { name: "dense", run: dense },
    Case { name: "conv2d", run: conv },
    Case { name: "conv_transpose2d", run: conv_transpose },
    Case { name: "max_pool", run: max_pool },
    Case { name: "avg_pool", run: avg_pool },
    Case { name: "upsample_nearest", run: upsample },
    Case { name: "batchnorm_train", run: batchnorm_train },
    Case { name: "batchnorm_eval", run: batchnorm_eval },
    Case { name: "pixelnorm", run: pixelnorm },
    Case { name: "pixelshuffle", run: pixelshuffle },
    Case { name: "space_to_depth", run: space_to_depth },
    Case { name: "minibatch_stddev", run: minibatch_std },
    Case { name: "dropout", run: dropout },
    Case { name: "activation", run: activation },
    Case { name: "concat_add", run: concat_add },
];

fn batch_shape(rng: &mut Rng) -> Vec<usize> {
    vec![rng.random_range(2..6), 1]
}

fn bce(rng: &mut Rng) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, false);
    let inputs = [uniform(&s, 0.05, 0.95, rng), uniform(&s, 0.0, 1.0, rng)];
    check_inputs(&inputs, |t, v| losses::bce(t, v[0], v[1]))
}

fn dice(rng: &mut Rng) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, false);
    let smooth = rng.random_range(0.1..2.0);
    let p = uniform(&s, 0.0, 1.0, rng);
    let y: Vec<f64> = (0..p.len()).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    let y = Tensor::from_f64(s.to_vec(), &y).unwrap();
    check_inputs(&[p, y], |t, v| losses::dice_loss(t, v[0], v[1], smooth))
}

fn random_spec(rng: &mut Rng, kinds: &[LossKind]) -> LossSpec {
    let mut spec = LossSpec::new(kinds[rng.random_range(0..kinds.len())]);
    spec.lambda_adv = rng.random_range(0.5..2.0);
    spec.one_sided_smoothing = !spec.kind.is_wasserstein() && rng.random::<bool>();
    spec.eps_drift = rng.random::<bool>().then(|| rng.random_range(1e-3..0.1));
    spec
}

const ADVERSARIAL: &[LossKind] = &[
    LossKind::GanOriginal,
    LossKind::Lsgan,
    LossKind::Wgan,
    LossKind::WganGp,
    LossKind::Dragan,
];

fn discriminator_outputs(spec: &LossSpec, rng: &mut Rng) -> [Tensor<f64>; 2] {
    let s = batch_shape(rng);
    if spec.kind.is_wasserstein() {
        [uniform(&s, -3.0, 3.0, rng), uniform(&s, -3.0, 3.0, rng)]
    } else {
        [uniform(&s, 0.05, 0.95, rng), uniform(&s, 0.05, 0.95, rng)]
    }
}

fn adversarial_d(rng: &mut Rng) -> mrisynth::Result<f64> {
    let spec = random_spec(rng, ADVERSARIAL);
    let inputs = discriminator_outputs(&spec, rng);
    check_inputs(&inputs, |t, v| losses::d_loss(t, &spec, v[0], v[1]))
}

fn adversarial_g(rng: &mut Rng) -> mrisynth::Result<f64> {
    let spec = random_spec(rng, ADVERSARIAL);
    let [_, fake] = discriminator_outputs(&spec, rng);
    check_inputs(&[fake], |t, v| losses::g_loss(t, &spec, v[0]))
}

/// Two-layer critic `w2 · act(W1 x)` on flattened inputs. Only `W1` is a
/// live variable; the penalty is differentiated through the input gradient.
fn critic(t: &mut Tape<f64>, x: Var, w1: Var, w2: &Tensor<f64>, act: Activation) -> R {
    let s = t.shape(x).to_vec();
    let flat = t.reshape(x, &[s[0], s[1..].iter().product()])?;
    let h = layers::dense(t, flat, w1, None)?;
    let h = layers::activation(t, act, h);
    let w2 = t.constant(w2.clone());
    layers::dense(t, h, w2, None)
}

fn penalty(rng: &mut Rng, dragan: bool) -> mrisynth::Result<f64> {
    let s = spatial_shape(rng, false);
    let s = [s[0] + 1, s[1], s[2], s[3]];
    let d: usize = s[1..].iter().product();
    let hidden = rng.random_range(1..5);
    let act = [Activation::Tanh, Activation::Sigmoid, Activation::LeakyRelu][rng.random_range(0..3)];
    let real = uniform(&s, -1.0, 1.0, rng);
    let fake = uniform(&s, -1.0, 1.0, rng);
    let w1 = uniform(&[hidden, d], -1.0, 1.0, rng);
    let w2 = uniform(&[1, hidden], -1.0, 1.0, rng);
    let penalty_seed = rng.random();
    check_inputs(&[w1], |t, v| {
        let w1 = v[0];
        let mut f = |t: &mut Tape<f64>, x: Var| critic(t, x, w1, &w2, act);
        let mut prng = Rng::seed_from_u64(penalty_seed);
        if dragan {
            losses::gradient_penalty_dragan(t, &mut f, &real, &mut prng)
        } else {
            losses::gradient_penalty_wgan_gp(t, &mut f, &real, &fake, &mut prng)
        }
    })
}

fn penalty_wgan_gp(rng: &mut Rng) -> mrisynth::Result<f64> {
    penalty(rng, false)
}

fn penalty_dragan(rng: &mut Rng) -> mrisynth::Result<f64> {
    penalty(rng, true)
}

pub const LOSS_CASES: &[Case] = &[
    Case { name: "bce", run: bce },
    Case { name: "dice_loss", run: dice },
    Case { name: "d_loss", run: adversarial_d },
    Case { name: "g_loss", run: adversarial_g },
    Case { name: "gradient_penalty_wgan_gp", run: penalty_wgan_gp },
    Case { name: "gradient_penalty_dragan", run: penalty_dragan },
];

/// Worst error of `case` over `configs` seeded configurations, together
/// with the seed that produced it.
pub fn sweep(case: &Case, configs: u64, base_seed: u64) -> mrisynth::Result<(f64, u64)> {
    let mut worst = (0.0f64, 0u64);
    for i in 0..configs {
        let seed = base_seed.wrapping_mul(1_000_003).wrapping_add(i);
        let mut rng = Rng::seed_from_u64(seed);
        let e = (case.run)(&mut rng)?;
        if !(e <= worst.0) {
            worst = (e, seed);
        }
    }
    Ok(worst)
}
