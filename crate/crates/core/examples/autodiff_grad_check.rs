//! Reverse-mode gradients on a tape, checked against central differences,
//! plus a gradient penalty that differentiates through a gradient.

use mrisynth::autodiff::grad_check_with;
use mrisynth::layers::{self, Activation, Padding};
use mrisynth::losses;
use mrisynth::{Rng, Tape, Tensor};
use rand::{Rng as _, SeedableRng};

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &data).expect("sized")
}

fn main() -> mrisynth::Result<()> {
    let mut rng = Rng::seed_from_u64(0);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let x = random(&[2, 2, 6, 6], &mut rng);

    // conv -> tanh -> mean of squares, differentiated with respect to the input
    let f = |t: &mut Tape<f64>, x| {
        let w = t.constant(w.clone());
        let y = layers::conv2d(t, x, w, None, 2, Padding::Same)?;
        let y = layers::activation(t, Activation::Tanh, y);
        let y = t.square(y);
        t.mean(y)
    };
    let report = grad_check_with(f, &x, 1e-5)?;
    println!(
        "conv2d: max relative error {:.2e} at element {}",
        report.max_rel_error, report.worst_index
    );

    // WGAN-GP penalty of a linear critic D(x) = w·x: ‖∇D‖ = ‖w‖ everywhere
    let mut tape = Tape::<f64>::new();
    let cw = tape.variable(Tensor::from_f64(vec![4, 1], &[3.0, 4.0, 0.0, 0.0])?);
    let mut critic = |t: &mut Tape<f64>, x| t.matmul(x, cw);
    let real = random(&[5, 4], &mut rng);
    let fake = random(&[5, 4], &mut rng);
    let gp = losses::gradient_penalty_wgan_gp(&mut tape, &mut critic, &real, &fake, &mut rng)?;
    let grads = tape.backward(gp)?;
    println!("penalty (‖w‖ - 1)² = {:.6}", tape.item(gp));
    println!("d penalty / d w = {:?}", grads.get(cw).expect("w is a variable"));
    Ok(())
}
