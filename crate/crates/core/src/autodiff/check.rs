use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the tape gradient of a scalar function against central
/// differences and returns the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_with(f, x, step).map(|r| r.max_rel_error)
}

pub fn grad_check_with<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("finite-difference step {step} must be positive")));
    }
    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(t);
        let y = f(&mut tape, v)?;
        if tape.value(y).len() != 1 {
            return Err(Error::NonScalarLoss(tape.shape(y).to_vec()));
        }
        Ok(tape.item(y))
    };

    let mut tape = Tape::new();
    let v = tape.variable(x.clone());
    let y = f(&mut tape, v)?;
    let grads = tape.backward(y)?;
    let analytic: Vec<f64> = match grads.get(v) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.len()],
    };

    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * step));
    }

    let mut worst = (0.0f64, 0usize);
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        if a.is_nan() || n.is_nan() {
            return Err(Error::NonFinite {
                op: "grad_check",
                phase: "comparison",
            });
        }
        let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        if err > worst.0 {
            worst = (err, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    })
}
