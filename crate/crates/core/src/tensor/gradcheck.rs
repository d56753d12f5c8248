//! Central-difference gradient checking.

use super::{Tape, Tensor, Var};
use crate::error::{ensure, Error, Result};

/// Denominator floor for [`relative_error`]; below it the error is absolute.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Worst relative error between the tape gradient of scalar `f` at `x` and
/// central differences with step `eps`.
pub fn gradcheck<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    gradcheck_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// [`gradcheck`] over several inputs at once; every input is differentiated.
pub fn gradcheck_multi<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    ensure!(eps > 0.0, InvalidArgument, "gradcheck step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("gradcheck objective is {value}")));
    }
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("gradcheck objective is {v}")))
        }
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.tensor(*var);
        for i in 0..inputs[k].numel() {
            let base = inputs[k].data()[i];
            work[k] = with_value(&inputs[k], i, base + eps);
            let plus = eval(&work)?;
            work[k] = with_value(&inputs[k], i, base - eps);
            let minus = eval(&work)?;
            work[k] = inputs[k].clone();
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "analytic gradient {a} at input {k}[{i}]"
                )));
            }
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

fn with_value(t: &Tensor, i: usize, v: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[i] = v;
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}
