//! Central finite-difference gradient checking.
//!
//! The discrepancy for a coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`:
//! relative for large gradients, absolute below unit magnitude.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out)?.item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check probe".into()));
    }
    Ok(v)
}

/// Analytic gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect())
}

/// Central-difference gradient of `f`, perturbing every coordinate of every input.
pub fn numeric_gradients<F>(f: &F, inputs: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            probe[k].data_mut()[j] = orig + eps;
            let plus = evaluate(f, &probe)?;
            probe[k].data_mut()[j] = orig - eps;
            let minus = evaluate(f, &probe)?;
            probe[k].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Worst discrepancy between analytic and central-difference gradients over
/// all coordinates of all `inputs`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let analytic = analytic_gradients(&f, inputs)?;
    let numeric = numeric_gradients(&f, inputs, eps)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let denom = 1.0f64.max(x.abs()).max(y.abs());
            worst = worst.max((x - y).abs() / denom);
        }
    }
    Ok(worst)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(input), eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let c = Tensor::from_rows(&[[0.5, -1.5, 2.0]]).unwrap();
        let x = Tensor::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        let err = grad_check(
            |tape, v| {
                let c = tape.constant(c.clone());
                let p = tape.mul(v, c)?;
                tape.row_sum(p)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "err = {err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let eps = 1e-5;
        // every |x| > 10 * eps
        let x = Tensor::from_rows(&[[0.3, -0.7, 1.2, -0.001]]).unwrap();
        assert!(x.data().iter().all(|v| v.abs() > 10.0 * eps));
        let err = grad_check(
            |tape, v| {
                let sq = tape.square(v)?;
                let r = tape.relu(v)?;
                let y = tape.mul(r, sq)?;
                tape.mean(y)
            },
            &x,
            eps,
        )
        .unwrap();
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        let x = Tensor::scalar(1.0);
        assert!(grad_check(|tape, v| tape.mean(v), &x, 0.0).is_err());
    }
}
