//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Compare analytic gradients of a scalar-valued graph against central
/// differences at every input coordinate. Returns the maximum over
/// coordinates of |analytic − numeric| / max(|analytic|, |numeric|, 1e−8).
///
/// `build` receives one leaf per entry of `inputs` and must return the
/// scalar output variable.
pub fn grad_check<F: Scalar>(
    build: impl Fn(&mut Tape<F>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<F>],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }

    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = build(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| match grads.wrt(v) {
                Some(g) => g.iter().map(|&x| x.to_f64()).collect(),
                None => vec![0.0; t.numel()],
            })
            .collect()
    };

    let eval = |points: &[Tensor<F>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).data[0].to_f64())
    };

    let step = F::from_f64(h);
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<F>> = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data[j];
            let hi = orig + step;
            let lo = orig - step;
            probe[i].data[j] = hi;
            let f_hi = eval(&probe)?;
            probe[i].data[j] = lo;
            let f_lo = eval(&probe)?;
            probe[i].data[j] = orig;
            // Divide by the realized spread, not 2h: the perturbed values
            // are rounded to F, and the spread is what was actually applied.
            let spread = (hi - lo).to_f64();
            let numeric = (f_hi - f_lo) / spread;
            let a = analytic[i][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
