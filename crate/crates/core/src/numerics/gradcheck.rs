//! Finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::numerics::array::Array;
use crate::numerics::graph::{Graph, Var};

/// Compare reverse-mode gradients of a scalar-valued function against central
/// finite differences. Returns the maximum over all input coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Array], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).rank() != 0 {
        return Err(Error::Dimension {
            op: "grad_check",
            msg: "function output must be a scalar".into(),
            shape: g.value(out).shape().to_vec(),
        });
    }
    g.backward(out)?;
    let analytic: Vec<Array> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| g.grad(v).cloned().unwrap_or_else(|| Array::zeros(a.shape())))
        .collect();

    let eval = |probe: &[Array]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = probe.iter().map(|a| g.constant(a.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Array> = inputs.to_vec();
    for (ai, arr) in inputs.iter().enumerate() {
        for ci in 0..arr.len() {
            let orig = arr.data()[ci];
            probe[ai].data_mut()[ci] = orig + eps;
            let up = eval(&probe)?;
            probe[ai].data_mut()[ci] = orig - eps;
            let down = eval(&probe)?;
            probe[ai].data_mut()[ci] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ai].data()[ci];
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_is_nearly_exact() {
        // f(x) = sum(x^2) via mse against zero has simple exact gradients.
        let x = Array::vector(vec![0.5, -1.25, 2.0]);
        let err = grad_check(
            |g, vars| {
                let zero = g.constant(Array::vector(vec![0.0; 3]));
                g.mse_loss(vars[0], zero)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn rejects_non_scalar_output() {
        let x = Array::vector(vec![1.0, 2.0]);
        let r = grad_check(|_, vars| Ok(vars[0]), &[x], 1e-5);
        assert!(r.is_err());
    }
}
