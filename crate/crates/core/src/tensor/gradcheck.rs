use super::{Graph, Result, Tensor, TensorError, Var};

/// Central finite-difference gradient of a scalar graph function at `x`.
pub fn numeric_gradient<F>(f: &F, x: &Tensor, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |point: Vec<f64>, coord: usize| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(x.shape().to_vec(), point)?);
        let out = f(&mut g, v)?;
        let y = g.value(out).data()[0];
        if !y.is_finite() {
            return Err(TensorError::NonFinite {
                coord,
                detail: format!("function value {y} at perturbed point"),
            });
        }
        Ok(y)
    };
    let base = x.data().to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += step;
        let mut minus = base.clone();
        minus[i] -= step;
        grad.push((eval(plus, i)? - eval(minus, i)?) / (2.0 * step));
    }
    Ok(grad)
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-12)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

/// Compare the reverse-mode gradient of `f` at `x` with central finite
/// differences and return the worst coordinate-wise relative error.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, v)?;
    let grads = g.backward(out)?;
    let analytic = grads.get(v);
    if let Some(coord) = analytic.data().iter().position(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite {
            coord,
            detail: "analytic gradient".into(),
        });
    }
    let numeric = numeric_gradient(&f, x, step)?;
    Ok(max_relative_error(analytic.data(), &numeric))
}
