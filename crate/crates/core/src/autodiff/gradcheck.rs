use super::{Array, ParamId, Tape, Var};
use crate::error::{Result, TmmError};

fn evaluate<F>(f: &F, point: &[Array]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .enumerate()
        .map(|(i, a)| tape.param(ParamId(i), a.clone()))
        .collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(TmmError::Usage(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(TmmError::Numeric("function evaluated to a non-finite value".into()));
    }
    Ok(v)
}

/// Central-difference estimate of the gradient of `f` at `point`.
pub fn central_difference<F>(f: &F, point: &[Array], eps: f64) -> Result<Vec<Array>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut shifted = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for p in 0..point.len() {
        let mut g = Array::zeros(point[p].shape());
        for j in 0..point[p].len() {
            let x0 = point[p].data()[j];
            shifted[p].data_mut()[j] = x0 + eps;
            let hi = evaluate(f, &shifted)?;
            shifted[p].data_mut()[j] = x0 - eps;
            let lo = evaluate(f, &shifted)?;
            shifted[p].data_mut()[j] = x0;
            g.data_mut()[j] = (hi - lo) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over every
/// coordinate of every input in `point`.
pub fn grad_check<F>(f: F, point: &[Array], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point
        .iter()
        .enumerate()
        .map(|(i, a)| tape.param(ParamId(i), a.clone()))
        .collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let numeric = central_difference(&f, point, eps)?;

    let mut worst: f64 = 0.0;
    for (i, fd) in numeric.iter().enumerate() {
        let analytic = grads
            .get(ParamId(i))
            .expect("backward reports every parameter leaf");
        for (a, n) in analytic.data().iter().zip(fd.data()) {
            worst = worst.max((a - n).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
