use crate::error::{Error, Result};
use crate::model::Param;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates, aligned with the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Param]) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
        }
    }
}

fn grad_of(p: &Param) -> Result<&[f64]> {
    let g = p.tensor.grad.as_deref().unwrap_or(&[]);
    if g.len() != p.tensor.len() {
        return Err(Error::Dimension(format!("parameter `{}` has no gradient buffer", p.name)));
    }
    if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: format!("gradient of `{}` ({bad})", p.name) });
    }
    Ok(g)
}

/// Global L2 norm of all gradients. Fails on the first non-finite entry.
pub fn grad_norm(params: &[Param]) -> Result<f64> {
    let mut sq = 0.0;
    for p in params {
        sq += grad_of(p)?.iter().map(|g| g * g).sum::<f64>();
    }
    Ok(sq.sqrt())
}

/// Rescales gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm(params: &mut [Param], max_norm: f64) -> Result<f64> {
    let norm = grad_norm(params)?;
    if norm > max_norm {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.tensor.grad.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }
    Ok(norm)
}

/// One bias-corrected Adam update from each parameter's `grad` buffer.
pub fn adam_step(params: &mut [Param], state: &mut AdamState, lr: f64) -> Result<()> {
    for p in params.iter() {
        grad_of(p)?;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.grad.take().expect("checked above");
        for (((x, g), mi), vi) in p.tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * g;
            *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
        p.tensor.grad = Some(grad);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamGroup;
    use crate::Tensor;

    fn scalar(value: f64, grad: f64) -> Param {
        let mut tensor = Tensor::from_vec(vec![value]).into_param();
        tensor.grad = Some(vec![grad]);
        Param { name: "w".into(), group: ParamGroup::Head, tensor }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut ps = vec![scalar(1.25, 0.0)];
        let mut st = AdamState::new(&ps);
        for _ in 0..5 {
            adam_step(&mut ps, &mut st, 0.1).unwrap();
        }
        assert_eq!(ps[0].tensor.data(), &[1.25]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = vec![scalar(0.0, 1.0)];
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 0.1).unwrap();
        assert!((ps[0].tensor.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut ps = vec![scalar(0.0, f64::NAN)];
        let mut st = AdamState::new(&ps);
        match adam_step(&mut ps, &mut st, 0.1) {
            Err(Error::NonFinite { op }) => assert!(op.contains("`w`")),
            other => panic!("{other:?}"),
        }
        assert_eq!(ps[0].tensor.data(), &[0.0]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut ps = vec![scalar(0.0, 3.0), scalar(0.0, 4.0)];
        assert_eq!(clip_grad_norm(&mut ps, 1.0).unwrap(), 5.0);
        assert!((grad_norm(&ps).unwrap() - 1.0).abs() < 1e-15);
    }
}
