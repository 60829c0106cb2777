use crate::error::{Error, Result};
use crate::numerics::ParamSet;

use super::TrainConfig;

/// Raw (uncorrected) AdamW moments, one buffer per parameter in
/// [`ParamSet`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value().len()]).collect();
        OptimizerState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One AdamW update from the gradients held in `params`.
///
/// Bias correction is applied when the moments are used; the stored
/// moments stay uncorrected. Weight decay is decoupled from the gradient.
/// Nothing is modified if any gradient is non-finite.
pub fn adamw_step(params: &mut ParamSet, state: &mut OptimizerState, config: &TrainConfig) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(
            "adamw_step",
            format!("{} moment buffers for {} parameters", state.m.len(), params.len()),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if state.m[i].len() != p.grad().len() || state.v[i].len() != p.grad().len() {
            return Err(Error::shape(
                "adamw_step",
                format!("moment size mismatch for `{}`", p.name()),
            ));
        }
        if let Some(j) = p.grad().iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}` at element {j}", p.name())));
        }
    }

    state.t += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    let lr = config.learning_rate;
    let decay = lr * config.weight_decay;

    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let theta = p.value_mut();
        for k in 0..theta.len() {
            let g = grad[k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            theta[k] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps) + decay * theta[k];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::task::Task;

    fn one_param(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("theta", Tensor::new(&[1], vec![value]).unwrap()).unwrap();
        ps.get_mut(id).grad_mut()[0] = grad;
        ps
    }

    #[test]
    fn zero_grad_leaves_params() {
        let cfg = TrainConfig::for_task(Task::Sleep);
        let mut ps = one_param(0.7, 0.0);
        let mut st = OptimizerState::new(&ps);
        for _ in 0..5 {
            adamw_step(&mut ps, &mut st, &cfg).unwrap();
        }
        assert_eq!(ps.iter().next().unwrap().value()[0], 0.7);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn first_step_is_sign_of_gradient() {
        let mut cfg = TrainConfig::for_task(Task::Sleep);
        cfg.learning_rate = 1e-3;
        for g in [3.0, -0.02, 1e3] {
            let mut ps = one_param(1.0, g);
            let mut st = OptimizerState::new(&ps);
            adamw_step(&mut ps, &mut st, &cfg).unwrap();
            let delta = ps.iter().next().unwrap().value()[0] - 1.0;
            let expect = -1e-3 * g.signum();
            assert!((delta - expect).abs() < 1e-3 * 1e-8 / g.abs() * 2.0 + 1e-15, "{delta}");
            // moments stored raw
            assert!((st.m[0][0] - 0.1 * g).abs() < 1e-12 * g.abs());
        }
    }

    #[test]
    fn decoupled_decay() {
        let mut cfg = TrainConfig::for_task(Task::Sleep);
        cfg.learning_rate = 0.01;
        cfg.weight_decay = 0.5;
        let mut ps = one_param(2.0, 0.0);
        let mut st = OptimizerState::new(&ps);
        for _ in 0..3 {
            adamw_step(&mut ps, &mut st, &cfg).unwrap();
        }
        let expect = 2.0 * (1.0f64 - 0.005).powi(3);
        assert!((ps.iter().next().unwrap().value()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let cfg = TrainConfig::for_task(Task::Sleep);
        let mut ps = one_param(1.0, f64::NAN);
        let mut st = OptimizerState::new(&ps);
        let err = adamw_step(&mut ps, &mut st, &cfg).unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
        assert_eq!(st.t, 0);
    }
}
