//! Adam with bias correction.

use crate::tensor::{DType, Tensor};
use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        let m = params.iter().map(|p| Tensor::zeros(p.shape(), p.dtype())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape(), p.dtype())).collect();
        AdamState { cfg, t: 0, m, v }
    }
}

/// One Adam update over an aligned (params, grads, names) triple. The state
/// counter increments by exactly one; moments keep the parameter shapes.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.all_finite() {
            let name = names.get(i).map(String::as_str).unwrap_or("<unnamed>");
            return Err(Error::Numeric(format!(
                "adam_step: non-finite gradient for parameter '{name}'"
            )));
        }
        if g.shape() != params[i].shape() {
            return Err(Error::Shape(format!(
                "adam_step: gradient shape {:?} != parameter shape {:?}",
                g.shape(),
                params[i].shape()
            )));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let AdamConfig { lr, beta1, beta2, epsilon } = state.cfg;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for i in 0..params.len() {
        match params[i].dtype() {
            DType::F32 => update::<f32>(
                params[i].f32_data_mut(),
                grads[i].f32_data(),
                state.m[i].f32_data_mut(),
                state.v[i].f32_data_mut(),
                lr,
                beta1,
                beta2,
                epsilon,
                bc1,
                bc2,
            ),
            DType::F64 => update::<f64>(
                params[i].f64_data_mut(),
                grads[i].f64_data(),
                state.m[i].f64_data_mut(),
                state.v[i].f64_data_mut(),
                lr,
                beta1,
                beta2,
                epsilon,
                bc1,
                bc2,
            ),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update<T: crate::scalar::Scalar>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    let b1 = T::from_f64(beta1);
    let b1c = T::from_f64(1.0 - beta1);
    let b2 = T::from_f64(beta2);
    let b2c = T::from_f64(1.0 - beta2);
    let lr = T::from_f64(lr);
    let eps = T::from_f64(epsilon);
    let inv_bc1 = T::from_f64(1.0 / bc1);
    let inv_bc2 = T::from_f64(1.0 / bc2);
    for i in 0..p.len() {
        m[i] = b1 * m[i] + b1c * g[i];
        v[i] = b2 * v[i] + b2c * g[i] * g[i];
        let m_hat = m[i] * inv_bc1;
        let v_hat = v[i] * inv_bc2;
        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(vals: &[f64]) -> Vec<Tensor> {
        vals.iter().map(|&v| Tensor::from_f64(&[1], vec![v])).collect()
    }

    /// Straight transcription of the Adam update rules on plain f64 scalars.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: i32,
    }

    impl ScalarAdam {
        fn step(&mut self, p: f64, g: f64, cfg: AdamConfig) -> f64 {
            self.t += 1;
            self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g;
            self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m / (1.0 - cfg.beta1.powi(self.t));
            let v_hat = self.v / (1.0 - cfg.beta2.powi(self.t));
            p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon)
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = scalar_params(&[1.5]);
        let grads = scalar_params(&[0.0]);
        let mut st = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &grads, &["p".into()], &mut st).unwrap();
        assert_eq!(params[0].f64_data()[0], 1.5);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // p=0, g=1, lr=0.1: bias-corrected first step moves by exactly lr
        // (up to the epsilon regularizer).
        let mut params = scalar_params(&[0.0]);
        let grads = scalar_params(&[1.0]);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, &params);
        adam_step(&mut params, &grads, &["p".into()], &mut st).unwrap();
        assert!((params[0].f64_data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn matches_scalar_reference_over_steps() {
        let cfg = AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
        let mut params = scalar_params(&[0.7]);
        let mut st = AdamState::new(cfg, &params);
        let mut oracle = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
        let mut p_ref = 0.7;
        for _ in 0..2 {
            let grads = scalar_params(&[0.3]);
            adam_step(&mut params, &grads, &["p".into()], &mut st).unwrap();
            p_ref = oracle.step(p_ref, 0.3, cfg);
        }
        assert!((params[0].f64_data()[0] - p_ref).abs() <= 1e-12);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut params = scalar_params(&[0.0]);
        let grads = scalar_params(&[f64::NAN]);
        let mut st = AdamState::new(AdamConfig::default(), &params);
        let err = adam_step(&mut params, &grads, &["g.block0.conv.w".into()], &mut st).unwrap_err();
        assert!(err.to_string().contains("g.block0.conv.w"));
    }
}
