use crate::encoder::model::{Gradients, ModelParams, Tensors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected adaptive moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Tensors,
    pub second_moment: Tensors,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            first_moment: Tensors::zeros(params.dims()),
            second_moment: Tensors::zeros(params.dims()),
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
) -> Result<()> {
    let dims = params.dims();
    if grads.dims != dims || state.first_moment.dims != dims || state.second_moment.dims != dims {
        return Err(Error::arg(format!(
            "shape mismatch: params {dims:?}, grads {:?}, moments {:?}",
            grads.dims, state.first_moment.dims
        )));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    let p_arrays = params.weights.arrays_mut();
    let m_arrays = state.first_moment.arrays_mut();
    let v_arrays = state.second_moment.arrays_mut();
    for (((p, g), m), v) in p_arrays
        .into_iter()
        .zip(grads.arrays())
        .zip(m_arrays)
        .zip(v_arrays)
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
