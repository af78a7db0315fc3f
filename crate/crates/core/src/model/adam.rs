use rayon::prelude::*;

use crate::real::Real;

use super::backward::KsaeGrads;
use super::params::renorm_decoder;
use super::{KsaeParams, ModelError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: KsaeGrads<T>,
    pub v: KsaeGrads<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &KsaeParams<T>, config: AdamConfig) -> Self {
        Self {
            m: KsaeGrads::zeros_like(params),
            v: KsaeGrads::zeros_like(params),
            t: 0,
            config,
        }
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        AdamState {
            m: self.m.cast(),
            v: self.v.cast(),
            t: self.t,
            config: self.config,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Decoder columns re-seeded after collapsing to zero norm.
    pub reinitialized: Vec<usize>,
}

const CHUNK: usize = 1 << 14;

#[allow(clippy::too_many_arguments)]
fn update_tensor<T: Real>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], lr: T, c: &AdamConfig, bc1: T, bc2: T) {
    let (b1, b2, eps) = (T::from_f64(c.beta1), T::from_f64(c.beta2), T::from_f64(c.eps));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    p.par_chunks_mut(CHUNK)
        .zip(g.par_chunks(CHUNK))
        .zip(m.par_chunks_mut(CHUNK))
        .zip(v.par_chunks_mut(CHUNK))
        .for_each(|(((p, g), m), v)| {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
}

/// One bias-corrected Adam update followed by decoder renormalization.
pub fn adam_step<T: Real>(
    params: &mut KsaeParams<T>,
    grads: &KsaeGrads<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<StepReport, ModelError> {
    if !grads.matches(params) || !state.m.matches(params) || !state.v.matches(params) {
        return Err(ModelError::StateShape);
    }
    for (tensor, g) in grads.tensors() {
        if g.par_iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteGradient { tensor });
        }
    }
    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
    let lr = T::from_f64(lr);
    update_tensor(&mut params.w_enc, &grads.w_enc, &mut state.m.w_enc, &mut state.v.w_enc, lr, &c, bc1, bc2);
    update_tensor(&mut params.w_dec_t, &grads.w_dec_t, &mut state.m.w_dec_t, &mut state.v.w_dec_t, lr, &c, bc1, bc2);
    update_tensor(&mut params.b_pre, &grads.b_pre, &mut state.m.b_pre, &mut state.v.b_pre, lr, &c, bc1, bc2);
    update_tensor(&mut params.b_enc, &grads.b_enc, &mut state.m.b_enc, &mut state.v.b_enc, lr, &c, bc1, bc2);
    let reinitialized = renorm_decoder(params, state.t);
    Ok(StepReport { reinitialized })
}
