use crate::real::{axpy, dot, Real};

use super::topk::{select_support, SparseCode};
use super::{KsaeParams, ModelError};

/// Reconstruction-loss normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LossNorm {
    /// `|x - x_hat|^2 / d`
    #[default]
    PerDimension,
    /// `|x - x_hat|^2 / sum_i var_i` using dataset variance.
    TotalVariance(f64),
}

impl LossNorm {
    pub fn divisor(self, d: usize) -> f64 {
        match self {
            LossNorm::PerDimension => d as f64,
            LossNorm::TotalVariance(v) => v,
        }
    }
}

/// Encoder output for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding<T> {
    /// `x - b_pre`
    pub centered: Vec<T>,
    pub pre_activation: Vec<T>,
    pub code: SparseCode<T>,
}

/// Full forward pass for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub centered: Vec<T>,
    pub pre_activation: Vec<T>,
    /// Surviving latents; `code.indices` is the TopK support.
    pub code: SparseCode<T>,
    pub reconstruction: Vec<T>,
    pub loss: T,
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::Dimension { what, expected, got });
    }
    Ok(())
}

pub(crate) fn center<T: Real>(params: &KsaeParams<T>, x: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(x.iter().zip(&params.b_pre).map(|(&a, &b)| a - b));
}

pub(crate) fn pre_activations<T: Real>(params: &KsaeParams<T>, centered: &[T], out: &mut Vec<T>) {
    out.clear();
    out.extend(
        params
            .w_enc
            .chunks_exact(params.d)
            .zip(&params.b_enc)
            .map(|(row, &b)| dot(row, centered) + b),
    );
}

/// `z = TopK(W_enc (x - b_pre) + b_enc)`
pub fn encode<T: Real>(params: &KsaeParams<T>, x: &[T]) -> Result<Encoding<T>, ModelError> {
    check_len("input", params.d, x.len())?;
    let mut centered = Vec::with_capacity(params.d);
    center(params, x, &mut centered);
    let mut pre = Vec::with_capacity(params.n);
    pre_activations(params, &centered, &mut pre);
    if pre.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { index: 0 });
    }
    let indices = select_support(&pre, params.k, &mut Vec::new());
    let values = indices.iter().map(|&j| pre[j]).collect();
    Ok(Encoding {
        centered,
        pre_activation: pre,
        code: SparseCode { indices, values },
    })
}

/// `x_hat = W_dec z + b_pre`, touching only the support columns.
pub fn decode<T: Real>(params: &KsaeParams<T>, code: &SparseCode<T>) -> Result<Vec<T>, ModelError> {
    check_len("code values", code.indices.len(), code.values.len())?;
    let mut out = params.b_pre.clone();
    for (&j, &v) in code.indices.iter().zip(&code.values) {
        if j >= params.n {
            return Err(ModelError::Dimension {
                what: "latent index",
                expected: params.n,
                got: j,
            });
        }
        axpy(v, params.atom(j), &mut out);
    }
    Ok(out)
}

/// Decode a dense `n`-vector, skipping zero entries.
pub fn decode_dense<T: Real>(params: &KsaeParams<T>, z: &[T]) -> Result<Vec<T>, ModelError> {
    check_len("code", params.n, z.len())?;
    let mut out = params.b_pre.clone();
    for (j, &v) in z.iter().enumerate() {
        if !v.is_zero() {
            axpy(v, params.atom(j), &mut out);
        }
    }
    Ok(out)
}

/// Per-dimension squared error `|x - x_hat|^2 / d`.
pub fn loss<T: Real>(x: &[T], x_hat: &[T]) -> Result<T, ModelError> {
    check_len("reconstruction", x.len(), x_hat.len())?;
    if x.is_empty() {
        return Err(ModelError::InvalidDims("empty vectors".into()));
    }
    let sq: T = x.iter().zip(x_hat).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sq / T::from_f64(x.len() as f64))
}

pub fn forward<T: Real>(
    params: &KsaeParams<T>,
    x: &[T],
    norm: LossNorm,
) -> Result<ForwardTrace<T>, ModelError> {
    let enc = encode(params, x)?;
    let reconstruction = decode(params, &enc.code)?;
    let sq: T = x
        .iter()
        .zip(&reconstruction)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(ForwardTrace {
        input: x.to_vec(),
        centered: enc.centered,
        pre_activation: enc.pre_activation,
        code: enc.code,
        reconstruction,
        loss: sq / T::from_f64(norm.divisor(params.d)),
    })
}
