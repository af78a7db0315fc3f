//! Analytic gradients of the batch-mean loss.
//!
//! TopK is treated as a fixed mask: surviving latents pass the gradient
//! through unchanged, pruned latents receive exactly zero. Per-latent
//! gradient rows are accumulated in sample order by whichever worker owns
//! the row, so results are bitwise identical for any thread count.

use rayon::prelude::*;

use crate::real::{axpy, dot, Real};

use super::forward::{center, check_len, pre_activations, LossNorm};
use super::topk::select_support;
use super::{KsaeParams, ModelError};

/// Gradients laid out exactly like [`KsaeParams`] (`w_dec_t` transposed).
#[derive(Debug, Clone, PartialEq)]
pub struct KsaeGrads<T> {
    pub w_enc: Vec<T>,
    pub w_dec_t: Vec<T>,
    pub b_pre: Vec<T>,
    pub b_enc: Vec<T>,
}

impl<T: Real> KsaeGrads<T> {
    pub fn zeros_like(p: &KsaeParams<T>) -> Self {
        Self {
            w_enc: vec![T::zero(); p.w_enc.len()],
            w_dec_t: vec![T::zero(); p.w_dec_t.len()],
            b_pre: vec![T::zero(); p.d],
            b_enc: vec![T::zero(); p.n],
        }
    }

    pub fn matches(&self, p: &KsaeParams<T>) -> bool {
        self.w_enc.len() == p.w_enc.len()
            && self.w_dec_t.len() == p.w_dec_t.len()
            && self.b_pre.len() == p.b_pre.len()
            && self.b_enc.len() == p.b_enc.len()
    }

    pub fn tensors(&self) -> [(&'static str, &[T]); 4] {
        [
            ("w_enc", &self.w_enc),
            ("w_dec", &self.w_dec_t),
            ("b_pre", &self.b_pre),
            ("b_enc", &self.b_enc),
        ]
    }

    pub fn cast<U: Real>(&self) -> KsaeGrads<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        KsaeGrads {
            w_enc: conv(&self.w_enc),
            w_dec_t: conv(&self.w_dec_t),
            b_pre: conv(&self.b_pre),
            b_enc: conv(&self.b_enc),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult<T> {
    /// Batch-mean normalized loss.
    pub loss: T,
    /// TopK support of every sample, ascending.
    pub supports: Vec<Vec<usize>>,
}

struct SampleGrad<T> {
    centered: Vec<T>,
    support: Vec<usize>,
    z: Vec<T>,
    /// dL/dz on the support; equals dL/d(pre-activation) there.
    dz: Vec<T>,
    /// dL/dx_hat
    g: Vec<T>,
    /// W_enc^T dz
    enc_back: Vec<T>,
    sq: T,
}

fn sample_grad<T: Real>(
    params: &KsaeParams<T>,
    x: &[T],
    scale: T,
    pre: &mut Vec<T>,
    scratch: &mut Vec<usize>,
) -> Option<SampleGrad<T>> {
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut centered = Vec::with_capacity(params.d);
    center(params, x, &mut centered);
    pre_activations(params, &centered, pre);
    if pre.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let support = select_support(pre, params.k, scratch);
    let z: Vec<T> = support.iter().map(|&j| pre[j]).collect();

    let mut g = params.b_pre.clone();
    for (&j, &v) in support.iter().zip(&z) {
        axpy(v, params.atom(j), &mut g);
    }
    let mut sq = T::zero();
    for (gi, &xi) in g.iter_mut().zip(x) {
        let e = *gi - xi;
        sq += e * e;
        *gi = e * scale;
    }
    let dz: Vec<T> = support.iter().map(|&j| dot(params.atom(j), &g)).collect();
    let mut enc_back = vec![T::zero(); params.d];
    for (&j, &dzj) in support.iter().zip(&dz) {
        axpy(dzj, params.encoder_row(j), &mut enc_back);
    }
    Some(SampleGrad {
        centered,
        support,
        z,
        dz,
        g,
        enc_back,
        sq,
    })
}

pub fn backward<T: Real, X: AsRef<[T]> + Sync>(
    params: &KsaeParams<T>,
    batch: &[X],
    norm: LossNorm,
) -> Result<(BatchResult<T>, KsaeGrads<T>), ModelError> {
    let mut grads = KsaeGrads::zeros_like(params);
    let res = backward_into(params, batch, norm, &mut grads)?;
    Ok((res, grads))
}

/// Overwrites `grads` with the gradient of the batch-mean loss.
pub fn backward_into<T: Real, X: AsRef<[T]> + Sync>(
    params: &KsaeParams<T>,
    batch: &[X],
    norm: LossNorm,
    grads: &mut KsaeGrads<T>,
) -> Result<BatchResult<T>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if !grads.matches(params) {
        return Err(ModelError::StateShape);
    }
    for x in batch {
        check_len("input", params.d, x.as_ref().len())?;
    }
    let (d, n) = (params.d, params.n);
    let divisor = norm.divisor(d);
    if !(divisor.is_finite() && divisor > 0.0) {
        return Err(ModelError::InvalidDims(format!("loss divisor {divisor}")));
    }
    let b = batch.len();
    let scale = T::from_f64(2.0 / (b as f64 * divisor));

    let samples: Vec<Option<SampleGrad<T>>> = batch
        .par_iter()
        .map_init(
            || (Vec::with_capacity(n), Vec::with_capacity(n)),
            |(pre, scratch), x| sample_grad(params, x.as_ref(), scale, pre, scratch),
        )
        .collect();
    let mut traces = Vec::with_capacity(b);
    for (index, s) in samples.into_iter().enumerate() {
        traces.push(s.ok_or(ModelError::NonFinite { index })?);
    }

    let mut sq_total = T::zero();
    grads.b_pre.iter_mut().for_each(|v| *v = T::zero());
    for t in &traces {
        sq_total += t.sq;
        for ((acc, &gi), &ei) in grads.b_pre.iter_mut().zip(&t.g).zip(&t.enc_back) {
            *acc += gi - ei;
        }
    }

    // latent -> (sample, position in support), grouped by latent, sample order
    let mut offsets = vec![0u32; n + 1];
    for t in &traces {
        for &j in &t.support {
            offsets[j + 1] += 1;
        }
    }
    for j in 0..n {
        offsets[j + 1] += offsets[j];
    }
    let mut cursor = offsets.clone();
    let mut owners = vec![(0u32, 0u32); offsets[n] as usize];
    for (s, t) in traces.iter().enumerate() {
        for (pos, &j) in t.support.iter().enumerate() {
            owners[cursor[j] as usize] = (s as u32, pos as u32);
            cursor[j] += 1;
        }
    }

    grads
        .w_enc
        .par_chunks_mut(d)
        .zip(grads.w_dec_t.par_chunks_mut(d))
        .zip(grads.b_enc.par_iter_mut())
        .enumerate()
        .for_each(|(j, ((enc_row, dec_col), benc))| {
            enc_row.iter_mut().for_each(|v| *v = T::zero());
            dec_col.iter_mut().for_each(|v| *v = T::zero());
            *benc = T::zero();
            for &(s, pos) in &owners[offsets[j] as usize..offsets[j + 1] as usize] {
                let t = &traces[s as usize];
                let pos = pos as usize;
                axpy(t.dz[pos], &t.centered, enc_row);
                axpy(t.z[pos], &t.g, dec_col);
                *benc += t.dz[pos];
            }
        });

    let loss = sq_total / T::from_f64(b as f64 * divisor);
    if !loss.is_finite() {
        return Err(ModelError::NonFinite { index: 0 });
    }
    Ok(BatchResult {
        loss,
        supports: traces.into_iter().map(|t| t.support).collect(),
    })
}
