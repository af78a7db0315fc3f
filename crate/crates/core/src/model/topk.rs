use crate::real::Real;

use super::ModelError;

/// Sparse latent code; `indices` ascending, `values` aligned with them.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> SparseCode<T> {
    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|v| !v.is_zero()).count()
    }

    pub fn to_dense(&self, n: usize) -> Vec<T> {
        let mut out = vec![T::zero(); n];
        for (&j, &v) in self.indices.iter().zip(&self.values) {
            out[j] = v;
        }
        out
    }
}

/// Indices of the `k` largest entries, ascending. Ties go to the lower index.
/// Callers guarantee `v` has no NaN.
pub(crate) fn select_support<T: Real>(v: &[T], k: usize, scratch: &mut Vec<usize>) -> Vec<usize> {
    let n = v.len();
    if k >= n {
        return (0..n).collect();
    }
    scratch.clear();
    scratch.extend(0..n);
    let order = |a: &usize, b: &usize| {
        v[*b]
            .partial_cmp(&v[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    scratch.select_nth_unstable_by(k - 1, order);
    let mut support = scratch[..k].to_vec();
    support.sort_unstable();
    support
}

/// Keep the `k` largest entries of `v` and zero the rest.
pub fn topk<T: Real>(v: &[T], k: usize) -> Result<(Vec<T>, Vec<usize>), ModelError> {
    if k == 0 || k > v.len() {
        return Err(ModelError::InvalidK { k, n: v.len() });
    }
    if let Some(index) = v.iter().position(|x| x.is_nan()) {
        return Err(ModelError::NonFinite { index });
    }
    let support = select_support(v, k, &mut Vec::new());
    let mut out = vec![T::zero(); v.len()];
    for &j in &support {
        out[j] = v[j];
    }
    Ok((out, support))
}
