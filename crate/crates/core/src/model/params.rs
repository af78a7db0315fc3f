use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::real::Real;
use crate::store::DatasetStats;

use super::ModelError;

/// Decoder columns with a norm below this are re-seeded instead of scaled.
pub const DEAD_COLUMN_NORM: f64 = 1e-12;

/// k-SAE parameters.
///
/// `w_enc` is `n x d` row-major. The decoder `W_dec` (`d x n`) is stored
/// transposed in `w_dec_t` so each latent's decoder column is a contiguous
/// `d`-slice; see [`KsaeParams::w_dec_row_major`] for the `d x n` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct KsaeParams<T> {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub w_enc: Vec<T>,
    pub w_dec_t: Vec<T>,
    pub b_pre: Vec<T>,
    pub b_enc: Vec<T>,
    /// Seeds decoder-column re-initialization.
    pub seed: u64,
}

impl<T: Real> KsaeParams<T> {
    pub fn zeros(d: usize, n: usize, k: usize, seed: u64) -> Result<Self, ModelError> {
        check_dims(d, n, k)?;
        Ok(Self {
            d,
            n,
            k,
            w_enc: vec![T::zero(); n * d],
            w_dec_t: vec![T::zero(); n * d],
            b_pre: vec![T::zero(); d],
            b_enc: vec![T::zero(); n],
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_dims(self.d, self.n, self.k)?;
        let nd = self.n * self.d;
        let checks = [
            ("w_enc", nd, self.w_enc.len()),
            ("w_dec", nd, self.w_dec_t.len()),
            ("b_pre", self.d, self.b_pre.len()),
            ("b_enc", self.n, self.b_enc.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(ModelError::Dimension { what, expected, got });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn encoder_row(&self, j: usize) -> &[T] {
        &self.w_enc[j * self.d..(j + 1) * self.d]
    }

    /// Decoder column `j` (the dictionary atom for latent `j`).
    #[inline]
    pub fn atom(&self, j: usize) -> &[T] {
        &self.w_dec_t[j * self.d..(j + 1) * self.d]
    }

    #[inline]
    pub fn atom_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.w_dec_t[j * self.d..(j + 1) * self.d]
    }

    /// `W_dec` as a `d x n` row-major matrix.
    pub fn w_dec_row_major(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.d * self.n];
        for j in 0..self.n {
            for (i, &v) in self.atom(j).iter().enumerate() {
                out[i * self.n + j] = v;
            }
        }
        out
    }

    pub fn set_w_dec_row_major(&mut self, w: &[T]) -> Result<(), ModelError> {
        if w.len() != self.d * self.n {
            return Err(ModelError::Dimension {
                what: "w_dec",
                expected: self.d * self.n,
                got: w.len(),
            });
        }
        for i in 0..self.d {
            for j in 0..self.n {
                self.w_dec_t[j * self.d + i] = w[i * self.n + j];
            }
        }
        Ok(())
    }

    /// Largest deviation of any decoder column norm from 1.
    pub fn max_decoder_norm_error(&self) -> f64 {
        self.w_dec_t
            .chunks_exact(self.d)
            .map(|c| (c.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Real>(&self) -> KsaeParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        KsaeParams {
            d: self.d,
            n: self.n,
            k: self.k,
            w_enc: conv(&self.w_enc),
            w_dec_t: conv(&self.w_dec_t),
            b_pre: conv(&self.b_pre),
            b_enc: conv(&self.b_enc),
            seed: self.seed,
        }
    }
}

fn check_dims(d: usize, n: usize, k: usize) -> Result<(), ModelError> {
    if d == 0 || n == 0 {
        return Err(ModelError::InvalidDims(format!("d = {d}, n = {n}")));
    }
    if k == 0 || k > n {
        return Err(ModelError::InvalidK { k, n });
    }
    Ok(())
}

fn gaussian_unit_column(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > DEAD_COLUMN_NORM {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Gaussian unit-norm decoder, encoder tied to the decoder transpose,
/// `b_pre` = dataset mean when stats are given, `b_enc` = 0.
pub fn init_params<T: Real>(
    d: usize,
    n: usize,
    k: usize,
    seed: u64,
    stats: Option<&DatasetStats>,
) -> Result<KsaeParams<T>, ModelError> {
    let mut p = KsaeParams::<T>::zeros(d, n, k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..n {
        let col = gaussian_unit_column(&mut rng, d);
        for (dst, v) in p.atom_mut(j).iter_mut().zip(col) {
            *dst = T::from_f64(v);
        }
    }
    p.w_enc.copy_from_slice(&p.w_dec_t);
    if let Some(stats) = stats {
        if stats.dim() != d {
            return Err(ModelError::Dimension {
                what: "dataset stats",
                expected: d,
                got: stats.dim(),
            });
        }
        for (b, &m) in p.b_pre.iter_mut().zip(&stats.mean) {
            *b = T::from_f64(m);
        }
    }
    Ok(p)
}

/// Seed for re-initializing decoder column `col` at optimizer step `step`.
fn column_seed(seed: u64, step: u64, col: usize) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (col as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rescale every decoder column to unit norm. Columns whose norm is below
/// [`DEAD_COLUMN_NORM`] are redrawn from a generator keyed on
/// `(params.seed, step, column)`; their indices are returned.
pub fn renorm_decoder<T: Real>(params: &mut KsaeParams<T>, step: u64) -> Vec<usize> {
    let d = params.d;
    let seed = params.seed;
    let dead: Vec<Option<usize>> = params
        .w_dec_t
        .par_chunks_mut(d)
        .enumerate()
        .map(|(j, col)| {
            let norm = col.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            if norm.is_finite() && norm >= DEAD_COLUMN_NORM {
                let inv = 1.0 / norm;
                for v in col.iter_mut() {
                    *v = T::from_f64(v.as_f64() * inv);
                }
                None
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(column_seed(seed, step, j));
                for (dst, v) in col.iter_mut().zip(gaussian_unit_column(&mut rng, d)) {
                    *dst = T::from_f64(v);
                }
                Some(j)
            }
        })
        .collect();
    let dead: Vec<usize> = dead.into_iter().flatten().collect();
    for &j in &dead {
        log::warn!("decoder column {j} collapsed at step {step}; re-initialized");
    }
    dead
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn renorm_scales_column_to_unit_norm() {
        let mut p = KsaeParams::<f64>::zeros(2, 1, 1, 0).unwrap();
        p.w_dec_t.copy_from_slice(&[3.0, 4.0]);
        assert!(renorm_decoder(&mut p, 0).is_empty());
        assert!((p.w_dec_t[0] - 0.6).abs() < 1e-15);
        assert!((p.w_dec_t[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn unit_columns_unchanged() {
        let mut p = init_params::<f64>(7, 9, 2, 3, None).unwrap();
        let before = p.clone();
        renorm_decoder(&mut p, 1);
        for (a, b) in p.w_dec_t.iter().zip(&before.w_dec_t) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_matrix_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = KsaeParams::<f64>::zeros(5, 12, 3, 0).unwrap();
        p.w_dec_t.iter_mut().for_each(|v| *v = rng.random_range(-10.0..10.0));
        renorm_decoder(&mut p, 0);
        assert!(p.max_decoder_norm_error() < 1e-9);
    }

    #[test]
    fn dead_column_reseeded_deterministically() {
        let mut a = init_params::<f32>(4, 3, 1, 5, None).unwrap();
        a.atom_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let mut b = a.clone();
        assert_eq!(renorm_decoder(&mut a, 17), vec![1]);
        assert_eq!(renorm_decoder(&mut b, 17), vec![1]);
        assert_eq!(a, b);
        assert!(a.max_decoder_norm_error() < 1e-6);
    }

    #[test]
    fn init_is_deterministic_and_tied() {
        let a = init_params::<f32>(6, 10, 3, 42, None).unwrap();
        let b = init_params::<f32>(6, 10, 3, 42, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w_enc, a.w_dec_t);
        assert!(a.max_decoder_norm_error() < 1e-6);
        assert!(a.b_pre.iter().chain(&a.b_enc).all(|&v| v == 0.0));
        assert_ne!(a, init_params::<f32>(6, 10, 3, 43, None).unwrap());
    }

    #[test]
    fn dec_row_major_roundtrip() {
        let p = init_params::<f64>(3, 4, 2, 1, None).unwrap();
        let w = p.w_dec_row_major();
        assert_eq!(w[2 * 4 + 1], p.atom(1)[2]);
        let mut q = p.clone();
        q.w_dec_t.iter_mut().for_each(|v| *v = 0.0);
        q.set_w_dec_row_major(&w).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn bad_dims() {
        assert!(init_params::<f32>(0, 4, 1, 0, None).is_err());
        assert!(matches!(
            init_params::<f32>(2, 4, 5, 0, None),
            Err(ModelError::InvalidK { k: 5, n: 4 })
        ));
    }
}
