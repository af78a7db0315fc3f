//! Synthetic sparse-dictionary data with a known generating dictionary.
//!
//! Rows are `x = D s + noise` where `D` has unit-norm atoms and `s` has
//! exactly `k_true` non-negative entries on a uniformly chosen support.
//! Each row is labeled with the atom carrying its largest coefficient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::format::{ActivationShard, PromptMode, ShardError, ShardMeta, ShardRow};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub d: usize,
    pub n_true: usize,
    pub k_true: usize,
    pub rows: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Nonzero coefficients are drawn uniformly from `[coef_low, coef_high)`.
    pub coef_low: f64,
    pub coef_high: f64,
}

impl SynthSpec {
    pub fn new(d: usize, n_true: usize, k_true: usize, rows: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            d,
            n_true,
            k_true,
            rows,
            noise_sigma,
            seed,
            coef_low: 0.5,
            coef_high: 1.5,
        }
    }

    pub fn validate(&self) -> Result<(), ShardError> {
        let fail = |m: &str| Err(ShardError::Synth(m.to_string()));
        if self.d == 0 || self.n_true == 0 {
            return fail("d and n_true must be positive");
        }
        if self.k_true == 0 || self.k_true > self.n_true {
            return fail("k_true must lie in [1, n_true]");
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be finite and non-negative");
        }
        if !(self.coef_low.is_finite() && self.coef_high.is_finite())
            || self.coef_low < 0.0
            || self.coef_high <= self.coef_low
        {
            return fail("coefficient range must satisfy 0 <= low < high");
        }
        Ok(())
    }
}

/// Ground-truth dictionary, one unit-norm atom per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub d: usize,
    pub atoms: Vec<Vec<f64>>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atoms as a shard (row `j` = atom `j`, label `j`), for storage next to data.
    pub fn to_shard(&self) -> ActivationShard {
        let mut meta = ShardMeta::new(self.d);
        meta.model_id = "synthetic".into();
        meta.layer_id = "dictionary".into();
        meta.dataset_id = "ground_truth".into();
        let mut shard = ActivationShard::new(meta);
        for (j, atom) in self.atoms.iter().enumerate() {
            shard.push(ShardRow {
                sample_id: format!("atom{j}"),
                label: j as i32,
                values: atom.iter().map(|&v| v as f32).collect(),
            });
        }
        shard
    }

    pub fn from_shard(shard: &ActivationShard) -> Self {
        Self {
            d: shard.meta.feature_dim,
            atoms: shard
                .rows
                .iter()
                .map(|r| r.values.iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub shard: ActivationShard,
    pub dictionary: Dictionary,
    /// Per row: `(atom index, coefficient)` sorted by atom index.
    pub codes: Vec<Vec<(usize, f64)>>,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData, ShardError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut atoms = Vec::with_capacity(spec.n_true);
    while atoms.len() < spec.n_true {
        let v: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            atoms.push(v.into_iter().map(|x| x / norm).collect::<Vec<f64>>());
        }
    }

    let mut meta = ShardMeta::new(spec.d);
    meta.model_id = "synthetic".into();
    meta.layer_id = "synthetic".into();
    meta.prompt_mode = PromptMode::Empty;
    meta.dataset_id = format!("synth-seed{}", spec.seed);
    meta.label_names = (0..spec.n_true).map(|j| format!("atom{j}")).collect();
    let mut shard = ActivationShard::new(meta);
    let mut codes = Vec::with_capacity(spec.rows);
    let mut pool: Vec<usize> = (0..spec.n_true).collect();
    let mut x = vec![0.0f64; spec.d];

    for i in 0..spec.rows {
        // partial Fisher-Yates over a fresh identity permutation
        for (slot, v) in pool.iter_mut().enumerate() {
            *v = slot;
        }
        for s in 0..spec.k_true {
            let pick = rng.random_range(s..spec.n_true);
            pool.swap(s, pick);
        }
        let mut code: Vec<(usize, f64)> = pool[..spec.k_true]
            .iter()
            .map(|&j| (j, rng.random_range(spec.coef_low..spec.coef_high)))
            .collect();
        code.sort_by_key(|&(j, _)| j);

        let mut label = code[0];
        for &(j, c) in &code[1..] {
            if c > label.1 {
                label = (j, c);
            }
        }

        x.iter_mut().for_each(|v| *v = 0.0);
        for &(j, c) in &code {
            for (xv, a) in x.iter_mut().zip(&atoms[j]) {
                *xv += c * a;
            }
        }
        if spec.noise_sigma > 0.0 {
            for xv in x.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *xv += spec.noise_sigma * e;
            }
        }
        shard.push(ShardRow {
            sample_id: format!("s{i}"),
            label: label.0 as i32,
            values: x.iter().map(|&v| v as f32).collect(),
        });
        codes.push(code);
    }

    Ok(SynthData {
        shard,
        dictionary: Dictionary {
            d: spec.d,
            atoms,
        },
        codes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_atom_rows_are_scaled_atoms() {
        let data = synth_generate(&SynthSpec::new(6, 5, 1, 40, 0.0, 3)).unwrap();
        for (row, code) in data.shard.rows.iter().zip(&data.codes) {
            let (j, c) = code[0];
            assert_eq!(row.label, j as i32);
            for (v, a) in row.values.iter().zip(&data.dictionary.atoms[j]) {
                assert!((*v as f64 - c * a).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn atoms_are_unit_norm_and_supports_exact() {
        let data = synth_generate(&SynthSpec::new(8, 12, 3, 100, 0.01, 1)).unwrap();
        for a in &data.dictionary.atoms {
            let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        for code in &data.codes {
            assert_eq!(code.len(), 3);
            assert!(code.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(code.iter().all(|&(_, c)| c >= 0.5 && c < 1.5));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec::new(4, 6, 2, 50, 0.1, 77);
        let a = synth_generate(&spec).unwrap();
        let b = synth_generate(&spec).unwrap();
        assert_eq!(a.shard, b.shard);
        let c = synth_generate(&SynthSpec { seed: 78, ..spec }).unwrap();
        assert_ne!(a.shard, c.shard);
    }

    #[test]
    fn rows_reconstruct_within_noise_bound() {
        let sigma = 0.01;
        let spec = SynthSpec::new(16, 20, 4, 300, sigma, 5);
        let data = synth_generate(&spec).unwrap();
        for (row, code) in data.shard.rows.iter().zip(&data.codes) {
            let mut resid = 0.0f64;
            for i in 0..spec.d {
                let clean: f64 = code.iter().map(|&(j, c)| c * data.dictionary.atoms[j][i]).sum();
                resid = resid.max((row.values[i] as f64 - clean).abs());
            }
            // 6 sigma plus f32 rounding
            assert!(resid < 6.0 * sigma + 1e-5, "residual {resid}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(synth_generate(&SynthSpec::new(4, 3, 4, 1, 0.0, 0)).is_err());
        assert!(synth_generate(&SynthSpec::new(0, 3, 1, 1, 0.0, 0)).is_err());
        assert!(synth_generate(&SynthSpec::new(4, 3, 1, 1, -1.0, 0)).is_err());
    }
}
