mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ksae::model::{
    adam_step, backward, decode, encode, forward, init_params, renorm_decoder, topk, AdamConfig, AdamState, KsaeParams,
    LossNorm,
};

fn random_params(d: usize, n: usize, k: usize, seed: u64) -> KsaeParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_params::<f64>(d, n, k, seed, None).unwrap();
    for v in p.w_enc.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for v in p.b_pre.iter_mut().chain(p.b_enc.iter_mut()) {
        *v = 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    p
}

fn random_batch(b: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..b).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_has_at_most_k_nonzeros(d in 1usize..12, n in 1usize..40, kf in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 1 + ((n - 1) as f64 * kf) as usize;
        let p = random_params(d, n, k, seed);
        let x = &random_batch(1, d, seed ^ 1)[0];
        let code = encode(&p, x).unwrap().code;
        prop_assert_eq!(code.nnz(), k);
        prop_assert!(code.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(code.to_dense(n).iter().filter(|v| **v != 0.0).count() <= k);
    }

    #[test]
    fn support_matches_sorting_oracle(d in 1usize..8, n in 1usize..30, kf in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 1 + ((n - 1) as f64 * kf) as usize;
        let p = random_params(d, n, k, seed);
        let x = &random_batch(1, d, seed ^ 2)[0];
        let pre = common::pre_activations(&p, x);
        prop_assert_eq!(encode(&p, x).unwrap().code.indices, common::support(&pre, k));
    }

    #[test]
    fn topk_on_ties_prefers_lower_index(n in 2usize..20, k in 1usize..20) {
        let k = k.min(n);
        let (_, s) = topk(&vec![1.0f64; n], k).unwrap();
        prop_assert_eq!(s, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn forward_loss_matches_oracle(d in 1usize..8, n in 1usize..20, seed in any::<u64>()) {
        let k = 1 + (seed as usize % n);
        let p = random_params(d, n, k, seed);
        let x = &random_batch(1, d, seed ^ 3)[0];
        let t = forward(&p, x, LossNorm::PerDimension).unwrap();
        let s = common::support(&common::pre_activations(&p, x), k);
        let want = common::frozen_loss(&p, &[x.clone()], &[s]);
        prop_assert!((t.loss - want).abs() <= 1e-12 * want.max(1.0));
        let xh = decode(&p, &t.code).unwrap();
        prop_assert_eq!(xh, t.reconstruction);
    }

    #[test]
    fn renorm_leaves_unit_columns(d in 1usize..10, n in 1usize..20, seed in any::<u64>(), scale in 1e-6f64..1e6) {
        let mut p = random_params(d, n, 1, seed);
        for v in p.w_dec_t.iter_mut() {
            *v *= scale;
        }
        renorm_decoder(&mut p, 1);
        prop_assert!(p.max_decoder_norm_error() < 1e-12);
    }
}

#[test]
fn backward_is_bitwise_independent_of_thread_count() {
    let p = random_params(24, 96, 6, 3);
    let batch = random_batch(200, 24, 4);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| backward(&p, &batch, LossNorm::PerDimension).unwrap())
    };
    let (r1, g1) = run(1);
    for threads in [2, 3, 5] {
        let (r, g) = run(threads);
        assert_eq!(r1.loss.to_bits(), r.loss.to_bits());
        for ((_, a), (_, b)) in g1.tensors().iter().zip(g.tensors().iter()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn zero_norm_decoder_column_is_reseeded_deterministically() {
    let mut a = init_params::<f64>(5, 6, 2, 9, None).unwrap();
    a.atom_mut(3).iter_mut().for_each(|v| *v = 0.0);
    let mut b = a.clone();
    assert_eq!(renorm_decoder(&mut a, 17), vec![3]);
    assert_eq!(renorm_decoder(&mut b, 17), vec![3]);
    assert_eq!(a, b);
    assert!(a.max_decoder_norm_error() < 1e-12);
}

#[test]
fn adam_descends_a_real_batch_loss() {
    let mut p = random_params(8, 32, 4, 21);
    let batch = random_batch(64, 8, 22);
    let mut st = AdamState::new(&p, AdamConfig::default());
    let first = backward(&p, &batch, LossNorm::PerDimension).unwrap().0.loss;
    for _ in 0..300 {
        let (_, g) = backward(&p, &batch, LossNorm::PerDimension).unwrap();
        adam_step(&mut p, &g, &mut st, 1e-2).unwrap();
    }
    let last = backward(&p, &batch, LossNorm::PerDimension).unwrap().0.loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(p.max_decoder_norm_error() < 1e-12);
}

#[test]
fn variance_normalized_loss_scales_per_dim_loss() {
    let p = random_params(6, 12, 3, 1);
    let batch = random_batch(10, 6, 2);
    let (a, ga) = backward(&p, &batch, LossNorm::PerDimension).unwrap();
    let (b, gb) = backward(&p, &batch, LossNorm::TotalVariance(3.0)).unwrap();
    assert!((b.loss - a.loss * 2.0).abs() < 1e-12);
    for ((_, x), (_, y)) in ga.tensors().iter().zip(gb.tensors().iter()) {
        assert!(x.iter().zip(y.iter()).all(|(u, v)| (u * 2.0 - v).abs() < 1e-12));
    }
}
