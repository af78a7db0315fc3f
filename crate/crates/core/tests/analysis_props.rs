mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ksae::analysis::{dictionary_score, pca, sigma_label, top_activating, LatentProfile, PurityConfig};
use ksae::model::{init_params, KsaeParams};
use ksae::store::{ActivationShard, RowSource, ShardRow};

fn random_rows(n: usize, d: usize, classes: i32, seed: u64) -> Vec<(String, i32, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f32> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
            (format!("s{i}"), rng.random_range(0..classes), v)
        })
        .collect()
}

fn split(shard: &ActivationShard, cuts: &[usize]) -> Vec<ActivationShard> {
    let mut out = Vec::new();
    let mut start = 0;
    for &c in cuts.iter().chain(std::iter::once(&shard.len())) {
        let mut s = ActivationShard::new(shard.meta.clone());
        for r in &shard.rows[start..c] {
            s.push(r.clone());
        }
        out.push(s);
        start = c;
    }
    out
}

/// Materialize every activation and sort per latent.
fn full_sort_profiles(p: &KsaeParams<f64>, rows: &[ShardRow], m: usize) -> Vec<Vec<(String, f64)>> {
    let mut per: Vec<Vec<(f64, usize, String)>> = vec![Vec::new(); p.n];
    for (i, r) in rows.iter().enumerate() {
        let x: Vec<f64> = r.values.iter().map(|&v| v as f64).collect();
        let pre = common::pre_activations(p, &x);
        for j in common::support(&pre, p.k) {
            per[j].push((pre[j], i, r.sample_id.clone()));
        }
    }
    per.into_iter()
        .map(|mut l| {
            l.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            l.into_iter().take(m).map(|(a, _, id)| (id, a)).collect()
        })
        .collect()
}

#[test]
fn top_activating_matches_full_sort() {
    let shard = common::pooled_shard(random_rows(50, 8, 5, 1));
    let p = init_params::<f64>(8, 16, 3, 2, None).unwrap();
    let got = top_activating(&p, &RowSource::memory(vec![shard.clone()]), 5).unwrap();
    let want = full_sort_profiles(&p, &shard.rows, 5);
    for (g, w) in got.iter().zip(&want) {
        let ids: Vec<&str> = g.top_samples.iter().map(|s| s.sample_id.as_str()).collect();
        let want_ids: Vec<&str> = w.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, want_ids, "latent {}", g.latent_id);
        for (s, (_, a)) in g.top_samples.iter().zip(w) {
            assert!((s.activation - a).abs() < 1e-12);
        }
    }
}

#[test]
fn m_larger_than_rows_pads_to_row_count() {
    // k = n: every latent is on every sample's support
    let shard = common::pooled_shard(random_rows(7, 4, 3, 3));
    let p = init_params::<f32>(4, 6, 6, 4, None).unwrap();
    let got = top_activating(&p, &RowSource::memory(vec![shard]), 20).unwrap();
    assert!(got.iter().all(|l| l.top_samples.len() == 7 && l.fire_count == 7));
}

#[test]
fn top_activating_large_stream_spans_chunks() {
    let shard = common::pooled_shard(random_rows(2500, 6, 4, 9));
    let p = init_params::<f64>(6, 12, 2, 9, None).unwrap();
    let got = top_activating(&p, &RowSource::memory(vec![shard.clone()]), 7).unwrap();
    let want = full_sort_profiles(&p, &shard.rows, 7);
    for (g, w) in got.iter().zip(&want) {
        let ids: Vec<&str> = g.top_samples.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(ids, w.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>());
    }
}

fn profiles_for(p: &KsaeParams<f32>, shards: Vec<ActivationShard>, m: usize) -> Vec<LatentProfile> {
    top_activating(p, &RowSource::memory(shards), m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn profiles_invariant_to_shard_split(seed in 0u64..1000, a in 0usize..40, b in 0usize..40) {
        let shard = common::pooled_shard(random_rows(40, 5, 4, seed));
        let p = init_params::<f32>(5, 10, 2, seed, None).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let whole = profiles_for(&p, vec![shard.clone()], 4);
        let parts = profiles_for(&p, split(&shard, &[lo, hi]), 4);
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn sigma_label_invariant_to_row_order_and_partition(seed in 0u64..1000, cut in 1usize..60) {
        let shard = common::pooled_shard(random_rows(60, 5, 6, seed));
        let p = init_params::<f32>(5, 10, 2, seed, None).unwrap();
        let cfg = PurityConfig { m: 3, ..Default::default() };
        let base = sigma_label(&profiles_for(&p, vec![shard.clone()], 3), &cfg);
        let mut reversed = shard.clone();
        reversed.rows.reverse();
        let rev = sigma_label(&profiles_for(&p, vec![reversed], 3), &cfg);
        let parts = sigma_label(&profiles_for(&p, split(&shard, &[cut]), 3), &cfg);
        match (base, rev, parts) {
            (Ok(x), Ok(y), Ok(z)) => {
                prop_assert_eq!(x.sigma_label, y.sigma_label);
                prop_assert_eq!(x.sigma_label, z.sigma_label);
            }
            (Err(_), Err(_), Err(_)) => {}
            other => prop_assert!(false, "inconsistent results {:?}", other),
        }
    }

    #[test]
    fn sigma_label_zero_iff_all_pure(labels in proptest::collection::vec(proptest::collection::vec(0i32..3, 4), 1..6)) {
        let profiles: Vec<LatentProfile> = labels
            .iter()
            .enumerate()
            .map(|(j, ls)| LatentProfile {
                latent_id: j,
                peak_activation: 1.0 + j as f64,
                top_samples: ls
                    .iter()
                    .enumerate()
                    .map(|(i, &label)| ksae::analysis::TopSample {
                        sample_id: format!("{j}_{i}"),
                        activation: 1.0,
                        label,
                    })
                    .collect(),
                fire_count: 4,
            })
            .collect();
        let r = sigma_label(&profiles, &PurityConfig { m: 4, ..Default::default() }).unwrap();
        let all_pure = labels.iter().all(|ls| ls.iter().all(|&l| l == ls[0]));
        prop_assert_eq!(r.sigma_label == 0.0, all_pure);
        let want: f64 = labels.iter().rev().map(|ls| common::population_std(ls)).sum::<f64>() / labels.len() as f64;
        prop_assert!((r.sigma_label - want).abs() < 1e-12);
    }

    #[test]
    fn pca_components_orthonormal_and_sorted(seed in 0u64..1000, n in 5usize..40, d in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|i| rng.sample::<f64, _>(StandardNormal) * (i + 1) as f64).collect())
            .collect();
        let p = pca(&pts, 3).unwrap();
        for (a, ca) in p.components.iter().enumerate() {
            for (b, cb) in p.components.iter().enumerate() {
                let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-8);
            }
        }
        prop_assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));

        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.rotate_left(seed as usize % n);
        let q = pca(&shuffled, 3).unwrap();
        prop_assert_eq!(p.components.len(), q.components.len());
        for x in &pts {
            for (u, v) in p.project(x).iter().zip(q.project(x)) {
                prop_assert!((u.abs() - v.abs()).abs() < 1e-6 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn dictionary_score_invariant_to_permutation_and_sign(seed in 0u64..1000, flips in proptest::collection::vec(any::<bool>(), 6)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let atoms = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect()
        };
        let learned = atoms(&mut rng, 6);
        let truth = atoms(&mut rng, 4);
        let base = dictionary_score(&learned, &truth).unwrap();
        let mut l2 = learned.clone();
        l2.rotate_left((seed % 6) as usize);
        for (a, &f) in l2.iter_mut().zip(&flips) {
            if f {
                a.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let mut t2 = truth.clone();
        t2.reverse();
        t2[0].iter_mut().for_each(|v| *v = -*v);
        prop_assert!((dictionary_score(&l2, &t2).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }
}

#[test]
fn dictionary_score_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let learned: Vec<Vec<f64>> = (0..40).map(|_| unit(&mut rng)).collect();
    let truth: Vec<Vec<f64>> = (0..25).map(|_| unit(&mut rng)).collect();
    let got = dictionary_score(&learned, &truth).unwrap();
    assert!((got - common::dictionary_score_loop(&learned, &truth)).abs() < 1e-10);
}

#[test]
fn isotropic_cloud_has_balanced_variances() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let pts: Vec<Vec<f64>> = (0..10_000).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let p = pca(&pts, 3).unwrap();
    let v = &p.explained_variance;
    assert_eq!(v.len(), 3);
    assert!(v[0] / v[2] < 1.5, "{v:?}");
}

#[test]
fn pca_matches_jacobi_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts: Vec<Vec<f64>> = (0..30)
        .map(|_| (0..5).map(|i| rng.sample::<f64, _>(StandardNormal) * (5 - i) as f64).collect())
        .collect();
    let p = pca(&pts, 3).unwrap();
    let (vals, vecs) = common::jacobi_eigen(&common::covariance(&pts));
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    for c in 0..3 {
        let o = order[c];
        assert!((p.explained_variance[c] - vals[o]).abs() < 1e-8);
        let dot: f64 = p.components[c].iter().zip(&vecs[o]).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-8);
    }
}
