//! Reference implementations for tests. Written from the definitions with
//! plain loops; nothing here calls into the library's math.

#![allow(dead_code)]

use ksae::model::KsaeParams;
use ksae::store::{ActivationShard, ShardMeta, ShardRow};

/// Dense pre-activations `W_enc (x - b_pre) + b_enc`.
pub fn pre_activations(p: &KsaeParams<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.n];
    for j in 0..p.n {
        let mut acc = p.b_enc[j];
        for i in 0..p.d {
            acc += p.w_enc[j * p.d + i] * (x[i] - p.b_pre[i]);
        }
        out[j] = acc;
    }
    out
}

/// TopK support by full sort: largest first, lower index on ties, then
/// returned ascending.
pub fn support(pre: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pre.len()).collect();
    idx.sort_by(|&a, &b| pre[b].partial_cmp(&pre[a]).unwrap().then(a.cmp(&b)));
    let mut s = idx[..k].to_vec();
    s.sort();
    s
}

/// Batch-mean `|x - x_hat|^2 / d` with each sample's support fixed.
pub fn frozen_loss(p: &KsaeParams<f64>, batch: &[Vec<f64>], supports: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for (x, s) in batch.iter().zip(supports) {
        let pre = pre_activations(p, x);
        let mut sq = 0.0;
        for i in 0..p.d {
            let mut xh = p.b_pre[i];
            for &j in s {
                xh += p.w_dec_t[j * p.d + i] * pre[j];
            }
            sq += (x[i] - xh).powi(2);
        }
        total += sq / p.d as f64;
    }
    total / batch.len() as f64
}

/// Scalar bias-corrected Adam on `f(theta) = a/2 (theta - c)^2`.
pub fn adam_scalar(theta0: f64, a: f64, c: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = a * (th - c);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        th -= lr * mh / (vh.sqrt() + eps);
        out.push(th);
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (as rows), unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| a[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

/// Sample covariance (n - 1) of row points.
pub fn covariance(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let d = points[0].len();
    let mean: Vec<f64> = (0..d).map(|i| points.iter().map(|p| p[i]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

/// Mean over true atoms of max |cos| against learned atoms, double loop.
pub fn dictionary_score_loop(learned: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for t in truth {
        let tn = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = 0.0f64;
        for l in learned {
            let ln = l.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut dot = 0.0;
            for i in 0..t.len() {
                dot += t[i] * l[i];
            }
            best = best.max((dot / (tn * ln)).abs());
        }
        total += best;
    }
    total / truth.len() as f64
}

/// Population std of integer labels.
pub fn population_std(labels: &[i32]) -> f64 {
    let m = labels.len() as f64;
    let mean = labels.iter().map(|&l| l as f64).sum::<f64>() / m;
    (labels.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / m).sqrt()
}

/// sigma_label from raw rows: dense encodes, per-latent full sort, peak
/// ranking, population std, mean.
pub fn sigma_label_brute(p: &KsaeParams<f64>, rows: &[ShardRow], top_latents: usize, m: usize) -> (f64, usize) {
    let mut per_latent: Vec<Vec<(f64, usize, i32)>> = vec![Vec::new(); p.n];
    for (ingest, row) in rows.iter().enumerate() {
        let x: Vec<f64> = row.values.iter().map(|&v| v as f64).collect();
        let pre = pre_activations(p, &x);
        for j in support(&pre, p.k) {
            per_latent[j].push((pre[j], ingest, row.label));
        }
    }
    let mut eligible: Vec<(f64, usize, Vec<i32>)> = Vec::new();
    for (j, mut list) in per_latent.into_iter().enumerate() {
        list.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let labels: Vec<i32> = list.iter().filter(|e| e.2 >= 0).take(m).map(|e| e.2).collect();
        if labels.len() == m {
            eligible.push((list[0].0, j, labels));
        }
    }
    eligible.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    eligible.truncate(top_latents);
    let stds: Vec<f64> = eligible.iter().map(|e| population_std(&e.2)).collect();
    (stds.iter().sum::<f64>() / stds.len() as f64, stds.len())
}

pub fn pooled_shard(rows: Vec<(String, i32, Vec<f32>)>) -> ActivationShard {
    let d = rows.first().map_or(1, |r| r.2.len());
    let mut s = ActivationShard::new(ShardMeta::new(d));
    for (sample_id, label, values) in rows {
        s.push(ShardRow {
            sample_id,
            label,
            values,
        });
    }
    s
}
