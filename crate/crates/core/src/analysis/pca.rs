//! Principal components of spatial feature maps, for false-color previews.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::AnalysisError;
use crate::store::{ShardError, RowSource};

const MIN_POINTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit rows, ordered by explained variance; the largest-magnitude
    /// entry of each row is positive.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues (n - 1 normalization), non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the covariance.
    pub total_variance: f64,
    /// Fewer components than requested had positive variance.
    pub rank_deficient: bool,
    pub points: u64,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

/// Two passes over the same point stream: mean, then covariance.
fn fit<F>(d: usize, n_components: usize, mut visit: F) -> Result<Pca, AnalysisError>
where
    F: FnMut(&mut dyn FnMut(&[f64])) -> Result<(), AnalysisError>,
{
    if d == 0 || n_components == 0 {
        return Err(AnalysisError::Invalid("PCA needs d > 0 and n_components > 0".into()));
    }
    let mut count = 0u64;
    let mut sum = vec![0.0; d];
    visit(&mut |x| {
        count += 1;
        sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
    })?;
    if (count as usize) < MIN_POINTS {
        return Err(AnalysisError::TooFewPoints {
            needed: MIN_POINTS,
            got: count as usize,
        });
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();

    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    visit(&mut |x| {
        centered.iter_mut().zip(x).zip(&mean).for_each(|((c, v), m)| *c = v - m);
        for i in 0..d {
            let ci = centered[i];
            let row = &mut cov[i * d..(i + 1) * d];
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    })?;
    let denom = (count - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / denom;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[i * d + i]).sum();

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * d as f64 * f64::EPSILON * 16.0;

    let mut components = Vec::new();
    let mut explained_variance = Vec::new();
    for &idx in order.iter().take(n_components) {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > tol) {
            break;
        }
        let mut c: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.iter_mut().for_each(|v| *v /= norm);
        let pivot = c
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > c[best].abs() { i } else { best });
        if c[pivot] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained_variance.push(lambda);
    }
    Ok(Pca {
        mean,
        rank_deficient: components.len() < n_components,
        components,
        explained_variance,
        total_variance,
        points: count,
    })
}

/// PCA of a point set, one point per slice.
pub fn pca<X: AsRef<[f64]>>(points: &[X], n_components: usize) -> Result<Pca, AnalysisError> {
    let d = points.first().map_or(0, |p| p.as_ref().len());
    for p in points {
        if p.as_ref().len() != d {
            return Err(AnalysisError::Dimension {
                expected: d,
                got: p.as_ref().len(),
            });
        }
    }
    if points.len() < MIN_POINTS {
        return Err(AnalysisError::TooFewPoints {
            needed: MIN_POINTS,
            got: points.len(),
        });
    }
    fit(d, n_components, |f| {
        points.iter().for_each(|p| f(p.as_ref()));
        Ok(())
    })
}

/// One input's projection, normalized to [0, 1] per component.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub sample_id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major `H x W x channels`.
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaMap {
    pub pca: Pca,
    pub maps: Vec<FeatureMap>,
    /// Per-component `(min, max)` of the raw projections over all maps.
    pub ranges: Vec<(f64, f64)>,
}

fn spatial_dims(data: &RowSource) -> Result<(usize, usize, usize), AnalysisError> {
    let metas = data.metas()?;
    let first = metas
        .first()
        .ok_or_else(|| AnalysisError::Shard(ShardError::Meta("no shards given".into())))?;
    let (h, w) = first.spatial_shape.ok_or(ShardError::MissingSpatialShape)?;
    for m in &metas {
        if m.spatial_shape != Some((h, w)) || m.feature_dim != first.feature_dim {
            return Err(AnalysisError::Invalid(format!(
                "shards disagree on (d, H, W): ({}, {h}, {w}) vs ({}, {:?})",
                first.feature_dim, m.feature_dim, m.spatial_shape
            )));
        }
    }
    Ok((first.feature_dim, h, w))
}

/// Every spatial position of every row is a `d`-vector; fit PCA over all of
/// them and project each row to an `H x W x n_components` map. Each
/// component is min-max normalized over the whole batch.
pub fn pca_feature_map(data: &RowSource, n_components: usize) -> Result<PcaMap, AnalysisError> {
    let (d, h, w) = spatial_dims(data)?;
    let positions = h * w;
    let for_each_point = |f: &mut dyn FnMut(&str, usize, &[f64])| -> Result<(), AnalysisError> {
        let mut point = vec![0.0; d];
        data.visit_raw(|_, row| {
            for p in 0..positions {
                for (c, v) in point.iter_mut().enumerate() {
                    *v = row.values[c * positions + p] as f64;
                }
                f(&row.sample_id, p, &point);
            }
            Ok::<(), AnalysisError>(())
        })
    };

    let pca = fit(d, n_components, |f| for_each_point(&mut |_, _, x| f(x)))?;
    let channels = pca.components.len();
    let mut maps: Vec<FeatureMap> = Vec::new();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); channels];
    for_each_point(&mut |id, p, x| {
        if p == 0 {
            maps.push(FeatureMap {
                sample_id: id.to_string(),
                height: h,
                width: w,
                channels,
                data: Vec::with_capacity(positions * channels),
            });
        }
        let proj = pca.project(x);
        for (r, v) in ranges.iter_mut().zip(&proj) {
            r.0 = r.0.min(*v);
            r.1 = r.1.max(*v);
        }
        maps.last_mut().expect("pushed at p == 0").data.extend(proj);
    })?;
    for map in &mut maps {
        for px in map.data.chunks_mut(channels.max(1)) {
            for (v, &(lo, hi)) in px.iter_mut().zip(&ranges) {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
    }
    Ok(PcaMap { pca, maps, ranges })
}

fn rgb(map: &FeatureMap, y: usize, x: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(map.pixel(y, x)) {
        *o = *v;
    }
    out
}

/// Color portable float map (`PF`, little-endian, bottom row first).
/// Missing components are written as 0.
pub fn write_pfm(path: &Path, map: &FeatureMap) -> Result<(), AnalysisError> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "PF\n{} {}\n-1.0\n", map.width, map.height)?;
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            for v in rgb(map, y, x) {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// 8-bit RGB preview.
pub fn write_preview_png(path: &Path, map: &FeatureMap) -> Result<(), AnalysisError> {
    let img = image::RgbImage::from_fn(map.width as u32, map.height as u32, |x, y| {
        let c = rgb(map, y as usize, x as usize);
        image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
