//! Recovery score of a learned dictionary against a known one.

use super::AnalysisError;
use crate::model::KsaeParams;
use crate::real::Real;
use crate::store::Dictionary;

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// Mean over true atoms of the best `|cos|` against any learned atom.
/// Atoms are normalized before comparison; zero atoms are an error.
pub fn dictionary_score<A: AsRef<[f64]>, B: AsRef<[f64]>>(learned: &[A], truth: &[B]) -> Result<f64, AnalysisError> {
    if learned.is_empty() || truth.is_empty() {
        return Err(AnalysisError::Invalid("dictionary_score needs non-empty dictionaries".into()));
    }
    let d = truth[0].as_ref().len();
    let normalize = |atoms: &[&[f64]]| -> Result<Vec<Vec<f64>>, AnalysisError> {
        atoms
            .iter()
            .map(|a| {
                if a.len() != d {
                    return Err(AnalysisError::Dimension { expected: d, got: a.len() });
                }
                unit(a).ok_or_else(|| AnalysisError::Invalid("zero or non-finite atom".into()))
            })
            .collect()
    };
    let learned = normalize(&learned.iter().map(AsRef::as_ref).collect::<Vec<_>>())?;
    let truth = normalize(&truth.iter().map(AsRef::as_ref).collect::<Vec<_>>())?;
    let total: f64 = truth
        .iter()
        .map(|t| {
            learned
                .iter()
                .map(|l| t.iter().zip(l).map(|(a, b)| a * b).sum::<f64>().abs())
                .fold(0.0, f64::max)
        })
        .sum();
    Ok((total / truth.len() as f64).min(1.0))
}

/// [`dictionary_score`] with the decoder atoms of `params`.
pub fn dictionary_score_params<T: Real>(params: &KsaeParams<T>, truth: &Dictionary) -> Result<f64, AnalysisError> {
    let learned: Vec<Vec<f64>> = (0..params.n)
        .map(|j| params.atom(j).iter().map(|v| v.as_f64()).collect())
        .collect();
    dictionary_score(&learned, &truth.atoms)
}
