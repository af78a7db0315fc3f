//! Text manifests of top-activating samples, plus optional contact-sheet
//! folders.
//!
//! ```text
//! # ksae gallery manifest
//! label 0 Abyssinian
//! latent 17 4.25 312
//!   sample img_0042 0 4.25
//!   sample img_0007 3 3.5
//! ```
//!
//! `latent <id> <peak> [fire_count]` is followed by its samples, best first,
//! as indented `sample <id> <label_id> <activation>` lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{AnalysisError, LatentProfile, TopSample};

pub const MANIFEST_HEADER: &str = "# ksae gallery manifest";
pub const MANIFEST_FILE: &str = "manifest.txt";
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "webp"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub label_names: Vec<String>,
    pub profiles: Vec<LatentProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryOutcome {
    pub manifest: PathBuf,
    pub copied: usize,
    /// Sample ids with no matching file under the image root.
    pub missing: Vec<String>,
}

fn check_token(what: &str, s: &str) -> Result<(), AnalysisError> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(AnalysisError::Invalid(format!("{what} {s:?} is empty or contains whitespace")));
    }
    Ok(())
}

pub fn write_manifest(profiles: &[LatentProfile], label_names: &[String]) -> Result<String, AnalysisError> {
    let mut out = String::new();
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for (i, name) in label_names.iter().enumerate() {
        if name.contains(['\n', '\r']) {
            return Err(AnalysisError::Invalid(format!("label name {i} contains a line break")));
        }
        let _ = writeln!(out, "label {i} {name}");
    }
    for p in profiles {
        let _ = writeln!(out, "latent {} {} {}", p.latent_id, p.peak_activation, p.fire_count);
        for s in &p.top_samples {
            check_token("sample id", &s.sample_id)?;
            let _ = writeln!(out, "  sample {} {} {}", s.sample_id, s.label, s.activation);
        }
    }
    Ok(out)
}

pub fn parse_manifest(text: &str) -> Result<Manifest, AnalysisError> {
    let mut m = Manifest::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_end() == MANIFEST_HEADER => {}
        _ => {
            return Err(AnalysisError::Manifest {
                line: 1,
                reason: format!("expected {MANIFEST_HEADER:?}"),
            })
        }
    }
    for (line, raw) in lines {
        let bad = |reason: String| AnalysisError::Manifest { line, reason };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let num = |tok: Option<&str>, what: &str| -> Result<f64, AnalysisError> {
            let t = tok.ok_or_else(|| bad(format!("missing {what}")))?;
            t.parse().map_err(|_| bad(format!("bad {what} {t:?}")))
        };
        let int = |tok: Option<&str>, what: &str| -> Result<i64, AnalysisError> {
            let t = tok.ok_or_else(|| bad(format!("missing {what}")))?;
            t.parse().map_err(|_| bad(format!("bad {what} {t:?}")))
        };
        let mut toks = trimmed.split_whitespace();
        match toks.next() {
            Some("label") => {
                let rest = trimmed["label".len()..].trim_start();
                let (id, name) = rest.split_once(' ').unwrap_or((rest, ""));
                if id.parse::<usize>().ok() != Some(m.label_names.len()) {
                    return Err(bad(format!("label ids must count up from 0, got {id:?}")));
                }
                m.label_names.push(name.to_string());
            }
            Some("latent") => {
                let id = int(toks.next(), "latent id")?;
                let peak = num(toks.next(), "peak")?;
                let fire_count = match toks.next() {
                    Some(t) => t.parse().map_err(|_| bad(format!("bad fire count {t:?}")))?,
                    None => 0,
                };
                m.profiles.push(LatentProfile {
                    latent_id: usize::try_from(id).map_err(|_| bad(format!("negative latent id {id}")))?,
                    peak_activation: peak,
                    top_samples: Vec::new(),
                    fire_count,
                });
            }
            Some("sample") => {
                if raw.len() == raw.trim_start().len() {
                    return Err(bad("sample lines must be indented".into()));
                }
                let sample_id = toks.next().ok_or_else(|| bad("missing sample id".into()))?.to_string();
                let label = int(toks.next(), "label id")?;
                let activation = num(toks.next(), "activation")?;
                let profile = m
                    .profiles
                    .last_mut()
                    .ok_or_else(|| bad("sample before any latent".into()))?;
                profile.top_samples.push(TopSample {
                    sample_id,
                    label: i32::try_from(label).map_err(|_| bad(format!("label {label} out of range")))?,
                    activation,
                });
                continue;
            }
            Some(other) => return Err(bad(format!("unknown record {other:?}"))),
            None => unreachable!("blank lines skipped"),
        }
        if toks.next().is_some() && !trimmed.starts_with("label") {
            return Err(bad("trailing fields".into()));
        }
    }
    Ok(m)
}

fn find_image(root: &Path, sample_id: &str) -> Option<PathBuf> {
    let direct = root.join(sample_id);
    if direct.is_file() {
        return Some(direct);
    }
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| root.join(format!("{sample_id}.{ext}")))
        .find(|p| p.is_file())
}

/// Write `out_dir/manifest.txt`. With an image root, also copy each
/// referenced `<root>/<sample_id>[.png|.jpg|.jpeg|.webp]` to
/// `out_dir/latent_<id>/<rank>_<file name>`.
pub fn gallery_manifest(
    profiles: &[LatentProfile],
    label_names: &[String],
    out_dir: &Path,
    image_root: Option<&Path>,
) -> Result<GalleryOutcome, AnalysisError> {
    let text = write_manifest(profiles, label_names)?;
    std::fs::create_dir_all(out_dir)?;
    let manifest = out_dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, text)?;
    let mut copied = 0;
    let mut missing = Vec::new();
    if let Some(root) = image_root {
        for p in profiles {
            let folder = out_dir.join(format!("latent_{}", p.latent_id));
            for (rank, s) in p.top_samples.iter().enumerate() {
                let Some(src) = find_image(root, &s.sample_id) else {
                    missing.push(s.sample_id.clone());
                    continue;
                };
                std::fs::create_dir_all(&folder)?;
                let name = src.file_name().expect("is_file implies a file name").to_string_lossy();
                std::fs::copy(&src, folder.join(format!("{rank:02}_{name}")))?;
                copied += 1;
            }
        }
        if !missing.is_empty() {
            log::warn!("{} referenced images not found under {}", missing.len(), root.display());
        }
    }
    Ok(GalleryOutcome {
        manifest,
        copied,
        missing,
    })
}
