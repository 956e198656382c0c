//! Loading session corpora from disk: one directory per session holding
//! `fixations.csv`, `transcript.json`, `meta.json` and optionally
//! `ellipses.csv` and `features.csv`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gazeloc::ingest::{load_ellipses, load_session, EllipseAnnotation, Session};
use gazeloc::Heatmap;

pub struct CorpusSession {
    pub dir: PathBuf,
    pub session: Session,
    pub ellipses: Vec<EllipseAnnotation>,
    pub features: Option<Heatmap>,
}

/// Session directories under `root`, sorted by name for deterministic
/// processing order.
pub fn session_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root)
        .map_err(|e| gazeloc::Error::io(root, e))
        .with_context(|| format!("reading session directory {}", root.display()))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no session directories under {}", root.display());
    }
    Ok(dirs)
}

pub fn load_corpus(root: &Path, with_features: bool) -> Result<Vec<CorpusSession>> {
    let mut sessions = Vec::new();
    for dir in session_dirs(root)? {
        let session = load_session(
            &dir.join("fixations.csv"),
            &dir.join("transcript.json"),
            &dir.join("meta.json"),
        )?;
        let ellipse_path = dir.join("ellipses.csv");
        let ellipses = if ellipse_path.is_file() {
            load_ellipses(&ellipse_path)?
        } else {
            Vec::new()
        };
        let feature_path = dir.join("features.csv");
        let features = if with_features && feature_path.is_file() {
            Some(Heatmap::read_csv(&feature_path)?)
        } else {
            None
        };
        sessions.push(CorpusSession {
            dir,
            session,
            ellipses,
            features,
        });
    }
    Ok(sessions)
}

pub fn load_rules(path: &Option<PathBuf>) -> Result<gazeloc::RuleSet> {
    match path {
        Some(path) => Ok(gazeloc::RuleSet::load(path)?),
        None => Ok(gazeloc::labeler::default_rules()),
    }
}
