use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{CaseSpec, Exclusion};

pub const SPEC_FILE: &str = "spec.md";
pub const TB_FILE: &str = "tb.v";
pub const REF_FILE: &str = "ref.v";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read suite {path}: {source}")]
    Suite {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("case {case_id}: {reason}")]
    Case { case_id: String, reason: String },
}

/// Per-case metadata. Exclusions are curated by hand, never inferred.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub module_name: String,
    pub origin: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub exclude: Option<Exclusion>,
}

/// Loads every `<root>/<case_id>/` directory, sorted by case id. Excluded
/// cases are returned with their reason; use [`runnable`] to drop them.
pub fn load_cases(root: &Path) -> Result<Vec<CaseSpec>, LoadError> {
    let suite_err = |source| LoadError::Suite {
        path: root.to_path_buf(),
        source,
    };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(suite_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter(|p| {
            !p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_case(d)).collect()
}

/// Loads one case directory; the directory name is the case id.
pub fn load_case(dir: &Path) -> Result<CaseSpec, LoadError> {
    let case_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let fail = |reason: String| LoadError::Case {
        case_id: case_id.clone(),
        reason,
    };
    let read = |name: &str| {
        std::fs::read_to_string(dir.join(name))
            .map_err(|e| fail(format!("cannot read {name}: {e}")))
    };
    let manifest: Manifest = toml::from_str(&read(MANIFEST_FILE)?)
        .map_err(|e| fail(format!("invalid {MANIFEST_FILE}: {e}")))?;
    let spec_text = read(SPEC_FILE)?;
    let testbench_src = read(TB_FILE)?;
    let reference_src = if dir.join(REF_FILE).exists() {
        Some(read(REF_FILE)?)
    } else {
        None
    };
    if spec_text.trim().is_empty() {
        return Err(fail(format!("{SPEC_FILE} is empty")));
    }
    if testbench_src.trim().is_empty() {
        return Err(fail(format!("{TB_FILE} is empty")));
    }
    if manifest.module_name.trim().is_empty() {
        return Err(fail("module_name is empty".into()));
    }
    if let Some(x) = &manifest.exclude {
        if x.reason.trim().is_empty() {
            return Err(fail("exclusion needs a reason".into()));
        }
    }
    Ok(CaseSpec {
        case_id,
        spec_text,
        testbench_src,
        reference_src,
        module_name: manifest.module_name,
        origin: manifest.origin,
        excluded: manifest.exclude,
        seed: manifest.seed,
    })
}

pub fn runnable(cases: &[CaseSpec]) -> Vec<CaseSpec> {
    cases.iter().filter(|c| !c.is_excluded()).cloned().collect()
}
