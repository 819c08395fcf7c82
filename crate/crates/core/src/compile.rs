//! Chisel -> FIRRTL -> Verilog compilation through a pinned scaffold project.
//!
//! The scaffold is a directory holding a `scaffold.toml` contract:
//!
//! ```toml
//! module_slot = "src/main/scala/Candidate.scala"
//! entry_command = ["sbt", "--batch", "run {top}"]
//! output_path = "generated/{top}.v"
//!
//! [pinned_versions]
//! chisel = "6.5.0"
//! scala = "2.13.14"
//! ```
//!
//! Every compile copies the scaffold into a fresh workspace, installs the
//! candidate at `module_slot` and runs `entry_command` there. `{top}` is
//! replaced by the case's module name, which is also exported as
//! `CHISEL_TOP`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::diagnostics::parse_diagnostics;
use crate::domain::{Candidate, CaseSpec, ErrorEntry, ErrorKind};
use crate::process::{find_program, run_with_deadline};

pub const CONTRACT_FILE: &str = "scaffold.toml";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("scaffold {0} does not exist or has no {CONTRACT_FILE}")]
    MissingScaffold(PathBuf),
    #[error("invalid scaffold contract: {0}")]
    BadContract(String),
    #[error("scaffold does not pin any toolchain versions")]
    Unpinned,
    #[error("scaffold pins {name}={found}, expected {expected}")]
    VersionMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("toolchain program {0:?} not found")]
    ToolchainMissing(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldContract {
    pub module_slot: PathBuf,
    pub entry_command: Vec<String>,
    pub output_path: String,
    pub pinned_versions: BTreeMap<String, String>,
}

impl ScaffoldContract {
    pub fn load(scaffold: &Path) -> Result<Self, ToolError> {
        let path = scaffold.join(CONTRACT_FILE);
        if !path.is_file() {
            return Err(ToolError::MissingScaffold(scaffold.to_path_buf()));
        }
        let text = fs::read_to_string(&path)?;
        let contract: ScaffoldContract =
            toml::from_str(&text).map_err(|e| ToolError::BadContract(e.to_string()))?;
        if contract.entry_command.is_empty() {
            return Err(ToolError::BadContract("entry_command is empty".into()));
        }
        if contract.module_slot.is_absolute()
            || contract
                .module_slot
                .components()
                .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Err(ToolError::BadContract(
                "module_slot must be a relative path inside the scaffold".into(),
            ));
        }
        Ok(contract)
    }

    /// Refuses scaffolds that pin nothing or pin different versions.
    pub fn check_pins(&self, expected: &BTreeMap<String, String>) -> Result<(), ToolError> {
        if self.pinned_versions.is_empty() {
            return Err(ToolError::Unpinned);
        }
        for (name, want) in expected {
            match self.pinned_versions.get(name) {
                Some(found) if found == want => {}
                found => {
                    return Err(ToolError::VersionMismatch {
                        name: name.clone(),
                        expected: want.clone(),
                        found: found.cloned().unwrap_or_else(|| "<unpinned>".into()),
                    })
                }
            }
        }
        Ok(())
    }

    fn output_for(&self, top: &str) -> PathBuf {
        PathBuf::from(self.output_path.replace("{top}", top))
    }

    fn command_for(&self, top: &str) -> Vec<String> {
        self.entry_command
            .iter()
            .map(|a| a.replace("{top}", top))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompileStatus {
    Ok,
    Failed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileResult {
    pub status: CompileStatus,
    pub verilog_src: Option<String>,
    pub raw_log: String,
    pub entries: Vec<ErrorEntry>,
    pub wall_time_s: f64,
    /// The log had no recognizable diagnostic; `entries` holds a synthesized one.
    #[serde(default)]
    pub unparsed: bool,
}

impl CompileResult {
    pub fn ok(verilog: String, raw_log: String, wall_time_s: f64) -> Self {
        CompileResult {
            status: CompileStatus::Ok,
            verilog_src: Some(verilog),
            raw_log,
            entries: Vec::new(),
            wall_time_s,
            unparsed: false,
        }
    }

    /// Failed result whose entries come from `raw_log`.
    pub fn failed(raw_log: String, catalog: &Catalog, wall_time_s: f64) -> Self {
        let mut entries = parse_diagnostics(&raw_log, catalog);
        let unparsed = entries.is_empty();
        if unparsed {
            entries.push(ErrorEntry::new(
                ErrorKind::Syntax,
                None,
                "compilation failed without a recognizable diagnostic",
                None,
                None,
            ));
        }
        CompileResult {
            status: CompileStatus::Failed,
            verilog_src: None,
            raw_log,
            entries,
            wall_time_s,
            unparsed,
        }
    }

    pub fn timeout(raw_log: String, wall_time_s: f64) -> Self {
        CompileResult {
            status: CompileStatus::Timeout,
            verilog_src: None,
            raw_log,
            entries: Vec::new(),
            wall_time_s,
            unparsed: false,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CompileStatus::Ok
    }
}

/// Anything that can turn a candidate into Verilog.
pub trait Compiler: Send + Sync {
    fn compile(
        &self,
        candidate: &Candidate,
        case: &CaseSpec,
        timeout: Duration,
    ) -> Result<CompileResult, ToolError>;
}

fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dst)?;
    for entry in fs::read_dir(src)? {
        let entry = entry?;
        let ty = entry.file_type()?;
        let target = dst.join(entry.file_name());
        if ty.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else if ty.is_file() {
            fs::copy(entry.path(), &target)?;
        } else if ty.is_symlink() {
            let link = fs::read_link(entry.path())?;
            std::os::unix::fs::symlink(link, &target)?;
        }
    }
    Ok(())
}

/// Copies the scaffold into a fresh directory under `work_root` and installs
/// the candidate source at the module slot.
pub fn prepare_workspace(
    candidate: &Candidate,
    scaffold: &Path,
    contract: &ScaffoldContract,
    work_root: &Path,
) -> Result<TempDir, ToolError> {
    if !scaffold.is_dir() {
        return Err(ToolError::MissingScaffold(scaffold.to_path_buf()));
    }
    fs::create_dir_all(work_root)?;
    let ws = tempfile::Builder::new()
        .prefix("compile-")
        .tempdir_in(work_root)?;
    copy_tree(scaffold, ws.path())?;
    let slot = ws.path().join(&contract.module_slot);
    if let Some(parent) = slot.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&slot, candidate.chisel_src.as_bytes())?;
    Ok(ws)
}

/// Runs the scaffold entrypoint inside a prepared workspace.
pub fn compile_workspace(
    workspace: &Path,
    contract: &ScaffoldContract,
    top: &str,
    timeout: Duration,
    catalog: &Catalog,
) -> Result<CompileResult, ToolError> {
    let argv = contract.command_for(top);
    let env = vec![("CHISEL_TOP".to_string(), top.to_string())];
    let out = run_with_deadline(&argv, workspace, &env, timeout)?;
    let wall = out.wall_time.as_secs_f64();
    let log = out.combined();
    if out.timed_out {
        return Ok(CompileResult::timeout(log, wall));
    }
    if out.exit_code == Some(0) {
        let artifact = workspace.join(contract.output_for(top));
        match fs::read_to_string(&artifact) {
            Ok(v) if !v.trim().is_empty() => return Ok(CompileResult::ok(v, log, wall)),
            _ => {
                let mut result = CompileResult::failed(log, catalog, wall);
                result.entries = vec![ErrorEntry::new(
                    ErrorKind::Syntax,
                    None,
                    format!(
                        "toolchain exited 0 but emitted no Verilog at {}",
                        contract.output_for(top).display()
                    ),
                    None,
                    None,
                )];
                result.unparsed = true;
                return Ok(result);
            }
        }
    }
    Ok(CompileResult::failed(log, catalog, wall))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompilerConfig {
    pub scaffold: PathBuf,
    /// Where per-compile workspaces are created; system temp when absent.
    #[serde(default)]
    pub work_root: Option<PathBuf>,
    #[serde(default)]
    pub expected_versions: BTreeMap<String, String>,
    /// Leave workspaces on disk for debugging.
    #[serde(default)]
    pub keep_workspaces: bool,
}

/// Compiler backed by a real scaffold checkout.
#[derive(Debug, Clone)]
pub struct ScaffoldCompiler {
    scaffold: PathBuf,
    contract: ScaffoldContract,
    work_root: PathBuf,
    keep: bool,
    catalog: Catalog,
}

impl ScaffoldCompiler {
    /// Validates the scaffold contract, its pins and the entry program once
    /// at startup.
    pub fn new(cfg: &CompilerConfig, catalog: Catalog) -> Result<Self, ToolError> {
        let contract = ScaffoldContract::load(&cfg.scaffold)?;
        contract.check_pins(&cfg.expected_versions)?;
        let program = &contract.entry_command[0];
        let local = cfg.scaffold.join(program);
        if !local.is_file() && find_program(program).is_none() {
            return Err(ToolError::ToolchainMissing(program.clone()));
        }
        Ok(ScaffoldCompiler {
            scaffold: cfg.scaffold.clone(),
            contract,
            work_root: cfg.work_root.clone().unwrap_or_else(std::env::temp_dir),
            keep: cfg.keep_workspaces,
            catalog,
        })
    }

    pub fn contract(&self) -> &ScaffoldContract {
        &self.contract
    }
}

impl Compiler for ScaffoldCompiler {
    fn compile(
        &self,
        candidate: &Candidate,
        case: &CaseSpec,
        timeout: Duration,
    ) -> Result<CompileResult, ToolError> {
        let ws = prepare_workspace(candidate, &self.scaffold, &self.contract, &self.work_root)?;
        let result = compile_workspace(
            ws.path(),
            &self.contract,
            &case.module_name,
            timeout,
            &self.catalog,
        );
        if self.keep {
            let _ = ws.keep();
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Provenance;
    use std::os::unix::fs::PermissionsExt;

    fn candidate(src: &str) -> Candidate {
        Candidate {
            iteration: 0,
            attempt: 0,
            chisel_src: src.to_string(),
            verilog_src: None,
            provenance: Provenance::InitialGeneration,
        }
    }

    fn scaffold(script: &str) -> TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(CONTRACT_FILE),
            r#"
module_slot = "src/main/scala/Candidate.scala"
entry_command = ["./build.sh", "{top}"]
output_path = "out/{top}.v"
[pinned_versions]
chisel = "6.5.0"
"#,
        )
        .unwrap();
        let build = dir.path().join("build.sh");
        fs::write(&build, script).unwrap();
        fs::set_permissions(&build, fs::Permissions::from_mode(0o755)).unwrap();
        dir
    }

    #[test]
    fn concurrent_workspaces_are_distinct_and_hold_the_source() {
        let sc = scaffold("#!/bin/sh\n");
        let contract = ScaffoldContract::load(sc.path()).unwrap();
        let root = tempfile::tempdir().unwrap();
        let src = "class Top extends Module { /* bytes \u{00e9} */ }";
        let a = prepare_workspace(&candidate(src), sc.path(), &contract, root.path()).unwrap();
        let b = prepare_workspace(&candidate(src), sc.path(), &contract, root.path()).unwrap();
        assert_ne!(a.path(), b.path());
        let installed = fs::read(a.path().join("src/main/scala/Candidate.scala")).unwrap();
        assert_eq!(installed, src.as_bytes());
        assert!(a.path().join("build.sh").is_file());
    }

    #[test]
    fn missing_scaffold_is_an_error() {
        let root = tempfile::tempdir().unwrap();
        let contract = ScaffoldContract {
            module_slot: "x.scala".into(),
            entry_command: vec!["true".into()],
            output_path: "x.v".into(),
            pinned_versions: BTreeMap::new(),
        };
        let err = prepare_workspace(
            &candidate("x"),
            &root.path().join("nope"),
            &contract,
            root.path(),
        );
        assert!(matches!(err, Err(ToolError::MissingScaffold(_))));
        assert!(matches!(
            ScaffoldContract::load(&root.path().join("nope")),
            Err(ToolError::MissingScaffold(_))
        ));
    }

    #[test]
    fn pins_are_enforced() {
        let mut c = ScaffoldContract {
            module_slot: "x.scala".into(),
            entry_command: vec!["true".into()],
            output_path: "x.v".into(),
            pinned_versions: BTreeMap::new(),
        };
        assert!(matches!(
            c.check_pins(&BTreeMap::new()),
            Err(ToolError::Unpinned)
        ));
        c.pinned_versions.insert("chisel".into(), "6.5.0".into());
        let mut want = BTreeMap::new();
        want.insert("chisel".to_string(), "3.6.1".to_string());
        assert!(matches!(
            c.check_pins(&want),
            Err(ToolError::VersionMismatch { .. })
        ));
        want.insert("chisel".to_string(), "6.5.0".to_string());
        assert!(c.check_pins(&want).is_ok());
    }

    #[test]
    fn missing_entry_program_is_reported_at_startup() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(CONTRACT_FILE),
            "module_slot = \"a.scala\"\nentry_command = [\"definitely-not-installed-xyz\"]\noutput_path = \"a.v\"\n[pinned_versions]\nchisel = \"6\"\n",
        )
        .unwrap();
        let cfg = CompilerConfig {
            scaffold: dir.path().to_path_buf(),
            ..Default::default()
        };
        assert!(matches!(
            ScaffoldCompiler::new(&cfg, Catalog::builtin()),
            Err(ToolError::ToolchainMissing(_))
        ));
    }

    #[test]
    fn module_slot_must_stay_inside_scaffold() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(CONTRACT_FILE),
            "module_slot = \"../escape.scala\"\nentry_command = [\"true\"]\noutput_path = \"a.v\"\n[pinned_versions]\nchisel = \"6\"\n",
        )
        .unwrap();
        assert!(matches!(
            ScaffoldContract::load(dir.path()),
            Err(ToolError::BadContract(_))
        ));
    }
}
