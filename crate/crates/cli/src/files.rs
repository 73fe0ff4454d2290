//! File access for the commands. Every output goes through a temporary file
//! in the destination directory followed by a rename, so readers never see
//! a partial file.

use std::fs;
use std::io::Write;
use std::path::Path;

use scalelaw::artifact::LawArtifact;
use scalelaw::runlog::{parse_runs_str, RunSet};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::failure::Failure;

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::validation(format!("cannot read {}: {e}", path.display())))
}

pub fn read_runs(path: &Path) -> Result<RunSet, Failure> {
    parse_runs_str(&read_text(path)?).map_err(|e| Failure::from(e).context(&path.display().to_string()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Failure::validation(format!("{}: invalid JSON document: {e}", path.display())))
}

pub fn read_artifact(path: &Path) -> Result<LawArtifact, Failure> {
    LawArtifact::from_json(&read_text(path)?).map_err(|e| Failure::from(e).context(&path.display().to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types always serialize");
    s.push('\n');
    s
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| Failure::validation(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}
