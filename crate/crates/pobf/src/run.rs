//! Run directory layout and JSON Lines helpers.
//!
//! ```text
//! runs/<run_id>/
//!   config.resolved.json
//!   candidates/<sample_id>/<index>.png
//!   candidates/<sample_id>/done.json      per-sample completion marker
//!   candidates.jsonl                      sorted by (sample_id, index)
//!   samples.jsonl                         per-sample generation status
//!   scores.jsonl
//!   selection.json
//!   mix.jsonl, mix_summary.json
//!   report.md, report.json, s1_s2.csv
//!   benchmark/<method>/selection.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(runs_dir: &Path, run_id: &str) -> Self {
        Self { root: runs_dir.join(run_id) }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn candidates_dir(&self) -> PathBuf {
        self.root.join("candidates")
    }

    pub fn sample_dir(&self, sample_id: &str) -> PathBuf {
        self.candidates_dir().join(sample_id)
    }

    /// Run-relative path of a candidate image, as stored in candidates.jsonl.
    pub fn candidate_rel_path(sample_id: &str, index: u32) -> String {
        format!("candidates/{sample_id}/{index}.png")
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn candidates_jsonl(&self) -> PathBuf {
        self.root.join("candidates.jsonl")
    }

    pub fn samples_jsonl(&self) -> PathBuf {
        self.root.join("samples.jsonl")
    }

    pub fn scores_jsonl(&self) -> PathBuf {
        self.root.join("scores.jsonl")
    }

    pub fn selection_json(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn mix_jsonl(&self) -> PathBuf {
        self.root.join("mix.jsonl")
    }

    pub fn mix_summary_json(&self) -> PathBuf {
        self.root.join("mix_summary.json")
    }

    pub fn config_resolved(&self) -> PathBuf {
        self.root.join("config.resolved.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn scatter_csv(&self) -> PathBuf {
        self.root.join("s1_s2.csv")
    }

    pub fn benchmark_selection(&self, method: &str) -> PathBuf {
        self.root.join("benchmark").join(method).join("selection.json")
    }

    /// Fails with [`Error::MissingPrerequisite`] naming `stage` when `path` is absent.
    pub fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingPrerequisite { stage, path })
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Write through a sibling temp file and rename, so readers never observe a
/// partial file.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_text(path, &to_jsonl(items))
}

/// Parse JSON Lines, skipping blank lines. Each item is paired with its
/// 1-based line number.
pub fn read_jsonl_str<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map(|v| (i + 1, v)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl_str(path, &read_text(path)?)?.into_iter().map(|(_, v)| v).collect())
}

/// Sample ids become directory names; refuse anything that could escape
/// the candidates directory.
pub fn check_path_component(id: &str) -> Result<()> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']) {
        return Err(Error::Validation(format!("sample id `{id}` cannot be used as a directory name")));
    }
    Ok(())
}
