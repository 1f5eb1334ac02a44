//! Per-output-directory run manifests.
//!
//! A manifest records what produced a directory: the command, tool version,
//! effective config and arguments with their hash, and content hashes of
//! every input and output. It carries no timestamps, so reruns with the same
//! inputs write byte-identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use compo_core::io::{sha256_bytes, sha256_file, write_json};
use compo_core::Error;
use serde::Serialize;
use serde_json::Value;
use walkdir::WalkDir;

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    config_hash: String,
    config: &'a Value,
    args: &'a Value,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// Collects inputs and outputs of one command run in one output directory.
#[derive(Debug)]
pub struct Run {
    command: &'static str,
    dir: PathBuf,
    config: Value,
    args: Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn rel(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

impl Run {
    pub fn new(command: &'static str, dir: &Path, config: Value, args: Value) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(Run {
            command,
            dir: dir.to_path_buf(),
            config,
            args,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Records an input file, or a directory as the hash of its sorted
    /// relative file names and sizes.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let hash = if path.is_dir() {
            let mut listing = String::new();
            for entry in WalkDir::new(path).sort_by_file_name() {
                let entry = entry.map_err(|e| Error::ProtocolError(e.to_string()))?;
                if entry.file_type().is_file() {
                    let len = entry.metadata().map(|m| m.len()).unwrap_or(0);
                    let name = entry.path().strip_prefix(path).unwrap_or(entry.path());
                    listing.push_str(&format!("{}\t{len}\n", rel(name)));
                }
            }
            sha256_bytes(listing.as_bytes())
        } else {
            sha256_file(path)?
        };
        self.inputs.insert(rel(path), hash);
        Ok(())
    }

    /// Records a file already written under the output directory.
    pub fn output(&mut self, rel_path: &str) -> CliResult<()> {
        let hash = sha256_file(&self.dir.join(rel_path))?;
        self.outputs.insert(rel_path.to_string(), hash);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel_path: &str, value: &T) -> CliResult<()> {
        write_json(&self.dir.join(rel_path), value)?;
        self.output(rel_path)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel_path: &str, items: &[T]) -> CliResult<()> {
        compo_core::io::write_jsonl(&self.dir.join(rel_path), items)?;
        self.output(rel_path)
    }

    pub fn write_text(&mut self, rel_path: &str, text: &str) -> CliResult<()> {
        let path = self.dir.join(rel_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        self.output(rel_path)
    }

    pub fn finish(self) -> CliResult<()> {
        let hashed = serde_json::json!({ "command": self.command, "config": self.config, "args": self.args });
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: sha256_bytes(hashed.to_string().as_bytes()),
            config: &self.config,
            args: &self.args,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        write_json(&self.dir.join(MANIFEST_FILE), &manifest)?;
        Ok(())
    }
}
