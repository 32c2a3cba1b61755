//! Staged output files. Nothing touches the output directory until every file
//! of a command has been produced; each file then lands via temp-file rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::Params;

/// Version of the file layouts written by this tool.
pub const FORMAT_VERSION: u32 = 1;

/// Metadata written next to every CSV as `<name>.meta.json`.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a, T: Serialize> {
    pub format_version: u32,
    pub command: &'a str,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub extra: T,
}

pub struct Staged {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Staged {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.add(name, bytes);
        Ok(())
    }

    /// Adds `name` and its metadata sidecar.
    pub fn add_csv<T: Serialize>(
        &mut self,
        name: &str,
        bytes: Vec<u8>,
        command: &str,
        params: &Params,
        extra: T,
    ) -> anyhow::Result<()> {
        let sidecar = Sidecar {
            format_version: FORMAT_VERSION,
            command,
            config_hash: params.hash(),
            seed: params.seed(),
            extra,
        };
        let stem = name.strip_suffix(".csv").unwrap_or(name);
        self.add_json(&format!("{stem}.meta.json"), &sidecar)?;
        self.add(name, bytes);
        Ok(())
    }

    /// Writes every staged file into the output directory.
    pub fn commit(self) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating output directory {}", self.dir.display()))?;
        let mut pending = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
                .with_context(|| format!("creating temporary file in {}", self.dir.display()))?;
            tmp.write_all(bytes)
                .and_then(|_| tmp.as_file().sync_all())
                .with_context(|| format!("writing {}", self.dir.join(name).display()))?;
            pending.push((tmp, self.dir.join(name)));
        }
        let mut written = Vec::with_capacity(pending.len());
        for (tmp, path) in pending {
            tmp.persist(&path)
                .with_context(|| format!("renaming into {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
