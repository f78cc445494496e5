use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Run record written next to the primary output as `key = value` lines.
/// Holds no timestamps or worker counts, so identical runs give identical
/// manifests.
pub struct Manifest {
    entries: Vec<(String, String)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest {
            entries: Vec::new(),
        };
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        self.entries.push((key.to_string(), value));
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.set(&format!("input.{name}"), path.display());
        self.set(&format!("input.{name}.sha256"), sha256_file(path)?);
        Ok(())
    }

    /// Outputs are recorded by file name so that reruns into another
    /// directory compare equal.
    pub fn output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.set(&format!("output.{name}"), file_name(path));
        self.set(&format!("output.{name}.sha256"), sha256_file(path)?);
        Ok(())
    }

    pub fn path_for(out: &Path) -> PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let text: String = self
            .entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let path = Self::path_for(out);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
