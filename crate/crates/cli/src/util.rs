//! Atomic file output, digests, and the run manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliResult;

/// Writes a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, write_fn: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut writer = BufWriter::new(file);
        write_fn(&mut writer).with_context(|| format!("writing {}", tmp.display()))?;
        writer
            .flush()
            .with_context(|| format!("flushing {}", tmp.display()))?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> CliResult {
    write_atomic(path, |w| w.write_all(bytes))
}

/// Pretty-printed JSON artifact with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    write_atomic_bytes(path, text.as_bytes())
}

/// Line-delimited JSON artifact.
pub fn write_ndjson<T: Serialize>(path: &Path, records: &[T]) -> CliResult {
    write_atomic(path, |w| {
        for r in records {
            let line = serde_json::to_string(r).expect("serializable record");
            writeln!(w, "{line}")?;
        }
        Ok(())
    })
}

pub fn open_reader(path: &Path) -> CliResult<std::io::BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(std::io::BufReader::new(file))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut file = File::open(path).with_context(|| format!("digesting {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).context("reading for digest")?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Machine-readable record of one run: command, resolved config, and the
/// digests of every input and output. Wall-clock free, so identical runs
/// produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> CliResult {
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Writes `manifest.json` into `dir`.
    pub fn finish(self, dir: &Path) -> CliResult {
        write_json(&dir.join("manifest.json"), &self)
    }
}

/// Output path helper: `dir/name`.
pub fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
