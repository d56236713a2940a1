//! Artifact layout, stage lock and run manifests.

use crate::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use sprnet_core::io::write_atomic;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const LOCK_FILE: &str = ".sprnet.lock";

/// Paths of every artifact relative to the work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.sprw"))
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join("tables").join(format!("{name}.csv"))
    }

    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn fits(&self) -> PathBuf {
        self.root.join("fragility_fits.json")
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    pub fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).display().to_string()
    }

    pub fn ensure_dirs(&self) -> Result<(), CliError> {
        for d in ["models", "tables", "manifests"] {
            let p = self.root.join(d);
            fs::create_dir_all(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        }
        Ok(())
    }

    pub fn require(&self, stage: &str, path: &Path, producer: &str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::Dependency {
                stage: stage.to_string(),
                missing: path.to_path_buf(),
                producer: producer.to_string(),
            })
        }
    }
}

/// Exclusive lock on a work directory, released on drop.
#[derive(Debug)]
pub struct StageLock {
    path: PathBuf,
}

impl StageLock {
    pub fn acquire(root: &Path, stage: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        let path = root.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{stage} pid {}", std::process::id());
                Ok(StageLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(CliError::Locked { path, holder: holder.trim().to_string() })
            }
            Err(e) => Err(CliError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for StageLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes a file, or every file below a directory in sorted order.
pub fn hash_tree(layout: &Layout, path: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path).map_err(io)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().map_err(io)?;
        entries.sort();
        for e in entries {
            hash_tree(layout, &e, out)?;
        }
    } else if path.is_file() {
        out.insert(layout.rel(path), sha256_hex(&fs::read(path).map_err(io)?));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    stage: &'a str,
    config: &'a str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

/// Records the config echo and content hashes of a finished stage.
pub fn write_manifest(
    layout: &Layout,
    stage: &str,
    config_toml: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let mut ins = BTreeMap::new();
    for p in inputs {
        hash_tree(layout, p, &mut ins)?;
    }
    let mut outs = BTreeMap::new();
    for p in outputs {
        hash_tree(layout, p, &mut outs)?;
    }
    let m = RunManifest { stage, config: config_toml, inputs: ins, outputs: outs };
    let text = serde_json::to_string_pretty(&m).expect("serializable manifest");
    write_atomic(&layout.manifest(stage), text.as_bytes())?;
    Ok(())
}
