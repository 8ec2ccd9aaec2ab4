use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    /// Absent until the file exists.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Started,
    Complete,
}

/// Everything needed to rerun a command and check that it produced the same
/// bytes. `argv` is the fully resolved argument list (defaults included), so
/// `voltavision replay` can feed it straight back to the parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub status: RunStatus,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: BTreeMap<String, String>, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            status: RunStatus::Started,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = Some(hash_path(path)?);
        self.inputs.push(FileDigest {
            path: path.to_owned(),
            sha256,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(FileDigest {
            path: path.to_owned(),
            sha256: None,
        });
    }

    /// Hashes every output and marks the run complete.
    pub fn complete(&mut self) -> Result<(), CliError> {
        for out in &mut self.outputs {
            out.sha256 = Some(hash_path(&out.path)?);
        }
        self.status = RunStatus::Complete;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: not a run manifest: {e}", path.display())))
    }
}

/// `<path>.manifest.json`
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn hash_file_into(hasher: &mut Sha256, path: &Path) -> Result<(), CliError> {
    let mut file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}

/// SHA-256 of a file, or of a directory tree. Directories hash each regular
/// file's relative path and contents in sorted order, so renames count.
pub fn hash_path(path: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        for file in files {
            let rel = file.strip_prefix(path).unwrap_or(&file);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0u8]);
            hash_file_into(&mut hasher, &file)?;
        }
    } else {
        hash_file_into(&mut hasher, path)?;
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.is_file() {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_json() {
        let mut config = BTreeMap::new();
        config.insert("epochs".into(), "25".into());
        let mut m = RunManifest::new("pretrain", vec!["pretrain".into()], config, 7);
        m.outputs.push(FileDigest {
            path: "a.vvc".into(),
            sha256: Some("00".into()),
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.write(&p).unwrap();
        assert_eq!(RunManifest::read(&p).unwrap(), m);
    }

    #[test]
    fn directory_hash_tracks_names_and_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a/x.bin"), b"one").unwrap();
        let first = hash_path(dir.path()).unwrap();
        assert_eq!(first, hash_path(dir.path()).unwrap());

        fs::rename(dir.path().join("a/x.bin"), dir.path().join("a/y.bin")).unwrap();
        let renamed = hash_path(dir.path()).unwrap();
        assert_ne!(first, renamed);

        fs::write(dir.path().join("a/y.bin"), b"two").unwrap();
        assert_ne!(renamed, hash_path(dir.path()).unwrap());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(manifest_path_for(Path::new("out/m.vvc")), PathBuf::from("out/m.vvc.manifest.json"));
    }
}
