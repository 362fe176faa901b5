//! Content digests, staged artifact writes and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_DIR: &str = "manifests";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// Relative to the data directory when inside it, otherwise absolute.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub stage: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
    pub tool_version: String,
    pub duration_ms: u64,
}

/// Path of `p` as recorded in manifests under `data`.
pub fn manifest_key(data: &Path, p: &Path) -> String {
    let abs = |x: &Path| std::path::absolute(x).unwrap_or_else(|_| x.to_path_buf());
    let (d, p) = (abs(data), abs(p));
    match p.strip_prefix(&d) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => p.to_string_lossy().into_owned(),
    }
}

pub fn manifest_path(data: &Path, stage: &str) -> PathBuf {
    data.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

/// Every manifest in `data`, keyed by stage.
pub fn load_manifests(data: &Path) -> Result<BTreeMap<String, RunManifest>> {
    let dir = data.join(MANIFEST_DIR);
    let mut out = BTreeMap::new();
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(out);
    };
    for entry in entries {
        let path = entry.map_err(Error::io(&dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
            let m: RunManifest = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Config(format!("{}: unreadable manifest: {e}", path.display())))?;
            out.insert(m.stage.clone(), m);
        }
    }
    Ok(out)
}

/// Digests the inputs of a stage and checks them against the manifests that
/// produced them: each file must still match the digest its producer
/// recorded, and inputs shared with a producer must be the same versions
/// that producer consumed.
pub fn verify_inputs(data: &Path, inputs: &[PathBuf]) -> Result<Vec<ArtifactDigest>> {
    let manifests = load_manifests(data)?;
    let mut digests = Vec::with_capacity(inputs.len());
    for p in inputs {
        if !p.exists() {
            return Err(Error::Config(format!("missing input artifact {}", p.display())));
        }
        digests.push(ArtifactDigest { path: manifest_key(data, p), sha256: file_sha256(p)? });
    }
    let current: BTreeMap<&str, &str> = digests.iter().map(|d| (d.path.as_str(), d.sha256.as_str())).collect();
    // (input, producing manifest, digest that manifest recorded)
    let produced: Vec<(&ArtifactDigest, &RunManifest, &ArtifactDigest)> = digests
        .iter()
        .flat_map(|d| manifests.values().filter_map(move |m| m.outputs.iter().find(|o| o.path == d.path).map(|o| (d, m, o))))
        .collect();
    // tampering outranks staleness: report the edited file, not its consumers
    if let Some((d, m, _)) = produced.iter().find(|(d, _, o)| o.sha256 != d.sha256) {
        return Err(Error::Tampered { path: data.join(&d.path), stage: m.stage.clone() });
    }
    for (d, m, _) in &produced {
        for upstream in &m.inputs {
            if current.get(upstream.path.as_str()).is_some_and(|now| *now != upstream.sha256) {
                return Err(Error::Config(format!(
                    "{} was produced by stage {} from a different {}; rerun {}",
                    d.path, m.stage, upstream.path, m.stage
                )));
            }
        }
    }
    Ok(digests)
}

/// Outputs written to temporary siblings and renamed into place only on
/// [`Outputs::commit`]. Dropping an uncommitted set removes the temporaries,
/// so a failed stage leaves no partial artifacts.
pub struct Outputs {
    data: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
}

impl Outputs {
    pub fn new(data: &Path) -> Self {
        Self { data: data.to_path_buf(), staged: Vec::new() }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = path.with_file_name(format!(".{name}.partial-{}", std::process::id()));
        self.staged.push((path.to_path_buf(), tmp.clone()));
        std::fs::write(&tmp, bytes).map_err(Error::io(&tmp))
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        self.write(path, &bytes)
    }

    pub fn commit(mut self) -> Result<Vec<ArtifactDigest>> {
        let mut digests = Vec::with_capacity(self.staged.len());
        let staged = std::mem::take(&mut self.staged);
        for (i, (dst, tmp)) in staged.iter().enumerate() {
            let sha256 = file_sha256(tmp)?;
            if let Err(e) = std::fs::rename(tmp, dst) {
                for (d, t) in &staged[..i] {
                    let _ = std::fs::remove_file(d);
                    let _ = std::fs::remove_file(t);
                }
                for (_, t) in &staged[i..] {
                    let _ = std::fs::remove_file(t);
                }
                return Err(Error::Io { path: dst.clone(), source: e });
            }
            digests.push(ArtifactDigest { path: manifest_key(&self.data, dst), sha256 });
        }
        Ok(digests)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        for (_, tmp) in &self.staged {
            let _ = std::fs::remove_file(tmp);
        }
    }
}

pub fn write_manifest(data: &Path, manifest: &RunManifest) -> Result<()> {
    let path = manifest_path(data, &manifest.stage);
    let mut out = Outputs::new(data);
    out.write_json(&path, manifest)?;
    out.commit().map(|_| ())
}
