//! In-memory artifacts, CSV formatting, the run manifest and `--verify`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json<T: Serialize>(path: impl Into<String>, value: &T) -> Artifact {
        let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
        bytes.push(b'\n');
        Artifact {
            path: path.into(),
            bytes,
        }
    }

    pub fn text(path: impl Into<String>, text: String) -> Artifact {
        Artifact {
            path: path.into(),
            bytes: text.into_bytes(),
        }
    }
}

/// Shortest decimal string that parses back to the same double.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        ryu::Buffer::new().format_finite(x).to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn csv(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.into_iter().map(fmt_f64).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub library_version: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_override: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_override: Option<f64>,
    pub exit_code: i32,
    pub wall_time_s: f64,
    pub stages: Vec<StageStatus>,
    pub files: Vec<FileEntry>,
}

pub fn inventory(artifacts: &[Artifact]) -> Vec<FileEntry> {
    artifacts
        .iter()
        .map(|a| FileEntry {
            path: a.path.clone(),
            sha256: sha256_hex(&a.bytes),
            bytes: a.bytes.len(),
        })
        .collect()
}

/// Writes every artifact and then the manifest. Single writer, artifacts in
/// their given order.
pub fn write_all(dir: &Path, artifacts: &[Artifact], manifest: &RunManifest) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for a in artifacts {
        fs::write(dir.join(&a.path), &a.bytes)?;
    }
    let m = Artifact::json(MANIFEST, manifest);
    fs::write(dir.join(MANIFEST), m.bytes)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub mismatched: Vec<String>,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatched.is_empty() && self.missing.is_empty() && self.unexpected.is_empty()
    }
}

/// Compares freshly computed artifacts with the manifest recorded in `dir`
/// and with the files on disk.
pub fn verify(dir: &Path, artifacts: &[Artifact]) -> Result<VerifyReport, String> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let recorded: RunManifest =
        serde_json::from_str(&text).map_err(|e| format!("invalid manifest {}: {e}", path.display()))?;
    let mut rep = VerifyReport::default();
    let fresh = inventory(artifacts);
    for f in &fresh {
        match recorded.files.iter().find(|r| r.path == f.path) {
            None => rep.unexpected.push(f.path.clone()),
            Some(r) => {
                let on_disk = fs::read(dir.join(&f.path)).map(|b| sha256_hex(&b)).ok();
                if r.sha256 != f.sha256 || on_disk.as_deref() != Some(f.sha256.as_str()) {
                    rep.mismatched.push(f.path.clone());
                }
            }
        }
    }
    for r in &recorded.files {
        if !fresh.iter().any(|f| f.path == r.path) {
            rep.missing.push(r.path.clone());
        }
    }
    Ok(rep)
}
