use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record written next to every output: what ran, with which parameters, on
/// which inputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub tool_version: &'static str,
    pub seed: u64,
    pub threads: usize,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_secs: u64,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(path: &Path) -> Result<FileDigest, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn start(
        subcommand: &'static str,
        seed: u64,
        parameters: impl Serialize,
    ) -> Self {
        Self {
            subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            threads: rayon::current_num_threads(),
            parameters: serde_json::to_value(parameters).expect("arguments serialise"),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            wall_clock_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), Failure> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    /// Writes `<out>.manifest.json`.
    pub fn finish(mut self, out: &Path) -> Result<PathBuf, Failure> {
        self.wall_clock_secs = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64());
        let path = with_suffix(out, ".manifest.json");
        let json = serde_json::to_string_pretty(&self).expect("manifest serialises");
        std::fs::write(&path, json + "\n").map_err(|e| Failure::io(&path, e))?;
        Ok(path)
    }
}

/// `out` with `suffix` appended to its file name.
pub fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
