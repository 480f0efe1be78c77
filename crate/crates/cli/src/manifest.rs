use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use osc_hawkes::Config;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Defaults, config file and flag overrides merged.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub refine: bool,
    /// `sha256:` digest of the subcommand, resolved config and input files.
    pub input_hash: String,
    pub out_dir: PathBuf,
    /// Files written by the run, relative to `out_dir`.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &Config, seed: u64, refine: bool, inputs: &[Vec<u8>], out_dir: &Path, outputs: &[&str]) -> Self {
        let mut h = Sha256::new();
        h.update(subcommand.as_bytes());
        h.update([0]);
        h.update(config.to_text().as_bytes());
        h.update([0]);
        h.update(if refine { b"refine" as &[u8] } else { b"coarse" });
        for input in inputs {
            h.update((input.len() as u64).to_le_bytes());
            h.update(input);
        }
        let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let mut files = vec!["manifest.json".to_string()];
        files.extend(outputs.iter().map(|s| s.to_string()));
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seed,
            refine,
            input_hash: format!("sha256:{hex}"),
            out_dir: out_dir.to_path_buf(),
            outputs: files,
        }
    }
}
