use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{usage, CliResult};

/// Content digest of one input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance block embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Seed of the run; absent for commands that draw no random numbers.
    pub seed: Option<u64>,
    pub version: String,
    /// Seconds since the Unix epoch at report time. Excluded from determinism checks.
    pub wall_clock: f64,
}

impl RunManifest {
    pub fn new<P: AsRef<Path>>(
        command: &str,
        config: serde_json::Value,
        inputs: &[P],
        seed: Option<u64>,
    ) -> CliResult<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let p = p.as_ref();
                let bytes = std::fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let wall_clock = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Ok(Self {
            command: command.to_string(),
            config,
            inputs,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock,
        })
    }
}
