//! Report envelope, input hashing and output writing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Tolerances {
    pub rank: f64,
    pub residual: f64,
}

/// Collects the hashed inputs of one command run.
#[derive(Default)]
pub struct Inputs {
    records: Vec<InputRecord>,
}

impl Inputs {
    /// Reads, hashes and parses a JSON input file.
    pub fn load<T: DeserializeOwned>(&mut self, role: &str, path: &Path) -> Result<T> {
        let bytes = fs::read(path).with_context(|| format!("reading {role} file {}", path.display()))?;
        self.records.push(InputRecord {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {role} file {}", path.display()))
    }
}

/// Outcome of a command: the payload and whether the verdict was positive.
pub struct Outcome {
    pub result: Value,
    pub positive: bool,
}

impl Outcome {
    pub fn new(result: impl Serialize, positive: bool) -> Result<Self> {
        Ok(Outcome {
            result: serde_json::to_value(result)?,
            positive,
        })
    }
}

pub fn envelope(command: &str, inputs: Inputs, tol: Tolerances, seed: u64, out: &Outcome) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "inputs": inputs.records,
        "tolerances": tol,
        "seed": seed,
        "verdict": if out.positive { "positive" } else { "negative" },
        "result": out.result,
    })
}

pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_artifact(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `report.json` → `report.csv`.
pub fn sibling_csv(out: &Path) -> PathBuf {
    out.with_extension("csv")
}
