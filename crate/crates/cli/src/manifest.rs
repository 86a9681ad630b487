use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::UsageError;

/// Provenance record written next to a run's primary output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub core_version: &'static str,
    pub subcommand: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: Value,
}

impl Manifest {
    pub fn new(
        subcommand: &'static str,
        seed: Option<u64>,
        threads: Option<usize>,
        deterministic: bool,
    ) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            core_version: mdmfed_core::VERSION,
            subcommand,
            argv: std::env::args().collect(),
            seed,
            threads,
            deterministic,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Refuse to write over any input or to write two outputs to one path.
    pub fn check_paths(&self) -> Result<()> {
        let key = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let inputs: Vec<PathBuf> = self.inputs.iter().map(|p| key(p)).collect();
        let mut seen: Vec<PathBuf> = Vec::new();
        for out in &self.outputs {
            let k = key(out);
            if inputs.contains(&k) {
                return Err(UsageError(format!(
                    "output {} would overwrite an input",
                    out.display()
                ))
                .into());
            }
            if seen.contains(&k) {
                return Err(
                    UsageError(format!("{} is given for two outputs", out.display())).into(),
                );
            }
            seen.push(k);
        }
        Ok(())
    }

    /// Writes `<primary>.manifest.json`.
    pub fn write(&self, primary: &Path) -> Result<()> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
