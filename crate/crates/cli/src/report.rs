//! Machine-readable run reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::artifacts::{write_toml, SCHEMA_VERSION};
use crate::coverage::CoverageNote;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: toml::Table,
    pub appendix: Appendix,
    /// Wall-clock timings; the only non-reproducible part, kept last.
    pub timing: Timing,
}

#[derive(Debug, Clone, Serialize)]
pub struct Appendix {
    pub coverage: CoverageNote,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub total_ms: f64,
    pub stages_ms: BTreeMap<String, f64>,
}

/// Stage stopwatch.
pub struct Timer {
    start: Instant,
    timing: Timing,
}

impl Default for Timer {
    fn default() -> Self {
        Self { start: Instant::now(), timing: Timing::default() }
    }
}

impl Timer {
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timing.stages_ms.insert(name.to_string(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn finish(mut self) -> Timing {
        self.timing.total_ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.timing
    }
}

impl RunReport {
    pub fn new(command: &str, config_hash: String, seed: u64, coverage: CoverageNote) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config_hash,
            seed,
            inputs: BTreeMap::new(),
            outputs: toml::Table::new(),
            appendix: Appendix { coverage },
            timing: Timing::default(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.to_string(), path.display().to_string());
    }

    /// Stores a serializable value under `outputs.<key>`.
    pub fn output<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = toml::Value::try_from(value).expect("report values serialize to TOML");
        self.outputs.insert(key.to_string(), v);
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_toml(self, path)
    }
}

/// Report text with the timing tables removed, for reproducibility checks.
pub fn without_timing(report: &str) -> String {
    let mut out = String::new();
    let mut in_timing = false;
    for line in report.lines() {
        let t = line.trim_start();
        if t.starts_with('[') {
            in_timing = t.starts_with("[timing");
        }
        if !in_timing {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
