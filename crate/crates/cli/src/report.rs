//! Report envelope. Output is a pure function of the inputs: no timestamps,
//! paths or host details, and keys in a fixed order.

use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

pub const TOOL: &str = "infogeo";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Resolved inputs: the parsed spec with defaults filled in, plus flags.
    pub config: Value,
    pub passed: bool,
    pub result: Value,
}

impl Report {
    pub fn new(command: impl Into<String>, config: Value, passed: bool, result: impl Serialize) -> anyhow::Result<Report> {
        Ok(Report {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            config,
            passed,
            result: serde_json::to_value(result)?,
        })
    }

    pub fn to_json(&self) -> anyhow::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `<dir>/<command>.json`, or prints to stdout without a directory.
    pub fn emit(&self, out: Option<&Path>) -> anyhow::Result<()> {
        let text = self.to_json()?;
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(format!("{}.json", self.command.replace(' ', "-")));
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
            }
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}
