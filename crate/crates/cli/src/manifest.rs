//! Run manifests: the resolved arguments of one invocation plus the files it
//! wrote, enough to reproduce every artifact.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, ExploreArgs, GenArgs, SweepArgs};

pub const RUN_MANIFEST_FILE: &str = "run.json";
pub const TOOL_NAME: &str = "gridscout";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "kebab-case")]
pub enum RecordedCommand {
    Gen(GenArgs),
    Explore(ExploreArgs),
    Eval(EvalArgs),
    SweepThresholds(SweepArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(flatten)]
    pub command: RecordedCommand,
    /// Episode settings the command resolved to, when it runs episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<serde_json::Value>,
    /// Files written, relative to the output directory, in write order.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: RecordedCommand) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            resolved: None,
            artifacts: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Writes `run.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn check_version(&self) -> anyhow::Result<()> {
        if self.tool != TOOL_NAME {
            bail!("manifest was written by {:?}, not {TOOL_NAME}", self.tool);
        }
        if self.version != env!("CARGO_PKG_VERSION") {
            log::warn!(
                "manifest was written by version {}; replaying with {}",
                self.version,
                env!("CARGO_PKG_VERSION")
            );
        }
        Ok(())
    }
}
