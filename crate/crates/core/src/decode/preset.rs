use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

const PRESETS_JSON: &str = include_str!("../../resources/presets.json");

#[derive(Deserialize)]
struct PresetFile {
    instruction: String,
    presets: BTreeMap<String, String>,
}

fn preset_file() -> &'static PresetFile {
    static FILE: OnceLock<PresetFile> = OnceLock::new();
    FILE.get_or_init(|| serde_json::from_str(PRESETS_JSON).expect("bundled presets.json is valid"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum PromptPreset {
    Default,
    PromptA,
    PromptDbrx,
}

impl PromptPreset {
    pub const ALL: [PromptPreset; 3] = [PromptPreset::Default, PromptPreset::PromptA, PromptPreset::PromptDbrx];

    pub fn name(self) -> &'static str {
        match self {
            PromptPreset::Default => "default",
            PromptPreset::PromptA => "prompt_a",
            PromptPreset::PromptDbrx => "prompt_dbrx",
        }
    }

    pub fn system_text(self) -> &'static str {
        preset_file().presets[self.name()].as_str()
    }

    pub fn instruction_text() -> &'static str {
        preset_file().instruction.as_str()
    }

    /// System prompt, then the instruction, each on its own line.
    pub fn render(self) -> String {
        format!("{}\n{}\n", self.system_text(), Self::instruction_text())
    }

    pub fn tokens(self) -> Vec<u32> {
        tokenize(&self.render()).tokens
    }
}

impl fmt::Display for PromptPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown prompt preset {s:?}")))
    }
}
