//! Continuator instructions, shipped verbatim as data files.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::ChatMessage;

pub const CONTINUATION_PROMPT: &str = include_str!("../prompts/continuation.txt");
pub const EXPLICIT_PROMPT: &str = include_str!("../prompts/mode_explicit.txt");
pub const NATURAL_PROMPT: &str = include_str!("../prompts/mode_natural.txt");
pub const HUMOR_PROMPT: &str = include_str!("../prompts/mode_humor.txt");

/// SHA-256 of each prompt file, frozen when the listings were transcribed.
pub const PROMPT_HASHES: [(&str, &str); 4] = [
    ("continuation.txt", "0ef133689ea720c00d5215352141ae7f4dc3ca0da0b40c505318b198b0b3eb5c"),
    ("mode_explicit.txt", "2cf0d1b5c614f8501ce94a505a3d2259d1c60645fd9e12f3c2cf07737d1ffcb4"),
    ("mode_natural.txt", "2b0c926a638aa9da81dfb2e39b8d36dfa5a17a7c218ec4c93283084b4cbbaae3"),
    ("mode_humor.txt", "0e0973482316cdbee72e14a49d99498e43565dea5950d6f9daa9358672559da5"),
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    #[default]
    ExplicitCorrection,
    NaturalRecovery,
    HumorAware,
}

impl RecoveryMode {
    pub const ALL: [RecoveryMode; 3] = [Self::ExplicitCorrection, Self::NaturalRecovery, Self::HumorAware];

    pub fn instruction(self) -> &'static str {
        match self {
            Self::ExplicitCorrection => EXPLICIT_PROMPT,
            Self::NaturalRecovery => NATURAL_PROMPT,
            Self::HumorAware => HUMOR_PROMPT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExplicitCorrection => "explicit_correction",
            Self::NaturalRecovery => "natural_recovery",
            Self::HumorAware => "humor_aware",
        }
    }
}

impl fmt::Display for RecoveryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecoveryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "explicit" | "explicit_correction" => Ok(Self::ExplicitCorrection),
            "natural" | "natural_recovery" => Ok(Self::NaturalRecovery),
            "humor" | "humor_aware" => Ok(Self::HumorAware),
            other => Err(format!("unknown recovery mode {other:?} (expected explicit, natural or humor)")),
        }
    }
}

fn prompt_text(file: &str) -> Option<&'static str> {
    match file {
        "continuation.txt" => Some(CONTINUATION_PROMPT),
        "mode_explicit.txt" => Some(EXPLICIT_PROMPT),
        "mode_natural.txt" => Some(NATURAL_PROMPT),
        "mode_humor.txt" => Some(HUMOR_PROMPT),
        _ => None,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Names of prompt files whose contents no longer match the frozen hashes.
pub fn verify_prompts() -> Vec<&'static str> {
    PROMPT_HASHES
        .iter()
        .filter(|(file, hash)| prompt_text(file).map(|t| sha256_hex(t.as_bytes())) != Some(hash.to_string()))
        .map(|(file, _)| *file)
        .collect()
}

/// System text: the general instruction followed by the mode block.
pub fn system_prompt(mode: RecoveryMode) -> String {
    format!("{CONTINUATION_PROMPT}\n{}", mode.instruction())
}

/// User text carrying the query and the already-spoken opener.
pub fn user_prompt(query: &str, opener: &str) -> String {
    format!("<question>\n{query}\n</question>\n<opener>\n{opener}\n</opener>")
}

/// Messages for the continuator. An empty opener asks for a full answer.
pub fn build_continuation_prompt(query: &str, opener: &str, mode: RecoveryMode) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(system_prompt(mode)),
        ChatMessage::user(user_prompt(query, opener)),
    ]
}
