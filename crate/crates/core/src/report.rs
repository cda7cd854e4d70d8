//! Self-describing output documents.
//!
//! Every command result is wrapped in a [`ReportDocument`] that records the
//! tool version, the command line, a digest of the input, and the parameters
//! that produced it. Wall-clock time is optional so that, without it, a
//! document is a pure function of its inputs and serializes byte-identically.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::scenario::canonical_json;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool_version: String,
    pub command: Vec<String>,
    /// Lowercase hex SHA-256 of the input bytes, if there was an input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
    pub parameters: Value,
    pub payload: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
}

impl ReportDocument {
    pub fn new(command: Vec<String>, parameters: Value, payload: Value) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command,
            input_digest: None,
            parameters,
            payload,
            wall_time_ms: None,
        }
    }

    pub fn with_input(mut self, bytes: &[u8]) -> Self {
        self.input_digest = Some(digest_hex(bytes));
        self
    }

    pub fn with_wall_time(mut self, ms: u64) -> Self {
        self.wall_time_ms = Some(ms);
        self
    }

    pub fn to_json(&self) -> String {
        canonical_json(self)
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
