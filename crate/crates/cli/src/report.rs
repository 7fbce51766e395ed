//! The machine-readable report every subcommand produces.
//!
//! Findings are the exit-code-relevant observations (loops, SCC
//! violations, validation diagnostics, deadlocks); notes are context that
//! never affects the exit code. Text and JSON render the same findings.

use serde::Serialize;
use std::fmt::Write as _;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    /// Schema version of this report layout.
    pub format: u32,
    pub command: &'static str,
    pub inputs: Vec<InputDigest>,
    pub results: Vec<UnitResult>,
    pub findings_total: usize,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// One analyzed unit: a class of a file, or a whole simulated topology.
#[derive(Debug, Serialize)]
pub struct UnitResult {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub findings: Vec<Finding>,
    pub notes: Vec<String>,
    /// Subcommand-specific payload (simulation counters, export sizes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
    pub timing_ms: u64,
}

impl UnitResult {
    pub fn new(path: impl Into<String>, class: Option<String>) -> Self {
        UnitResult {
            path: path.into(),
            class,
            findings: Vec::new(),
            notes: Vec::new(),
            summary: None,
            timing_ms: 0,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Finding {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<serde_json::Value>,
}

impl Finding {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Finding {
            kind,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: impl Serialize) -> Self {
        self.data = Some(serde_json::to_value(data).expect("finding data serializes"));
        self
    }
}

impl Report {
    pub fn new(command: &'static str) -> Self {
        Report {
            tool: "smlcheck",
            version: env!("CARGO_PKG_VERSION"),
            format: SCHEMA_VERSION,
            command,
            inputs: Vec::new(),
            results: Vec::new(),
            findings_total: 0,
        }
    }

    /// Recomputes the findings total; call after the results are in.
    pub fn seal(mut self) -> Self {
        self.findings_total = self.results.iter().map(|r| r.findings.len()).sum();
        self
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.findings_total > 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {} {}", self.tool, self.version, self.command);
        for input in &self.inputs {
            let _ = writeln!(out, "input {} sha256={}", input.path, input.sha256);
        }
        for unit in &self.results {
            match &unit.class {
                Some(class) => {
                    let _ = writeln!(out, "{} :: {} ({} ms)", unit.path, class, unit.timing_ms);
                }
                None => {
                    let _ = writeln!(out, "{} ({} ms)", unit.path, unit.timing_ms);
                }
            }
            for finding in &unit.findings {
                let _ = writeln!(out, "  {}: {}", finding.kind, finding.message);
            }
            for note in &unit.notes {
                let _ = writeln!(out, "  note: {note}");
            }
        }
        match self.findings_total {
            0 => out.push_str("no findings\n"),
            1 => out.push_str("1 finding\n"),
            n => {
                let _ = writeln!(out, "{n} findings");
            }
        }
        out
    }
}
