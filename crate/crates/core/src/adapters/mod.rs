//! External-analyzer orchestration: declarative tool descriptors, input
//! compatibility, command planning, execution behind the [`Executor`] seam,
//! and normalization of whatever the tool printed into a [`ToolResult`].

mod executor;

pub use executor::{Executor, MockCall, MockExecutor, RawOutput, SubprocessExecutor};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Contract, Finding, Severity, VulnClass};

/// Fixed wording recorded when a tool cannot analyse a contract's available
/// representations.
pub const SKIP_REASON: &str = "Contract extension doesn't allow this analysis";

/// Cap on stored tool output.
pub const OUTPUT_CAP_BYTES: usize = 1024 * 1024;
const TRUNCATION_MARKER: &str = "\n[output truncated at 1 MiB]";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("tool descriptor {path}: invalid {field}: {detail}")]
    InvalidDescriptor {
        path: String,
        field: &'static str,
        detail: String,
    },
    #[error("missing input file {0}")]
    MissingInputFile(PathBuf),
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisLevel {
    Bytecode,
    Solidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputParser {
    #[default]
    RawText,
    JsonPassthrough,
    LineFindings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub level: Vec<AnalysisLevel>,
    pub image: String,
    pub command_template: Vec<String>,
    /// Seconds.
    pub timeout: f64,
    #[serde(default)]
    pub parser: OutputParser,
    #[serde(default)]
    pub enabled: bool,
}

impl ToolDescriptor {
    pub fn timeout_duration(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }

    pub fn supports(&self, level: AnalysisLevel) -> bool {
        self.level.contains(&level)
    }

    /// Every descriptor invariant, with the offending field named.
    pub fn validate(&self, path: &str) -> Result<(), AdapterError> {
        let invalid = |field, detail: String| AdapterError::InvalidDescriptor {
            path: path.to_string(),
            field,
            detail,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("name", "empty".to_string()));
        }
        if self.level.is_empty() {
            return Err(invalid("level", "must name bytecode, solidity or both".to_string()));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(invalid("timeout", format!("{} is not positive", self.timeout)));
        }
        let holes = self
            .command_template
            .iter()
            .flat_map(|token| placeholders(token))
            .collect::<Vec<&str>>();
        let input_refs = holes.iter().filter(|p| **p == "input_file").count();
        if input_refs != 1 {
            return Err(invalid(
                "command_template",
                format!("{{input_file}} must appear exactly once, found {input_refs}"),
            ));
        }
        if let Some(unknown) = holes.iter().find(|p| !matches!(**p, "input_file" | "workdir")) {
            return Err(invalid(
                "command_template",
                format!("unknown placeholder {{{unknown}}}"),
            ));
        }
        Ok(())
    }
}

/// `{name}` spans inside one template token.
fn placeholders(token: &str) -> Vec<&str> {
    let mut found = Vec::new();
    let mut rest = token;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        found.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    found
}

/// Loads every `*.json` descriptor under `dir`. Malformed files are skipped
/// and reported, never fatal.
pub fn load_descriptors(dir: &Path) -> (Vec<ToolDescriptor>, Vec<(PathBuf, String)>) {
    let mut tools = Vec::new();
    let mut rejected = Vec::new();
    if !dir.exists() {
        // An absent registry directory simply means no tools are registered.
        log::info!("tool directory {} does not exist", dir.display());
        return (tools, rejected);
    }
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) => {
            rejected.push((dir.to_path_buf(), format!("unreadable directory: {e}")));
            return (tools, rejected);
        }
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let outcome = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| serde_json::from_str::<ToolDescriptor>(&text).map_err(|e| e.to_string()))
            .and_then(|tool| {
                tool.validate(&path.display().to_string())
                    .map(|()| tool)
                    .map_err(|e| e.to_string())
            });
        match outcome {
            Ok(tool) => tools.push(tool),
            Err(reason) => {
                log::warn!("skipping tool descriptor {}: {reason}", path.display());
                rejected.push((path, reason));
            }
        }
    }
    (tools, rejected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    Skipped,
    Failed,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool: String,
    pub status: ToolStatus,
    pub output: String,
    /// Seconds, framework-measured.
    pub time_elapsed: f64,
    pub findings: Vec<Finding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandPlan {
    pub tool: String,
    pub argv: Vec<String>,
    pub input_file: PathBuf,
    pub workdir: PathBuf,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompatCheck {
    Ok,
    Skip(&'static str),
}

/// A tool fits a contract when some declared level has its artifact present:
/// bytecode level needs non-empty bytecode, solidity level needs source.
pub fn check_compatibility(tool: &ToolDescriptor, contract: &Contract) -> CompatCheck {
    let bytecode_fits = tool.supports(AnalysisLevel::Bytecode) && !contract.bytecode.is_empty();
    let solidity_fits = tool.supports(AnalysisLevel::Solidity) && contract.source_available;
    if bytecode_fits || solidity_fits {
        CompatCheck::Ok
    } else {
        CompatCheck::Skip(SKIP_REASON)
    }
}

/// Resolves the command template against the contract's input file in
/// `workdir`. Dual-level tools prefer the richer `.sol` artifact.
pub fn plan_commands(
    tool: &ToolDescriptor,
    contract: &Contract,
    workdir: &Path,
) -> Result<CommandPlan, AdapterError> {
    let use_source = tool.supports(AnalysisLevel::Solidity) && contract.source_available;
    let extension = if use_source { "sol" } else { "hex" };
    let input_file = workdir.join(format!("{}.{extension}", contract.id()));
    if !input_file.is_file() {
        return Err(AdapterError::MissingInputFile(input_file));
    }
    let workdir_text = workdir.display().to_string();
    let input_text = input_file.display().to_string();
    let argv = tool
        .command_template
        .iter()
        .map(|token| {
            token
                .replace("{input_file}", &input_text)
                .replace("{workdir}", &workdir_text)
        })
        .collect();
    Ok(CommandPlan {
        tool: tool.name.clone(),
        argv,
        input_file,
        workdir: workdir.to_path_buf(),
        timeout: tool.timeout_duration(),
    })
}

/// Result for a tool that never ran because the contract lacks a usable
/// representation. Mirrors the stored shape of real runs: the reason text is
/// the output.
pub fn skipped_result(tool: &ToolDescriptor, reason: &str) -> ToolResult {
    ToolResult {
        tool: tool.name.clone(),
        status: ToolStatus::Skipped,
        output: reason.to_string(),
        time_elapsed: 0.0,
        findings: Vec::new(),
        skip_reason: Some(reason.to_string()),
    }
}

fn failed_result(tool: &ToolDescriptor, detail: String) -> ToolResult {
    ToolResult {
        tool: tool.name.clone(),
        status: ToolStatus::Failed,
        output: detail,
        time_elapsed: 0.0,
        findings: Vec::new(),
        skip_reason: None,
    }
}

/// Applies the descriptor's parser strategy to raw process output. Pure.
pub fn normalize(raw: &RawOutput, tool: &ToolDescriptor) -> ToolResult {
    let status = if raw.timed_out {
        ToolStatus::Timeout
    } else if raw.exit_code == 0 {
        ToolStatus::Ok
    } else {
        ToolStatus::Failed
    };

    let mut output = if raw.stderr.is_empty() {
        raw.stdout.clone()
    } else if raw.stdout.is_empty() {
        raw.stderr.clone()
    } else {
        format!("{}\n{}", raw.stdout, raw.stderr)
    };

    let findings = match tool.parser {
        OutputParser::RawText => Vec::new(),
        OutputParser::JsonPassthrough => match parse_json_findings(&raw.stdout, &tool.name) {
            Ok(findings) => findings,
            Err(note) => {
                output.push_str("\n[normalize: ");
                output.push_str(&note);
                output.push(']');
                Vec::new()
            }
        },
        OutputParser::LineFindings => parse_line_findings(&raw.stdout, &tool.name),
    };

    if output.len() > OUTPUT_CAP_BYTES {
        let mut cut = OUTPUT_CAP_BYTES;
        while !output.is_char_boundary(cut) {
            cut -= 1;
        }
        output.truncate(cut);
        output.push_str(TRUNCATION_MARKER);
    }

    // A timed-out record never claims less time than the budget it burned.
    let time_elapsed = if raw.timed_out {
        raw.wall_time.max(tool.timeout)
    } else {
        raw.wall_time.max(0.0)
    };

    ToolResult {
        tool: tool.name.clone(),
        status,
        output,
        time_elapsed,
        findings,
        skip_reason: None,
    }
}

/// Expects a JSON document with an optional top-level `findings` array whose
/// elements follow the Finding schema. Elements that do not parse are
/// dropped and counted.
fn parse_json_findings(stdout: &str, tool_name: &str) -> Result<Vec<Finding>, String> {
    if stdout.trim().is_empty() {
        return Ok(Vec::new());
    }
    let value: serde_json::Value =
        serde_json::from_str(stdout).map_err(|e| format!("output is not valid JSON: {e}"))?;
    let Some(items) = value.get("findings").and_then(|f| f.as_array()) else {
        return Ok(Vec::new());
    };
    let mut findings = Vec::new();
    let mut dropped = 0usize;
    for item in items {
        match serde_json::from_value::<Finding>(item.clone()) {
            Ok(mut finding) => {
                if finding.detector.is_empty() {
                    finding.detector = tool_name.to_string();
                }
                findings.push(finding);
            }
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{tool_name}: dropped {dropped} malformed findings entries");
    }
    Ok(findings)
}

/// Wire format for wrapper scripts: one finding per line, shaped
/// `<vuln_class>:<decimal byte offset>:<free text>`. Unknown classes are
/// dropped and counted; non-matching lines are ignored.
fn parse_line_findings(stdout: &str, tool_name: &str) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut dropped = 0usize;
    for line in stdout.lines() {
        let mut parts = line.splitn(3, ':');
        let (Some(class), Some(offset), Some(message)) =
            (parts.next(), parts.next(), parts.next())
        else {
            continue;
        };
        let Ok(offset) = offset.trim().parse::<usize>() else {
            continue;
        };
        match VulnClass::from_label(class.trim()) {
            Some(vuln_class) => findings.push(Finding::new(
                vuln_class,
                Severity::Medium,
                tool_name,
                Some(offset),
                message.trim(),
            )),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{tool_name}: dropped {dropped} findings with unknown classes");
    }
    findings
}

/// Full per-tool pipeline: compatibility, planning, execution, normalization.
/// Execution problems degrade to a failed result, never an error.
pub fn run_tool(
    tool: &ToolDescriptor,
    contract: &Contract,
    workdir: &Path,
    executor: &dyn Executor,
) -> ToolResult {
    match check_compatibility(tool, contract) {
        CompatCheck::Skip(reason) => skipped_result(tool, reason),
        CompatCheck::Ok => match plan_commands(tool, contract, workdir) {
            Err(e) => failed_result(tool, e.to_string()),
            Ok(plan) => match executor.run(&plan.argv, &plan.workdir, plan.timeout) {
                Ok(raw) => normalize(&raw, tool),
                Err(e) => failed_result(tool, e.to_string()),
            },
        },
    }
}
