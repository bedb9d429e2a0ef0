//! Batch orchestration: plan a scan over a store selection, fan contract ×
//! analyzer pairs across a bounded worker pool, and persist one report per
//! contract. Analyzer failures are recorded in their results; only storage
//! failures abort a batch.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::adapters::{run_tool, Executor, ToolDescriptor, ToolStatus};
use crate::cfg::build_cfg;
use crate::detectors::{run_all, DetectorRegistry};
use crate::disasm::disassemble;
use crate::ingest::write_input_files;
use crate::model::{Contract, Finding};
use crate::store::{ScanReport, Selection, Store, StoreError, StoredContract};

pub const DEFAULT_PARALLELISM: usize = 4;

/// Pseudo-tool name selecting the built-in detector pipeline.
pub const BUILTIN_NAME: &str = "builtin";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("scan plan selects no analyzers")]
    EmptyPlan,
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct ScanPlan {
    pub selection: Selection,
    pub tools: Vec<ToolDescriptor>,
    pub run_builtin: bool,
    pub parallelism: usize,
    pub inputs_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StatusCounts {
    pub ok: usize,
    pub skipped: usize,
    pub failed: usize,
    pub timeout: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.ok + self.skipped + self.failed + self.timeout
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScanSummary {
    pub contracts_scanned: usize,
    pub records_produced: usize,
    pub per_status: StatusCounts,
    pub wall_time: f64,
    /// Engine-level problems only; analyzer failures live in their records.
    pub errors: Vec<String>,
    pub interrupted: bool,
}

/// Shared cancellation flag: scans stop admitting contracts, finish what is
/// in flight, and persist what completed.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

pub fn build_scan_plan(
    selection: Selection,
    tool_names: &[String],
    descriptors: &[ToolDescriptor],
    parallelism: usize,
    inputs_dir: PathBuf,
) -> Result<ScanPlan, EngineError> {
    let mut run_builtin = false;
    let mut tools: Vec<ToolDescriptor> = Vec::new();
    for name in tool_names {
        if name == BUILTIN_NAME {
            run_builtin = true;
            continue;
        }
        let Some(tool) = descriptors.iter().find(|t| &t.name == name) else {
            return Err(EngineError::UnknownTool(name.clone()));
        };
        if !tool.enabled {
            log::warn!("tool {name} is disabled; skipping it");
            continue;
        }
        if !tools.iter().any(|t| t.name == tool.name) {
            tools.push(tool.clone());
        }
    }
    if tools.is_empty() && !run_builtin {
        return Err(EngineError::EmptyPlan);
    }
    Ok(ScanPlan {
        selection,
        tools,
        run_builtin,
        parallelism: parallelism.max(1),
        inputs_dir,
    })
}

/// Emits one stderr line per 10% decile crossed.
pub(crate) struct ProgressMeter {
    total: usize,
    done: usize,
    next_decile: usize,
}

impl ProgressMeter {
    pub(crate) fn new(total: usize) -> Self {
        ProgressMeter {
            total,
            done: 0,
            next_decile: 1,
        }
    }

    pub(crate) fn advance(&mut self) -> Vec<String> {
        self.done += 1;
        let mut lines = Vec::new();
        if self.total == 0 {
            return lines;
        }
        let pct = self.done * 100 / self.total;
        while self.next_decile <= 10 && pct >= self.next_decile * 10 {
            lines.push(format!(
                "{} - {} items processed. Progress is {}%.",
                Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
                self.done,
                self.next_decile * 10
            ));
            self.next_decile += 1;
        }
        lines
    }
}

enum Analyzer {
    Builtin,
    Tool(Arc<ToolDescriptor>),
}

struct Job {
    seq: u64,
    contract: Arc<Contract>,
    workdir: PathBuf,
    analyzer: Analyzer,
}

enum AnalyzerOutput {
    Builtin(Vec<Finding>),
    Tool(crate::adapters::ToolResult),
}

struct JobResult {
    seq: u64,
    output: AnalyzerOutput,
}

struct Pending {
    contract_id: String,
    started_at: chrono::DateTime<chrono::Utc>,
    remaining: usize,
    builtin_findings: Vec<Finding>,
    tool_results: BTreeMap<String, crate::adapters::ToolResult>,
}

fn process_job(job: &Job, registry: &DetectorRegistry, executor: &dyn Executor) -> AnalyzerOutput {
    match &job.analyzer {
        Analyzer::Builtin => {
            let cfg = build_cfg(disassemble(&job.contract.bytecode));
            AnalyzerOutput::Builtin(run_all(&job.contract, &cfg, registry))
        }
        Analyzer::Tool(tool) => {
            AnalyzerOutput::Tool(run_tool(tool, &job.contract, &job.workdir, executor))
        }
    }
}

pub fn run_scan(
    plan: &ScanPlan,
    registry: &DetectorRegistry,
    executor: &dyn Executor,
    store: &mut dyn Store,
    cancel: &CancelToken,
) -> Result<ScanSummary, EngineError> {
    let seqs = store.seqs_in(&plan.selection);
    run_scan_seqs(plan, &seqs, registry, executor, store, cancel)
}

fn run_scan_seqs(
    plan: &ScanPlan,
    seqs: &[u64],
    registry: &DetectorRegistry,
    executor: &dyn Executor,
    store: &mut dyn Store,
    cancel: &CancelToken,
) -> Result<ScanSummary, EngineError> {
    let started = Instant::now();
    let analyzers_per_contract = plan.tools.len() + usize::from(plan.run_builtin);
    let mut summary = ScanSummary::default();
    if analyzers_per_contract == 0 || seqs.is_empty() {
        summary.wall_time = started.elapsed().as_secs_f64();
        summary.interrupted = cancel.is_cancelled();
        return Ok(summary);
    }
    std::fs::create_dir_all(&plan.inputs_dir)
        .map_err(|e| StoreError::Failure(format!("inputs dir: {e}")))?;

    let tools: Vec<Arc<ToolDescriptor>> = plan.tools.iter().cloned().map(Arc::new).collect();
    let mut progress = ProgressMeter::new(seqs.len() * analyzers_per_contract);
    let (job_tx, job_rx) = mpsc::sync_channel::<Job>(plan.parallelism * 2);
    let job_rx = Arc::new(Mutex::new(job_rx));
    let (result_tx, result_rx) = mpsc::channel::<JobResult>();

    let mut fatal: Option<EngineError> = None;
    thread::scope(|scope| {
        for _ in 0..plan.parallelism {
            let job_rx = Arc::clone(&job_rx);
            let result_tx = result_tx.clone();
            scope.spawn(move || loop {
                let job = { job_rx.lock().expect("job queue lock").recv() };
                let Ok(job) = job else { break };
                let output = process_job(&job, registry, executor);
                let _ = result_tx.send(JobResult {
                    seq: job.seq,
                    output,
                });
            });
        }
        drop(result_tx);

        let mut pending: HashMap<u64, Pending> = HashMap::new();
        let mut outstanding = 0usize;

        let mut handle = |result: JobResult,
                          pending: &mut HashMap<u64, Pending>,
                          store: &mut dyn Store,
                          summary: &mut ScanSummary|
         -> Result<(), EngineError> {
            for line in progress.advance() {
                eprintln!("{line}");
            }
            let entry = pending.get_mut(&result.seq).expect("known pending seq");
            match result.output {
                AnalyzerOutput::Builtin(findings) => entry.builtin_findings = findings,
                AnalyzerOutput::Tool(tool_result) => {
                    entry.tool_results.insert(tool_result.tool.clone(), tool_result);
                }
            }
            entry.remaining -= 1;
            if entry.remaining == 0 {
                let done = pending.remove(&result.seq).expect("pending entry");
                let report = ScanReport {
                    contract_id: done.contract_id,
                    started_at: done.started_at,
                    registry_version: registry.registry_version,
                    builtin_findings: done.builtin_findings,
                    tool_results: done.tool_results,
                };
                if plan.run_builtin {
                    summary.per_status.ok += 1;
                }
                for tool_result in report.tool_results.values() {
                    match tool_result.status {
                        ToolStatus::Ok => summary.per_status.ok += 1,
                        ToolStatus::Skipped => summary.per_status.skipped += 1,
                        ToolStatus::Failed => summary.per_status.failed += 1,
                        ToolStatus::Timeout => summary.per_status.timeout += 1,
                    }
                }
                store.put_report(report)?;
                summary.contracts_scanned += 1;
                summary.records_produced += analyzers_per_contract;
            }
            Ok(())
        };

        'feed: for &seq in seqs {
            if cancel.is_cancelled() {
                summary.interrupted = true;
                break;
            }
            let record: StoredContract = match store.get_by_seq(seq) {
                Ok(Some(record)) => record,
                Ok(None) => {
                    summary
                        .errors
                        .push(format!("seq {seq} vanished from the store"));
                    continue;
                }
                Err(e) => {
                    fatal = Some(e.into());
                    break;
                }
            };
            let contract = Arc::new(record.contract);
            let workdir = plan.inputs_dir.join(contract.id());
            if let Err(e) = std::fs::create_dir_all(&workdir)
                .map_err(StoreError::from)
                .and_then(|()| write_input_files(&contract, &workdir).map_err(|e| StoreError::Failure(e.to_string())).map(|_| ()))
            {
                // Tools will report the missing input themselves; note it once.
                log::warn!("input files for {}: {e}", contract.id());
            }
            pending.insert(
                seq,
                Pending {
                    contract_id: contract.id(),
                    started_at: Utc::now(),
                    remaining: analyzers_per_contract,
                    builtin_findings: Vec::new(),
                    tool_results: BTreeMap::new(),
                },
            );
            if plan.run_builtin {
                let job = Job {
                    seq,
                    contract: Arc::clone(&contract),
                    workdir: workdir.clone(),
                    analyzer: Analyzer::Builtin,
                };
                if job_tx.send(job).is_err() {
                    break 'feed;
                }
                outstanding += 1;
            }
            for tool in &tools {
                let job = Job {
                    seq,
                    contract: Arc::clone(&contract),
                    workdir: workdir.clone(),
                    analyzer: Analyzer::Tool(Arc::clone(tool)),
                };
                if job_tx.send(job).is_err() {
                    break 'feed;
                }
                outstanding += 1;
            }
            // Keep memory bounded: drain whatever has finished so far.
            while let Ok(result) = result_rx.try_recv() {
                outstanding -= 1;
                if let Err(e) = handle(result, &mut pending, store, &mut summary) {
                    fatal = Some(e);
                    break 'feed;
                }
            }
        }
        drop(job_tx);

        while outstanding > 0 {
            let Ok(result) = result_rx.recv() else { break };
            outstanding -= 1;
            if fatal.is_some() {
                continue;
            }
            if let Err(e) = handle(result, &mut pending, store, &mut summary) {
                fatal = Some(e);
            }
        }
    });

    if let Some(e) = fatal {
        return Err(e);
    }
    summary.interrupted = summary.interrupted || cancel.is_cancelled();
    summary.wall_time = started.elapsed().as_secs_f64();
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct FindingsDiff {
    pub contract_id: String,
    pub added: Vec<Finding>,
    pub removed: Vec<Finding>,
}

#[derive(Debug, Serialize)]
pub struct MonitorOutcome {
    pub summary: ScanSummary,
    pub diffs: Vec<FindingsDiff>,
}

fn all_findings(report: &ScanReport) -> Vec<Finding> {
    let mut findings = report.builtin_findings.clone();
    for result in report.tool_results.values() {
        findings.extend(result.findings.iter().cloned());
    }
    findings
}

/// Multiset difference in both directions.
fn diff_findings(old: &[Finding], new: &[Finding]) -> (Vec<Finding>, Vec<Finding>) {
    let mut counts: HashMap<&Finding, i64> = HashMap::new();
    for f in old {
        *counts.entry(f).or_default() -= 1;
    }
    for f in new {
        *counts.entry(f).or_default() += 1;
    }
    let mut added = Vec::new();
    let mut removed = Vec::new();
    for f in new {
        let c = counts.get_mut(f).expect("counted finding");
        if *c > 0 {
            added.push(f.clone());
            *c -= 1;
        }
    }
    for f in old {
        let c = counts.get_mut(f).expect("counted finding");
        if *c < 0 {
            removed.push(f.clone());
            *c += 1;
        }
    }
    (added, removed)
}

/// Re-scans every contract whose latest report predates the current detector
/// registry (or that has no report at all) and reports finding churn.
pub fn monitor_rescan(
    store: &mut dyn Store,
    registry: &DetectorRegistry,
    tools: &[ToolDescriptor],
    executor: &dyn Executor,
    inputs_dir: PathBuf,
    parallelism: usize,
    cancel: &CancelToken,
) -> Result<MonitorOutcome, EngineError> {
    // Latest version per contract id, in first-seen order.
    let mut latest_seq: BTreeMap<String, u64> = BTreeMap::new();
    for seq in store.seqs_in(&Selection::All) {
        if let Some(record) = store.get_by_seq(seq)? {
            latest_seq.insert(record.contract.id(), seq);
        }
    }

    let mut stale: Vec<(String, u64, Option<ScanReport>)> = Vec::new();
    for (id, seq) in latest_seq {
        let prior = store.get_reports(&id)?.into_iter().next_back();
        let outdated = prior
            .as_ref()
            .map(|r| r.registry_version < registry.registry_version)
            .unwrap_or(true);
        if outdated {
            stale.push((id, seq, prior));
        }
    }

    let plan = ScanPlan {
        selection: Selection::All,
        tools: tools.to_vec(),
        run_builtin: true,
        parallelism: parallelism.max(1),
        inputs_dir,
    };
    let seqs: Vec<u64> = stale.iter().map(|(_, seq, _)| *seq).collect();
    let summary = run_scan_seqs(&plan, &seqs, registry, executor, store, cancel)?;

    let mut diffs = Vec::new();
    for (id, _, prior) in stale {
        let Some(latest) = store.get_reports(&id)?.into_iter().next_back() else {
            continue;
        };
        if latest.registry_version < registry.registry_version {
            // Interrupted before this one was rescanned.
            continue;
        }
        let old = prior.map(|r| all_findings(&r)).unwrap_or_default();
        let new = all_findings(&latest);
        let (added, removed) = diff_findings(&old, &new);
        diffs.push(FindingsDiff {
            contract_id: id,
            added,
            removed,
        });
    }
    Ok(MonitorOutcome { summary, diffs })
}
