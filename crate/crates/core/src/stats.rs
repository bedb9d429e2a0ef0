//! Corpus statistics over the report store. All denominators are contracts
//! in scope with at least one report; each contract contributes its latest
//! report only. "Vulnerable" means a finding of severity low or above,
//! except the usage metrics (selfdestruct/delegatecall) which count info
//! findings too.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::adapters::ToolStatus;
use crate::model::{Severity, VulnClass};
use crate::store::{ScanReport, Selection, Store, StoreError};

/// Analyzer name for the built-in detector pipeline in agreement matrices.
const BUILTIN: &str = "builtin";

#[derive(Debug, Clone, Serialize)]
pub struct StatsSummary {
    /// Contracts in scope with at least one report (the denominator).
    pub total_contracts: usize,
    pub pct_by_vuln_class: BTreeMap<String, Option<f64>>,
    pub pct_by_group: BTreeMap<String, Option<f64>>,
    pub pct_selfdestruct: Option<f64>,
    pub pct_delegatecall: Option<f64>,
    pub pct_outdated_compiler: Option<f64>,
    pub pct_with_source: Option<f64>,
    /// Share of contracts whose latest report ran this tool with status ok.
    pub per_tool_execution_pct: BTreeMap<String, Option<f64>>,
    /// Jaccard index over flagged-contract sets; None when both sets are
    /// empty. Symmetric, diagonal 1 where defined.
    pub agreement: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    /// Pearson correlation of bytecode length vs vulnerable-finding count;
    /// None when n < 3 or either variance is zero.
    pub size_vs_findings: Option<f64>,
}

/// Class groupings reported alongside the per-class table. The sets are
/// configurable; these are the defaults shipped in the config template.
pub fn default_groups() -> BTreeMap<String, Vec<VulnClass>> {
    BTreeMap::from([
        ("arithmetic".to_string(), vec![VulnClass::TypeConversion]),
        (
            "transaction".to_string(),
            vec![
                VulnClass::Reentrancy,
                VulnClass::ExceptionDisorder,
                VulnClass::UnpredictableState,
                VulnClass::UncheckedCall,
                VulnClass::CallsToUnknown,
            ],
        ),
        (
            "access_visibility".to_string(),
            vec![VulnClass::TxOriginAuth, VulnClass::Secrets],
        ),
    ])
}

struct ContractRow {
    size: usize,
    has_source: bool,
    /// Classes with a finding of severity >= low in the latest report.
    vulnerable_classes: BTreeSet<VulnClass>,
    /// Classes with a finding of any severity.
    any_classes: BTreeSet<VulnClass>,
    vulnerable_finding_count: usize,
    /// Tool name -> ran with status ok.
    tool_ok: BTreeMap<String, bool>,
    /// Analyzer name -> classes it flagged (severity >= low).
    flagged_by: BTreeMap<String, BTreeSet<VulnClass>>,
}

fn row_from(report: &ScanReport, size: usize, has_source: bool) -> ContractRow {
    let mut row = ContractRow {
        size,
        has_source,
        vulnerable_classes: BTreeSet::new(),
        any_classes: BTreeSet::new(),
        vulnerable_finding_count: 0,
        tool_ok: BTreeMap::new(),
        flagged_by: BTreeMap::new(),
    };
    let tally = |analyzer: &str, class: VulnClass, severity: Severity, row: &mut ContractRow| {
        row.any_classes.insert(class);
        if severity >= Severity::Low {
            row.vulnerable_classes.insert(class);
            row.vulnerable_finding_count += 1;
            row.flagged_by
                .entry(analyzer.to_string())
                .or_default()
                .insert(class);
        }
    };
    for f in &report.builtin_findings {
        tally(BUILTIN, f.vuln_class, f.severity, &mut row);
    }
    for (name, result) in &report.tool_results {
        row.tool_ok
            .insert(name.clone(), result.status == ToolStatus::Ok);
        for f in &result.findings {
            tally(name, f.vuln_class, f.severity, &mut row);
        }
    }
    row
}

fn pct(count: usize, denom: usize) -> Option<f64> {
    if denom == 0 {
        None
    } else {
        Some(100.0 * count as f64 / denom as f64)
    }
}

fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> Option<f64> {
    let union = a.union(b).count();
    if union == 0 {
        return None;
    }
    let inter = a.intersection(b).count();
    Some(inter as f64 / union as f64)
}

fn pearson(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in points {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x) * (x - mean_x);
        var_y += (y - mean_y) * (y - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

pub fn compute_stats(
    store: &dyn Store,
    scope: &Selection,
    groups: &BTreeMap<String, Vec<VulnClass>>,
) -> Result<StatsSummary, StoreError> {
    // Latest stored version per contract id within scope.
    let mut latest: BTreeMap<String, (usize, bool)> = BTreeMap::new();
    for seq in store.seqs_in(scope) {
        if let Some(record) = store.get_by_seq(seq)? {
            latest.insert(
                record.contract.id(),
                (record.contract.bytecode.len(), record.contract.source.is_some()),
            );
        }
    }

    let mut rows = Vec::new();
    for (id, (size, has_source)) in &latest {
        let reports = store.get_reports(id)?;
        if let Some(report) = reports.last() {
            rows.push(row_from(report, *size, *has_source));
        }
    }
    let denom = rows.len();

    let mut pct_by_vuln_class = BTreeMap::new();
    for class in VulnClass::ALL {
        let count = rows.iter().filter(|r| r.vulnerable_classes.contains(&class)).count();
        pct_by_vuln_class.insert(class.name().to_string(), pct(count, denom));
    }

    let mut pct_by_group = BTreeMap::new();
    for (name, classes) in groups {
        let count = rows
            .iter()
            .filter(|r| classes.iter().any(|c| r.vulnerable_classes.contains(c)))
            .count();
        pct_by_group.insert(name.clone(), pct(count, denom));
    }

    let usage = |class: VulnClass| {
        pct(
            rows.iter().filter(|r| r.any_classes.contains(&class)).count(),
            denom,
        )
    };

    let mut tool_names: BTreeSet<String> = BTreeSet::new();
    for row in &rows {
        tool_names.extend(row.tool_ok.keys().cloned());
    }
    let mut per_tool_execution_pct = BTreeMap::new();
    for name in &tool_names {
        let count = rows
            .iter()
            .filter(|r| r.tool_ok.get(name).copied().unwrap_or(false))
            .count();
        per_tool_execution_pct.insert(name.clone(), pct(count, denom));
    }

    let mut analyzers: BTreeSet<String> = tool_names.clone();
    let flags_builtin = rows.iter().any(|r| r.flagged_by.contains_key(BUILTIN));
    if flags_builtin || denom > 0 {
        analyzers.insert(BUILTIN.to_string());
    }
    let mut flagged_sets: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for name in &analyzers {
        let set: BTreeSet<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.flagged_by.get(name).is_some_and(|s| !s.is_empty()))
            .map(|(i, _)| i)
            .collect();
        flagged_sets.insert(name.clone(), set);
    }
    let mut agreement: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for a in &analyzers {
        let mut inner = BTreeMap::new();
        for b in &analyzers {
            inner.insert(b.clone(), jaccard(&flagged_sets[a], &flagged_sets[b]));
        }
        agreement.insert(a.clone(), inner);
    }

    let points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.size as f64, r.vulnerable_finding_count as f64))
        .collect();

    Ok(StatsSummary {
        total_contracts: denom,
        pct_by_vuln_class,
        pct_by_group,
        pct_selfdestruct: usage(VulnClass::SelfDestructUse),
        pct_delegatecall: usage(VulnClass::DelegateCallUse),
        pct_outdated_compiler: pct(
            rows.iter()
                .filter(|r| r.vulnerable_classes.contains(&VulnClass::OutdatedCompiler))
                .count(),
            denom,
        ),
        pct_with_source: pct(rows.iter().filter(|r| r.has_source).count(), denom),
        per_tool_execution_pct,
        agreement,
        size_vs_findings: pearson(&points),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TimelineEntry {
    pub started_at: DateTime<Utc>,
    pub registry_version: u32,
    pub finding_counts: BTreeMap<String, usize>,
}

pub fn findings_over_time(
    store: &dyn Store,
    contract_id: &str,
) -> Result<Vec<TimelineEntry>, StoreError> {
    if store.get_contract(contract_id)?.is_none() {
        return Err(StoreError::UnknownContract(contract_id.to_string()));
    }
    let mut timeline = Vec::new();
    for report in store.get_reports(contract_id)? {
        let mut finding_counts: BTreeMap<String, usize> = BTreeMap::new();
        for f in report
            .builtin_findings
            .iter()
            .chain(report.tool_results.values().flat_map(|r| &r.findings))
        {
            *finding_counts.entry(f.vuln_class.name().to_string()).or_default() += 1;
        }
        timeline.push(TimelineEntry {
            started_at: report.started_at,
            registry_version: report.registry_version,
            finding_counts,
        });
    }
    Ok(timeline)
}

fn fmt_pct(value: &Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.1}%"),
        None => "n/a".to_string(),
    }
}

/// Aligned plain-text rendering for terminals.
pub fn render_table(stats: &StatsSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "contracts with reports: {}", stats.total_contracts);
    let _ = writeln!(out, "with source: {}", fmt_pct(&stats.pct_with_source));
    let _ = writeln!(out);

    let _ = writeln!(out, "{:<24} {:>8}", "vulnerability class", "share");
    for (name, value) in &stats.pct_by_vuln_class {
        let _ = writeln!(out, "{:<24} {:>8}", name, fmt_pct(value));
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "{:<24} {:>8}", "class group", "share");
    for (name, value) in &stats.pct_by_group {
        let _ = writeln!(out, "{:<24} {:>8}", name, fmt_pct(value));
    }
    let _ = writeln!(out);

    let _ = writeln!(out, "{:<24} {:>8}", "usage metric", "share");
    let _ = writeln!(out, "{:<24} {:>8}", "selfdestruct", fmt_pct(&stats.pct_selfdestruct));
    let _ = writeln!(out, "{:<24} {:>8}", "delegatecall", fmt_pct(&stats.pct_delegatecall));
    let _ = writeln!(
        out,
        "{:<24} {:>8}",
        "outdated compiler",
        fmt_pct(&stats.pct_outdated_compiler)
    );
    let _ = writeln!(out);

    if !stats.per_tool_execution_pct.is_empty() {
        let _ = writeln!(out, "{:<24} {:>8}", "tool executed ok", "share");
        for (name, value) in &stats.per_tool_execution_pct {
            let _ = writeln!(out, "{:<24} {:>8}", name, fmt_pct(value));
        }
        let _ = writeln!(out);
    }

    if !stats.agreement.is_empty() {
        let _ = writeln!(out, "analyzer agreement (Jaccard over flagged contracts)");
        let names: Vec<&String> = stats.agreement.keys().collect();
        let _ = write!(out, "{:<16}", "");
        for name in &names {
            let _ = write!(out, "{:>12}", truncate(name, 12));
        }
        let _ = writeln!(out);
        for a in &names {
            let _ = write!(out, "{:<16}", truncate(a, 16));
            for b in &names {
                let cell = match stats.agreement[*a][*b] {
                    Some(v) => format!("{v:.2}"),
                    None => "n/a".to_string(),
                };
                let _ = write!(out, "{cell:>12}");
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(out);
    }

    let corr = match stats.size_vs_findings {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    };
    let _ = writeln!(out, "size vs findings correlation: {corr}");
    out
}

fn truncate(s: &str, max: usize) -> &str {
    if s.len() <= max {
        s
    } else {
        &s[..max]
    }
}
