//! Built-in bytecode and source detectors.
//!
//! Each detector is a pure function over the disassembly or CFG. Instructions
//! inside the metadata trailer never trigger findings. The registry carries
//! enable flags and thresholds; its version bumps whenever the detector set
//! or a heuristic changes, so stored reports can be recognised as stale.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};

use crate::cfg::Cfg;
use crate::disasm::{op, Instruction};
use crate::model::{Contract, Finding, Severity, VulnClass};
use crate::pragma::{self, Version};

/// EVM call-stack depth limit; chains approaching it can be starved by a
/// hostile caller.
pub const STACK_LIMIT: usize = 1024;

pub const CURRENT_REGISTRY_VERSION: u32 = 1;

pub const DEFAULT_PRAGMA_FLOOR: Version = Version::new(0, 8, 0);
pub const DEFAULT_CALL_CHAIN_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorEntry {
    pub id: &'static str,
    pub vuln_class: VulnClass,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSettings {
    pub pragma_floor: Version,
    pub call_chain_depth: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            pragma_floor: DEFAULT_PRAGMA_FLOOR,
            call_chain_depth: DEFAULT_CALL_CHAIN_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRegistry {
    pub detectors: Vec<DetectorEntry>,
    pub registry_version: u32,
    pub settings: DetectorSettings,
}

pub fn default_registry() -> DetectorRegistry {
    let entry = |id, vuln_class, enabled| DetectorEntry {
        id,
        vuln_class,
        enabled,
    };
    DetectorRegistry {
        detectors: vec![
            entry("reentrancy", VulnClass::Reentrancy, true),
            entry("time_dependence", VulnClass::TimeRestrictions, true),
            entry("bad_randomness", VulnClass::RandomNumbers, true),
            entry("tx_origin", VulnClass::TxOriginAuth, true),
            entry("unchecked_call", VulnClass::ExceptionDisorder, true),
            entry("selfdestruct_use", VulnClass::SelfDestructUse, true),
            entry("delegatecall_use", VulnClass::DelegateCallUse, true),
            entry("outdated_pragma", VulnClass::OutdatedCompiler, true),
            // Legacy depth-attack heuristic; noisy, so off unless asked for.
            entry("stack_size", VulnClass::StackSize, false),
        ],
        registry_version: CURRENT_REGISTRY_VERSION,
        settings: DetectorSettings::default(),
    }
}

impl DetectorRegistry {
    /// Returns false when no detector has that id.
    pub fn set_enabled(&mut self, id: &str, enabled: bool) -> bool {
        match self.detectors.iter_mut().find(|d| d.id == id) {
            Some(entry) => {
                entry.enabled = enabled;
                true
            }
            None => false,
        }
    }

    pub fn is_enabled(&self, id: &str) -> bool {
        self.detectors.iter().any(|d| d.id == id && d.enabled)
    }

    pub fn ids(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.detectors.iter().map(|d| d.id)
    }
}

fn live(instr: &Instruction) -> bool {
    !instr.in_metadata
}

const CALL_FAMILY: [u8; 4] = [op::CALL, op::CALLCODE, op::DELEGATECALL, op::STATICCALL];

/// High-severity finding at each CALL from which an SSTORE is reachable on
/// some CFG path, including later in the same block.
pub fn detect_reentrancy(cfg: &Cfg) -> Vec<Finding> {
    let n = cfg.blocks.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for edge in &cfg.edges {
        preds[edge.to].push(edge.from);
    }

    let block_has_sstore: Vec<bool> = cfg
        .blocks
        .iter()
        .map(|b| {
            cfg.block_instructions(b)
                .iter()
                .any(|i| live(i) && i.opcode == op::SSTORE)
        })
        .collect();

    // reaches[b]: a path of length >= 0 from b hits a block with SSTORE.
    let mut reaches = block_has_sstore.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&b| reaches[b]).collect();
    while let Some(b) = queue.pop_front() {
        for &p in &preds[b] {
            if !reaches[p] {
                reaches[p] = true;
                queue.push_back(p);
            }
        }
    }

    let mut findings = Vec::new();
    for block in &cfg.blocks {
        let instrs = cfg.block_instructions(block);
        for (i, instr) in instrs.iter().enumerate() {
            if instr.opcode != op::CALL || !live(instr) {
                continue;
            }
            let later_in_block = instrs[i + 1..]
                .iter()
                .any(|x| live(x) && x.opcode == op::SSTORE);
            let via_successors = cfg.successors(block.id).any(|s| reaches[s]);
            if later_in_block || via_successors {
                findings.push(Finding::new(
                    VulnClass::Reentrancy,
                    Severity::High,
                    "reentrancy",
                    Some(instr.offset),
                    "storage write reachable after external call",
                ));
            }
        }
    }
    findings
}

/// Medium finding per block mixing TIMESTAMP with a conditional jump; a
/// single info finding when TIMESTAMP is read but never used beside one.
pub fn detect_time_dependence(cfg: &Cfg) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut first_timestamp = None;
    for block in &cfg.blocks {
        let instrs = cfg.block_instructions(block);
        let ts = instrs
            .iter()
            .find(|i| live(i) && i.opcode == op::TIMESTAMP);
        let Some(ts) = ts else { continue };
        first_timestamp.get_or_insert(ts.offset);
        if instrs.iter().any(|i| live(i) && i.opcode == op::JUMPI) {
            findings.push(Finding::new(
                VulnClass::TimeRestrictions,
                Severity::Medium,
                "time_dependence",
                Some(ts.offset),
                "block timestamp feeds a branch condition",
            ));
        }
    }
    if findings.is_empty() {
        if let Some(offset) = first_timestamp {
            findings.push(Finding::new(
                VulnClass::TimeRestrictions,
                Severity::Info,
                "time_dependence",
                Some(offset),
                "block timestamp read",
            ));
        }
    }
    findings
}

/// One medium finding when BLOCKHASH appears, or at least two distinct block
/// fields usable as an entropy source do.
pub fn detect_bad_randomness(instructions: &[Instruction]) -> Vec<Finding> {
    let fields = [op::TIMESTAMP, op::NUMBER, op::PREVRANDAO, op::COINBASE];
    let mut first_by_opcode: Vec<(u8, usize)> = Vec::new();
    for instr in instructions.iter().filter(|i| live(i)) {
        let relevant = instr.opcode == op::BLOCKHASH || fields.contains(&instr.opcode);
        if relevant && !first_by_opcode.iter().any(|&(o, _)| o == instr.opcode) {
            first_by_opcode.push((instr.opcode, instr.offset));
        }
    }

    let blockhash = first_by_opcode.iter().find(|&&(o, _)| o == op::BLOCKHASH);
    let field_hits: Vec<&(u8, usize)> = first_by_opcode
        .iter()
        .filter(|&&(o, _)| o != op::BLOCKHASH)
        .collect();

    let (offset, message) = if let Some(&(_, off)) = blockhash {
        (off, "blockhash used as entropy source".to_string())
    } else if field_hits.len() >= 2 {
        let names: Vec<&str> = field_hits
            .iter()
            .map(|&&(o, _)| crate::disasm::OPCODE_TABLE[o as usize].unwrap_or("?"))
            .collect();
        let offset = field_hits.iter().map(|&&(_, off)| off).min().unwrap();
        (
            offset,
            format!("block fields combined as entropy source: {}", names.join(", ")),
        )
    } else {
        return Vec::new();
    };

    vec![Finding::new(
        VulnClass::RandomNumbers,
        Severity::Medium,
        "bad_randomness",
        Some(offset),
        message,
    )]
}

/// High finding per block comparing ORIGIN with EQ; info per other ORIGIN
/// read.
pub fn detect_tx_origin(cfg: &Cfg) -> Vec<Finding> {
    let mut findings = Vec::new();
    for block in &cfg.blocks {
        let instrs = cfg.block_instructions(block);
        let origins: Vec<&Instruction> = instrs
            .iter()
            .filter(|i| live(i) && i.opcode == op::ORIGIN)
            .collect();
        if origins.is_empty() {
            continue;
        }
        if instrs.iter().any(|i| live(i) && i.opcode == op::EQ) {
            findings.push(Finding::new(
                VulnClass::TxOriginAuth,
                Severity::High,
                "tx_origin",
                Some(origins[0].offset),
                "tx.origin compared for authorization",
            ));
        } else {
            for origin in origins {
                findings.push(Finding::new(
                    VulnClass::TxOriginAuth,
                    Severity::Info,
                    "tx_origin",
                    Some(origin.offset),
                    "tx.origin read",
                ));
            }
        }
    }
    findings
}

/// Medium finding at each call-family instruction whose status code is
/// dropped by an immediately following POP.
pub fn detect_unchecked_call(instructions: &[Instruction]) -> Vec<Finding> {
    let mut findings = Vec::new();
    for pair in instructions.windows(2) {
        let (call, next) = (&pair[0], &pair[1]);
        if CALL_FAMILY.contains(&call.opcode)
            && live(call)
            && next.opcode == op::POP
            && live(next)
        {
            findings.push(Finding::new(
                VulnClass::ExceptionDisorder,
                Severity::Medium,
                "unchecked_call",
                Some(call.offset),
                "call status discarded without check",
            ));
        }
    }
    findings
}

/// Info finding per SELFDESTRUCT and per DELEGATECALL outside metadata;
/// usage statistics are derived from these.
pub fn detect_opcode_usage(instructions: &[Instruction]) -> Vec<Finding> {
    let mut findings = Vec::new();
    for instr in instructions.iter().filter(|i| live(i)) {
        match instr.opcode {
            op::SELFDESTRUCT => findings.push(Finding::new(
                VulnClass::SelfDestructUse,
                Severity::Info,
                "selfdestruct_use",
                Some(instr.offset),
                "selfdestruct opcode present",
            )),
            op::DELEGATECALL => findings.push(Finding::new(
                VulnClass::DelegateCallUse,
                Severity::Info,
                "delegatecall_use",
                Some(instr.offset),
                "delegatecall opcode present",
            )),
            _ => {}
        }
    }
    findings
}

/// Low finding per pragma that admits no compiler at or above `floor`; info
/// findings for missing or unparseable pragmas.
pub fn detect_outdated_pragma(source: &str, floor: Version) -> Vec<Finding> {
    let mk = |severity, message: String| {
        Finding::new(
            VulnClass::OutdatedCompiler,
            severity,
            "outdated_pragma",
            None,
            message,
        )
    };
    let pragmas = pragma::extract_pragmas(source);
    if pragmas.is_empty() {
        return vec![mk(
            Severity::Info,
            "no solidity version pragma declared".to_string(),
        )];
    }
    let mut findings = Vec::new();
    for text in pragmas {
        match pragma::parse_constraint(&text) {
            Ok(set) => {
                if !set.admits_at_or_above(floor) {
                    findings.push(mk(
                        Severity::Low,
                        format!("pragma \"{text}\" admits no compiler at or above {floor}"),
                    ));
                }
            }
            Err(_) => findings.push(mk(
                Severity::Info,
                format!("unparseable version pragma \"{text}\""),
            )),
        }
    }
    findings
}

/// Info finding when some execution path chains `depth` or more external
/// calls. Walk semantics: a loop body's calls count once per traversal, so a
/// call inside a cycle always crosses the threshold.
pub fn detect_stack_size(cfg: &Cfg, depth: usize) -> Vec<Finding> {
    if cfg.blocks.is_empty() || depth == 0 {
        return Vec::new();
    }
    let calls_in: Vec<usize> = cfg
        .blocks
        .iter()
        .map(|b| {
            cfg.block_instructions(b)
                .iter()
                .filter(|i| live(i) && CALL_FAMILY.contains(&i.opcode))
                .count()
        })
        .collect();

    // Search over (block, calls so far) with counts capped at the threshold;
    // the state space is finite, so cycles terminate.
    let entry = cfg.entry.expect("non-empty cfg has an entry");
    let mut best: Vec<usize> = vec![usize::MAX; cfg.blocks.len()];
    let start = calls_in[entry].min(depth);
    best[entry] = start;
    let mut queue = VecDeque::from([(entry, start)]);
    let mut hit = start >= depth;
    while let Some((block, count)) = queue.pop_front() {
        if hit {
            break;
        }
        for s in cfg.successors(block) {
            let next = (count + calls_in[s]).min(depth);
            if next >= depth {
                hit = true;
                break;
            }
            if best[s] == usize::MAX || next > best[s] {
                best[s] = next;
                queue.push_back((s, next));
            }
        }
    }
    if !hit {
        return Vec::new();
    }

    let first_call = cfg
        .instructions
        .iter()
        .find(|i| live(i) && CALL_FAMILY.contains(&i.opcode))
        .map(|i| i.offset);
    vec![Finding::new(
        VulnClass::StackSize,
        Severity::Info,
        "stack_size",
        first_call,
        format!("a path chains {depth} or more external calls"),
    )]
}

fn run_detector(
    id: &str,
    contract: &Contract,
    cfg: &Cfg,
    settings: &DetectorSettings,
) -> Vec<Finding> {
    match id {
        "reentrancy" => detect_reentrancy(cfg),
        "time_dependence" => detect_time_dependence(cfg),
        "bad_randomness" => detect_bad_randomness(&cfg.instructions),
        "tx_origin" => detect_tx_origin(cfg),
        "unchecked_call" => detect_unchecked_call(&cfg.instructions),
        "selfdestruct_use" | "delegatecall_use" => detect_opcode_usage(&cfg.instructions),
        "outdated_pragma" => match &contract.source {
            Some(source) => detect_outdated_pragma(source, settings.pragma_floor),
            None => Vec::new(),
        },
        "stack_size" => detect_stack_size(cfg, settings.call_chain_depth),
        _ => Vec::new(),
    }
}

/// Converts a detector panic into an info finding instead of aborting the
/// contract's scan.
fn guarded(entry: &DetectorEntry, run: impl FnOnce() -> Vec<Finding>) -> Vec<Finding> {
    match catch_unwind(AssertUnwindSafe(run)) {
        Ok(findings) => findings,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            log::warn!("detector {} failed: {detail}", entry.id);
            vec![Finding::new(
                entry.vuln_class,
                Severity::Info,
                "detector-error",
                None,
                format!("detector {} failed: {detail}", entry.id),
            )]
        }
    }
}

/// Runs every enabled detector over one contract. Deterministic: findings
/// come back sorted by (detector id, location).
pub fn run_all(contract: &Contract, cfg: &Cfg, registry: &DetectorRegistry) -> Vec<Finding> {
    let mut findings = Vec::new();
    for entry in registry.detectors.iter().filter(|d| d.enabled) {
        let produced = guarded(entry, || {
            run_detector(entry.id, contract, cfg, &registry.settings)
        });
        // detect_opcode_usage serves two registry entries; keep only the
        // findings belonging to this one so enable flags stay independent.
        findings.extend(
            produced
                .into_iter()
                .filter(|f| f.detector == entry.id || f.detector == "detector-error"),
        );
    }
    findings.sort_by(|a, b| {
        (a.detector.as_str(), a.location, a.vuln_class.name())
            .cmp(&(b.detector.as_str(), b.location, b.vuln_class.name()))
    });
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::build_cfg;
    use crate::disasm::{decode_hex, disassemble};
    use crate::model::ContractOrigin;
    use proptest::prelude::*;

    fn cfg_of(hex: &str) -> Cfg {
        build_cfg(disassemble(&decode_hex(hex).unwrap()))
    }

    fn offsets(findings: &[Finding]) -> Vec<usize> {
        findings.iter().filter_map(|f| f.location).collect()
    }

    // ---- reentrancy -------------------------------------------------------

    /// Independent oracle: bounded walk enumeration. From each CALL, first
    /// the rest of its own block, then every walk of at most |blocks| edges
    /// through successor blocks, checking for a live SSTORE.
    fn oracle_reentrancy_offsets(cfg: &Cfg) -> Vec<usize> {
        fn sstore_in(cfg: &Cfg, block: usize) -> bool {
            cfg.block_instructions(&cfg.blocks[block])
                .iter()
                .any(|i| i.opcode == op::SSTORE && !i.in_metadata)
        }
        fn walk_hits(cfg: &Cfg, block: usize, budget: usize) -> bool {
            if budget == 0 {
                return false;
            }
            for s in cfg.successors(block) {
                if sstore_in(cfg, s) || walk_hits(cfg, s, budget - 1) {
                    return true;
                }
            }
            false
        }

        let mut hits = Vec::new();
        for block in &cfg.blocks {
            let instrs = cfg.block_instructions(block);
            for (i, instr) in instrs.iter().enumerate() {
                if instr.opcode != op::CALL || instr.in_metadata {
                    continue;
                }
                let rest = instrs[i + 1..]
                    .iter()
                    .any(|x| x.opcode == op::SSTORE && !x.in_metadata);
                if rest || walk_hits(cfg, block.id, cfg.blocks.len()) {
                    hits.push(instr.offset);
                }
            }
        }
        hits
    }

    /// Reentrancy corpus: every program stays at 8 blocks or fewer.
    const REENTRANCY_CORPUS: &[&str] = &[
        "0x",
        "0x00",
        // CALL then SSTORE in one block
        "0xf15500",
        // SSTORE before CALL, nothing after
        "0x55f100",
        // CALL, resolved jump to a block that stores
        "0xf1600556005b5500",
        // CALL, resolved jump to a clean block
        "0xf1600556005b0000",
        // CALL, unresolved jump, some JUMPDEST block stores
        "0xf13356005b5500",
        // CALL, unresolved jump, no JUMPDEST block stores
        "0xf13356005b0000",
        // two CALLs, only the second precedes an SSTORE
        "0x55f100f15500",
        // conditional: branch-true arm stores
        "0xf16001600757005b5500",
        // conditional: neither arm stores
        "0xf16001600757005b0000",
        // self-loop: store before the call inside a cycle
        "0x5b55f1600056",
        // call sits inside the metadata trailer
        "0x00a1f1550003",
        // unresolved jump reaches a JUMPDEST+SSTORE inside metadata
        "0xf13356a25b550003",
        // sstore only in metadata
        "0xf1335600a1550002",
        // chain of resolved jumps ending in a store
        "0xf1600556005b600a56005b5500",
        // diamond: both arms rejoin, store after the join
        "0x6001600a57f1600e56005b600e565b5500",
    ];

    #[test]
    fn reentrancy_matches_walk_enumeration_oracle() {
        for hex in REENTRANCY_CORPUS {
            let cfg = cfg_of(hex);
            assert!(cfg.blocks.len() <= 8, "{hex}: corpus limit");
            let got = offsets(&detect_reentrancy(&cfg));
            let want = oracle_reentrancy_offsets(&cfg);
            assert_eq!(got, want, "{hex}");
        }
    }

    #[test]
    fn reentrancy_same_block_fixture() {
        let findings = detect_reentrancy(&cfg_of("0xf15500"));
        assert_eq!(offsets(&findings), vec![0]);
        assert_eq!(findings[0].severity, Severity::High);
        assert_eq!(findings[0].vuln_class, VulnClass::Reentrancy);
    }

    #[test]
    fn reentrancy_requires_store_after_call() {
        assert!(detect_reentrancy(&cfg_of("0x55f100")).is_empty());
        assert!(detect_reentrancy(&cfg_of("0x600101")).is_empty());
    }

    #[test]
    fn reentrancy_ignores_metadata_sstore() {
        // CALL CALLER JUMP STOP | metadata: a1 55 00 02 (SSTORE flagged)
        let cfg = cfg_of("0xf1335600a1550002");
        let meta_stores: Vec<&Instruction> = cfg
            .instructions
            .iter()
            .filter(|i| i.opcode == op::SSTORE)
            .collect();
        assert!(meta_stores.iter().all(|i| i.in_metadata), "fixture setup");
        assert!(detect_reentrancy(&cfg).is_empty());
    }

    // ---- time dependence --------------------------------------------------

    #[test]
    fn timestamp_with_branch_is_medium() {
        // TIMESTAMP PUSH1 06 JUMPI STOP JUMPDEST STOP
        let findings = detect_time_dependence(&cfg_of("0x42600657005b00"));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Medium);
        assert_eq!(findings[0].location, Some(0));
    }

    #[test]
    fn timestamp_without_branch_is_single_info() {
        let findings = detect_time_dependence(&cfg_of("0x424200"));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Info);
    }

    #[test]
    fn timestamp_absent_is_clean() {
        assert!(detect_time_dependence(&cfg_of("0x600100")).is_empty());
    }

    #[test]
    fn co_located_block_suppresses_info_for_others() {
        // block0: TIMESTAMP JUMPI(unresolved via PUSH to dest) ... block with TIMESTAMP alone
        // TIMESTAMP PUSH1 06 JUMPI STOP | JUMPDEST(5)? offsets: 42@0 6006@1 57@3 00@4 5b@5 42@6 00@7
        let findings = detect_time_dependence(&cfg_of("0x42600557005b4200"));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Medium);
    }

    // ---- bad randomness ---------------------------------------------------

    #[test]
    fn blockhash_flags() {
        let findings = detect_bad_randomness(&disassemble(&decode_hex("0x404200").unwrap()));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Medium);
        assert_eq!(findings[0].location, Some(0));
    }

    #[test]
    fn timestamp_alone_is_not_randomness() {
        assert!(detect_bad_randomness(&disassemble(&decode_hex("0x4200").unwrap())).is_empty());
    }

    #[test]
    fn two_distinct_block_fields_flag() {
        // TIMESTAMP NUMBER
        let findings = detect_bad_randomness(&disassemble(&decode_hex("0x424300").unwrap()));
        assert_eq!(findings.len(), 1);
        assert!(findings[0].message.contains("TIMESTAMP"));
        assert!(findings[0].message.contains("NUMBER"));
        // repeated TIMESTAMP is still one field
        assert!(detect_bad_randomness(&disassemble(&decode_hex("0x42424200").unwrap())).is_empty());
    }

    #[test]
    fn empty_program_no_randomness() {
        assert!(detect_bad_randomness(&[]).is_empty());
    }

    // ---- tx.origin --------------------------------------------------------

    #[test]
    fn origin_with_eq_is_high() {
        // ORIGIN CALLER EQ STOP
        let findings = detect_tx_origin(&cfg_of("0x32331400"));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::High);
        assert_eq!(findings[0].location, Some(0));
    }

    #[test]
    fn origin_without_eq_is_info_per_use() {
        let findings = detect_tx_origin(&cfg_of("0x323200"));
        assert_eq!(findings.len(), 2);
        assert!(findings.iter().all(|f| f.severity == Severity::Info));
        assert_eq!(offsets(&findings), vec![0, 1]);
    }

    #[test]
    fn eq_in_other_block_does_not_escalate() {
        // ORIGIN STOP | JUMPDEST EQ STOP
        let findings = detect_tx_origin(&cfg_of("0x32005b1400"));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Info);
    }

    // ---- unchecked call ---------------------------------------------------

    #[test]
    fn call_pop_flags_each_family_member() {
        for call in ["f1", "f2", "f4", "fa"] {
            let findings =
                detect_unchecked_call(&disassemble(&decode_hex(&format!("0x{call}5000")).unwrap()));
            assert_eq!(findings.len(), 1, "0x{call}");
            assert_eq!(findings[0].location, Some(0));
            assert_eq!(findings[0].vuln_class, VulnClass::ExceptionDisorder);
        }
    }

    #[test]
    fn checked_call_is_clean() {
        // CALL ISZERO
        assert!(detect_unchecked_call(&disassemble(&decode_hex("0xf11500").unwrap())).is_empty());
        assert!(detect_unchecked_call(&disassemble(&decode_hex("0x600100").unwrap())).is_empty());
    }

    // ---- opcode usage -----------------------------------------------------

    #[test]
    fn selfdestruct_and_delegatecall_counted() {
        let findings = detect_opcode_usage(&disassemble(&decode_hex("0xfff400").unwrap()));
        assert_eq!(findings.len(), 2);
        assert_eq!(findings[0].vuln_class, VulnClass::SelfDestructUse);
        assert_eq!(findings[1].vuln_class, VulnClass::DelegateCallUse);
    }

    #[test]
    fn selfdestruct_in_push_data_is_invisible() {
        // PUSH1 0xff STOP
        assert!(detect_opcode_usage(&disassemble(&decode_hex("0x60ff00").unwrap())).is_empty());
    }

    // ---- outdated pragma --------------------------------------------------

    #[test]
    fn old_caret_pragma_flags() {
        let findings =
            detect_outdated_pragma("pragma solidity ^0.4.24;", DEFAULT_PRAGMA_FLOOR);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Low);
        assert_eq!(findings[0].vuln_class, VulnClass::OutdatedCompiler);
    }

    #[test]
    fn modern_pragma_is_clean() {
        assert!(
            detect_outdated_pragma("pragma solidity ^0.8.19;", DEFAULT_PRAGMA_FLOOR).is_empty()
        );
        assert!(
            detect_outdated_pragma("pragma solidity >=0.7.0;", DEFAULT_PRAGMA_FLOOR).is_empty()
        );
    }

    #[test]
    fn missing_pragma_is_info() {
        let findings = detect_outdated_pragma("contract A {}", DEFAULT_PRAGMA_FLOOR);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Info);
    }

    #[test]
    fn malformed_pragma_is_info_not_failure() {
        let findings = detect_outdated_pragma("pragma solidity banana;", DEFAULT_PRAGMA_FLOOR);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Info);
        assert!(findings[0].message.contains("unparseable"));
    }

    #[test]
    fn floor_is_configurable() {
        let floor = Version::new(0, 5, 0);
        assert!(detect_outdated_pragma("pragma solidity ^0.5.0;", floor).is_empty());
        assert_eq!(
            detect_outdated_pragma("pragma solidity ^0.4.0;", floor).len(),
            1
        );
    }

    // ---- stack size -------------------------------------------------------

    #[test]
    fn three_chained_calls_flag() {
        let cfg = cfg_of("0xf1f1f100");
        let findings = detect_stack_size(&cfg, DEFAULT_CALL_CHAIN_DEPTH);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Info);
        assert_eq!(findings[0].location, Some(0));
    }

    #[test]
    fn two_calls_stay_quiet() {
        assert!(detect_stack_size(&cfg_of("0xf1f100"), DEFAULT_CALL_CHAIN_DEPTH).is_empty());
    }

    #[test]
    fn call_inside_loop_crosses_threshold() {
        // JUMPDEST CALL PUSH1 00 JUMP: the cycle accumulates calls
        let findings = detect_stack_size(&cfg_of("0x5bf1600056"), DEFAULT_CALL_CHAIN_DEPTH);
        assert_eq!(findings.len(), 1);
    }

    #[test]
    fn branches_do_not_pool_calls() {
        // Two arms with one call each, no arm chains two:
        // PUSH1 1 PUSH1 8 JUMPI CALL STOP STOP JUMPDEST CALL STOP
        let cfg = cfg_of("0x6001600857f100005bf100");
        assert!(detect_stack_size(&cfg, 2).is_empty());
    }

    // ---- registry and run_all --------------------------------------------

    fn contract_with(bytecode: &str, source: Option<&str>) -> Contract {
        Contract::new(
            None,
            decode_hex(bytecode).unwrap(),
            source.map(str::to_string),
            ContractOrigin::LocalFile,
        )
        .unwrap()
    }

    fn scan(bytecode: &str, source: Option<&str>, registry: &DetectorRegistry) -> Vec<Finding> {
        let contract = contract_with(bytecode, source);
        let cfg = build_cfg(disassemble(&contract.bytecode));
        run_all(&contract, &cfg, registry)
    }

    // Triggers everything at once: CALL+SSTORE, TIMESTAMP+JUMPI, BLOCKHASH,
    // ORIGIN+EQ, CALL POP, SELFDESTRUCT, DELEGATECALL.
    const KITCHEN_SINK: &str = "0xf155403214f150f460030142576001ff";
    const OLD_SOURCE: &str = "pragma solidity ^0.4.24;\ncontract A {}";

    #[test]
    fn run_all_unions_detectors() {
        let registry = default_registry();
        let findings = scan("0xf15500fff400", None, &registry);
        let by_detector: Vec<&str> = findings.iter().map(|f| f.detector.as_str()).collect();
        assert_eq!(
            by_detector,
            vec!["delegatecall_use", "reentrancy", "selfdestruct_use"]
        );
    }

    #[test]
    fn run_all_empty_bytecode_no_source() {
        let registry = default_registry();
        assert!(scan("0x", None, &registry).is_empty());
    }

    #[test]
    fn run_all_all_disabled_is_empty() {
        let mut registry = default_registry();
        let ids: Vec<&'static str> = registry.ids().collect();
        for id in ids {
            assert!(registry.set_enabled(id, false));
        }
        assert!(scan(KITCHEN_SINK, Some(OLD_SOURCE), &registry).is_empty());
    }

    #[test]
    fn run_all_skips_source_detectors_without_source() {
        let registry = default_registry();
        let findings = scan("0x00", None, &registry);
        assert!(findings.iter().all(|f| f.detector != "outdated_pragma"));
        let findings = scan("0x00", Some("contract A {}"), &registry);
        assert!(findings.iter().any(|f| f.detector == "outdated_pragma"));
    }

    #[test]
    fn run_all_is_sorted_and_deterministic() {
        let registry = default_registry();
        let a = scan(KITCHEN_SINK, Some(OLD_SOURCE), &registry);
        let b = scan(KITCHEN_SINK, Some(OLD_SOURCE), &registry);
        assert_eq!(a, b);
        let keys: Vec<(&str, Option<usize>)> = a
            .iter()
            .map(|f| (f.detector.as_str(), f.location))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn disabling_one_detector_removes_exactly_its_findings() {
        let full_registry = default_registry();
        let full = scan(KITCHEN_SINK, Some(OLD_SOURCE), &full_registry);
        assert!(full.len() >= 6, "fixture should light up many detectors");
        let ids: Vec<&'static str> = full_registry.ids().collect();
        for id in ids {
            let mut registry = default_registry();
            registry.set_enabled(id, false);
            let partial = scan(KITCHEN_SINK, Some(OLD_SOURCE), &registry);
            let expected: Vec<&Finding> = full.iter().filter(|f| f.detector != id).collect();
            let got: Vec<&Finding> = partial.iter().collect();
            assert_eq!(got, expected, "disabling {id}");
        }
    }

    #[test]
    fn selfdestruct_and_delegatecall_flags_are_independent() {
        let mut registry = default_registry();
        registry.set_enabled("selfdestruct_use", false);
        let findings = scan("0xfff400", None, &registry);
        assert!(findings.iter().any(|f| f.detector == "delegatecall_use"));
        assert!(findings.iter().all(|f| f.detector != "selfdestruct_use"));
    }

    #[test]
    fn unknown_registry_id_is_rejected() {
        let mut registry = default_registry();
        assert!(!registry.set_enabled("no_such_detector", true));
    }

    #[test]
    fn registry_ids_are_unique() {
        let registry = default_registry();
        let mut ids: Vec<&str> = registry.ids().collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), registry.detectors.len());
    }

    #[test]
    fn panicking_detector_becomes_info_finding() {
        let entry = DetectorEntry {
            id: "reentrancy",
            vuln_class: VulnClass::Reentrancy,
            enabled: true,
        };
        let findings = guarded(&entry, || panic!("boom"));
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].detector, "detector-error");
        assert_eq!(findings[0].severity, Severity::Info);
        assert!(findings[0].message.contains("boom"));
        assert!(findings[0].message.contains("reentrancy"));
    }

    // ---- push-data shielding across all detectors -------------------------

    proptest! {
        /// Trigger opcodes hidden inside PUSH operands never produce
        /// findings from any bytecode detector.
        #[test]
        fn triggers_in_push_data_are_inert(
            segments in proptest::collection::vec(
                (1usize..=32, proptest::collection::vec(prop_oneof![
                    Just(op::CALL), Just(op::SSTORE), Just(op::TIMESTAMP),
                    Just(op::JUMPI), Just(op::BLOCKHASH), Just(op::NUMBER),
                    Just(op::PREVRANDAO), Just(op::COINBASE), Just(op::ORIGIN),
                    Just(op::EQ), Just(op::DELEGATECALL), Just(op::STATICCALL),
                    Just(op::CALLCODE), Just(op::POP), Just(op::SELFDESTRUCT),
                ], 1..=32)),
                1..12,
            ),
            fillers in proptest::collection::vec(
                prop_oneof![Just(0x01u8), Just(0x02), Just(0x33), Just(0x5b), Just(0x00)],
                0..8,
            ),
        ) {
            let mut bytecode = Vec::new();
            for (width, operand) in &segments {
                let width = (*width).min(operand.len());
                bytecode.push(op::PUSH1 + (width as u8) - 1);
                bytecode.extend(&operand[..width]);
            }
            bytecode.extend(&fillers);

            let contract = Contract::new(
                None,
                bytecode,
                None,
                ContractOrigin::LocalFile,
            ).unwrap();
            let cfg = build_cfg(disassemble(&contract.bytecode));
            let mut registry = default_registry();
            registry.set_enabled("stack_size", true);
            let findings = run_all(&contract, &cfg, &registry);
            prop_assert!(findings.is_empty(), "findings: {findings:?}");
        }
    }
}
