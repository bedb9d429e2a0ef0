//! Persistence for contracts and scan reports: an abstract store interface
//! with an append-only NDJSON file backend. One writer per store instance;
//! readers stream a consistent prefix.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapters::ToolResult;
use crate::model::{Contract, Finding};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Failure(String),
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("contract has neither bytecode nor source")]
    EmptyContract,
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Failure(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Failure(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredContract {
    pub seq: u64,
    pub ingested_at: DateTime<Utc>,
    pub contract: Contract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub contract_id: String,
    pub started_at: DateTime<Utc>,
    pub registry_version: u32,
    pub builtin_findings: Vec<Finding>,
    /// Keyed by tool name; OrderedMap so serialization is canonical.
    pub tool_results: BTreeMap<String, ToolResult>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    All,
    /// Inclusive seq interval.
    Seq { from: u64, to: u64 },
    /// Inclusive block-number interval.
    Block { from: u64, to: u64 },
    /// One contract id (address text or content hash); latest version
    /// unless `all_versions`.
    Address { id: String, all_versions: bool },
}

pub trait Store: Send {
    fn put_contract(&mut self, contract: Contract) -> Result<StoredContract, StoreError>;
    /// Lazy ascending-seq stream over the selection.
    fn select<'a>(
        &'a self,
        selection: &Selection,
    ) -> Result<Box<dyn Iterator<Item = StoredContract> + 'a>, StoreError>;
    /// Seqs matching the selection, ascending, from the index only.
    fn seqs_in(&self, selection: &Selection) -> Vec<u64>;
    fn get_by_seq(&self, seq: u64) -> Result<Option<StoredContract>, StoreError>;
    /// Latest version under this id.
    fn get_contract(&self, id: &str) -> Result<Option<StoredContract>, StoreError>;
    fn contract_count(&self) -> usize;
    fn put_report(&mut self, report: ScanReport) -> Result<(), StoreError>;
    /// All reports for one contract, ordered by started_at.
    fn get_reports(&self, contract_id: &str) -> Result<Vec<ScanReport>, StoreError>;
}

struct IndexEntry {
    seq: u64,
    block_number: Option<u64>,
    offset: u64,
    code_hash: [u8; 32],
}

pub struct FileStore {
    contracts_path: PathBuf,
    reports_path: PathBuf,
    contracts_file: File,
    reports_file: File,
    entries: Vec<IndexEntry>,
    by_id: BTreeMap<String, Vec<usize>>,
    next_seq: u64,
}

fn hash_code(bytecode: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(bytecode);
    hasher.finalize().into()
}

/// Scans an NDJSON file, returning byte offsets of parseable records. A
/// partial trailing record (torn write) is cut off the file; a final record
/// missing only its newline gets one appended so later appends stay framed.
fn recover_log<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(u64, T)>, StoreError> {
    let mut records = Vec::new();
    if !path.exists() {
        return Ok(records);
    }
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut offset: u64 = 0;
    let mut line = String::new();
    let mut repair_newline = false;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        let terminated = line.ends_with('\n');
        match serde_json::from_str::<T>(line.trim_end_matches('\n')) {
            Ok(record) => {
                records.push((offset, record));
                offset += read as u64;
                if !terminated {
                    // Complete document missing only its newline; an
                    // unterminated line is always the last one.
                    repair_newline = true;
                    break;
                }
            }
            Err(e) => {
                log::warn!(
                    "{}: dropping partial trailing record at byte {offset}: {e}",
                    path.display()
                );
                let file = OpenOptions::new().write(true).open(path)?;
                file.set_len(offset)?;
                break;
            }
        }
    }
    drop(reader);
    if repair_newline {
        OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
    }
    Ok(records)
}

fn append_record<T: Serialize>(file: &mut File, record: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}

impl FileStore {
    pub fn open(dir: &Path) -> Result<FileStore, StoreError> {
        fs::create_dir_all(dir)?;
        let contracts_path = dir.join("contracts.ndjson");
        let reports_path = dir.join("reports.ndjson");

        let mut entries = Vec::new();
        let mut by_id: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (offset, record) in recover_log::<StoredContract>(&contracts_path)? {
            let id = record.contract.id();
            let index = entries.len();
            entries.push(IndexEntry {
                seq: record.seq,
                block_number: record.contract.block_number,
                offset,
                code_hash: hash_code(&record.contract.bytecode),
            });
            by_id.entry(id).or_default().push(index);
        }
        // Reports need the same torn-tail recovery even though no index is
        // kept for them.
        recover_log::<ScanReport>(&reports_path)?;

        let next_seq = entries.last().map(|e| e.seq + 1).unwrap_or(1);
        let contracts_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&contracts_path)?;
        let reports_file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&reports_path)?;
        Ok(FileStore {
            contracts_path,
            reports_path,
            contracts_file,
            reports_file,
            entries,
            by_id,
            next_seq,
        })
    }

    fn read_at(&self, offset: u64) -> Result<StoredContract, StoreError> {
        let mut file = File::open(&self.contracts_path)?;
        file.seek(SeekFrom::Start(offset))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        Ok(serde_json::from_str(line.trim_end_matches('\n'))?)
    }

    fn entry_indexes(&self, selection: &Selection) -> Vec<usize> {
        match selection {
            Selection::All => (0..self.entries.len()).collect(),
            Selection::Seq { from, to } => self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| (*from..=*to).contains(&e.seq))
                .map(|(i, _)| i)
                .collect(),
            Selection::Block { from, to } => self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.block_number.is_some_and(|b| (*from..=*to).contains(&b)))
                .map(|(i, _)| i)
                .collect(),
            Selection::Address { id, all_versions } => match self.by_id.get(id) {
                None => Vec::new(),
                Some(indexes) if *all_versions => indexes.clone(),
                Some(indexes) => indexes.last().map(|i| vec![*i]).unwrap_or_default(),
            },
        }
    }
}

impl Store for FileStore {
    fn put_contract(&mut self, contract: Contract) -> Result<StoredContract, StoreError> {
        if contract.bytecode.is_empty() && contract.source.is_none() {
            return Err(StoreError::EmptyContract);
        }
        let id = contract.id();
        let code_hash = hash_code(&contract.bytecode);
        if let Some(indexes) = self.by_id.get(&id) {
            let latest = &self.entries[*indexes.last().expect("non-empty version list")];
            if latest.code_hash == code_hash {
                return self.read_at(latest.offset);
            }
        }

        let record = StoredContract {
            seq: self.next_seq,
            ingested_at: Utc::now(),
            contract,
        };
        let offset = self.contracts_file.metadata()?.len();
        append_record(&mut self.contracts_file, &record)?;
        let index = self.entries.len();
        self.entries.push(IndexEntry {
            seq: record.seq,
            block_number: record.contract.block_number,
            offset,
            code_hash,
        });
        self.by_id.entry(id).or_default().push(index);
        self.next_seq += 1;
        Ok(record)
    }

    fn select<'a>(
        &'a self,
        selection: &Selection,
    ) -> Result<Box<dyn Iterator<Item = StoredContract> + 'a>, StoreError> {
        let indexes = self.entry_indexes(selection);
        let iter = indexes.into_iter().filter_map(move |i| {
            let entry = &self.entries[i];
            match self.read_at(entry.offset) {
                Ok(record) => Some(record),
                Err(e) => {
                    log::warn!("seq {} unreadable: {e}", entry.seq);
                    None
                }
            }
        });
        Ok(Box::new(iter))
    }

    fn seqs_in(&self, selection: &Selection) -> Vec<u64> {
        self.entry_indexes(selection)
            .into_iter()
            .map(|i| self.entries[i].seq)
            .collect()
    }

    fn get_by_seq(&self, seq: u64) -> Result<Option<StoredContract>, StoreError> {
        match self.entries.iter().find(|e| e.seq == seq) {
            Some(entry) => Ok(Some(self.read_at(entry.offset)?)),
            None => Ok(None),
        }
    }

    fn get_contract(&self, id: &str) -> Result<Option<StoredContract>, StoreError> {
        match self.by_id.get(id).and_then(|v| v.last()) {
            Some(&index) => Ok(Some(self.read_at(self.entries[index].offset)?)),
            None => Ok(None),
        }
    }

    fn contract_count(&self) -> usize {
        self.entries.len()
    }

    fn put_report(&mut self, report: ScanReport) -> Result<(), StoreError> {
        if !self.by_id.contains_key(&report.contract_id) {
            return Err(StoreError::UnknownContract(report.contract_id));
        }
        append_record(&mut self.reports_file, &report)
    }

    fn get_reports(&self, contract_id: &str) -> Result<Vec<ScanReport>, StoreError> {
        let mut reports = Vec::new();
        if !self.reports_path.exists() {
            return Ok(reports);
        }
        let file = File::open(&self.reports_path)?;
        for line in BufReader::new(file).lines() {
            let line = line?;
            // Stop at a torn concurrent append: readers see a clean prefix.
            let Ok(report) = serde_json::from_str::<ScanReport>(&line) else {
                break;
            };
            if report.contract_id == contract_id {
                reports.push(report);
            }
        }
        reports.sort_by_key(|r| r.started_at);
        Ok(reports)
    }
}
