//! Contract acquisition: JSON-RPC code fetch, CSV batch import/export, and
//! materializing per-contract input files for the analysis tools.

pub mod explorer;
pub mod rpc;

pub use explorer::{Clock, ExplorerClient, RateLimiter, SystemClock};
pub use rpc::fetch_code_rpc;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disasm::decode_hex;
use crate::model::{parse_address, Contract, ContractOrigin, ModelError};

pub const CSV_HEADER: [&str; 5] = [
    "address",
    "bytecode",
    "block_number",
    "block_timestamp",
    "source_code",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("rpc transport: {0}")]
    RpcTransport(String),
    #[error("rpc error: {0}")]
    RpcError(String),
    #[error("address holds no code (user account)")]
    NotAContract,
    #[error("cannot read {path}: {detail}")]
    FileUnreadable { path: PathBuf, detail: String },
    #[error("missing or wrong CSV header: expected {}", CSV_HEADER.join(","))]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One row of the batch-export schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvContractRow {
    pub address: String,
    pub bytecode: String,
    pub block_number: String,
    pub block_timestamp: String,
    pub source_code: String,
}

#[derive(Debug, Default)]
pub struct ContractBatch {
    pub contracts: Vec<Contract>,
    /// (1-based file line, reason) per rejected row.
    pub rejected: Vec<(u64, String)>,
}

fn row_to_contract(row: &CsvContractRow) -> Result<Contract, String> {
    let address = parse_address(&row.address).map_err(|e| e.to_string())?;
    let bytecode = decode_hex(&row.bytecode).map_err(|e| e.to_string())?;
    let block_number = match row.block_number.trim() {
        "" => None,
        text => Some(
            text.parse::<u64>()
                .map_err(|_| format!("invalid block_number {text:?}"))?,
        ),
    };
    let timestamp = match row.block_timestamp.trim() {
        "" => None,
        text => {
            let secs: i64 = text
                .parse()
                .map_err(|_| format!("invalid block_timestamp {text:?}"))?;
            Some(
                DateTime::<Utc>::from_timestamp(secs, 0)
                    .ok_or_else(|| format!("block_timestamp {secs} out of range"))?,
            )
        }
    };
    let source = (!row.source_code.is_empty()).then(|| row.source_code.clone());
    let mut contract = Contract::new(Some(address), bytecode, source, ContractOrigin::CsvImport)
        .map_err(|e| e.to_string())?;
    contract.block_number = block_number;
    contract.timestamp = timestamp;
    Ok(contract)
}

fn contract_to_row(contract: &Contract) -> CsvContractRow {
    CsvContractRow {
        address: contract
            .address
            .as_ref()
            .map(|a| a.to_text())
            .unwrap_or_default(),
        bytecode: contract.bytecode_hex(),
        block_number: contract
            .block_number
            .map(|n| n.to_string())
            .unwrap_or_default(),
        block_timestamp: contract
            .timestamp
            .map(|t| t.timestamp().to_string())
            .unwrap_or_default(),
        source_code: contract.source.clone().unwrap_or_default(),
    }
}

/// Reads a batch export. Bad rows are quarantined with their line number;
/// only a missing or mismatched header aborts.
pub fn import_csv(path: &Path) -> Result<ContractBatch, IngestError> {
    let file = fs::File::open(path).map_err(|e| IngestError::FileUnreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = reader.headers().map_err(|_| IngestError::MissingHeader)?;
    if header.iter().collect::<Vec<&str>>() != CSV_HEADER {
        return Err(IngestError::MissingHeader);
    }

    let mut batch = ContractBatch::default();
    for (index, record) in reader.into_records().enumerate() {
        // Line number for multi-line quoted records is where they start.
        match record {
            Ok(record) => {
                let line = record
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(index as u64 + 2);
                match record.deserialize::<CsvContractRow>(None) {
                    Ok(row) => match row_to_contract(&row) {
                        Ok(contract) => batch.contracts.push(contract),
                        Err(reason) => batch.rejected.push((line, reason)),
                    },
                    Err(e) => batch.rejected.push((line, format!("malformed row: {e}"))),
                }
            }
            Err(e) => {
                let line = e
                    .position()
                    .map(|p| p.line())
                    .unwrap_or(index as u64 + 2);
                batch.rejected.push((line, format!("unreadable record: {e}")));
            }
        }
    }
    Ok(batch)
}

/// Inverse of [`import_csv`] for valid contracts; the header is always
/// written.
pub fn export_csv(contracts: &[Contract], path: &Path) -> Result<(), IngestError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for contract in contracts {
        writer.serialize(contract_to_row(contract))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `<id>.hex` and/or `<id>.sol` into `inputs_dir`. Idempotent: the
/// same contract always produces byte-identical files.
pub fn write_input_files(
    contract: &Contract,
    inputs_dir: &Path,
) -> Result<(Option<PathBuf>, Option<PathBuf>), IngestError> {
    let id = contract.id();
    let mut hex_path = None;
    let mut sol_path = None;

    if !contract.bytecode.is_empty() {
        let path = inputs_dir.join(format!("{id}.hex"));
        let mut file = fs::File::create(&path)?;
        writeln!(file, "{}", contract.bytecode_hex())?;
        hex_path = Some(path);
    }
    if let Some(source) = &contract.source {
        let path = inputs_dir.join(format!("{id}.sol"));
        fs::write(&path, source)?;
        sol_path = Some(path);
    }
    if hex_path.is_none() && sol_path.is_none() {
        log::warn!("contract {id} has neither bytecode nor source; nothing written");
    }
    Ok((hex_path, sol_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Address;

    fn addr(n: u8) -> Address {
        parse_address(&format!("0x{}", hex::encode([n; 20]))).unwrap()
    }

    fn sample_contract(n: u8, source: Option<&str>) -> Contract {
        let mut c = Contract::new(
            Some(addr(n)),
            vec![0x60, n, 0x00],
            source.map(str::to_string),
            ContractOrigin::CsvImport,
        )
        .unwrap();
        c.block_number = Some(1_000_000 + n as u64);
        c.timestamp = DateTime::<Utc>::from_timestamp(1_600_000_000 + n as i64, 0);
        c
    }

    #[test]
    fn csv_round_trip_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let contracts = vec![
            sample_contract(1, None),
            sample_contract(2, Some("pragma solidity ^0.8.0;\ncontract B { string s = \"a,b\\nc\"; }")),
            sample_contract(3, Some("contract C {}")),
        ];
        export_csv(&contracts, &path).unwrap();
        let batch = import_csv(&path).unwrap();
        assert!(batch.rejected.is_empty(), "{:?}", batch.rejected);
        assert_eq!(batch.contracts, contracts);
    }

    #[test]
    fn bad_rows_are_quarantined_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let text = "\
address,bytecode,block_number,block_timestamp,source_code
0x1111111111111111111111111111111111111111,0x6001,1,1600000000,
not-an-address,0x6001,2,1600000000,
0x2222222222222222222222222222222222222222,0x123,3,1600000000,
0x3333333333333333333333333333333333333333,0x6002,notanumber,1600000000,
0x4444444444444444444444444444444444444444,0x6003,4,1600000004,ok
";
        fs::write(&path, text).unwrap();
        let batch = import_csv(&path).unwrap();
        assert_eq!(batch.contracts.len(), 2);
        let lines: Vec<u64> = batch.rejected.iter().map(|(l, _)| *l).collect();
        assert_eq!(lines, vec![3, 4, 5]);
        assert!(batch.rejected[1].1.contains("hex"), "{:?}", batch.rejected[1]);
    }

    #[test]
    fn empty_file_is_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        fs::write(&path, "").unwrap();
        assert!(matches!(
            import_csv(&path),
            Err(IngestError::MissingHeader)
        ));
    }

    #[test]
    fn wrong_header_is_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wrong.csv");
        fs::write(&path, "addr,code\n0x11,0x00\n").unwrap();
        assert!(matches!(
            import_csv(&path),
            Err(IngestError::MissingHeader)
        ));
    }

    #[test]
    fn absent_file_is_unreadable() {
        assert!(matches!(
            import_csv(Path::new("/no/such/file.csv")),
            Err(IngestError::FileUnreadable { .. })
        ));
    }

    #[test]
    fn optional_block_fields_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nb.csv");
        let mut contract = sample_contract(9, None);
        contract.block_number = None;
        contract.timestamp = None;
        export_csv(std::slice::from_ref(&contract), &path).unwrap();
        let batch = import_csv(&path).unwrap();
        assert_eq!(batch.contracts, vec![contract]);
    }

    #[test]
    fn input_files_for_bytecode_only() {
        let dir = tempfile::tempdir().unwrap();
        let contract = sample_contract(5, None);
        let (hex, sol) = write_input_files(&contract, dir.path()).unwrap();
        let hex = hex.unwrap();
        assert!(sol.is_none());
        assert_eq!(
            fs::read_to_string(&hex).unwrap(),
            format!("{}\n", contract.bytecode_hex())
        );
        assert!(hex.file_name().unwrap().to_str().unwrap().ends_with(".hex"));
    }

    #[test]
    fn input_files_for_dual_contract() {
        let dir = tempfile::tempdir().unwrap();
        let contract = sample_contract(6, Some("contract D {}"));
        let (hex, sol) = write_input_files(&contract, dir.path()).unwrap();
        assert!(hex.is_some());
        let sol = sol.unwrap();
        assert_eq!(fs::read_to_string(sol).unwrap(), "contract D {}");
    }

    #[test]
    fn degenerate_contract_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let contract =
            Contract::new(None, Vec::new(), None, ContractOrigin::LocalFile).unwrap();
        let (hex, sol) = write_input_files(&contract, dir.path()).unwrap();
        assert!(hex.is_none() && sol.is_none());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn input_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let contract = sample_contract(7, Some("contract E {}"));
        let (hex_a, _) = write_input_files(&contract, dir.path()).unwrap();
        let first = fs::read(hex_a.as_ref().unwrap()).unwrap();
        let (hex_b, _) = write_input_files(&contract, dir.path()).unwrap();
        assert_eq!(hex_a, hex_b);
        assert_eq!(fs::read(hex_b.unwrap()).unwrap(), first);
    }

    #[test]
    fn unaddressed_contract_uses_content_hash_id() {
        let dir = tempfile::tempdir().unwrap();
        let contract =
            Contract::new(None, vec![0x60, 0x01], None, ContractOrigin::LocalFile).unwrap();
        let (hex, _) = write_input_files(&contract, dir.path()).unwrap();
        let name = hex.unwrap();
        let stem = name.file_stem().unwrap().to_str().unwrap().to_string();
        assert_eq!(stem.len(), 64, "sha256 hex id: {stem}");
        assert!(stem.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
