//! Shared domain types: addresses, contracts, the vulnerability taxonomy and
//! normalized findings. Everything here is an immutable value object.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors raised while constructing domain values.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid address {0:?}: expected 40 hex digits (optional 0x prefix)")]
    InvalidAddress(String),

    #[error("contract of origin {0} requires an address")]
    MissingAddress(ContractOrigin),
}

/// A 160-bit account identifier. Canonical text form is lowercase hex with a
/// `0x` prefix (42 characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address([u8; 20]);

impl Address {
    pub fn new(bytes: [u8; 20]) -> Self {
        Address(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }

    /// Canonical text form: `0x` + 40 lowercase hex digits.
    pub fn to_text(&self) -> String {
        format!("0x{}", hex::encode(self.0))
    }
}

/// Accepts 40 hex digits with or without a `0x` prefix, any letter case.
pub fn parse_address(text: &str) -> Result<Address, ModelError> {
    let trimmed = text.trim();
    let digits = trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
        .unwrap_or(trimmed);
    if digits.len() != 40 {
        return Err(ModelError::InvalidAddress(text.to_string()));
    }
    let mut bytes = [0u8; 20];
    hex::decode_to_slice(digits, &mut bytes)
        .map_err(|_| ModelError::InvalidAddress(text.to_string()))?;
    Ok(Address(bytes))
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

impl FromStr for Address {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_address(s)
    }
}

impl Serialize for Address {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_address(&text).map_err(serde::de::Error::custom)
    }
}

/// Where a contract record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractOrigin {
    Rpc,
    CsvImport,
    LocalFile,
    Explorer,
}

impl fmt::Display for ContractOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ContractOrigin::Rpc => "rpc",
            ContractOrigin::CsvImport => "csv_import",
            ContractOrigin::LocalFile => "local_file",
            ContractOrigin::Explorer => "explorer",
        };
        write!(f, "{name}")
    }
}

/// An on-chain or local contract artifact. Bytecode is always kept (possibly
/// empty for plain accounts); high-level source is opportunistic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contract {
    pub address: Option<Address>,
    #[serde(with = "hex_bytes")]
    pub bytecode: Vec<u8>,
    pub source: Option<String>,
    pub source_available: bool,
    pub block_number: Option<u64>,
    pub timestamp: Option<DateTime<Utc>>,
    pub origin: ContractOrigin,
}

impl Contract {
    /// Builds a contract, normalizing `source_available` from the source text
    /// (empty source counts as absent).
    pub fn new(
        address: Option<Address>,
        bytecode: Vec<u8>,
        source: Option<String>,
        origin: ContractOrigin,
    ) -> Result<Self, ModelError> {
        if address.is_none()
            && matches!(origin, ContractOrigin::Rpc | ContractOrigin::CsvImport)
        {
            return Err(ModelError::MissingAddress(origin));
        }
        let source = source.filter(|s| !s.is_empty());
        let source_available = source.is_some();
        Ok(Contract {
            address,
            bytecode,
            source,
            source_available,
            block_number: None,
            timestamp: None,
            origin,
        })
    }

    /// Stable identifier used for store keys and input-file stems: the
    /// canonical address text, or a content hash for addressless inputs.
    pub fn id(&self) -> String {
        match &self.address {
            Some(addr) => addr.to_text(),
            None => {
                let mut hasher = Sha256::new();
                hasher.update(&self.bytecode);
                if let Some(src) = &self.source {
                    hasher.update(src.as_bytes());
                }
                hex::encode(hasher.finalize())
            }
        }
    }

    /// Canonical lowercase hex rendering of the bytecode, `0x`-prefixed.
    pub fn bytecode_hex(&self) -> String {
        format!("0x{}", hex::encode(&self.bytecode))
    }
}

/// Serialize byte sequences as canonical `0x`-prefixed lowercase hex.
pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format!("0x{}", hex::encode(bytes)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(deserializer)?;
        let digits = text.strip_prefix("0x").unwrap_or(&text);
        hex::decode(digits).map_err(serde::de::Error::custom)
    }
}

/// Closed vulnerability taxonomy. The first eleven classes are the classic
/// smart-contract families; the rest are extension classes used by built-in
/// detectors and corpus statistics.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum VulnClass {
    Reentrancy,
    ExceptionDisorder,
    CallsToUnknown,
    TypeConversion,
    Secrets,
    UnpredictableState,
    RandomNumbers,
    TimeRestrictions,
    ImmutableBugs,
    LossOfEther,
    StackSize,
    SelfDestructUse,
    DelegateCallUse,
    TxOriginAuth,
    UncheckedCall,
    OutdatedCompiler,
}

impl VulnClass {
    pub const ALL: [VulnClass; 16] = [
        VulnClass::Reentrancy,
        VulnClass::ExceptionDisorder,
        VulnClass::CallsToUnknown,
        VulnClass::TypeConversion,
        VulnClass::Secrets,
        VulnClass::UnpredictableState,
        VulnClass::RandomNumbers,
        VulnClass::TimeRestrictions,
        VulnClass::ImmutableBugs,
        VulnClass::LossOfEther,
        VulnClass::StackSize,
        VulnClass::SelfDestructUse,
        VulnClass::DelegateCallUse,
        VulnClass::TxOriginAuth,
        VulnClass::UncheckedCall,
        VulnClass::OutdatedCompiler,
    ];

    /// Stable snake_case name, identical to the serialized form.
    pub fn name(&self) -> &'static str {
        match self {
            VulnClass::Reentrancy => "reentrancy",
            VulnClass::ExceptionDisorder => "exception_disorder",
            VulnClass::CallsToUnknown => "calls_to_unknown",
            VulnClass::TypeConversion => "type_conversion",
            VulnClass::Secrets => "secrets",
            VulnClass::UnpredictableState => "unpredictable_state",
            VulnClass::RandomNumbers => "random_numbers",
            VulnClass::TimeRestrictions => "time_restrictions",
            VulnClass::ImmutableBugs => "immutable_bugs",
            VulnClass::LossOfEther => "loss_of_ether",
            VulnClass::StackSize => "stack_size",
            VulnClass::SelfDestructUse => "self_destruct_use",
            VulnClass::DelegateCallUse => "delegate_call_use",
            VulnClass::TxOriginAuth => "tx_origin_auth",
            VulnClass::UncheckedCall => "unchecked_call",
            VulnClass::OutdatedCompiler => "outdated_compiler",
        }
    }

    /// Resolves a free-form class label from an external tool to the nearest
    /// taxonomy member. Matching is case/punctuation-insensitive with a short
    /// alias table for common tool vocabulary; unknown labels yield `None`.
    pub fn from_label(label: &str) -> Option<VulnClass> {
        let folded: String = label
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        for class in VulnClass::ALL {
            let canonical: String = class.name().chars().filter(|c| *c != '_').collect();
            if folded == canonical {
                return Some(class);
            }
        }
        match folded.as_str() {
            "reentrant" | "reentry" => Some(VulnClass::Reentrancy),
            "uncheckedsend" | "uncheckedlowlevelcall" => Some(VulnClass::UncheckedCall),
            "timestampdependence" | "timestampdependency" | "timedependence" => {
                Some(VulnClass::TimeRestrictions)
            }
            "badrandomness" | "weakrandomness" | "randomness" => Some(VulnClass::RandomNumbers),
            "txorigin" | "origin" => Some(VulnClass::TxOriginAuth),
            "selfdestruct" | "suicide" => Some(VulnClass::SelfDestructUse),
            "delegatecall" => Some(VulnClass::DelegateCallUse),
            "outdatedpragma" | "oldcompiler" | "outdatedsolc" => Some(VulnClass::OutdatedCompiler),
            "exceptiondisorders" | "uncheckedexception" => Some(VulnClass::ExceptionDisorder),
            "callstack" | "stackdepth" => Some(VulnClass::StackSize),
            _ => None,
        }
    }
}

impl fmt::Display for VulnClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Finding severity. Usage signals (selfdestruct/delegatecall presence) are
/// reported as `Info`; anything `Low` and above counts as a vulnerability in
/// corpus statistics.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
}

/// One normalized analysis result, from a built-in detector or an external
/// tool. `location` is a byte offset into the analyzed bytecode when known.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub vuln_class: VulnClass,
    pub severity: Severity,
    pub detector: String,
    pub location: Option<usize>,
    pub message: String,
}

impl Finding {
    pub fn new(
        vuln_class: VulnClass,
        severity: Severity,
        detector: &str,
        location: Option<usize>,
        message: impl Into<String>,
    ) -> Self {
        Finding {
            vuln_class,
            severity,
            detector: detector.to_string(),
            location,
            message: message.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_address_is_canonical() {
        let addr = parse_address(&format!("0x{}", "00".repeat(20))).unwrap();
        assert_eq!(addr, Address::new([0u8; 20]));
        assert_eq!(addr.to_text(), format!("0x{}", "00".repeat(20)));
    }

    #[test]
    fn short_address_rejected() {
        // 39 hex digits, one short of a full address.
        let err = parse_address("0xE5682948558045D5B187B2DDDF224C1DC70F776").unwrap_err();
        assert!(matches!(err, ModelError::InvalidAddress(_)));
    }

    #[test]
    fn case_and_prefix_normalize() {
        let upper = parse_address(&"ABCD".repeat(10)).unwrap();
        let lower = parse_address(&format!("0x{}", "abcd".repeat(10))).unwrap();
        assert_eq!(upper, lower);
    }

    #[test]
    fn non_hex_rejected() {
        assert!(parse_address(&"zz".repeat(20)).is_err());
    }

    #[test]
    fn source_availability_tracks_source() {
        let c = Contract::new(None, vec![0x00], None, ContractOrigin::LocalFile).unwrap();
        assert!(!c.source_available);
        let c = Contract::new(
            None,
            vec![],
            Some("contract A {}".into()),
            ContractOrigin::LocalFile,
        )
        .unwrap();
        assert!(c.source_available);
        // Empty source normalizes to absent.
        let c = Contract::new(None, vec![], Some(String::new()), ContractOrigin::LocalFile)
            .unwrap();
        assert!(!c.source_available);
        assert_eq!(c.source, None);
    }

    #[test]
    fn rpc_contract_requires_address() {
        let err = Contract::new(None, vec![0x00], None, ContractOrigin::Rpc).unwrap_err();
        assert_eq!(err, ModelError::MissingAddress(ContractOrigin::Rpc));
        let err = Contract::new(None, vec![0x00], None, ContractOrigin::CsvImport).unwrap_err();
        assert_eq!(err, ModelError::MissingAddress(ContractOrigin::CsvImport));
    }

    #[test]
    fn vuln_class_serializes_snake_case() {
        for class in VulnClass::ALL {
            let json = serde_json::to_string(&class).unwrap();
            assert_eq!(json, format!("\"{}\"", class.name()));
            let back: VulnClass = serde_json::from_str(&json).unwrap();
            assert_eq!(back, class);
        }
    }

    #[test]
    fn label_resolution_covers_aliases() {
        assert_eq!(VulnClass::from_label("Reentrancy"), Some(VulnClass::Reentrancy));
        assert_eq!(
            VulnClass::from_label("time_restrictions"),
            Some(VulnClass::TimeRestrictions)
        );
        assert_eq!(VulnClass::from_label("tx-origin"), Some(VulnClass::TxOriginAuth));
        assert_eq!(VulnClass::from_label("totally unknown"), None);
    }

    proptest! {
        #[test]
        fn address_round_trips(bytes in proptest::array::uniform20(any::<u8>())) {
            let addr = Address::new(bytes);
            let parsed = parse_address(&addr.to_text()).unwrap();
            prop_assert_eq!(parsed, addr);
        }
    }
}
