//! EVM bytecode disassembly.
//!
//! Disassembly is total: any byte string decodes into an instruction list
//! that tiles the input exactly, with unknown opcodes marked invalid and a
//! PUSH running past the end of code marked truncated. Bytes inside PUSH
//! operands are operand data and are never decoded as opcodes.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DisasmError {
    #[error("invalid hex input: {0}")]
    InvalidHex(String),
}

/// Opcode mnemonics, pinned to the Shanghai instruction set (PUSH0 included,
/// no transient-storage or blob opcodes). Unassigned slots are `None` and
/// decode as INVALID instructions.
pub const OPCODE_TABLE: [Option<&'static str>; 256] = build_opcode_table();

const fn build_opcode_table() -> [Option<&'static str>; 256] {
    let mut t: [Option<&'static str>; 256] = [None; 256];
    t[0x00] = Some("STOP");
    t[0x01] = Some("ADD");
    t[0x02] = Some("MUL");
    t[0x03] = Some("SUB");
    t[0x04] = Some("DIV");
    t[0x05] = Some("SDIV");
    t[0x06] = Some("MOD");
    t[0x07] = Some("SMOD");
    t[0x08] = Some("ADDMOD");
    t[0x09] = Some("MULMOD");
    t[0x0a] = Some("EXP");
    t[0x0b] = Some("SIGNEXTEND");
    t[0x10] = Some("LT");
    t[0x11] = Some("GT");
    t[0x12] = Some("SLT");
    t[0x13] = Some("SGT");
    t[0x14] = Some("EQ");
    t[0x15] = Some("ISZERO");
    t[0x16] = Some("AND");
    t[0x17] = Some("OR");
    t[0x18] = Some("XOR");
    t[0x19] = Some("NOT");
    t[0x1a] = Some("BYTE");
    t[0x1b] = Some("SHL");
    t[0x1c] = Some("SHR");
    t[0x1d] = Some("SAR");
    t[0x20] = Some("KECCAK256");
    t[0x30] = Some("ADDRESS");
    t[0x31] = Some("BALANCE");
    t[0x32] = Some("ORIGIN");
    t[0x33] = Some("CALLER");
    t[0x34] = Some("CALLVALUE");
    t[0x35] = Some("CALLDATALOAD");
    t[0x36] = Some("CALLDATASIZE");
    t[0x37] = Some("CALLDATACOPY");
    t[0x38] = Some("CODESIZE");
    t[0x39] = Some("CODECOPY");
    t[0x3a] = Some("GASPRICE");
    t[0x3b] = Some("EXTCODESIZE");
    t[0x3c] = Some("EXTCODECOPY");
    t[0x3d] = Some("RETURNDATASIZE");
    t[0x3e] = Some("RETURNDATACOPY");
    t[0x3f] = Some("EXTCODEHASH");
    t[0x40] = Some("BLOCKHASH");
    t[0x41] = Some("COINBASE");
    t[0x42] = Some("TIMESTAMP");
    t[0x43] = Some("NUMBER");
    t[0x44] = Some("PREVRANDAO");
    t[0x45] = Some("GASLIMIT");
    t[0x46] = Some("CHAINID");
    t[0x47] = Some("SELFBALANCE");
    t[0x48] = Some("BASEFEE");
    t[0x50] = Some("POP");
    t[0x51] = Some("MLOAD");
    t[0x52] = Some("MSTORE");
    t[0x53] = Some("MSTORE8");
    t[0x54] = Some("SLOAD");
    t[0x55] = Some("SSTORE");
    t[0x56] = Some("JUMP");
    t[0x57] = Some("JUMPI");
    t[0x58] = Some("PC");
    t[0x59] = Some("MSIZE");
    t[0x5a] = Some("GAS");
    t[0x5b] = Some("JUMPDEST");
    t[0x5f] = Some("PUSH0");
    t[0x60] = Some("PUSH1");
    t[0x61] = Some("PUSH2");
    t[0x62] = Some("PUSH3");
    t[0x63] = Some("PUSH4");
    t[0x64] = Some("PUSH5");
    t[0x65] = Some("PUSH6");
    t[0x66] = Some("PUSH7");
    t[0x67] = Some("PUSH8");
    t[0x68] = Some("PUSH9");
    t[0x69] = Some("PUSH10");
    t[0x6a] = Some("PUSH11");
    t[0x6b] = Some("PUSH12");
    t[0x6c] = Some("PUSH13");
    t[0x6d] = Some("PUSH14");
    t[0x6e] = Some("PUSH15");
    t[0x6f] = Some("PUSH16");
    t[0x70] = Some("PUSH17");
    t[0x71] = Some("PUSH18");
    t[0x72] = Some("PUSH19");
    t[0x73] = Some("PUSH20");
    t[0x74] = Some("PUSH21");
    t[0x75] = Some("PUSH22");
    t[0x76] = Some("PUSH23");
    t[0x77] = Some("PUSH24");
    t[0x78] = Some("PUSH25");
    t[0x79] = Some("PUSH26");
    t[0x7a] = Some("PUSH27");
    t[0x7b] = Some("PUSH28");
    t[0x7c] = Some("PUSH29");
    t[0x7d] = Some("PUSH30");
    t[0x7e] = Some("PUSH31");
    t[0x7f] = Some("PUSH32");
    t[0x80] = Some("DUP1");
    t[0x81] = Some("DUP2");
    t[0x82] = Some("DUP3");
    t[0x83] = Some("DUP4");
    t[0x84] = Some("DUP5");
    t[0x85] = Some("DUP6");
    t[0x86] = Some("DUP7");
    t[0x87] = Some("DUP8");
    t[0x88] = Some("DUP9");
    t[0x89] = Some("DUP10");
    t[0x8a] = Some("DUP11");
    t[0x8b] = Some("DUP12");
    t[0x8c] = Some("DUP13");
    t[0x8d] = Some("DUP14");
    t[0x8e] = Some("DUP15");
    t[0x8f] = Some("DUP16");
    t[0x90] = Some("SWAP1");
    t[0x91] = Some("SWAP2");
    t[0x92] = Some("SWAP3");
    t[0x93] = Some("SWAP4");
    t[0x94] = Some("SWAP5");
    t[0x95] = Some("SWAP6");
    t[0x96] = Some("SWAP7");
    t[0x97] = Some("SWAP8");
    t[0x98] = Some("SWAP9");
    t[0x99] = Some("SWAP10");
    t[0x9a] = Some("SWAP11");
    t[0x9b] = Some("SWAP12");
    t[0x9c] = Some("SWAP13");
    t[0x9d] = Some("SWAP14");
    t[0x9e] = Some("SWAP15");
    t[0x9f] = Some("SWAP16");
    t[0xa0] = Some("LOG0");
    t[0xa1] = Some("LOG1");
    t[0xa2] = Some("LOG2");
    t[0xa3] = Some("LOG3");
    t[0xa4] = Some("LOG4");
    t[0xf0] = Some("CREATE");
    t[0xf1] = Some("CALL");
    t[0xf2] = Some("CALLCODE");
    t[0xf3] = Some("RETURN");
    t[0xf4] = Some("DELEGATECALL");
    t[0xf5] = Some("CREATE2");
    t[0xfa] = Some("STATICCALL");
    t[0xfd] = Some("REVERT");
    t[0xfe] = Some("INVALID");
    t[0xff] = Some("SELFDESTRUCT");
    t
}

pub mod op {
    //! Opcode bytes the detectors and CFG builder pattern-match on.
    pub const STOP: u8 = 0x00;
    pub const EQ: u8 = 0x14;
    pub const ORIGIN: u8 = 0x32;
    pub const BLOCKHASH: u8 = 0x40;
    pub const COINBASE: u8 = 0x41;
    pub const TIMESTAMP: u8 = 0x42;
    pub const NUMBER: u8 = 0x43;
    pub const PREVRANDAO: u8 = 0x44;
    pub const POP: u8 = 0x50;
    pub const SSTORE: u8 = 0x55;
    pub const JUMP: u8 = 0x56;
    pub const JUMPI: u8 = 0x57;
    pub const JUMPDEST: u8 = 0x5b;
    pub const PUSH0: u8 = 0x5f;
    pub const PUSH1: u8 = 0x60;
    pub const PUSH32: u8 = 0x7f;
    pub const CALL: u8 = 0xf1;
    pub const CALLCODE: u8 = 0xf2;
    pub const RETURN: u8 = 0xf3;
    pub const DELEGATECALL: u8 = 0xf4;
    pub const STATICCALL: u8 = 0xfa;
    pub const REVERT: u8 = 0xfd;
    pub const INVALID: u8 = 0xfe;
    pub const SELFDESTRUCT: u8 = 0xff;
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Instruction {
    /// Byte offset into the bytecode (the program counter).
    pub offset: usize,
    pub opcode: u8,
    pub mnemonic: &'static str,
    /// Operand bytes, present exactly for PUSH1..PUSH32.
    pub push_data: Option<Vec<u8>>,
    /// False for opcodes outside the pinned instruction set.
    pub is_valid: bool,
    /// True for a PUSH whose operand ran past the end of code; `push_data`
    /// then holds the bytes that were available.
    pub truncated: bool,
    /// True for instructions inside the compiler metadata trailer.
    pub in_metadata: bool,
}

impl Instruction {
    /// Encoded size in bytes: opcode plus operand.
    pub fn size(&self) -> usize {
        1 + self.push_data.as_ref().map_or(0, Vec::len)
    }

    pub fn is_push(&self) -> bool {
        (op::PUSH1..=op::PUSH32).contains(&self.opcode)
    }

    /// Operand interpreted as an unsigned big-endian target offset, when it
    /// fits in a usize. PUSH0 yields zero.
    pub fn push_value(&self) -> Option<usize> {
        if self.opcode == op::PUSH0 {
            return Some(0);
        }
        let data = self.push_data.as_ref()?;
        let mut value: usize = 0;
        for &byte in data {
            value = value.checked_mul(256)?.checked_add(byte as usize)?;
        }
        Some(value)
    }
}

pub type InstructionList = Vec<Instruction>;

/// Strips an optional `0x` prefix and surrounding whitespace, then decodes.
pub fn decode_hex(text: &str) -> Result<Vec<u8>, DisasmError> {
    let trimmed = text.trim();
    let digits = trimmed
        .strip_prefix("0x")
        .or_else(|| trimmed.strip_prefix("0X"))
        .unwrap_or(trimmed);
    hex::decode(digits).map_err(|e| DisasmError::InvalidHex(e.to_string()))
}

/// Locates the compiler-appended CBOR metadata trailer, identified by its
/// trailing 2-byte big-endian length. Returns the offset where the trailer
/// (blob + length suffix) begins. The blob's leading byte must look like a
/// CBOR map header, which keeps random suffixes from being misclassified.
pub fn metadata_start(bytecode: &[u8]) -> Option<usize> {
    if bytecode.len() < 4 {
        return None;
    }
    let n = bytecode.len();
    let blob_len = u16::from_be_bytes([bytecode[n - 2], bytecode[n - 1]]) as usize;
    if blob_len == 0 || blob_len + 2 > n {
        return None;
    }
    let start = n - 2 - blob_len;
    (0xa0..=0xbf).contains(&bytecode[start]).then_some(start)
}

/// Disassembles raw bytecode. Total: every byte is consumed exactly once and
/// the result tiles the input.
pub fn disassemble(bytecode: &[u8]) -> InstructionList {
    let meta_start = metadata_start(bytecode);
    let mut instructions = Vec::new();
    let mut offset = 0;
    while offset < bytecode.len() {
        let opcode = bytecode[offset];
        let mnemonic = OPCODE_TABLE[opcode as usize];
        let mut truncated = false;
        let push_data = if (op::PUSH1..=op::PUSH32).contains(&opcode) {
            let want = (opcode - op::PUSH1 + 1) as usize;
            let end = (offset + 1 + want).min(bytecode.len());
            truncated = end - offset - 1 < want;
            Some(bytecode[offset + 1..end].to_vec())
        } else {
            None
        };
        let instr = Instruction {
            offset,
            opcode,
            mnemonic: mnemonic.unwrap_or("INVALID"),
            is_valid: mnemonic.is_some(),
            truncated,
            in_metadata: meta_start.is_some_and(|m| offset >= m),
            push_data,
        };
        offset += instr.size();
        instructions.push(instr);
    }
    instructions
}

/// Offsets of real JUMPDEST instructions (never bytes inside PUSH operands).
pub fn jumpdests(instructions: &[Instruction]) -> BTreeSet<usize> {
    instructions
        .iter()
        .filter(|i| i.opcode == op::JUMPDEST)
        .map(|i| i.offset)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent table-free reference decoder: recognizes opcodes through
    /// range matches only. Kept deliberately separate from the production
    /// table so the two routes can disagree.
    pub(crate) fn oracle_decode(bytecode: &[u8]) -> Vec<(usize, u8, Vec<u8>, bool, bool)> {
        fn known(op: u8) -> bool {
            matches!(op,
                0x00..=0x0b | 0x10..=0x1d | 0x20 | 0x30..=0x48 | 0x50..=0x5b
                | 0x5f..=0xa4 | 0xf0..=0xf5 | 0xfa | 0xfd..=0xff)
        }
        let mut out = Vec::new();
        let mut pc = 0;
        while pc < bytecode.len() {
            let b = bytecode[pc];
            if (0x60..=0x7f).contains(&b) {
                let want = (b - 0x5f) as usize;
                let avail = bytecode.len() - pc - 1;
                let take = want.min(avail);
                out.push((
                    pc,
                    b,
                    bytecode[pc + 1..pc + 1 + take].to_vec(),
                    known(b),
                    take < want,
                ));
                pc += 1 + take;
            } else {
                out.push((pc, b, Vec::new(), known(b), false));
                pc += 1;
            }
        }
        out
    }

    fn assert_matches_oracle(bytecode: &[u8]) {
        let ours = disassemble(bytecode);
        let want = oracle_decode(bytecode);
        assert_eq!(ours.len(), want.len(), "instruction count for {bytecode:02x?}");
        for (instr, (offset, opcode, data, valid, truncated)) in ours.iter().zip(&want) {
            assert_eq!(instr.offset, *offset);
            assert_eq!(instr.opcode, *opcode);
            assert_eq!(instr.push_data.clone().unwrap_or_default(), *data);
            assert_eq!(instr.is_valid, *valid, "validity of 0x{opcode:02x}");
            assert_eq!(instr.truncated, *truncated);
        }
        let total: usize = ours.iter().map(Instruction::size).sum();
        assert_eq!(total, bytecode.len(), "tiling");
    }

    #[test]
    fn decode_hex_handles_prefix_and_empty() {
        assert_eq!(decode_hex("0x").unwrap(), Vec::<u8>::new());
        assert_eq!(decode_hex("6001600101").unwrap().len(), 5);
        assert_eq!(decode_hex(" 0x6001\n").unwrap(), vec![0x60, 0x01]);
        assert!(matches!(decode_hex("0x6z"), Err(DisasmError::InvalidHex(_))));
        assert!(matches!(decode_hex("abc"), Err(DisasmError::InvalidHex(_))));
    }

    #[test]
    fn empty_program_disassembles_empty() {
        assert!(disassemble(&[]).is_empty());
    }

    #[test]
    fn push_add_sequence() {
        let code = decode_hex("0x6001600201").unwrap();
        let instrs = disassemble(&code);
        assert_eq!(instrs.len(), 3);
        assert_eq!((instrs[0].offset, instrs[0].mnemonic), (0, "PUSH1"));
        assert_eq!(instrs[0].push_data.as_deref(), Some(&[0x01][..]));
        assert_eq!((instrs[1].offset, instrs[1].mnemonic), (2, "PUSH1"));
        assert_eq!(instrs[1].push_data.as_deref(), Some(&[0x02][..]));
        assert_eq!((instrs[2].offset, instrs[2].mnemonic), (4, "ADD"));
        assert_matches_oracle(&code);
    }

    #[test]
    fn push_operand_shields_selfdestruct_byte() {
        let code = [0x60, 0xff, 0x00];
        let instrs = disassemble(&code);
        assert_eq!(instrs.len(), 2);
        assert_eq!(instrs[0].mnemonic, "PUSH1");
        assert_eq!(instrs[0].push_data.as_deref(), Some(&[0xff][..]));
        assert_eq!((instrs[1].offset, instrs[1].mnemonic), (2, "STOP"));
        assert_matches_oracle(&code);
    }

    #[test]
    fn truncated_push_keeps_partial_operand() {
        let instrs = disassemble(&[0x61, 0xaa]);
        assert_eq!(instrs.len(), 1);
        assert_eq!(instrs[0].mnemonic, "PUSH2");
        assert!(instrs[0].truncated);
        assert_eq!(instrs[0].push_data.as_deref(), Some(&[0xaa][..]));
        assert_eq!(instrs[0].size(), 2);
    }

    #[test]
    fn unknown_opcode_is_invalid_not_fatal() {
        let instrs = disassemble(&[0x0c, 0x21, 0xef]);
        assert_eq!(instrs.len(), 3);
        for i in &instrs {
            assert!(!i.is_valid);
            assert_eq!(i.mnemonic, "INVALID");
        }
    }

    #[test]
    fn jumpdest_offsets_exclude_push_data() {
        let instrs = disassemble(&decode_hex("0x5b00").unwrap());
        assert_eq!(jumpdests(&instrs), BTreeSet::from([0]));
        let instrs = disassemble(&decode_hex("0x605b00").unwrap());
        assert!(jumpdests(&instrs).is_empty());
        assert!(jumpdests(&[]).is_empty());
    }

    #[test]
    fn metadata_trailer_is_flagged() {
        // STOP, then a 4-byte CBOR-map blob and its 2-byte length suffix.
        let code = [0x00, 0xa2, 0x01, 0x02, 0x03, 0x00, 0x04];
        assert_eq!(metadata_start(&code), Some(1));
        let instrs = disassemble(&code);
        assert!(!instrs[0].in_metadata);
        assert!(instrs[1..].iter().all(|i| i.in_metadata));
        // Without a plausible CBOR header byte there is no trailer.
        assert_eq!(metadata_start(&[0x00, 0x01, 0x02, 0x00, 0x02]), None);
    }

    #[test]
    fn push_value_decodes_big_endian() {
        let instrs = disassemble(&decode_hex("0x61010200").unwrap());
        assert_eq!(instrs[0].push_value(), Some(0x0102));
        let instrs = disassemble(&[0x5f]);
        assert_eq!(instrs[0].push_value(), Some(0));
    }

    proptest! {
        #[test]
        fn disassembly_is_total_and_tiles(bytes in proptest::collection::vec(any::<u8>(), 0..=256)) {
            assert_matches_oracle(&bytes);
        }

        #[test]
        fn offsets_strictly_increase(bytes in proptest::collection::vec(any::<u8>(), 0..=256)) {
            let instrs = disassemble(&bytes);
            for pair in instrs.windows(2) {
                prop_assert!(pair[0].offset < pair[1].offset);
                prop_assert_eq!(pair[0].offset + pair[0].size(), pair[1].offset);
            }
        }
    }
}
