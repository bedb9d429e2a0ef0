//! Basic-block control-flow graph over a disassembled instruction list.
//!
//! Jump targets are resolved with a single-PUSH lookback: a JUMP/JUMPI whose
//! immediately preceding instruction in the same block is a PUSH of a valid
//! JUMPDEST offset gets one precise edge. Anything else fans out to every
//! JUMPDEST block and the edges are flagged imprecise.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::disasm::{jumpdests, op, Instruction, InstructionList};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    FallThrough,
    Jump,
    BranchTrue,
    BranchFalse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    /// True when the edge comes from fanning an unresolved jump out to every
    /// JUMPDEST block rather than from a resolved constant target.
    pub imprecise: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BasicBlock {
    pub id: usize,
    /// Byte offset of the first instruction.
    pub start: usize,
    /// Byte offset one past the last instruction.
    pub end: usize,
    /// Index range into the owning [`Cfg`]'s instruction list.
    pub instr_start: usize,
    pub instr_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cfg {
    pub instructions: InstructionList,
    pub blocks: Vec<BasicBlock>,
    pub edges: Vec<Edge>,
    /// Block id of the entry block; `None` for an empty program.
    pub entry: Option<usize>,
}

impl Cfg {
    pub fn block_instructions(&self, block: &BasicBlock) -> &[Instruction] {
        &self.instructions[block.instr_start..block.instr_end]
    }

    /// Successor block ids of `block_id`, in edge order.
    pub fn successors(&self, block_id: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.from == block_id)
            .map(|e| e.to)
    }

    pub fn has_imprecise_edges(&self) -> bool {
        self.edges.iter().any(|e| e.imprecise)
    }
}

fn is_terminator(opcode: u8) -> bool {
    matches!(
        opcode,
        op::JUMP
            | op::JUMPI
            | op::STOP
            | op::RETURN
            | op::REVERT
            | op::SELFDESTRUCT
            | op::INVALID
    )
}

/// Builds the basic-block graph. Blocks split after terminators and before
/// JUMPDESTs; every jump/branch edge targets a block that starts with
/// JUMPDEST.
pub fn build_cfg(instructions: InstructionList) -> Cfg {
    let dests = jumpdests(&instructions);

    // Block boundaries as instruction indexes.
    let mut starts = Vec::new();
    for (idx, instr) in instructions.iter().enumerate() {
        if (idx == 0 || instr.opcode == op::JUMPDEST) && starts.last() != Some(&idx) {
            starts.push(idx);
        }
        if is_terminator(instr.opcode) && idx + 1 < instructions.len() {
            starts.push(idx + 1);
        }
    }
    starts.dedup();

    let mut blocks = Vec::with_capacity(starts.len());
    for (id, &instr_start) in starts.iter().enumerate() {
        let instr_end = starts.get(id + 1).copied().unwrap_or(instructions.len());
        let first = &instructions[instr_start];
        let last = &instructions[instr_end - 1];
        blocks.push(BasicBlock {
            id,
            start: first.offset,
            end: last.offset + last.size(),
            instr_start,
            instr_end,
        });
    }

    // Offset of a JUMPDEST -> id of the block it starts.
    let dest_blocks: BTreeMap<usize, usize> = blocks
        .iter()
        .filter(|b| dests.contains(&b.start))
        .map(|b| (b.start, b.id))
        .collect();

    let mut edges = Vec::new();
    for block in &blocks {
        let last = &instructions[block.instr_end - 1];
        let fall_to = blocks.get(block.id + 1).map(|b| b.id);
        match last.opcode {
            op::JUMP => {
                push_jump_edges(
                    &mut edges,
                    block,
                    &instructions,
                    &dest_blocks,
                    EdgeKind::Jump,
                );
            }
            op::JUMPI => {
                push_jump_edges(
                    &mut edges,
                    block,
                    &instructions,
                    &dest_blocks,
                    EdgeKind::BranchTrue,
                );
                if let Some(to) = fall_to {
                    edges.push(Edge {
                        from: block.id,
                        to,
                        kind: EdgeKind::BranchFalse,
                        imprecise: false,
                    });
                }
            }
            o if is_terminator(o) => {}
            _ => {
                // Split forced by a following JUMPDEST: plain fall-through.
                if let Some(to) = fall_to {
                    edges.push(Edge {
                        from: block.id,
                        to,
                        kind: EdgeKind::FallThrough,
                        imprecise: false,
                    });
                }
            }
        }
    }

    Cfg {
        entry: (!blocks.is_empty()).then_some(0),
        instructions,
        blocks,
        edges,
    }
}

/// Emits target edges for the jump terminating `block`. A constant target
/// from the immediately preceding PUSH gives one precise edge (none at all if
/// the constant is not a JUMPDEST — such a jump can only fault); otherwise
/// the jump fans out to every JUMPDEST block, imprecise.
fn push_jump_edges(
    edges: &mut Vec<Edge>,
    block: &BasicBlock,
    instructions: &[Instruction],
    dest_blocks: &BTreeMap<usize, usize>,
    kind: EdgeKind,
) {
    let jump_idx = block.instr_end - 1;
    let preceding = (jump_idx > block.instr_start).then(|| &instructions[jump_idx - 1]);
    let constant = preceding
        .filter(|p| (p.is_push() || p.opcode == op::PUSH0) && !p.truncated)
        .and_then(Instruction::push_value);

    match constant {
        Some(target) => {
            if let Some(&to) = dest_blocks.get(&target) {
                edges.push(Edge {
                    from: block.id,
                    to,
                    kind,
                    imprecise: false,
                });
            }
        }
        None => {
            for &to in dest_blocks.values() {
                edges.push(Edge {
                    from: block.id,
                    to,
                    kind,
                    imprecise: true,
                });
            }
        }
    }
}
