//! Executable workload abstraction: a control-flow graph of basic blocks whose
//! instructions carry register effects, plus per-site branch outcome sources.
//!
//! PCs are abstract integers assigned densely, block by block, in declaration
//! order. There is no code layout and no instruction length.

mod io;
mod validate;
mod walk;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regs::RegSet;

pub use io::{load_model, load_model_str, save_model, save_model_string, MODEL_FORMAT};
pub use validate::{validate_model, ValidationReport, Violation};
pub use walk::{
    step_architectural, step_wrong_path, ArchWalker, Cursor, FollowPolicy, OutcomeState, PathWalker,
    Step,
};

pub type BlockId = usize;
pub type SiteId = u32;

pub const DEFAULT_ARCH_REGS: u8 = 16;

/// Abstract instruction address.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pc(pub u32);

impl fmt::Debug for Pc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pc{}", self.0)
    }
}

impl fmt::Display for Pc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrClass {
    Alu,
    Load,
    Store,
    Branch,
    Nop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClass {
    Fixed(u32),
    /// `(miss probability, hit cycles, miss cycles)`; a miss latency of 0
    /// defers to the pipeline's configured load miss latency.
    #[serde(rename = "load_miss")]
    LoadMissProb(f64, u32, u32),
}

impl Default for LatencyClass {
    fn default() -> Self {
        LatencyClass::Fixed(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstrTemplate {
    pub pc: Pc,
    pub class: InstrClass,
    pub dests: RegSet,
    pub srcs: RegSet,
    pub latency: LatencyClass,
}

/// Declaration-side instruction: `(class, dests, srcs, latency)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrSpec(pub InstrClass, pub RegSet, pub RegSet, pub LatencyClass);

impl InstrSpec {
    pub fn alu(dests: &[u8], srcs: &[u8]) -> Self {
        InstrSpec(
            InstrClass::Alu,
            dests.iter().copied().collect(),
            srcs.iter().copied().collect(),
            LatencyClass::Fixed(1),
        )
    }

    pub fn load(dest: u8, srcs: &[u8], latency: LatencyClass) -> Self {
        InstrSpec(
            InstrClass::Load,
            RegSet::single(dest),
            srcs.iter().copied().collect(),
            latency,
        )
    }

    pub fn branch(srcs: &[u8]) -> Self {
        InstrSpec(
            InstrClass::Branch,
            RegSet::EMPTY,
            srcs.iter().copied().collect(),
            LatencyClass::Fixed(1),
        )
    }

    pub fn nop() -> Self {
        InstrSpec(InstrClass::Nop, RegSet::EMPTY, RegSet::EMPTY, LatencyClass::Fixed(1))
    }
}

/// How control leaves a block. `Fallthrough` continues at the next declared
/// block; `Jump` is an unconditional direct transfer that occupies no
/// instruction slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terminator {
    Fallthrough,
    CondBranch {
        taken: BlockId,
        not_taken: BlockId,
        site: SiteId,
    },
    Jump {
        target: BlockId,
    },
    Halt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub instrs: Vec<InstrSpec>,
    pub term: Terminator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub instructions: Vec<InstrTemplate>,
    pub terminator: Terminator,
}

impl BasicBlock {
    pub fn first_pc(&self) -> Option<Pc> {
        self.instructions.first().map(|i| i.pc)
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Union of destination registers of every instruction in the block.
    pub fn written(&self) -> RegSet {
        self.instructions.iter().fold(RegSet::EMPTY, |acc, i| acc | i.dests)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeSource {
    Bernoulli { bias: f64, seed: u64 },
    Pattern(#[serde(with = "bit_list")] Vec<bool>),
    AlwaysTaken,
    AlwaysNotTaken,
}

impl OutcomeSource {
    /// Most likely direction: Bernoulli bias above one half, or the pattern
    /// majority. Ties resolve to not-taken.
    pub fn static_direction(&self) -> bool {
        match self {
            OutcomeSource::Bernoulli { bias, .. } => *bias > 0.5,
            OutcomeSource::Pattern(bits) => bits.iter().filter(|b| **b).count() * 2 > bits.len(),
            OutcomeSource::AlwaysTaken => true,
            OutcomeSource::AlwaysNotTaken => false,
        }
    }
}

mod bit_list {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(bits.iter().map(|b| *b as u8))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        raw.into_iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "pattern bits must be 0 or 1, got {other}"
                ))),
            })
            .collect()
    }
}

/// One dynamic instance of an instruction along a walked path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynInstr {
    pub pc: Pc,
    pub class: InstrClass,
    pub dests: RegSet,
    pub srcs: RegSet,
    pub latency: LatencyClass,
    pub seq_no: u64,
    pub branch: Option<BranchInfo>,
    /// Last instruction of a `Halt` block.
    pub ends_program: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchInfo {
    pub taken: bool,
    pub target_pc: Pc,
    pub site: SiteId,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed model at block {block}: {reason}")]
    Malformed { block: BlockId, reason: String },
    #[error("no instruction at {0:?}")]
    UnknownPc(Pc),
    #[error("{0:?} is not a conditional branch site")]
    NotABranch(Pc),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable executable CFG.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramModel {
    blocks: Vec<BasicBlock>,
    entry: BlockId,
    arch_reg_count: u8,
    sources: BTreeMap<SiteId, OutcomeSource>,
}

impl ProgramModel {
    /// Builds a model and assigns PCs densely in declaration order. Structural
    /// problems are reported by [`validate_model`], not here.
    pub fn new(
        arch_reg_count: u8,
        entry: BlockId,
        blocks: Vec<BlockSpec>,
        sources: BTreeMap<SiteId, OutcomeSource>,
    ) -> Self {
        let mut next_pc = 0u32;
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(id, spec)| {
                let instructions = spec
                    .instrs
                    .into_iter()
                    .map(|InstrSpec(class, dests, srcs, latency)| {
                        let pc = Pc(next_pc);
                        next_pc += 1;
                        InstrTemplate {
                            pc,
                            class,
                            dests,
                            srcs,
                            latency,
                        }
                    })
                    .collect();
                BasicBlock {
                    id,
                    instructions,
                    terminator: spec.term,
                }
            })
            .collect();
        ProgramModel {
            blocks,
            entry,
            arch_reg_count,
            sources,
        }
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks.get(id)
    }

    pub fn entry(&self) -> BlockId {
        self.entry
    }

    pub fn arch_reg_count(&self) -> u8 {
        self.arch_reg_count
    }

    pub fn sources(&self) -> &BTreeMap<SiteId, OutcomeSource> {
        &self.sources
    }

    pub fn source(&self, site: SiteId) -> Option<&OutcomeSource> {
        self.sources.get(&site)
    }

    pub fn instr_count(&self) -> usize {
        self.blocks.iter().map(BasicBlock::len).sum()
    }

    /// Block and offset holding `pc`.
    pub fn locate(&self, pc: Pc) -> Option<(BlockId, usize)> {
        self.blocks.iter().find_map(|b| {
            let first = b.first_pc()?.0;
            let offset = pc.0.checked_sub(first)? as usize;
            (offset < b.len()).then_some((b.id, offset))
        })
    }

    pub fn instr_at(&self, pc: Pc) -> Option<&InstrTemplate> {
        let (block, offset) = self.locate(pc)?;
        self.blocks[block].instructions.get(offset)
    }

    /// Successor block of `block` for the given direction. Non-conditional
    /// terminators ignore `taken`; `Halt` has no successor.
    pub fn successor(&self, block: BlockId, taken: bool) -> Option<BlockId> {
        match self.blocks.get(block)?.terminator {
            Terminator::Fallthrough => Some(block + 1),
            Terminator::CondBranch {
                taken: t,
                not_taken: n,
                ..
            } => Some(if taken { t } else { n }),
            Terminator::Jump { target } => Some(target),
            Terminator::Halt => None,
        }
    }

    /// All successor blocks of `block`.
    pub fn successors(&self, block: BlockId) -> Vec<BlockId> {
        match self.blocks.get(block).map(|b| b.terminator) {
            Some(Terminator::CondBranch {
                taken, not_taken, ..
            }) => {
                if taken == not_taken {
                    vec![taken]
                } else {
                    vec![taken, not_taken]
                }
            }
            Some(Terminator::Fallthrough) => vec![block + 1],
            Some(Terminator::Jump { target }) => vec![target],
            Some(Terminator::Halt) | None => Vec::new(),
        }
    }

    /// Conditional branch sites as `(site, branch pc, block)`, in block order.
    pub fn branch_sites(&self) -> Vec<(SiteId, Pc, BlockId)> {
        self.blocks
            .iter()
            .filter_map(|b| match b.terminator {
                Terminator::CondBranch { site, .. } => {
                    Some((site, b.instructions.last()?.pc, b.id))
                }
                _ => None,
            })
            .collect()
    }

    /// The conditional site whose branch instruction sits at `pc`.
    pub fn branch_block(&self, pc: Pc) -> Option<(BlockId, SiteId)> {
        let (block, offset) = self.locate(pc)?;
        let b = &self.blocks[block];
        match b.terminator {
            Terminator::CondBranch { site, .. } if offset + 1 == b.len() => Some((block, site)),
            _ => None,
        }
    }
}

/// Incremental construction helper used by generators and tests.
#[derive(Clone, Debug, Default)]
pub struct ModelBuilder {
    arch_reg_count: u8,
    entry: BlockId,
    blocks: Vec<BlockSpec>,
    sources: BTreeMap<SiteId, OutcomeSource>,
}

impl ModelBuilder {
    pub fn new(arch_reg_count: u8) -> Self {
        ModelBuilder {
            arch_reg_count,
            ..Default::default()
        }
    }

    pub fn entry(mut self, entry: BlockId) -> Self {
        self.entry = entry;
        self
    }

    /// Appends a block and returns its id.
    pub fn block(&mut self, instrs: Vec<InstrSpec>, term: Terminator) -> BlockId {
        self.blocks.push(BlockSpec { instrs, term });
        self.blocks.len() - 1
    }

    pub fn set_term(&mut self, block: BlockId, term: Terminator) {
        self.blocks[block].term = term;
    }

    pub fn instrs_mut(&mut self, block: BlockId) -> &mut Vec<InstrSpec> {
        &mut self.blocks[block].instrs
    }

    pub fn source(&mut self, site: SiteId, source: OutcomeSource) {
        self.sources.insert(site, source);
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn build(self) -> ProgramModel {
        ProgramModel::new(self.arch_reg_count, self.entry, self.blocks, self.sources)
    }
}
