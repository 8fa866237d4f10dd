use std::collections::HashSet;
use std::fmt;

use super::{BlockId, InstrClass, OutcomeSource, Pc, ProgramModel, SiteId, Terminator};
use crate::regs::MAX_ARCH_REGS;

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    BadEntry(BlockId),
    BadRegisterCount(u8),
    EmptyBlock(BlockId),
    MissingSuccessor { block: BlockId, target: BlockId },
    BranchNotLast { block: BlockId },
    StrayBranch { block: BlockId, pc: Pc },
    MissingSource { block: BlockId, site: SiteId },
    DuplicateSite(SiteId),
    RegisterOutOfRange { pc: Pc, reg: u8 },
    DuplicatePc(Pc),
    NonConsecutivePc { block: BlockId, pc: Pc },
    BadBias { site: SiteId, bias: f64 },
    EmptyPattern(SiteId),
    BadLatency { pc: Pc },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadEntry(b) => write!(f, "entry block {b} does not exist"),
            Violation::BadRegisterCount(n) => write!(f, "arch_reg_count {n} outside 1..=64"),
            Violation::EmptyBlock(b) => write!(f, "block {b} has no instructions"),
            Violation::MissingSuccessor { block, target } => {
                write!(f, "block {block} names missing successor {target}")
            }
            Violation::BranchNotLast { block } => {
                write!(f, "conditional block {block} does not end in a branch instruction")
            }
            Violation::StrayBranch { block, pc } => {
                write!(f, "branch instruction {pc:?} in block {block} is not its terminator")
            }
            Violation::MissingSource { block, site } => {
                write!(f, "block {block} branches on site {site} with no outcome source")
            }
            Violation::DuplicateSite(s) => write!(f, "site {s} used by more than one branch"),
            Violation::RegisterOutOfRange { pc, reg } => {
                write!(f, "{pc:?} references register r{reg} beyond arch_reg_count")
            }
            Violation::DuplicatePc(pc) => write!(f, "{pc:?} appears more than once"),
            Violation::NonConsecutivePc { block, pc } => {
                write!(f, "block {block} has non-consecutive {pc:?}")
            }
            Violation::BadBias { site, bias } => write!(f, "site {site} bias {bias} outside [0,1]"),
            Violation::EmptyPattern(s) => write!(f, "site {s} has an empty pattern"),
            Violation::BadLatency { pc } => write!(f, "{pc:?} has an invalid latency class"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_model(model: &ProgramModel) -> ValidationReport {
    let mut out = Vec::new();
    let blocks = model.blocks();
    let nregs = model.arch_reg_count();

    if nregs == 0 || nregs as usize > MAX_ARCH_REGS {
        out.push(Violation::BadRegisterCount(nregs));
    }
    if model.entry() >= blocks.len() {
        out.push(Violation::BadEntry(model.entry()));
    }

    let mut pcs = HashSet::new();
    let mut sites = HashSet::new();
    for block in blocks {
        if block.is_empty() {
            out.push(Violation::EmptyBlock(block.id));
        }
        for (i, ins) in block.instructions.iter().enumerate() {
            if !pcs.insert(ins.pc) {
                out.push(Violation::DuplicatePc(ins.pc));
            }
            if i > 0 && ins.pc.0 != block.instructions[i - 1].pc.0 + 1 {
                out.push(Violation::NonConsecutivePc {
                    block: block.id,
                    pc: ins.pc,
                });
            }
            if let Some(reg) = ins.dests.union(ins.srcs).max_reg() {
                if reg >= nregs {
                    out.push(Violation::RegisterOutOfRange { pc: ins.pc, reg });
                }
            }
            let is_last = i + 1 == block.len();
            let is_cond = matches!(block.terminator, Terminator::CondBranch { .. });
            if ins.class == InstrClass::Branch && !(is_last && is_cond) {
                out.push(Violation::StrayBranch {
                    block: block.id,
                    pc: ins.pc,
                });
            }
            if let super::LatencyClass::LoadMissProb(p, _, _) = ins.latency {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::BadLatency { pc: ins.pc });
                }
            }
        }

        let targets: Vec<BlockId> = match block.terminator {
            Terminator::Fallthrough => vec![block.id + 1],
            Terminator::CondBranch {
                taken,
                not_taken,
                site,
            } => {
                if block.instructions.last().map(|i| i.class) != Some(InstrClass::Branch) {
                    out.push(Violation::BranchNotLast { block: block.id });
                }
                if model.source(site).is_none() {
                    out.push(Violation::MissingSource {
                        block: block.id,
                        site,
                    });
                }
                if !sites.insert(site) {
                    out.push(Violation::DuplicateSite(site));
                }
                vec![taken, not_taken]
            }
            Terminator::Jump { target } => vec![target],
            Terminator::Halt => vec![],
        };
        for target in targets {
            if target >= blocks.len() {
                out.push(Violation::MissingSuccessor {
                    block: block.id,
                    target,
                });
            }
        }
    }

    for (site, source) in model.sources() {
        match source {
            OutcomeSource::Bernoulli { bias, .. } if !(0.0..=1.0).contains(bias) => {
                out.push(Violation::BadBias {
                    site: *site,
                    bias: *bias,
                })
            }
            OutcomeSource::Pattern(bits) if bits.is_empty() => {
                out.push(Violation::EmptyPattern(*site))
            }
            _ => {}
        }
    }

    ValidationReport { violations: out }
}
