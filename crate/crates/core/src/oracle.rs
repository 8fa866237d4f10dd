//! Ground truth for merge points.
//!
//! `oracle_merge` enumerates every walk from the alternate successor of a
//! branch (breadth first, bounded by the maximum distance) and reports the
//! first correct-path PC any of them reaches. `static_postdominator` is the
//! compile-time baseline.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{BlockId, FollowPolicy, ModelError, PathWalker, Pc, ProgramModel, Terminator};
use crate::regs::RegSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMerge {
    pub branch_pc: Pc,
    pub alt_dir: bool,
    pub merge_pc: Pc,
    /// Position of the merge on the correct path, 1-based.
    pub true_distance: u32,
    /// Shortest alternate walk to the merge.
    pub wp_distance: u32,
    /// Registers written before the merge on the correct path.
    pub cp_written: RegSet,
    /// Registers written on every shortest alternate walk to the merge.
    pub wp_written: RegSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoMerge {
    /// The branch recurs on the correct path first.
    LoopBack,
    /// The program ends first.
    ProgramEnd,
    /// Nothing within the maximum distance.
    Distance,
}

/// PCs reachable from one successor of a branch, each with its minimum depth
/// and the registers written on every minimum-depth walk before it.
#[derive(Clone, Debug)]
pub struct Reach {
    pub branch_pc: Pc,
    pub alt_dir: bool,
    nodes: HashMap<Pc, (u32, RegSet)>,
}

impl Reach {
    pub fn depth(&self, pc: Pc) -> Option<u32> {
        self.nodes.get(&pc).map(|n| n.0)
    }

    pub fn written_before(&self, pc: Pc) -> Option<RegSet> {
        self.nodes.get(&pc).map(|n| n.1)
    }

    pub fn contains(&self, pc: Pc) -> bool {
        self.nodes.contains_key(&pc)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Instruction-level successors; empty at program end.
fn next_pcs(model: &ProgramModel, block: BlockId, idx: usize) -> Vec<(BlockId, usize)> {
    let b = &model.blocks()[block];
    if idx + 1 < b.len() {
        return vec![(block, idx + 1)];
    }
    let mut out = Vec::new();
    let targets: Vec<BlockId> = match b.terminator {
        Terminator::Halt => Vec::new(),
        Terminator::Fallthrough => vec![block + 1],
        Terminator::Jump { target } => vec![target],
        Terminator::CondBranch {
            taken, not_taken, ..
        } => vec![taken, not_taken],
    };
    for t in targets {
        if model.block(t).is_some_and(|b| !b.is_empty()) && !out.contains(&(t, 0)) {
            out.push((t, 0));
        }
    }
    out
}

/// Breadth-first enumeration of every walk from the `alt_dir` successor of
/// `branch_pc`, stopping at program end, at the branch itself and at depth
/// `max_dist`.
pub fn reach_from(
    model: &ProgramModel,
    branch_pc: Pc,
    alt_dir: bool,
    max_dist: u32,
) -> Result<Reach, ModelError> {
    let (block, _) = model
        .branch_block(branch_pc)
        .ok_or(ModelError::NotABranch(branch_pc))?;
    let start = model
        .successor(block, alt_dir)
        .filter(|s| model.block(*s).is_some_and(|b| !b.is_empty()))
        .ok_or_else(|| ModelError::Malformed {
            block,
            reason: "missing successor".into(),
        })?;
    let mut nodes: HashMap<Pc, (u32, RegSet)> = HashMap::new();
    let mut queue = VecDeque::new();
    let pc_of = |b: BlockId, i: usize| model.blocks()[b].instructions[i].pc;
    let first = pc_of(start, 0);
    if first != branch_pc && max_dist >= 1 {
        nodes.insert(first, (1, RegSet::EMPTY));
        queue.push_back((start, 0usize));
    }
    while let Some((b, i)) = queue.pop_front() {
        let ins = &model.blocks()[b].instructions[i];
        let (d, gap) = nodes[&ins.pc];
        if d >= max_dist {
            continue;
        }
        let through = gap | ins.dests;
        for (nb, ni) in next_pcs(model, b, i) {
            let pc = pc_of(nb, ni);
            if pc == branch_pc {
                continue;
            }
            match nodes.get_mut(&pc) {
                None => {
                    nodes.insert(pc, (d + 1, through));
                    queue.push_back((nb, ni));
                }
                Some((nd, ngap)) if *nd == d + 1 => *ngap = ngap.intersection(through),
                Some(_) => {}
            }
        }
    }
    Ok(Reach {
        branch_pc,
        alt_dir,
        nodes,
    })
}

/// True when `pc` is the last instruction of a `Halt` block.
pub fn ends_program(model: &ProgramModel, pc: Pc) -> bool {
    model.locate(pc).is_some_and(|(b, i)| {
        let blk = &model.blocks()[b];
        matches!(blk.terminator, Terminator::Halt) && i + 1 == blk.len()
    })
}

/// First correct-path PC in `reach`. `continuation` lists the architectural
/// PCs after the branch; it is cut at the branch's recurrence, at program end
/// and at `max_dist`.
pub fn merge_in(
    model: &ProgramModel,
    reach: &Reach,
    continuation: &[Pc],
    max_dist: u32,
) -> Result<OracleMerge, NoMerge> {
    let mut written = RegSet::EMPTY;
    for (i, pc) in continuation.iter().take(max_dist as usize).enumerate() {
        if *pc == reach.branch_pc {
            return Err(NoMerge::LoopBack);
        }
        if let Some((wp, wp_written)) = reach.nodes.get(pc) {
            return Ok(OracleMerge {
                branch_pc: reach.branch_pc,
                alt_dir: reach.alt_dir,
                merge_pc: *pc,
                true_distance: i as u32 + 1,
                wp_distance: *wp,
                cp_written: written,
                wp_written: *wp_written,
            });
        }
        if ends_program(model, *pc) {
            return Err(NoMerge::ProgramEnd);
        }
        if let Some(t) = model.instr_at(*pc) {
            written |= t.dests;
        }
    }
    Err(NoMerge::Distance)
}

/// Dynamic merge of one branch instance.
pub fn oracle_merge(
    model: &ProgramModel,
    branch_pc: Pc,
    actual_dir: bool,
    continuation: &[Pc],
    max_dist: u32,
) -> Result<Result<OracleMerge, NoMerge>, ModelError> {
    let reach = reach_from(model, branch_pc, !actual_dir, max_dist)?;
    Ok(merge_in(model, &reach, continuation, max_dist))
}

/// Variant following a single static-bias walk from the alternate successor
/// instead of every walk.
pub fn oracle_merge_directed(
    model: &ProgramModel,
    branch_pc: Pc,
    actual_dir: bool,
    continuation: &[Pc],
    max_dist: u32,
) -> Result<Result<OracleMerge, NoMerge>, ModelError> {
    let mut walker = PathWalker::from_branch(model, branch_pc, !actual_dir)?;
    let mut policy = FollowPolicy::StaticBias;
    let mut nodes = HashMap::new();
    let mut written = RegSet::EMPTY;
    let mut d = 0;
    while d < max_dist {
        let Some(ins) = walker.next(model, &mut policy)? else {
            break;
        };
        if ins.pc == branch_pc {
            break;
        }
        d += 1;
        nodes.entry(ins.pc).or_insert((d, written));
        written |= ins.dests;
    }
    let reach = Reach {
        branch_pc,
        alt_dir: !actual_dir,
        nodes,
    };
    Ok(merge_in(model, &reach, continuation, max_dist))
}

/// Immediate postdominator of every block, with all `Halt` blocks feeding a
/// virtual exit. `None` where only the exit postdominates.
pub fn immediate_postdominators(model: &ProgramModel) -> Vec<Option<BlockId>> {
    let n = model.blocks().len();
    let exit = n;
    let words = (n + 1).div_ceil(64);
    let full = vec![u64::MAX; words];
    let mut pdom: Vec<Vec<u64>> = vec![full; n + 1];
    pdom[exit] = vec![0u64; words];
    pdom[exit][exit / 64] |= 1 << (exit % 64);
    let succs: Vec<Vec<BlockId>> = (0..n)
        .map(|b| {
            let s = model.successors(b);
            if matches!(model.blocks()[b].terminator, Terminator::Halt) {
                vec![exit]
            } else {
                s
            }
        })
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..n).rev() {
            let mut acc = vec![u64::MAX; words];
            for s in &succs[b] {
                for w in 0..words {
                    acc[w] &= pdom[*s][w];
                }
            }
            acc[b / 64] |= 1 << (b % 64);
            if acc != pdom[b] {
                pdom[b] = acc;
                changed = true;
            }
        }
    }
    let has = |set: &Vec<u64>, x: usize| set[x / 64] >> (x % 64) & 1 == 1;
    let count = |set: &Vec<u64>| set.iter().map(|w| w.count_ones()).sum::<u32>();
    (0..n)
        .map(|b| {
            // Strict postdominators form a chain; the immediate one has the
            // largest set of its own.
            (0..n)
                .filter(|c| *c != b && has(&pdom[b], *c))
                .max_by_key(|c| count(&pdom[*c]))
        })
        .collect()
}

/// First PC of the immediate postdominator of the branch's block.
pub fn static_postdominator(model: &ProgramModel, branch_pc: Pc) -> Option<Pc> {
    let (block, _) = model.branch_block(branch_pc)?;
    immediate_postdominators(model)[block].and_then(|b| model.blocks()[b].first_pc())
}
