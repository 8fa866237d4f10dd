//! Merge truth computed over blocks, independently of the instruction-level
//! oracle, and its `.truth` sidecar format.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::model::{BlockId, ModelError, Pc, ProgramModel, SiteId, Terminator};
use crate::oracle::{static_postdominator, NoMerge, OracleMerge};
use crate::regs::RegSet;

use super::{Generated, Shape};

pub const TRUTH_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub format: u32,
    pub shape: Shape,
    pub max_distance: u32,
    pub sites: Vec<SiteTruth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub site: SiteId,
    pub branch_pc: Pc,
    /// First PC after the construct the branch opens.
    pub region_join: Option<Pc>,
    pub static_postdom: Option<Pc>,
    /// Merge when the branch resolves taken (wrong path goes not-taken).
    pub taken: DirTruth,
    pub not_taken: DirTruth,
}

impl SiteTruth {
    pub fn for_dir(&self, actual: bool) -> &DirTruth {
        if actual {
            &self.taken
        } else {
            &self.not_taken
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirTruth {
    Merge(OracleMerge),
    NoMerge(NoMerge),
}

impl DirTruth {
    pub fn as_result(&self) -> Result<OracleMerge, NoMerge> {
        match self {
            DirTruth::Merge(m) => Ok(*m),
            DirTruth::NoMerge(r) => Err(*r),
        }
    }
}

/// Per block: depth of its first PC from the alternate successor, and the
/// registers written on every shortest walk before it.
fn block_reach(
    model: &ProgramModel,
    start: BlockId,
    branch_block: BlockId,
    max: u32,
) -> Vec<Option<(u32, RegSet)>> {
    let blocks = model.blocks();
    let mut best: Vec<Option<(u32, RegSet)>> = vec![None; blocks.len()];
    let mut done = vec![false; blocks.len()];
    let mut heap = BinaryHeap::new();
    best[start] = Some((1, RegSet::EMPTY));
    heap.push(Reverse((1u32, start)));
    while let Some(Reverse((d, b))) = heap.pop() {
        if done[b] {
            continue;
        }
        done[b] = true;
        let blk = &blocks[b];
        if b == branch_block || matches!(blk.terminator, Terminator::Halt) {
            continue;
        }
        let nd = d + blk.len() as u32;
        if nd > max {
            continue;
        }
        let w = best[b].expect("popped blocks are reached").1 | blk.written();
        let mut succ = model.successors(b);
        succ.dedup();
        for s in succ {
            match &mut best[s] {
                Some((sd, sw)) if *sd == nd => *sw = sw.intersection(w),
                Some((sd, _)) if *sd < nd => {}
                slot => {
                    *slot = Some((nd, w));
                    heap.push(Reverse((nd, s)));
                }
            }
        }
    }
    // A one-instruction branch block starts at the branch itself.
    if blocks[branch_block].len() == 1 {
        best[branch_block] = None;
    }
    best
}

fn static_next(model: &ProgramModel, b: BlockId) -> Option<BlockId> {
    match model.blocks()[b].terminator {
        Terminator::CondBranch { site, .. } => {
            let dir = model.source(site).is_some_and(|s| s.static_direction());
            model.successor(b, dir)
        }
        Terminator::Halt => None,
        _ => model.successor(b, false),
    }
}

fn dir_truth(model: &ProgramModel, branch_block: BlockId, actual: bool, max: u32) -> DirTruth {
    let blocks = model.blocks();
    let branch_pc = blocks[branch_block]
        .instructions
        .last()
        .expect("branch blocks are non-empty")
        .pc;
    let (Some(alt), Some(mut cur)) = (
        model.successor(branch_block, !actual),
        model.successor(branch_block, actual),
    ) else {
        return DirTruth::NoMerge(NoMerge::ProgramEnd);
    };
    let reach = block_reach(model, alt, branch_block, max);
    let mut pos = 1u32;
    let mut acc = RegSet::EMPTY;
    loop {
        if pos > max {
            return DirTruth::NoMerge(NoMerge::Distance);
        }
        let blk = &blocks[cur];
        if let Some((wp, ww)) = reach[cur] {
            return DirTruth::Merge(OracleMerge {
                branch_pc,
                alt_dir: !actual,
                merge_pc: blk.first_pc().expect("non-empty"),
                true_distance: pos,
                wp_distance: wp,
                cp_written: acc,
                wp_written: ww,
            });
        }
        let last = pos + blk.len() as u32 - 1;
        if cur == branch_block {
            return DirTruth::NoMerge(if last <= max { NoMerge::LoopBack } else { NoMerge::Distance });
        }
        match static_next(model, cur) {
            None => {
                return DirTruth::NoMerge(if last <= max { NoMerge::ProgramEnd } else { NoMerge::Distance })
            }
            Some(n) => {
                acc |= blk.written();
                pos = last + 1;
                cur = n;
            }
        }
    }
}

/// Truth for every site in both directions. The correct path follows each
/// site's most likely direction.
pub fn compute_truth(g: &Generated, max_dist: u32) -> Truth {
    let model = &g.model;
    let sites = model
        .branch_sites()
        .into_iter()
        .map(|(site, pc, block)| SiteTruth {
            site,
            branch_pc: pc,
            region_join: g
                .joins
                .iter()
                .find(|(s, _)| *s == site)
                .and_then(|(_, b)| model.block(*b).and_then(|b| b.first_pc())),
            static_postdom: static_postdominator(model, pc),
            taken: dir_truth(model, block, true, max_dist),
            not_taken: dir_truth(model, block, false, max_dist),
        })
        .collect();
    Truth {
        format: TRUTH_FORMAT,
        shape: g.shape,
        max_distance: max_dist,
        sites,
    }
}

pub fn save_truth_string(t: &Truth) -> String {
    let mut s = serde_json::to_string_pretty(t).expect("truth serializes");
    s.push('\n');
    s
}

pub fn load_truth_str(text: &str) -> Result<Truth, ModelError> {
    let t: Truth = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if t.format != TRUTH_FORMAT {
        return Err(ModelError::Field {
            field: "format".into(),
            message: format!("unsupported truth format {}", t.format),
        });
    }
    Ok(t)
}
