use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    BlockId, BranchInfo, DynInstr, ModelError, OutcomeSource, Pc, ProgramModel, SiteId, Terminator,
};

/// Position of the next instruction to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cursor {
    pub block: BlockId,
    pub idx: usize,
}

impl Cursor {
    pub fn at_block(block: BlockId) -> Self {
        Cursor { block, idx: 0 }
    }
}

#[derive(Clone, Debug)]
enum SiteState {
    Bernoulli { bias: f64, rng: Box<ChaCha8Rng> },
    Pattern { bits: Vec<bool>, pos: usize },
    Const(bool),
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-site outcome generators. Each Bernoulli site draws from its own
/// stream seeded by `mix(master) ^ source seed ^ mix(site)`, so adding a site
/// leaves the others untouched.
#[derive(Clone, Debug)]
pub struct OutcomeState {
    sites: BTreeMap<SiteId, SiteState>,
}

impl OutcomeState {
    pub fn new(model: &ProgramModel, master_seed: u64) -> Self {
        let sites = model
            .sources()
            .iter()
            .map(|(site, source)| {
                let state = match source {
                    OutcomeSource::Bernoulli { bias, seed } => SiteState::Bernoulli {
                        bias: *bias,
                        rng: Box::new(ChaCha8Rng::seed_from_u64(
                            splitmix64(master_seed) ^ seed ^ splitmix64(*site as u64),
                        )),
                    },
                    OutcomeSource::Pattern(bits) => SiteState::Pattern {
                        bits: bits.clone(),
                        pos: 0,
                    },
                    OutcomeSource::AlwaysTaken => SiteState::Const(true),
                    OutcomeSource::AlwaysNotTaken => SiteState::Const(false),
                };
                (*site, state)
            })
            .collect();
        OutcomeState { sites }
    }

    /// Consumes the next outcome of `site`. Unknown sites resolve not-taken.
    pub fn next(&mut self, site: SiteId) -> bool {
        match self.sites.get_mut(&site) {
            Some(SiteState::Bernoulli { bias, rng }) => rng.gen::<f64>() < *bias,
            Some(SiteState::Pattern { bits, pos }) => {
                let out = bits[*pos % bits.len()];
                *pos = (*pos + 1) % bits.len();
                out
            }
            Some(SiteState::Const(dir)) => *dir,
            None => false,
        }
    }
}

/// Emits the instruction at `cur` and computes where the path continues.
fn emit(
    model: &ProgramModel,
    cur: Cursor,
    seq_no: u64,
    decide: &mut dyn FnMut(Pc, SiteId) -> bool,
) -> Result<(DynInstr, Option<Cursor>), ModelError> {
    let block = model.block(cur.block).ok_or_else(|| ModelError::Malformed {
        block: cur.block,
        reason: "walked into a block that does not exist".into(),
    })?;
    let ins = block
        .instructions
        .get(cur.idx)
        .ok_or_else(|| ModelError::Malformed {
            block: cur.block,
            reason: format!("no instruction at offset {}", cur.idx),
        })?;
    let mut out = DynInstr {
        pc: ins.pc,
        class: ins.class,
        dests: ins.dests,
        srcs: ins.srcs,
        latency: ins.latency,
        seq_no,
        branch: None,
        ends_program: false,
    };
    if cur.idx + 1 < block.len() {
        return Ok((out, Some(Cursor { block: cur.block, idx: cur.idx + 1 })));
    }
    let next = match block.terminator {
        Terminator::Halt => {
            out.ends_program = true;
            None
        }
        Terminator::Fallthrough => Some(cur.block + 1),
        Terminator::Jump { target } => Some(target),
        Terminator::CondBranch {
            taken,
            not_taken,
            site,
        } => {
            let dir = decide(ins.pc, site);
            let target_pc = model
                .block(taken)
                .and_then(|b| b.first_pc())
                .ok_or_else(|| ModelError::Malformed {
                    block: cur.block,
                    reason: format!("taken successor {taken} is missing or empty"),
                })?;
            out.branch = Some(BranchInfo {
                taken: dir,
                target_pc,
                site,
            });
            Some(if dir { taken } else { not_taken })
        }
    };
    match next {
        None => Ok((out, None)),
        Some(b) => match model.block(b) {
            Some(nb) if !nb.is_empty() => Ok((out, Some(Cursor::at_block(b)))),
            _ => Err(ModelError::Malformed {
                block: cur.block,
                reason: format!("successor {b} is missing or empty"),
            }),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Step {
    Instr(DynInstr),
    End,
}

/// Architectural (correct-path) walker. Consumes one outcome per executed
/// conditional branch.
#[derive(Clone, Debug)]
pub struct ArchWalker {
    cursor: Option<Cursor>,
    outcomes: OutcomeState,
    seq: u64,
}

impl ArchWalker {
    pub fn new(model: &ProgramModel, master_seed: u64) -> Self {
        ArchWalker {
            cursor: Some(Cursor::at_block(model.entry())),
            outcomes: OutcomeState::new(model, master_seed),
            seq: 0,
        }
    }

    pub fn step(&mut self, model: &ProgramModel) -> Result<Step, ModelError> {
        let Some(cur) = self.cursor else {
            return Ok(Step::End);
        };
        let outcomes = &mut self.outcomes;
        let (ins, next) = emit(model, cur, self.seq, &mut |_, site| outcomes.next(site))?;
        self.seq += 1;
        self.cursor = next;
        Ok(Step::Instr(ins))
    }

    /// Re-enters the program at its entry block. Outcome streams and the
    /// sequence counter carry on.
    pub fn restart(&mut self, model: &ProgramModel) {
        self.cursor = Some(Cursor::at_block(model.entry()));
    }

    pub fn is_done(&self) -> bool {
        self.cursor.is_none()
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Steps, restarting at the entry after the program ends.
    pub fn step_looping(&mut self, model: &ProgramModel) -> Result<DynInstr, ModelError> {
        loop {
            match self.step(model)? {
                Step::Instr(i) => return Ok(i),
                Step::End => self.restart(model),
            }
        }
    }
}

pub fn step_architectural(
    model: &ProgramModel,
    walker: &mut ArchWalker,
) -> Result<Step, ModelError> {
    walker.step(model)
}

/// Direction source for branches met along a non-architectural walk.
pub enum FollowPolicy<'a> {
    /// Caller chooses every direction (the pipeline supplies predictions).
    Directed(&'a mut dyn FnMut(Pc, SiteId) -> bool),
    /// Most likely direction of each site's outcome source.
    StaticBias,
}

/// Walker over an arbitrary path that consumes no architectural outcomes.
/// The walk stops at program end.
#[derive(Clone, Debug)]
pub struct PathWalker {
    cursor: Option<Cursor>,
    seq: u64,
}

impl PathWalker {
    pub fn at_block(block: BlockId) -> Self {
        PathWalker {
            cursor: Some(Cursor::at_block(block)),
            seq: 0,
        }
    }

    /// Starts at the `dir` successor of the conditional branch at `branch_pc`.
    pub fn from_branch(model: &ProgramModel, branch_pc: Pc, dir: bool) -> Result<Self, ModelError> {
        let (block, _) = model
            .branch_block(branch_pc)
            .ok_or(ModelError::NotABranch(branch_pc))?;
        let succ = model
            .successor(block, dir)
            .ok_or(ModelError::NotABranch(branch_pc))?;
        match model.block(succ) {
            Some(b) if !b.is_empty() => Ok(PathWalker::at_block(succ)),
            _ => Err(ModelError::Malformed {
                block,
                reason: format!("successor {succ} is missing or empty"),
            }),
        }
    }

    pub fn is_done(&self) -> bool {
        self.cursor.is_none()
    }

    pub fn next(
        &mut self,
        model: &ProgramModel,
        policy: &mut FollowPolicy<'_>,
    ) -> Result<Option<DynInstr>, ModelError> {
        let Some(cur) = self.cursor else {
            return Ok(None);
        };
        let (ins, next) = match policy {
            FollowPolicy::Directed(f) => emit(model, cur, self.seq, *f)?,
            FollowPolicy::StaticBias => emit(model, cur, self.seq, &mut |_, site| {
                model.source(site).is_some_and(OutcomeSource::static_direction)
            })?,
        };
        self.seq += 1;
        self.cursor = next;
        Ok(Some(ins))
    }
}

/// Walks at most `max_len` instructions from the `forced_dir` successor of
/// `branch_pc`, resolving later branches through `policy`.
pub fn step_wrong_path(
    model: &ProgramModel,
    branch_pc: Pc,
    forced_dir: bool,
    mut policy: FollowPolicy<'_>,
    max_len: usize,
) -> Result<Vec<DynInstr>, ModelError> {
    let mut walker = PathWalker::from_branch(model, branch_pc, forced_dir)?;
    let mut out = Vec::new();
    while out.len() < max_len {
        match walker.next(model, &mut policy)? {
            Some(i) => out.push(i),
            None => break,
        }
    }
    Ok(out)
}
