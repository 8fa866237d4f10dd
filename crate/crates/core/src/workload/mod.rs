//! Synthetic workloads whose merge structure is known by construction.

mod truth;

pub use truth::{compute_truth, load_truth_str, save_truth_string, DirTruth, SiteTruth, Truth, TRUTH_FORMAT};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BlockId, InstrSpec, ModelBuilder, OutcomeSource, ProgramModel, SiteId, Terminator,
    DEFAULT_ARCH_REGS,
};
use crate::regs::RegSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Hammock,
    #[serde(alias = "nested")]
    NestedDiamond,
    #[serde(alias = "loop")]
    LoopWithExit,
    #[serde(alias = "random")]
    RandomReducible,
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hammock" => Ok(Shape::Hammock),
            "nested" | "nested_diamond" => Ok(Shape::NestedDiamond),
            "loop" | "loop_with_exit" => Ok(Shape::LoopWithExit),
            "random" | "random_reducible" => Ok(Shape::RandomReducible),
            other => Err(format!("unknown shape `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub shape: Shape,
    /// Inclusive instruction-count range per block, branch included.
    pub block_size: (usize, usize),
    /// Taken probability per site, in site order. Missing entries take the
    /// shape's default.
    pub branch_bias: Vec<f64>,
    pub seed: u64,
    /// Fraction of the register file each block writes.
    pub reg_pressure: f64,
    pub arch_reg_count: u8,
    /// Loop iterations per program run; overrides the back-edge bias.
    pub trip_count: Option<u32>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            shape: Shape::Hammock,
            block_size: (3, 3),
            branch_bias: Vec::new(),
            seed: 0,
            reg_pressure: 0.25,
            arch_reg_count: DEFAULT_ARCH_REGS,
            trip_count: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl GenParams {
    pub fn new(shape: Shape) -> Self {
        GenParams {
            shape,
            ..GenParams::default()
        }
    }

    fn check(&self, shape: Shape) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidParams(m));
        if self.shape != shape {
            return bad(format!("shape is {:?}, expected {shape:?}", self.shape));
        }
        let (lo, hi) = self.block_size;
        if lo < 1 || hi < lo {
            return bad(format!("block_size ({lo}, {hi}) needs 1 <= min <= max"));
        }
        if let Some(b) = self.branch_bias.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return bad(format!("bias {b} outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.reg_pressure) {
            return bad(format!("reg_pressure {} outside [0, 1]", self.reg_pressure));
        }
        if self.arch_reg_count == 0 || self.arch_reg_count as usize > crate::regs::MAX_ARCH_REGS {
            return bad(format!("arch_reg_count {} out of range", self.arch_reg_count));
        }
        if self.trip_count == Some(0) {
            return bad("trip_count must be positive".into());
        }
        Ok(())
    }

    fn bias(&self, site: usize, default: f64) -> f64 {
        self.branch_bias.get(site).copied().unwrap_or(default)
    }
}

fn source_for(bias: f64, seed: u64, site: SiteId) -> OutcomeSource {
    if bias >= 1.0 {
        OutcomeSource::AlwaysTaken
    } else if bias <= 0.0 {
        OutcomeSource::AlwaysNotTaken
    } else {
        OutcomeSource::Bernoulli {
            bias,
            seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ site as u64,
        }
    }
}

/// Emits block bodies. Each block writes a fixed subset of registers sized
/// by `reg_pressure`.
struct Bodies {
    rng: ChaCha8Rng,
    size: (usize, usize),
    regs: u8,
    pressure: f64,
}

impl Bodies {
    fn new(p: &GenParams) -> Self {
        Bodies {
            rng: ChaCha8Rng::seed_from_u64(p.seed),
            size: p.block_size,
            regs: p.arch_reg_count,
            pressure: p.reg_pressure,
        }
    }

    fn len(&mut self) -> usize {
        self.rng.gen_range(self.size.0..=self.size.1)
    }

    fn block(&mut self, branch: bool) -> Vec<InstrSpec> {
        let n = self.len();
        let plain = if branch { n - 1 } else { n };
        let mut dests: Vec<u8> = (0..self.regs).collect();
        dests.shuffle(&mut self.rng);
        let k = if self.pressure > 0.0 {
            ((self.pressure * self.regs as f64).round() as usize).clamp(1, self.regs as usize)
        } else {
            0
        };
        dests.truncate(k);
        let mut out = Vec::with_capacity(n);
        for i in 0..plain {
            let src = self.rng.gen_range(0..self.regs);
            out.push(match dests.get(i % k.max(1)) {
                Some(d) if k > 0 => InstrSpec::alu(&[*d], &[src]),
                _ => InstrSpec::alu(&[], &[src]),
            });
        }
        if branch {
            let src = match out.last() {
                Some(InstrSpec(_, d, _, _)) if !d.is_empty() => d.iter().next().unwrap_or(0),
                _ => self.rng.gen_range(0..self.regs),
            };
            out.push(InstrSpec::branch(&[src]));
        }
        out
    }
}

/// A generated model with the structural join of every site.
#[derive(Clone, Debug)]
pub struct Generated {
    pub model: ProgramModel,
    pub shape: Shape,
    /// Block entered after each site's construct, by site id.
    pub joins: Vec<(SiteId, BlockId)>,
}

impl Generated {
    pub fn truth(&self, max_dist: u32) -> Truth {
        compute_truth(self, max_dist)
    }
}

const UNSET: BlockId = usize::MAX;

fn cond(taken: BlockId, not_taken: BlockId, site: SiteId) -> Terminator {
    Terminator::CondBranch {
        taken,
        not_taken,
        site,
    }
}

/// `A -> {B, C} -> D`; taken goes to B.
pub fn gen_hammock(p: &GenParams) -> Result<Generated, GenError> {
    p.check(Shape::Hammock)?;
    let mut bodies = Bodies::new(p);
    let mut mb = ModelBuilder::new(p.arch_reg_count);
    let a = mb.block(bodies.block(true), Terminator::Halt);
    let b = mb.block(bodies.block(false), Terminator::Halt);
    let c = mb.block(bodies.block(false), Terminator::Fallthrough);
    let d = mb.block(bodies.block(false), Terminator::Halt);
    mb.set_term(a, cond(b, c, 0));
    mb.set_term(b, Terminator::Jump { target: d });
    mb.source(0, source_for(p.bias(0, 0.5), p.seed, 0));
    Ok(Generated {
        model: mb.build(),
        shape: Shape::Hammock,
        joins: vec![(0, d)],
    })
}

/// `A -> {B, C}`, `B -> {D, E}`, `C -> {D, E}`, `D -> F`, `E -> F`. The inner
/// branches take the E edge with the bias of sites 1 and 2 (default 0).
pub fn gen_nested(p: &GenParams) -> Result<Generated, GenError> {
    p.check(Shape::NestedDiamond)?;
    let mut bodies = Bodies::new(p);
    let mut mb = ModelBuilder::new(p.arch_reg_count);
    let a = mb.block(bodies.block(true), Terminator::Halt);
    let b = mb.block(bodies.block(true), Terminator::Halt);
    let c = mb.block(bodies.block(true), Terminator::Halt);
    let d = mb.block(bodies.block(false), Terminator::Halt);
    let e = mb.block(bodies.block(false), Terminator::Fallthrough);
    let f = mb.block(bodies.block(false), Terminator::Halt);
    mb.set_term(a, cond(b, c, 0));
    mb.set_term(b, cond(e, d, 1));
    mb.set_term(c, cond(e, d, 2));
    mb.set_term(d, Terminator::Jump { target: f });
    let eps = p.bias(1, 0.0);
    mb.source(0, source_for(p.bias(0, 0.5), p.seed, 0));
    mb.source(1, source_for(eps, p.seed, 1));
    mb.source(2, source_for(p.bias(2, eps), p.seed, 2));
    Ok(Generated {
        model: mb.build(),
        shape: Shape::NestedDiamond,
        joins: vec![(0, f), (1, f), (2, f)],
    })
}

/// Prologue P, body H ending in the back-edge branch (taken re-enters H),
/// epilogue X.
pub fn gen_loop(p: &GenParams) -> Result<Generated, GenError> {
    p.check(Shape::LoopWithExit)?;
    let mut bodies = Bodies::new(p);
    let mut mb = ModelBuilder::new(p.arch_reg_count);
    let pro = mb.block(bodies.block(false), Terminator::Fallthrough);
    let h = mb.block(bodies.block(true), Terminator::Halt);
    let x = mb.block(bodies.block(false), Terminator::Halt);
    mb.set_term(h, cond(h, x, 0));
    let _ = pro;
    let src = match p.trip_count {
        Some(n) => {
            let mut bits = vec![true; n as usize - 1];
            bits.push(false);
            OutcomeSource::Pattern(bits)
        }
        None => source_for(p.bias(0, 0.9), p.seed, 0),
    };
    mb.source(0, src);
    Ok(Generated {
        model: mb.build(),
        shape: Shape::LoopWithExit,
        joins: vec![(0, x)],
    })
}

#[derive(Default)]
struct Region {
    entry: BlockId,
    /// Edges waiting for the block that follows this region.
    pending: Vec<(BlockId, Edge)>,
    /// Sites whose join is that following block.
    joins: Vec<SiteId>,
}

#[derive(Clone, Copy)]
enum Edge {
    Jump,
    NotTaken,
}

struct RandomGen<'a> {
    p: &'a GenParams,
    bodies: Bodies,
    mb: ModelBuilder,
    terms: Vec<Terminator>,
    next_site: SiteId,
    joins: Vec<(SiteId, BlockId)>,
}

impl RandomGen<'_> {
    fn new_block(&mut self, branch: bool) -> BlockId {
        let body = self.bodies.block(branch);
        let id = self.mb.block(body, Terminator::Halt);
        self.terms.push(Terminator::Halt);
        id
    }

    fn new_site(&mut self, latch: bool) -> SiteId {
        let s = self.next_site;
        self.next_site += 1;
        let default = if latch {
            self.bodies.rng.gen_range(0.6..0.95)
        } else {
            *[0.5, 0.7, 0.3, 0.9, 0.1, 0.99]
                .choose(&mut self.bodies.rng)
                .expect("non-empty")
        };
        let bias = self.p.bias(s as usize, default);
        self.mb.source(s, source_for(bias, self.p.seed, s));
        s
    }

    fn patch(&mut self, r: &Region, target: BlockId) {
        for (b, edge) in &r.pending {
            let t = &mut self.terms[*b];
            match (edge, t) {
                (Edge::Jump, t) => *t = Terminator::Jump { target },
                (Edge::NotTaken, Terminator::CondBranch { not_taken, .. }) => *not_taken = target,
                _ => unreachable!("edge kind matches terminator"),
            }
        }
        for s in &r.joins {
            self.joins.push((*s, target));
        }
    }

    fn basic(&mut self) -> Region {
        let b = self.new_block(false);
        Region {
            entry: b,
            pending: vec![(b, Edge::Jump)],
            joins: Vec::new(),
        }
    }

    /// A region of roughly `budget` blocks.
    fn region(&mut self, budget: usize) -> Region {
        if budget <= 1 {
            return self.basic();
        }
        let pick = self.bodies.rng.gen_range(0..5);
        match pick {
            0 if budget >= 3 => {
                // if-then-else
                let a = self.new_block(true);
                let site = self.new_site(false);
                let rest = budget - 1;
                let left = self.bodies.rng.gen_range(1..rest.max(2));
                let r1 = self.region(left);
                let r2 = self.region((rest - left).max(1));
                self.terms[a] = cond(r1.entry, r2.entry, site);
                let mut pending = r1.pending;
                pending.extend(r2.pending);
                let mut joins = r1.joins;
                joins.extend(r2.joins);
                joins.push(site);
                Region {
                    entry: a,
                    pending,
                    joins,
                }
            }
            1 => {
                // if-then
                let a = self.new_block(true);
                let site = self.new_site(false);
                let r1 = self.region(budget - 1);
                self.terms[a] = cond(r1.entry, UNSET, site);
                let mut pending = r1.pending;
                pending.push((a, Edge::NotTaken));
                let mut joins = r1.joins;
                joins.push(site);
                Region {
                    entry: a,
                    pending,
                    joins,
                }
            }
            2 => {
                // loop: body region closed by a latch
                let body = self.region(budget - 1);
                let latch = self.new_block(true);
                let site = self.new_site(true);
                self.patch(&body, latch);
                self.terms[latch] = cond(body.entry, UNSET, site);
                Region {
                    entry: body.entry,
                    pending: vec![(latch, Edge::NotTaken)],
                    joins: vec![site],
                }
            }
            _ => {
                // sequence
                let first = self.bodies.rng.gen_range(1..budget);
                let r1 = self.region(first);
                let r2 = self.region(budget - first);
                self.patch(&r1, r2.entry);
                r2_with_entry(r2, r1.entry)
            }
        }
    }
}

fn r2_with_entry(r: Region, entry: BlockId) -> Region {
    Region { entry, ..r }
}

/// Seeded structured CFG of 5 to 50 blocks ending in a single `Halt`.
pub fn gen_random_reducible(p: &GenParams) -> Result<Generated, GenError> {
    p.check(Shape::RandomReducible)?;
    let mut g = RandomGen {
        p,
        bodies: Bodies::new(p),
        mb: ModelBuilder::new(p.arch_reg_count),
        terms: Vec::new(),
        next_site: 0,
        joins: Vec::new(),
    };
    let target = g.bodies.rng.gen_range(5..=50usize);
    let mut top = g.region(target - 1);
    while g.terms.len() + 1 < 5 {
        let more = g.region(1);
        g.patch(&top, more.entry);
        top = r2_with_entry(more, top.entry);
    }
    if g.terms.len() + 1 > 50 {
        // Regions can overshoot by a block or two; regenerate smaller.
        let mut q = p.clone();
        q.seed = p.seed.wrapping_add(0x5851_f42d_4c95_7f2d);
        return gen_random_reducible(&q).map(|mut g2| {
            g2.shape = Shape::RandomReducible;
            g2
        });
    }
    let halt = g.new_block(false);
    g.patch(&top, halt);
    let entry = top.entry;
    let mut mb = g.mb;
    for (id, t) in g.terms.iter().enumerate() {
        mb.set_term(id, *t);
    }
    let mut joins = g.joins;
    joins.sort_unstable();
    Ok(Generated {
        model: mb.entry(entry).build(),
        shape: Shape::RandomReducible,
        joins,
    })
}

pub fn generate(p: &GenParams) -> Result<Generated, GenError> {
    match p.shape {
        Shape::Hammock => gen_hammock(p),
        Shape::NestedDiamond => gen_nested(p),
        Shape::LoopWithExit => gen_loop(p),
        Shape::RandomReducible => gen_random_reducible(p),
    }
}

/// Registers written on one arm, for tests that enumerate arms directly.
pub fn written_by(model: &ProgramModel, blocks: &[BlockId]) -> RegSet {
    blocks
        .iter()
        .filter_map(|b| model.block(*b))
        .fold(RegSet::EMPTY, |acc, b| acc | b.written())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{step_wrong_path, validate_model, ArchWalker, FollowPolicy, Pc, Step};

    #[test]
    fn hammock_shape_and_distance() {
        let g = gen_hammock(&GenParams::new(Shape::Hammock)).unwrap();
        let m = &g.model;
        assert!(validate_model(m).is_ok());
        assert_eq!(m.blocks().len(), 4);
        let d0 = m.blocks()[3].first_pc().unwrap();
        for dir in [true, false] {
            let path = step_wrong_path(m, Pc(2), dir, FollowPolicy::StaticBias, 100).unwrap();
            assert_eq!(path[3].pc, d0, "merge is 4th instruction after the branch");
        }
    }

    #[test]
    fn hammock_bias_one_never_visits_c() {
        let mut p = GenParams::new(Shape::Hammock);
        p.branch_bias = vec![1.0];
        let g = gen_hammock(&p).unwrap();
        let c = &g.model.blocks()[2];
        let mut w = ArchWalker::new(&g.model, 3);
        for _ in 0..1000 {
            let i = w.step_looping(&g.model).unwrap();
            assert!(!c.instructions.iter().any(|t| t.pc == i.pc));
        }
    }

    #[test]
    fn hammock_independent_set_excludes_both_arms() {
        let mut p = GenParams::new(Shape::Hammock);
        p.seed = 9;
        let g = gen_hammock(&p).unwrap();
        let arms = written_by(&g.model, &[1, 2]);
        let t = g.truth(100);
        let DirTruth::Merge(m) = &t.sites[0].taken else {
            panic!("hammock merges");
        };
        assert_eq!(m.cp_written | m.wp_written, arms);
        assert_eq!((m.cp_written | m.wp_written).complement(16), arms.complement(16));
    }

    #[test]
    fn loop_trip_count_pattern() {
        let mut p = GenParams::new(Shape::LoopWithExit);
        p.trip_count = Some(10);
        let g = gen_loop(&p).unwrap();
        let branch = g.model.branch_sites()[0].1;
        let mut w = ArchWalker::new(&g.model, 0);
        let mut count = 0;
        while let Step::Instr(i) = w.step(&g.model).unwrap() {
            count += (i.pc == branch) as usize;
        }
        assert_eq!(count, 10);
    }

    #[test]
    fn loop_exit_wrong_path_recurs_within_one_iteration() {
        let mut p = GenParams::new(Shape::LoopWithExit);
        p.block_size = (5, 5);
        let g = gen_loop(&p).unwrap();
        let branch = g.model.branch_sites()[0].1;
        // Actual exit, wrong path re-enters the body.
        let wp = step_wrong_path(&g.model, branch, true, FollowPolicy::StaticBias, 100).unwrap();
        let at = wp.iter().position(|i| i.pc == branch).unwrap();
        assert!(at < 5);
    }

    #[test]
    fn random_is_deterministic_and_valid() {
        for seed in 0..200 {
            let mut p = GenParams::new(Shape::RandomReducible);
            p.seed = seed;
            let a = gen_random_reducible(&p).unwrap();
            let b = gen_random_reducible(&p).unwrap();
            assert_eq!(a.model, b.model);
            let r = validate_model(&a.model);
            assert!(r.is_ok(), "seed {seed}: {r}");
            let n = a.model.blocks().len();
            assert!((5..=50).contains(&n), "seed {seed}: {n} blocks");
            let halts = a
                .model
                .blocks()
                .iter()
                .filter(|b| matches!(b.terminator, Terminator::Halt))
                .count();
            assert_eq!(halts, 1);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = GenParams::new(Shape::Hammock);
        p.block_size = (0, 3);
        assert!(gen_hammock(&p).is_err());
        p.block_size = (3, 3);
        p.branch_bias = vec![1.5];
        assert!(gen_hammock(&p).is_err());
        assert!(gen_nested(&GenParams::new(Shape::Hammock)).is_err());
    }
}
