//! Cycle-stepped pipeline model: fetch along TAGE's direction into a ROB,
//! dataflow completion times, flush with a ROB walk into the wrong path
//! buffer, and in-order retirement feeding the merge predictor.

mod events;

pub use events::{events_to_string, read_events, write_events, Event};

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpred::{GlobalHistory, JrsConfidence, JrsConfig, JrsTable, TageConfig, TageLite, TagePrediction};
use crate::confcost::{classify_confidence, CcDecision, ConfCostConfig, LatencyTable};
use crate::merge::{MergeConfig, MergePredictor, MergeStats, UpdatePolicy};
use crate::model::{
    validate_model, ArchWalker, DynInstr, FollowPolicy, LatencyClass, ModelError, PathWalker,
    ProgramModel, ValidationReport,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    BpOnly,
    #[default]
    Mpp,
    MppMax,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::BpOnly, Policy::Mpp, Policy::MppMax];

    pub fn name(self) -> &'static str {
        match self {
            Policy::BpOnly => "bp_only",
            Policy::Mpp => "mpp",
            Policy::MppMax => "mpp_max",
        }
    }

    pub fn update_policy(self) -> UpdatePolicy {
        match self {
            Policy::MppMax => UpdatePolicy::UpdateMax,
            _ => UpdatePolicy::Plain,
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected bp_only, mpp or mpp_max)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fetch_width: usize,
    pub rob_size: usize,
    pub flush_refill_penalty: u32,
    pub load_miss_latency: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fetch_width: 4,
            rob_size: 512,
            flush_refill_penalty: 15,
            load_miss_latency: 200,
        }
    }
}

/// Everything one run needs besides the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub tage: TageConfig,
    pub jrs: JrsConfig,
    pub conf_cost: ConfCostConfig,
    /// `merge.policy` is derived from `policy`.
    pub merge: MergeConfig,
    pub policy: Policy,
    /// Retired-instruction budget.
    pub budget: u64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            tage: TageConfig::default(),
            jrs: JrsConfig::default(),
            conf_cost: ConfCostConfig::default(),
            merge: MergeConfig::default(),
            policy: Policy::default(),
            budget: 100_000,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        let p = &self.pipeline;
        if p.fetch_width == 0 || p.rob_size == 0 || p.flush_refill_penalty == 0 || p.load_miss_latency == 0 {
            return bad("pipeline parameters must be positive");
        }
        let m = &self.merge;
        if m.table_ways == 0 || !m.table_entries.is_multiple_of(m.table_ways) || !(m.table_entries / m.table_ways).is_power_of_two() {
            return bad("merge table entries must split into a power-of-two number of sets");
        }
        if m.wpb_ways == 0 || !m.wpb_entries.is_multiple_of(m.wpb_ways) || !(m.wpb_entries / m.wpb_ways).is_power_of_two() {
            return bad("wrong path buffer entries must split into a power-of-two number of sets");
        }
        if m.max_distance == 0 || m.wpb_contexts == 0 || m.update_list_capacity == 0 {
            return bad("merge distance, contexts and update list capacity must be positive");
        }
        if m.initial_ctr > crate::merge::CTR_MAX {
            return bad("initial counter exceeds the counter maximum");
        }
        let t = &self.tage;
        if t.history_lengths.is_empty() || t.history_lengths.len() > crate::bpred::MAX_TAGGED_TABLES {
            return bad("tage needs between one and the maximum number of tagged tables");
        }
        if t.history_lengths.iter().any(|h| *h == 0 || *h > 64) || !(1..=24).contains(&t.table_bits) {
            return bad("tage history lengths must lie in 1..=64 and table bits in 1..=24");
        }
        if !(1..=24).contains(&t.base_bits) || !(1..=16).contains(&t.tag_bits) {
            return bad("tage base bits must lie in 1..=24 and tag bits in 1..=16");
        }
        if !(1..=24).contains(&self.jrs.index_bits) || self.jrs.history_bits > 64 {
            return bad("jrs index bits must lie in 1..=24 and history bits in 0..=64");
        }
        let c = &self.conf_cost;
        if !(1..=24).contains(&c.latency_table_bits) || c.new_weight_tenths > 10 {
            return bad("latency table bits must lie in 1..=24 and the weight in 0..=10 tenths");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("model failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub seed: u64,
    pub budget: u64,
    pub retired: u64,
    pub cycles: u64,
    pub fetched: u64,
    pub wrong_path_fetched: u64,
    /// Retired conditional branches.
    pub branches: u64,
    pub mispredicts: u64,
    pub flushes: u64,
    /// Mean ROB-walk length per flush.
    pub mean_wrong_path_len: f64,
    pub mp_gated: u64,
    pub mp_predicted: u64,
    pub mp_misses: u64,
    pub mp_dropped: u64,
    pub merge: MergeStats,
}

struct BranchRecord {
    tage: TagePrediction,
    hist: GlobalHistory,
    actual: bool,
    /// Register ready times right after the branch; restored on flush.
    checkpoint: Option<Vec<u64>>,
}

struct RobEntry {
    id: u64,
    instr: DynInstr,
    fetch_cycle: u64,
    complete_cycle: u64,
    wrong_path: bool,
    branch: Option<Box<BranchRecord>>,
}

enum FetchMode {
    Correct,
    Wrong(PathWalker),
    /// The wrong path ran off the end of the program.
    Stalled,
}

/// Cycles without a retirement before the run is declared stuck.
const STALL_LIMIT: u64 = 1 << 20;

struct Sim<'m> {
    model: &'m ProgramModel,
    cfg: RunConfig,
    tage: TageLite,
    jrs: JrsTable,
    lat: LatencyTable,
    mp: Option<MergePredictor>,
    arch: ArchWalker,
    mode: FetchMode,
    spec_hist: GlobalHistory,
    rob: VecDeque<RobEntry>,
    resolve: BinaryHeap<Reverse<(u64, u64)>>,
    reg_ready: Vec<u64>,
    coin: ChaCha8Rng,
    next_id: u64,
    cycle: u64,
    fetch_resume: u64,
    wp_len_sum: u64,
    events: Vec<Event>,
    report: SimReport,
}

/// Runs `model` until `cfg.budget` instructions retire.
pub fn simulate(model: &ProgramModel, cfg: &RunConfig) -> Result<(SimReport, Vec<Event>), SimError> {
    let report = validate_model(model);
    if !report.is_ok() {
        return Err(SimError::Invalid(report));
    }
    cfg.check()?;
    let mut cfg = cfg.clone();
    cfg.merge.policy = cfg.policy.update_policy();
    let mut sim = Sim::new(model, cfg);
    sim.run()?;
    Ok((sim.report, sim.events))
}

impl<'m> Sim<'m> {
    fn new(model: &'m ProgramModel, cfg: RunConfig) -> Self {
        let mp = (cfg.policy != Policy::BpOnly)
            .then(|| MergePredictor::new(cfg.merge.clone(), model.arch_reg_count()));
        Sim {
            model,
            tage: TageLite::new(cfg.tage.clone()),
            jrs: JrsTable::new(cfg.jrs.clone()),
            lat: LatencyTable::new(cfg.conf_cost.clone()),
            mp,
            arch: ArchWalker::new(model, cfg.seed),
            mode: FetchMode::Correct,
            spec_hist: GlobalHistory::default(),
            rob: VecDeque::with_capacity(cfg.pipeline.rob_size),
            resolve: BinaryHeap::new(),
            reg_ready: vec![0; model.arch_reg_count() as usize],
            coin: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6c6f_6164_636f_696e),
            next_id: 0,
            cycle: 0,
            fetch_resume: 0,
            wp_len_sum: 0,
            events: Vec::new(),
            report: SimReport {
                policy: cfg.policy,
                seed: cfg.seed,
                budget: cfg.budget,
                ..SimReport::default()
            },
            cfg,
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        let mut last_retired = (0, 0);
        while self.report.retired < self.cfg.budget {
            self.resolve_stage();
            self.retire_stage();
            if self.report.retired >= self.cfg.budget {
                break;
            }
            self.fetch_stage()?;
            self.cycle += 1;
            if self.report.retired != last_retired.0 {
                last_retired = (self.report.retired, self.cycle);
            } else if self.cycle - last_retired.1 > STALL_LIMIT {
                return Err(SimError::Config("pipeline made no progress".into()));
            }
        }
        self.report.cycles = self.cycle;
        if let Some(mp) = &self.mp {
            self.report.merge = mp.stats.clone();
        }
        if self.report.flushes > 0 {
            self.report.mean_wrong_path_len = self.wp_len_sum as f64 / self.report.flushes as f64;
        }
        Ok(())
    }

    fn latency(&mut self, class: LatencyClass) -> u64 {
        match class {
            LatencyClass::Fixed(c) => c as u64,
            LatencyClass::LoadMissProb(p, hit, miss) => {
                if self.coin.gen_bool(p.clamp(0.0, 1.0)) {
                    if miss == 0 {
                        self.cfg.pipeline.load_miss_latency as u64
                    } else {
                        miss as u64
                    }
                } else {
                    hit as u64
                }
            }
        }
    }

    fn fetch_stage(&mut self) -> Result<(), SimError> {
        if self.cycle < self.fetch_resume {
            return Ok(());
        }
        for _ in 0..self.cfg.pipeline.fetch_width {
            if self.rob.len() >= self.cfg.pipeline.rob_size {
                break;
            }
            let (instr, wrong) = match &mut self.mode {
                FetchMode::Correct => (self.arch.step_looping(self.model)?, false),
                FetchMode::Stalled => break,
                FetchMode::Wrong(walker) => {
                    let (tage, hist) = (&self.tage, self.spec_hist);
                    let mut dir = |pc, _| tage.predict(pc, hist).dir;
                    match walker.next(self.model, &mut FollowPolicy::Directed(&mut dir))? {
                        Some(i) => (i, true),
                        None => {
                            self.mode = FetchMode::Stalled;
                            break;
                        }
                    }
                }
            };
            self.fetch_one(instr, wrong);
        }
        Ok(())
    }

    fn fetch_one(&mut self, instr: DynInstr, wrong: bool) {
        let id = self.next_id;
        self.next_id += 1;
        self.report.fetched += 1;
        self.report.wrong_path_fetched += wrong as u64;
        let ready = instr
            .srcs
            .iter()
            .filter_map(|r| self.reg_ready.get(r as usize))
            .fold(self.cycle + 1, |a, b| a.max(*b));
        let complete = ready + self.latency(instr.latency);
        for r in instr.dests.iter() {
            if let Some(slot) = self.reg_ready.get_mut(r as usize) {
                *slot = complete;
            }
        }
        let branch = instr.branch.map(|info| {
            let pc = instr.pc;
            let hist = self.spec_hist;
            let tage = self.tage.predict(pc, hist);
            let jrs_high = self.jrs.confidence(pc, hist) == JrsConfidence::HighConf;
            let cc = CcDecision::new(classify_confidence(tage.is_weak, jrs_high), self.lat.classify_latency(pc));
            if !wrong {
                self.events.push(Event::BranchPredicted {
                    cycle: self.cycle,
                    id,
                    pc,
                    predicted: tage.dir,
                    conf: cc.conf,
                    lat: cc.lat,
                    use_mp: cc.use_mp,
                });
                self.resolve.push(Reverse((complete, id)));
            }
            if cc.use_mp {
                self.report.mp_gated += !wrong as u64;
                if let Some(mp) = &mut self.mp {
                    let p = mp.predict(pc, id);
                    let cycle = self.cycle;
                    match p {
                        _ if wrong => {}
                        Some(p) => {
                            self.report.mp_predicted += 1;
                            self.events.push(Event::MpPredicted {
                                cycle,
                                id,
                                pc,
                                merge_pc: p.merge_pc,
                                distance: p.distance,
                                indep: p.indep,
                                matched: p.matched,
                            });
                            if !p.tracked {
                                self.report.mp_dropped += 1;
                                self.events.push(Event::MpDropped { cycle, id, pc });
                            }
                        }
                        None => {
                            self.report.mp_misses += 1;
                            self.events.push(Event::MpMiss { cycle, id, pc });
                        }
                    }
                }
            }
            self.spec_hist.push(tage.dir);
            let diverges = !wrong && tage.dir != info.taken;
            if diverges {
                self.mode = FetchMode::Wrong(
                    PathWalker::from_branch(self.model, pc, tage.dir).expect("validated model"),
                );
            }
            Box::new(BranchRecord {
                tage,
                hist,
                actual: info.taken,
                checkpoint: diverges.then(|| self.reg_ready.clone()),
            })
        });
        self.rob.push_back(RobEntry {
            id,
            instr,
            fetch_cycle: self.cycle,
            complete_cycle: complete,
            wrong_path: wrong,
            branch,
        });
    }

    fn rob_index(&self, id: u64) -> usize {
        self.rob
            .binary_search_by_key(&id, |e| e.id)
            .expect("unresolved correct-path branches stay in the ROB")
    }

    fn resolve_stage(&mut self) {
        while let Some(&Reverse((complete, id))) = self.resolve.peek() {
            if complete > self.cycle {
                break;
            }
            self.resolve.pop();
            let idx = self.rob_index(id);
            let e = &self.rob[idx];
            let rec = e.branch.as_ref().expect("branch entry");
            let latency = complete - e.fetch_cycle;
            let mispredicted = rec.tage.dir != rec.actual;
            let pc = e.instr.pc;
            self.lat.record_latency(pc, latency);
            self.events.push(Event::BranchResolved {
                cycle: self.cycle,
                id,
                pc,
                actual: rec.actual,
                mispredicted,
                latency,
            });
            if mispredicted {
                self.flush(idx);
            }
        }
    }

    /// Squashes everything younger than the mispredicted branch at `idx`.
    pub(crate) fn flush(&mut self, idx: usize) {
        let e = &self.rob[idx];
        let (id, pc) = (e.id, e.instr.pc);
        let rec = e.branch.as_ref().expect("branch entry");
        self.spec_hist = rec.hist.pushed(rec.actual);
        self.reg_ready
            .clone_from(rec.checkpoint.as_ref().expect("mispredicted branches checkpoint"));
        let tail = rob_walk(&self.rob, idx);
        if let Some(mp) = &mut self.mp {
            mp.on_mispredict(pc, id, &tail);
            mp.on_squash(id);
        }
        let squashed = tail.len();
        self.rob.truncate(idx + 1);
        self.wp_len_sum += squashed as u64;
        self.report.flushes += 1;
        self.mode = FetchMode::Correct;
        self.fetch_resume = self.cycle + self.cfg.pipeline.flush_refill_penalty as u64;
        self.events.push(Event::Flush {
            cycle: self.cycle,
            id,
            pc,
            squashed,
        });
    }

    fn retire_stage(&mut self) {
        for _ in 0..self.cfg.pipeline.fetch_width {
            if self.report.retired >= self.cfg.budget {
                return;
            }
            match self.rob.front() {
                Some(e) if e.complete_cycle <= self.cycle => {}
                _ => return,
            }
            let e = self.rob.pop_front().expect("checked");
            assert!(!e.wrong_path, "wrong-path instruction reached retirement");
            if let Some(rec) = &e.branch {
                self.report.branches += 1;
                self.report.mispredicts += (rec.tage.dir != rec.actual) as u64;
                self.tage.update(&rec.tage, rec.actual);
                self.jrs.update(e.instr.pc, rec.hist, rec.tage.dir == rec.actual);
            }
            if let Some(mp) = &mut self.mp {
                let fx = mp.on_retire(&e.instr, e.id);
                for d in fx.detections {
                    self.events.push(Event::WpbDetected {
                        cycle: self.cycle,
                        branch_pc: d.branch_pc,
                        merge_pc: d.merge_pc,
                        distance: d.distance,
                        wp_distance: d.wp_distance,
                        cp_distance: d.cp_distance,
                    });
                }
                for r in fx.resolutions {
                    self.events.push(Event::MpResolved {
                        cycle: self.cycle,
                        id: r.branch_id,
                        branch_pc: r.entry.branch_pc,
                        merge_pc: r.entry.merge_pc,
                        verdict: r.verdict,
                        selected: r.selected,
                        predicted_distance: r.predicted_distance,
                        distance: r.entry.distance,
                        age: r.age,
                    });
                }
            }
            self.events.push(Event::Retired {
                cycle: self.cycle,
                id: e.id,
                seq: e.instr.seq_no,
                pc: e.instr.pc,
                end: e.instr.ends_program,
            });
            self.report.retired += 1;
        }
    }
}

/// Entries younger than `branch_index`, oldest first.
fn rob_walk(rob: &VecDeque<RobEntry>, branch_index: usize) -> Vec<DynInstr> {
    rob.iter().skip(branch_index + 1).map(|e| e.instr).collect()
}
