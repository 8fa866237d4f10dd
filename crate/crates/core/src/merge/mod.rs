//! Dynamic merge point prediction: the wrong path buffer detects merges at
//! misprediction time, the predictor table stores them, and the update list
//! verifies each prediction against the retirement stream.

mod table;
mod update_list;
mod wpb;

pub use table::{InstallOutcome, MergeEntry, PredictorTable, SlotRef, CTR_MAX};
pub use update_list::{Resolution, UpdateList, UpdateListEntry, Verdict};
pub use wpb::{Detection, ProbeResult, WpbContext, WpbSlot, WpbStore};

use serde::{Deserialize, Serialize};

use crate::model::{DynInstr, Pc};
use crate::regs::RegSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    #[default]
    Plain,
    UpdateMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub table_entries: usize,
    pub table_ways: usize,
    pub wpb_entries: usize,
    pub wpb_ways: usize,
    pub wpb_contexts: usize,
    pub max_distance: u32,
    pub update_list_capacity: usize,
    pub initial_ctr: u8,
    pub policy: UpdatePolicy,
    /// Shadow every context with a fully associative store and count the
    /// detections the set-associative one misses.
    pub cam_compare: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            table_entries: 128,
            table_ways: 4,
            wpb_entries: 128,
            wpb_ways: 4,
            wpb_contexts: 1,
            max_distance: 100,
            update_list_capacity: 8,
            initial_ctr: 4,
            policy: UpdatePolicy::Plain,
            cam_compare: false,
        }
    }
}

/// xorshift32 of the pc, reduced to a set number.
pub(crate) fn set_index(pc: Pc, sets: usize) -> usize {
    let mut x = pc.0.wrapping_add(0x9e37_79b9);
    x ^= x << 13;
    x ^= x >> 17;
    x ^= x << 5;
    x as usize & (sets - 1)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub fills: u64,
    pub detections: u64,
    pub cam_detections: u64,
    pub installs: u64,
    pub refreshes: u64,
    pub evictions: u64,
    pub wpb_evictions: u64,
    pub lookups: u64,
    pub table_misses: u64,
    pub ul_inserts: u64,
    pub ul_drops: u64,
    pub ul_squashed: u64,
    pub resolutions: u64,
}

/// A prediction handed to the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergePrediction {
    pub merge_pc: Pc,
    pub distance: u32,
    pub indep: RegSet,
    pub matched: usize,
    /// The selected entry made it into the update list.
    pub tracked: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RetireEffects {
    pub detections: Vec<Detection>,
    pub resolutions: Vec<Resolution>,
}

#[derive(Clone, Debug)]
struct Shadowed {
    ctx: WpbContext,
    cam: Option<WpbContext>,
    stamp: u64,
}

#[derive(Clone, Debug)]
pub struct MergePredictor {
    cfg: MergeConfig,
    table: PredictorTable,
    ul: UpdateList,
    contexts: Vec<Shadowed>,
    fill_clock: u64,
    arch_regs: u8,
    pub stats: MergeStats,
}

impl MergePredictor {
    pub fn new(cfg: MergeConfig, arch_regs: u8) -> Self {
        assert!(cfg.max_distance >= 1, "max distance must be positive");
        assert!(cfg.wpb_contexts >= 1, "need at least one wrong path buffer");
        let contexts = (0..cfg.wpb_contexts)
            .map(|_| Shadowed {
                ctx: WpbContext::new(WpbStore::new(cfg.wpb_entries, cfg.wpb_ways), cfg.max_distance),
                cam: cfg.cam_compare.then(|| {
                    WpbContext::new(
                        WpbStore::fully_associative(cfg.max_distance as usize),
                        cfg.max_distance,
                    )
                }),
                stamp: 0,
            })
            .collect();
        MergePredictor {
            table: PredictorTable::new(cfg.table_entries, cfg.table_ways),
            ul: UpdateList::new(cfg.update_list_capacity, cfg.max_distance, cfg.policy),
            contexts,
            fill_clock: 0,
            arch_regs,
            stats: MergeStats::default(),
            cfg,
        }
    }

    pub fn config(&self) -> &MergeConfig {
        &self.cfg
    }

    pub fn table(&self) -> &PredictorTable {
        &self.table
    }

    pub fn update_list(&self) -> &UpdateList {
        &self.ul
    }

    /// Captures the wrong path of a mispredicted branch with fetch id `id`.
    /// Probing starts after that branch retires.
    pub fn on_mispredict(&mut self, branch_pc: Pc, id: u64, rob_tail: &[DynInstr]) -> usize {
        self.fill_clock += 1;
        let slot = self
            .contexts
            .iter()
            .position(|c| !c.ctx.valid)
            .unwrap_or_else(|| {
                (0..self.contexts.len())
                    .min_by_key(|i| self.contexts[*i].stamp)
                    .expect("at least one context")
            });
        let c = &mut self.contexts[slot];
        let before = c.ctx.store.evictions;
        let attempts = c.ctx.fill(branch_pc, rob_tail);
        self.stats.wpb_evictions += c.ctx.store.evictions - before;
        c.ctx.owner = id;
        c.ctx.armed = false;
        if let Some(cam) = &mut c.cam {
            cam.fill(branch_pc, rob_tail);
            cam.owner = id;
            cam.armed = false;
        }
        c.stamp = self.fill_clock;
        self.stats.fills += 1;
        attempts
    }

    /// Looks up `branch_pc` for the dynamic branch with fetch id `id`. Every
    /// matching entry joins the update list.
    pub fn predict(&mut self, branch_pc: Pc, id: u64) -> Option<MergePrediction> {
        self.stats.lookups += 1;
        let matches = self.table.lookup(branch_pc);
        let Some(sel) = PredictorTable::select(&matches) else {
            self.stats.table_misses += 1;
            return None;
        };
        let (sel_slot, chosen) = matches[sel];
        let tracked = self.ul.insert(id, sel_slot, chosen, true);
        let mut inserted = tracked as u64;
        for (i, (slot, e)) in matches.iter().enumerate() {
            if i != sel {
                inserted += self.ul.insert(id, *slot, *e, false) as u64;
            }
        }
        self.stats.ul_inserts += inserted;
        self.stats.ul_drops = self.ul.drops;
        Some(MergePrediction {
            merge_pc: chosen.merge_pc,
            distance: chosen.distance,
            indep: chosen.indep,
            matched: matches.len(),
            tracked,
        })
    }

    /// Drops pending predictions for branches younger than `id`.
    pub fn on_squash(&mut self, id: u64) {
        self.stats.ul_squashed += self.ul.squash_younger_than(id) as u64;
    }

    pub fn on_retire(&mut self, retired: &DynInstr, id: u64) -> RetireEffects {
        let mut fx = RetireEffects::default();
        for c in &mut self.contexts {
            if !c.ctx.valid {
                continue;
            }
            if !c.ctx.armed {
                if c.ctx.owner == id {
                    c.ctx.armed = true;
                    if let Some(cam) = &mut c.cam {
                        cam.armed = true;
                    }
                }
                continue;
            }
            if let Some(cam) = &mut c.cam {
                if cam.valid && matches!(cam.probe(retired), ProbeResult::Hit(_)) {
                    self.stats.cam_detections += 1;
                }
            }
            if let ProbeResult::Hit(d) = c.ctx.probe(retired) {
                self.stats.detections += 1;
                fx.detections.push(d);
            }
        }
        for d in &fx.detections {
            let entry = MergeEntry {
                branch_pc: d.branch_pc,
                merge_pc: d.merge_pc,
                distance: d.distance,
                indep: d.written.complement(self.arch_regs as usize),
                ctr: self.cfg.initial_ctr,
                lru_stamp: 0,
            };
            let out = self.table.install(entry);
            self.count_install(out);
        }
        fx.resolutions = self.ul.on_retire(retired, id);
        for r in &fx.resolutions {
            self.stats.resolutions += 1;
            let out = self.table.writeback(r.slot, r.entry);
            if let InstallOutcome::Evicted { .. } = out {
                self.stats.evictions += 1;
            }
        }
        fx
    }

    fn count_install(&mut self, out: InstallOutcome) {
        match out {
            InstallOutcome::Refreshed(_) => self.stats.refreshes += 1,
            InstallOutcome::Placed(_) => self.stats.installs += 1,
            InstallOutcome::Evicted { .. } => {
                self.stats.installs += 1;
                self.stats.evictions += 1;
            }
        }
    }
}
