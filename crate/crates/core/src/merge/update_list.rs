use serde::{Deserialize, Serialize};

use crate::model::DynInstr;
use crate::regs::RegSet;

use super::table::{MergeEntry, SlotRef, CTR_MAX};
use super::UpdatePolicy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    WrongDistance,
    LoopBack,
    UnexpectedWrite,
}

impl Verdict {
    pub fn is_correct(self) -> bool {
        self == Verdict::Correct
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateListEntry {
    pub branch_pc: crate::model::Pc,
    /// Fetch id of the dynamic branch this prediction was made for.
    pub branch_id: u64,
    pub active: bool,
    pub age: u32,
    pub entry: MergeEntry,
    pub slot: SlotRef,
    pub observed_regs: RegSet,
    /// The entry that supplied the prediction, as opposed to a co-matching
    /// entry carried along for training.
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub branch_id: u64,
    pub verdict: Verdict,
    /// Age at resolution.
    pub age: u32,
    /// Updated copy to write back.
    pub entry: MergeEntry,
    /// Distance the prediction carried when it was made.
    pub predicted_distance: u32,
    pub slot: SlotRef,
    pub selected: bool,
}

#[derive(Clone, Debug)]
pub struct UpdateList {
    capacity: usize,
    max_dist: u32,
    policy: UpdatePolicy,
    entries: Vec<(UpdateListEntry, u32)>,
    pub drops: u64,
}

impl UpdateList {
    pub fn new(capacity: usize, max_dist: u32, policy: UpdatePolicy) -> Self {
        UpdateList {
            capacity,
            max_dist,
            policy,
            entries: Vec::with_capacity(capacity),
            drops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &UpdateListEntry> {
        self.entries.iter().map(|(e, _)| e)
    }

    /// Adds an inactive entry; returns false (and counts a drop) when full.
    pub fn insert(&mut self, branch_id: u64, slot: SlotRef, entry: MergeEntry, selected: bool) -> bool {
        if self.entries.len() >= self.capacity {
            self.drops += 1;
            return false;
        }
        self.entries.push((
            UpdateListEntry {
                branch_pc: entry.branch_pc,
                branch_id,
                active: false,
                age: 0,
                entry,
                slot,
                observed_regs: RegSet::EMPTY,
                selected,
            },
            entry.distance,
        ));
        true
    }

    /// Removes inactive entries whose branch is younger than `id` (squashed).
    pub fn squash_younger_than(&mut self, id: u64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|(e, _)| e.active || e.branch_id <= id);
        before - self.entries.len()
    }

    /// Feeds one retired instruction with fetch id `id`. Active entries are
    /// checked first; entries for this instruction then activate.
    pub fn on_retire(&mut self, retired: &DynInstr, id: u64) -> Vec<Resolution> {
        let mut out = Vec::new();
        let (max_dist, policy) = (self.max_dist, self.policy);
        self.entries.retain_mut(|(e, predicted)| {
            if !e.active {
                if e.branch_id == id {
                    e.active = true;
                }
                return true;
            }
            match step(e, retired, max_dist, policy) {
                Some(verdict) => {
                    out.push(Resolution {
                        branch_id: e.branch_id,
                        verdict,
                        age: e.age,
                        entry: e.entry,
                        predicted_distance: *predicted,
                        slot: e.slot,
                        selected: e.selected,
                    });
                    false
                }
                None => true,
            }
        });
        out
    }
}

fn step(e: &mut UpdateListEntry, retired: &DynInstr, max_dist: u32, policy: UpdatePolicy) -> Option<Verdict> {
    e.age += 1;
    let verdict = if retired.pc == e.entry.merge_pc {
        if policy == UpdatePolicy::UpdateMax {
            e.entry.distance = e.entry.distance.max(e.age).min(max_dist);
        }
        Verdict::Correct
    } else if retired.dests.intersects(e.entry.indep) {
        Verdict::UnexpectedWrite
    } else if retired.pc == e.branch_pc {
        Verdict::LoopBack
    } else if retired.ends_program {
        Verdict::WrongDistance
    } else {
        let limit = match policy {
            UpdatePolicy::Plain => e.entry.distance,
            UpdatePolicy::UpdateMax => max_dist,
        };
        e.observed_regs |= retired.dests;
        if e.age > limit {
            Verdict::WrongDistance
        } else {
            return None;
        }
    };
    e.entry.ctr = if verdict.is_correct() {
        (e.entry.ctr + 1).min(CTR_MAX)
    } else {
        e.entry.ctr.saturating_sub(1)
    };
    Some(verdict)
}
