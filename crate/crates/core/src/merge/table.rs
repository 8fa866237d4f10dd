use serde::{Deserialize, Serialize};

use crate::model::Pc;
use crate::regs::RegSet;

use super::set_index;

pub const CTR_MAX: u8 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEntry {
    pub branch_pc: Pc,
    pub merge_pc: Pc,
    pub distance: u32,
    pub indep: RegSet,
    pub ctr: u8,
    pub lru_stamp: u64,
}

impl MergeEntry {
    pub fn same_pair(&self, other: &MergeEntry) -> bool {
        self.branch_pc == other.branch_pc && self.merge_pc == other.merge_pc
    }
}

/// Physical location of an entry; may be reallocated while a copy is in the
/// update list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SlotRef(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InstallOutcome {
    Refreshed(SlotRef),
    Placed(SlotRef),
    Evicted { slot: SlotRef, victim: MergeEntry },
}

#[derive(Clone, Debug)]
pub struct PredictorTable {
    sets: usize,
    ways: usize,
    slots: Vec<Option<MergeEntry>>,
    clock: u64,
}

impl PredictorTable {
    pub fn new(entries: usize, ways: usize) -> Self {
        assert!(ways > 0 && entries.is_multiple_of(ways), "entries must divide into ways");
        let sets = entries / ways;
        assert!(sets.is_power_of_two(), "set count must be a power of two");
        PredictorTable {
            sets,
            ways,
            slots: vec![None; entries],
            clock: 0,
        }
    }

    fn set(&self, pc: Pc) -> std::ops::Range<usize> {
        let s = set_index(pc, self.sets);
        s * self.ways..(s + 1) * self.ways
    }

    pub fn get(&self, slot: SlotRef) -> Option<&MergeEntry> {
        self.slots[slot.0].as_ref()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MergeEntry> {
        self.slots.iter().flatten()
    }

    /// Every entry for `branch_pc`, in way order.
    pub fn lookup(&mut self, branch_pc: Pc) -> Vec<(SlotRef, MergeEntry)> {
        self.clock += 1;
        let stamp = self.clock;
        let range = self.set(branch_pc);
        let mut out = Vec::new();
        for i in range {
            if let Some(e) = &mut self.slots[i] {
                if e.branch_pc == branch_pc {
                    e.lru_stamp = stamp;
                    out.push((SlotRef(i), *e));
                }
            }
        }
        out
    }

    /// Highest counter, then smallest distance, then lowest way.
    pub fn select(matches: &[(SlotRef, MergeEntry)]) -> Option<usize> {
        (0..matches.len()).min_by_key(|i| {
            let e = &matches[*i].1;
            (CTR_MAX - e.ctr, e.distance, *i)
        })
    }

    /// Installs a detection. An existing pair keeps its counter, grows its
    /// distance to the larger value and narrows its independent set.
    pub fn install(&mut self, mut new: MergeEntry) -> InstallOutcome {
        self.clock += 1;
        new.lru_stamp = self.clock;
        let range = self.set(new.branch_pc);
        if let Some(i) = range
            .clone()
            .find(|i| self.slots[*i].is_some_and(|e| e.same_pair(&new)))
        {
            let e = self.slots[i].as_mut().expect("present");
            e.distance = e.distance.max(new.distance);
            e.indep = e.indep.intersection(new.indep);
            e.lru_stamp = new.lru_stamp;
            return InstallOutcome::Refreshed(SlotRef(i));
        }
        if let Some(i) = range.clone().find(|i| self.slots[*i].is_none()) {
            self.slots[i] = Some(new);
            return InstallOutcome::Placed(SlotRef(i));
        }
        let victim_idx = range
            .min_by_key(|i| {
                let e = self.slots[*i].expect("full set");
                (e.ctr, u32::MAX - e.distance, *i)
            })
            .expect("non-empty set");
        let victim = self.slots[victim_idx].replace(new).expect("full set");
        InstallOutcome::Evicted {
            slot: SlotRef(victim_idx),
            victim,
        }
    }

    /// Stores an updated copy back. Falls back to `install` when the slot
    /// no longer holds the same pair.
    pub fn writeback(&mut self, slot: SlotRef, copy: MergeEntry) -> InstallOutcome {
        match &mut self.slots[slot.0] {
            Some(e) if e.same_pair(&copy) => {
                e.ctr = copy.ctr;
                e.distance = e.distance.max(copy.distance);
                e.indep = e.indep.intersection(copy.indep);
                InstallOutcome::Refreshed(slot)
            }
            _ => {
                let range = self.set(copy.branch_pc);
                if let Some(i) = range
                    .clone()
                    .find(|i| self.slots[*i].is_some_and(|e| e.same_pair(&copy)))
                {
                    return self.writeback(SlotRef(i), copy);
                }
                self.install(copy)
            }
        }
    }
}
