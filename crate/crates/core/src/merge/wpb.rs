use crate::model::{DynInstr, Pc};
use crate::regs::RegSet;

use super::set_index;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WpbSlot {
    pub pc: Pc,
    /// Position on the wrong path, 1-based.
    pub distance: u32,
    /// Destinations of wrong-path instructions 1..=distance.
    pub written: RegSet,
    /// Destinations of wrong-path instructions before this one.
    pub gap: RegSet,
}

/// Set-associative store of wrong-path PCs with LRU replacement.
#[derive(Clone, Debug)]
pub struct WpbStore {
    sets: usize,
    ways: usize,
    slots: Vec<Option<(WpbSlot, u64)>>,
    clock: u64,
    pub evictions: u64,
}

impl WpbStore {
    pub fn new(entries: usize, ways: usize) -> Self {
        assert!(ways > 0 && entries.is_multiple_of(ways), "entries must divide into ways");
        let sets = entries / ways;
        assert!(sets.is_power_of_two(), "set count must be a power of two");
        WpbStore {
            sets,
            ways,
            slots: vec![None; entries],
            clock: 0,
            evictions: 0,
        }
    }

    pub fn fully_associative(entries: usize) -> Self {
        WpbStore::new(entries, entries)
    }

    fn set(&self, pc: Pc) -> std::ops::Range<usize> {
        let s = set_index(pc, self.sets);
        s * self.ways..(s + 1) * self.ways
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    pub fn lookup(&self, pc: Pc) -> Option<WpbSlot> {
        self.slots[self.set(pc)]
            .iter()
            .flatten()
            .find(|(s, _)| s.pc == pc)
            .map(|(s, _)| *s)
    }

    /// Keeps an existing entry for the same pc (the earlier occurrence).
    /// Returns false when the pc was already present.
    pub fn insert(&mut self, slot: WpbSlot) -> bool {
        let range = self.set(slot.pc);
        if self.slots[range.clone()]
            .iter()
            .flatten()
            .any(|(s, _)| s.pc == slot.pc)
        {
            return false;
        }
        self.clock += 1;
        let victim = match range.clone().find(|i| self.slots[*i].is_none()) {
            Some(i) => i,
            None => {
                self.evictions += 1;
                range
                    .min_by_key(|i| self.slots[*i].map_or(0, |(_, t)| t))
                    .expect("non-empty set")
            }
        };
        self.slots[victim] = Some((slot, self.clock));
        true
    }

    pub fn len(&self) -> usize {
        self.slots.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Detection {
    pub branch_pc: Pc,
    pub merge_pc: Pc,
    pub wp_distance: u32,
    pub cp_distance: u32,
    pub distance: u32,
    /// Registers written between branch and merge on either path.
    pub written: RegSet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProbeResult {
    Hit(Detection),
    Continue,
    Exhausted,
}

/// Wrong-path capture for one mispredicted branch plus the correct-path
/// counters compared against it.
#[derive(Clone, Debug)]
pub struct WpbContext {
    pub tag: Pc,
    pub valid: bool,
    /// Retirement of this fetch id starts the probe.
    pub(crate) owner: u64,
    pub(crate) armed: bool,
    pub store: WpbStore,
    pub cp_distance: u32,
    pub cp_regs: RegSet,
    max_dist: u32,
}

impl WpbContext {
    pub fn new(store: WpbStore, max_dist: u32) -> Self {
        WpbContext {
            tag: Pc(0),
            valid: false,
            owner: 0,
            armed: false,
            store,
            cp_distance: 0,
            cp_regs: RegSet::EMPTY,
            max_dist,
        }
    }

    /// Copies the wrong path into the store. Returns the number of insert
    /// attempts.
    pub fn fill(&mut self, branch_pc: Pc, rob_tail: &[DynInstr]) -> usize {
        self.store.clear();
        self.tag = branch_pc;
        self.valid = true;
        self.armed = true;
        self.cp_distance = 0;
        self.cp_regs = RegSet::EMPTY;
        let mut written = RegSet::EMPTY;
        let mut attempts = 0;
        for (i, ins) in rob_tail.iter().enumerate() {
            let d = i as u32 + 1;
            if d > self.max_dist || ins.pc == branch_pc {
                break;
            }
            let gap = written;
            written |= ins.dests;
            self.store.insert(WpbSlot {
                pc: ins.pc,
                distance: d,
                written,
                gap,
            });
            attempts += 1;
        }
        attempts
    }

    /// Compares one retired correct-path instruction against the store.
    pub fn probe(&mut self, retired: &DynInstr) -> ProbeResult {
        if !self.valid {
            return ProbeResult::Exhausted;
        }
        self.cp_distance += 1;
        if retired.pc == self.tag || self.cp_distance > self.max_dist {
            self.valid = false;
            return ProbeResult::Exhausted;
        }
        if let Some(slot) = self.store.lookup(retired.pc) {
            self.valid = false;
            return ProbeResult::Hit(Detection {
                branch_pc: self.tag,
                merge_pc: retired.pc,
                wp_distance: slot.distance,
                cp_distance: self.cp_distance,
                distance: slot.distance.max(self.cp_distance),
                written: slot.gap | self.cp_regs,
            });
        }
        self.cp_regs |= retired.dests;
        if retired.ends_program {
            self.valid = false;
            return ProbeResult::Exhausted;
        }
        ProbeResult::Continue
    }
}
