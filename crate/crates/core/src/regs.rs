use std::fmt;

use serde::{Deserialize, Serialize};

/// Upper bound on architectural registers a [`RegSet`] can hold.
pub const MAX_ARCH_REGS: usize = 64;

/// Bit set over architectural register ids.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<u8>", into = "Vec<u8>")]
pub struct RegSet(u64);

impl RegSet {
    pub const EMPTY: RegSet = RegSet(0);

    pub fn from_bits(bits: u64) -> Self {
        RegSet(bits)
    }

    /// Every register id below `count`.
    pub fn all(count: usize) -> Self {
        if count >= MAX_ARCH_REGS {
            RegSet(u64::MAX)
        } else {
            RegSet((1u64 << count) - 1)
        }
    }

    pub fn single(reg: u8) -> Self {
        RegSet(1u64 << reg)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn insert(&mut self, reg: u8) {
        self.0 |= 1u64 << reg;
    }

    pub fn contains(self, reg: u8) -> bool {
        (reg as usize) < MAX_ARCH_REGS && self.0 & (1u64 << reg) != 0
    }

    pub fn union(self, other: RegSet) -> RegSet {
        RegSet(self.0 | other.0)
    }

    pub fn intersection(self, other: RegSet) -> RegSet {
        RegSet(self.0 & other.0)
    }

    /// Complement restricted to the first `count` registers.
    pub fn complement(self, count: usize) -> RegSet {
        RegSet(!self.0 & RegSet::all(count).0)
    }

    pub fn intersects(self, other: RegSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: RegSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Highest register id present, if any.
    pub fn max_reg(self) -> Option<u8> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros() as u8)
    }

    pub fn iter(self) -> impl Iterator<Item = u8> {
        (0..MAX_ARCH_REGS as u8).filter(move |r| self.contains(*r))
    }
}

impl std::ops::BitOr for RegSet {
    type Output = RegSet;
    fn bitor(self, rhs: RegSet) -> RegSet {
        self.union(rhs)
    }
}

impl std::ops::BitOrAssign for RegSet {
    fn bitor_assign(&mut self, rhs: RegSet) {
        self.0 |= rhs.0;
    }
}

impl FromIterator<u8> for RegSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        let mut set = RegSet::EMPTY;
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl From<Vec<u8>> for RegSet {
    fn from(regs: Vec<u8>) -> Self {
        regs.into_iter().filter(|r| (*r as usize) < MAX_ARCH_REGS).collect()
    }
}

impl From<RegSet> for Vec<u8> {
    fn from(set: RegSet) -> Self {
        set.iter().collect()
    }
}

impl fmt::Debug for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|r| format!("r{r}"))).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_bounded_by_register_count() {
        let written: RegSet = [1u8, 2, 3].into_iter().collect();
        let indep = written.complement(16);
        assert_eq!(indep.len(), 13);
        assert!(!indep.contains(2));
        assert!(!indep.contains(16));
        assert_eq!(RegSet::all(64).len(), 64);
    }

    #[test]
    fn serde_as_register_list() {
        let set: RegSet = [0u8, 5].into_iter().collect();
        let text = serde_json::to_string(&set).unwrap();
        assert_eq!(text, "[0,5]");
        let back: RegSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, set);
    }
}
