use serde::{Deserialize, Serialize};

/// 64-bit global branch history, newest outcome in bit 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalHistory(pub u64);

impl GlobalHistory {
    pub fn push(&mut self, taken: bool) {
        self.0 = (self.0 << 1) | taken as u64;
    }

    pub fn pushed(mut self, taken: bool) -> Self {
        self.push(taken);
        self
    }

    /// XOR-folds the newest `len` bits down to `width` bits.
    pub fn fold(self, len: u32, width: u32) -> u64 {
        if width == 0 || len == 0 {
            return 0;
        }
        let mut h = if len >= 64 {
            self.0
        } else {
            self.0 & ((1u64 << len) - 1)
        };
        let mask = (1u64 << width) - 1;
        let mut folded = 0;
        while h != 0 {
            folded ^= h & mask;
            h >>= width;
        }
        folded
    }
}
