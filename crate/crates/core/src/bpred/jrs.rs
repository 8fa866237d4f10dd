use serde::{Deserialize, Serialize};

use super::GlobalHistory;
use crate::model::Pc;

pub const JRS_COUNTER_MAX: u8 = 15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JrsConfig {
    pub index_bits: u32,
    pub history_bits: u32,
    /// Counter value at or above which a prediction is high confidence.
    pub threshold: u8,
}

impl Default for JrsConfig {
    fn default() -> Self {
        JrsConfig {
            index_bits: 12,
            history_bits: 12,
            threshold: JRS_COUNTER_MAX,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JrsConfidence {
    HighConf,
    NotHigh,
}

/// Table of 4-bit resetting counters: a correct prediction counts up, a
/// misprediction clears the counter.
#[derive(Clone, Debug)]
pub struct JrsTable {
    cfg: JrsConfig,
    counters: Vec<u8>,
}

impl JrsTable {
    pub fn new(cfg: JrsConfig) -> Self {
        let counters = vec![0; 1 << cfg.index_bits];
        JrsTable { cfg, counters }
    }

    fn index(&self, pc: Pc, hist: GlobalHistory) -> usize {
        let h = pc.0 as u64 ^ hist.fold(self.cfg.history_bits, self.cfg.index_bits);
        (h & ((1 << self.cfg.index_bits) - 1)) as usize
    }

    pub fn counter(&self, pc: Pc, hist: GlobalHistory) -> u8 {
        self.counters[self.index(pc, hist)]
    }

    pub fn confidence(&self, pc: Pc, hist: GlobalHistory) -> JrsConfidence {
        if self.counter(pc, hist) >= self.cfg.threshold {
            JrsConfidence::HighConf
        } else {
            JrsConfidence::NotHigh
        }
    }

    pub fn update(&mut self, pc: Pc, hist: GlobalHistory, was_correct: bool) {
        let i = self.index(pc, hist);
        let c = &mut self.counters[i];
        *c = if was_correct {
            (*c + 1).min(JRS_COUNTER_MAX)
        } else {
            0
        };
    }

    pub fn counters(&self) -> &[u8] {
        &self.counters
    }
}
