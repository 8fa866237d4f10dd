use serde::{Deserialize, Serialize};

use super::GlobalHistory;
use crate::model::Pc;

pub const MAX_TAGGED_TABLES: usize = 8;

const CTR_MIN: i8 = -4;
const CTR_MAX: i8 = 3;
const USEFUL_MAX: u8 = 3;
const BASE_MAX: u8 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TageConfig {
    pub base_bits: u32,
    pub table_bits: u32,
    pub tag_bits: u32,
    pub history_lengths: Vec<u32>,
}

impl Default for TageConfig {
    fn default() -> Self {
        TageConfig {
            base_bits: 12,
            table_bits: 10,
            tag_bits: 8,
            history_lengths: vec![4, 8, 16, 32],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct TaggedEntry {
    tag: u16,
    /// 3-bit signed counter in [-4, 3]; non-negative predicts taken.
    ctr: i8,
    useful: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provider {
    Base,
    Tagged(usize),
}

/// Everything `update` needs to train the entries that made a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagePrediction {
    pub dir: bool,
    pub provider: Provider,
    /// Provider counter on the signed 3-bit scale; the base 2-bit counter is
    /// mapped to [-2, 1].
    pub provider_ctr: i8,
    /// Provider counter sits in weakly-taken or weakly-not-taken.
    pub is_weak: bool,
    pub alt_dir: bool,
    base_index: u32,
    indices: [u32; MAX_TAGGED_TABLES],
    tags: [u16; MAX_TAGGED_TABLES],
}

/// Scaled-down TAGE: a bimodal base plus tagged tables with geometric
/// history lengths. No statistical corrector or loop component.
#[derive(Clone, Debug)]
pub struct TageLite {
    cfg: TageConfig,
    base: Vec<u8>,
    tables: Vec<Vec<TaggedEntry>>,
}

fn mix(pc: Pc) -> u64 {
    let x = pc.0 as u64;
    x ^ (x >> 7) ^ (x << 3)
}

impl TageLite {
    pub fn new(cfg: TageConfig) -> Self {
        assert!(
            cfg.history_lengths.len() <= MAX_TAGGED_TABLES,
            "at most {MAX_TAGGED_TABLES} tagged tables"
        );
        let base = vec![1u8; 1 << cfg.base_bits];
        let tables = cfg
            .history_lengths
            .iter()
            .map(|_| {
                vec![
                    TaggedEntry {
                        tag: 0,
                        ctr: -1,
                        useful: 0
                    };
                    1 << cfg.table_bits
                ]
            })
            .collect();
        TageLite { cfg, base, tables }
    }

    pub fn config(&self) -> &TageConfig {
        &self.cfg
    }

    fn index(&self, table: usize, pc: Pc, hist: GlobalHistory) -> u32 {
        let bits = self.cfg.table_bits;
        let len = self.cfg.history_lengths[table];
        let h = mix(pc) ^ (mix(pc) >> bits) ^ hist.fold(len, bits) ^ (table as u64 * 0x2f5);
        (h & ((1 << bits) - 1)) as u32
    }

    fn tag(&self, table: usize, pc: Pc, hist: GlobalHistory) -> u16 {
        let bits = self.cfg.tag_bits;
        let len = self.cfg.history_lengths[table];
        let h = pc.0 as u64 ^ hist.fold(len, bits) ^ (hist.fold(len, bits.saturating_sub(1)) << 1);
        (h & ((1 << bits) - 1)) as u16
    }

    pub fn predict(&self, pc: Pc, hist: GlobalHistory) -> TagePrediction {
        let base_index = (mix(pc) & ((1 << self.cfg.base_bits) - 1)) as u32;
        let mut indices = [0u32; MAX_TAGGED_TABLES];
        let mut tags = [0u16; MAX_TAGGED_TABLES];
        let mut hits: [bool; MAX_TAGGED_TABLES] = [false; MAX_TAGGED_TABLES];
        for t in 0..self.tables.len() {
            indices[t] = self.index(t, pc, hist);
            tags[t] = self.tag(t, pc, hist);
            hits[t] = self.tables[t][indices[t] as usize].tag == tags[t];
        }

        let base_ctr = self.base[base_index as usize];
        let base_dir = base_ctr >= 2;
        let mut matching = (0..self.tables.len()).rev().filter(|t| hits[*t]);
        let provider = matching.next();
        let alt = matching.next();

        let (provider, provider_ctr) = match provider {
            Some(t) => (Provider::Tagged(t), self.tables[t][indices[t] as usize].ctr),
            None => (Provider::Base, base_ctr as i8 - 2),
        };
        let alt_dir = match (provider, alt) {
            (Provider::Base, _) => base_dir,
            (_, Some(t)) => self.tables[t][indices[t] as usize].ctr >= 0,
            (_, None) => base_dir,
        };
        TagePrediction {
            dir: provider_ctr >= 0,
            provider,
            provider_ctr,
            is_weak: provider_ctr == -1 || provider_ctr == 0,
            alt_dir,
            base_index,
            indices,
            tags,
        }
    }

    /// Trains with the resolved outcome of a branch predicted by `pred`.
    pub fn update(&mut self, pred: &TagePrediction, taken: bool) {
        let mispredicted = pred.dir != taken;
        let first_longer = match pred.provider {
            Provider::Base => {
                let c = &mut self.base[pred.base_index as usize];
                *c = if taken {
                    (*c + 1).min(BASE_MAX)
                } else {
                    c.saturating_sub(1)
                };
                0
            }
            Provider::Tagged(t) => {
                let e = &mut self.tables[t][pred.indices[t] as usize];
                if e.tag == pred.tags[t] {
                    e.ctr = if taken {
                        (e.ctr + 1).min(CTR_MAX)
                    } else {
                        (e.ctr - 1).max(CTR_MIN)
                    };
                    if pred.dir != pred.alt_dir {
                        e.useful = if mispredicted {
                            e.useful.saturating_sub(1)
                        } else {
                            (e.useful + 1).min(USEFUL_MAX)
                        };
                    }
                }
                t + 1
            }
        };

        if mispredicted && first_longer < self.tables.len() {
            let slot = (first_longer..self.tables.len())
                .find(|t| self.tables[*t][pred.indices[*t] as usize].useful == 0);
            match slot {
                Some(t) => {
                    self.tables[t][pred.indices[t] as usize] = TaggedEntry {
                        tag: pred.tags[t],
                        ctr: if taken { 0 } else { -1 },
                        useful: 0,
                    };
                }
                None => {
                    for t in first_longer..self.tables.len() {
                        let e = &mut self.tables[t][pred.indices[t] as usize];
                        e.useful = e.useful.saturating_sub(1);
                    }
                }
            }
        }
    }

    /// Visits every counter as `(ctr, useful)`; base counters report useful 0.
    pub fn for_each_counter(&self, mut f: impl FnMut(i8, u8)) {
        for c in &self.base {
            f(*c as i8 - 2, 0);
        }
        for t in &self.tables {
            for e in t {
                f(e.ctr, e.useful);
            }
        }
    }

    /// Sets the useful bits of the entries `pred` would allocate into.
    #[cfg(test)]
    pub(crate) fn force_useful(&mut self, pred: &TagePrediction, from: usize, useful: u8) {
        for t in from..self.tables.len() {
            self.tables[t][pred.indices[t] as usize].useful = useful;
        }
    }

    #[cfg(test)]
    pub(crate) fn useful_at(&self, pred: &TagePrediction, table: usize) -> u8 {
        self.tables[table][pred.indices[table] as usize].useful
    }

    #[cfg(test)]
    pub(crate) fn tag_matches(&self, pred: &TagePrediction, table: usize) -> bool {
        self.tables[table][pred.indices[table] as usize].tag == pred.tags[table]
    }
}
