//! Direction prediction and its confidence signals: a scaled TAGE whose
//! provider counter exposes weak states, and a JRS resetting-counter table.

mod history;
mod jrs;
mod tage;

pub use history::GlobalHistory;
pub use jrs::{JrsConfidence, JrsConfig, JrsTable, JRS_COUNTER_MAX};
pub use tage::{Provider, TageConfig, TageLite, TagePrediction, MAX_TAGGED_TABLES};

use crate::model::Pc;

/// TAGE plus JRS behind one global history, for standalone replay. The
/// pipeline drives the two tables directly with its own speculative history.
#[derive(Clone, Debug)]
pub struct DirectionPredictor {
    pub tage: TageLite,
    pub jrs: JrsTable,
    pub history: GlobalHistory,
}

#[derive(Clone, Copy, Debug)]
pub struct DirectionPrediction {
    pub tage: TagePrediction,
    pub jrs: JrsConfidence,
    pub history: GlobalHistory,
}

impl DirectionPredictor {
    pub fn new(tage: TageConfig, jrs: JrsConfig) -> Self {
        DirectionPredictor {
            tage: TageLite::new(tage),
            jrs: JrsTable::new(jrs),
            history: GlobalHistory::default(),
        }
    }

    pub fn predict(&self, pc: Pc) -> DirectionPrediction {
        DirectionPrediction {
            tage: self.tage.predict(pc, self.history),
            jrs: self.jrs.confidence(pc, self.history),
            history: self.history,
        }
    }

    pub fn train(&mut self, pc: Pc, pred: &DirectionPrediction, taken: bool) {
        self.tage.update(&pred.tage, taken);
        self.jrs.update(pc, pred.history, pred.tage.dir == taken);
        self.history.push(taken);
    }
}
