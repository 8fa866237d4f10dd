//! Confidence-cost gate: buckets each dynamic conditional branch by
//! prediction confidence and average resolve latency, then picks merge point
//! prediction (MP) or branch prediction (BP).
//!
//! | latency \ confidence | Low | Med | High |
//! |----------------------|-----|-----|------|
//! | Low                  | MP  | BP  | BP   |
//! | High                 | MP  | MP  | BP   |

use serde::{Deserialize, Serialize};

use crate::model::Pc;

/// Latency averages carry this many fractional bits.
pub const LATENCY_FRAC_BITS: u32 = 8;
const ONE: u64 = 1 << LATENCY_FRAC_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Confidence {
    Low,
    Med,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LatencyLevel {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CcDecision {
    pub conf: Confidence,
    pub lat: LatencyLevel,
    pub use_mp: bool,
}

impl CcDecision {
    pub fn new(conf: Confidence, lat: LatencyLevel) -> Self {
        CcDecision {
            conf,
            lat,
            use_mp: decide(conf, lat),
        }
    }
}

/// Weak provider counter wins over a high JRS report.
pub fn classify_confidence(is_weak: bool, jrs_high: bool) -> Confidence {
    if is_weak {
        Confidence::Low
    } else if jrs_high {
        Confidence::High
    } else {
        Confidence::Med
    }
}

pub fn decide(conf: Confidence, lat: LatencyLevel) -> bool {
    match (conf, lat) {
        (Confidence::Low, _) => true,
        (Confidence::Med, LatencyLevel::High) => true,
        (Confidence::Med, LatencyLevel::Low) => false,
        (Confidence::High, _) => false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfCostConfig {
    pub latency_table_bits: u32,
    /// Averages strictly above this many cycles are Lat-High.
    pub threshold_cycles: u32,
    /// Weight of the newest sample, in tenths.
    pub new_weight_tenths: u32,
}

impl Default for ConfCostConfig {
    fn default() -> Self {
        ConfCostConfig {
            latency_table_bits: 10,
            threshold_cycles: 50,
            new_weight_tenths: 9,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct LatencySlot {
    avg: u64,
    valid: bool,
}

/// Direct-mapped, untagged table of exponentially averaged resolve latency.
#[derive(Clone, Debug)]
pub struct LatencyTable {
    cfg: ConfCostConfig,
    slots: Vec<LatencySlot>,
}

impl LatencyTable {
    pub fn new(cfg: ConfCostConfig) -> Self {
        assert!(cfg.new_weight_tenths <= 10, "EMA weight above 1");
        let slots = vec![LatencySlot::default(); 1 << cfg.latency_table_bits];
        LatencyTable { cfg, slots }
    }

    fn index(&self, pc: Pc) -> usize {
        pc.0 as usize & (self.slots.len() - 1)
    }

    /// Folds one resolve latency into the running average. The first sample
    /// seeds the average directly.
    pub fn record_latency(&mut self, pc: Pc, resolve_cycles: u64) {
        let i = self.index(pc);
        let sample = resolve_cycles.saturating_mul(ONE);
        let w = self.cfg.new_weight_tenths as u64;
        let slot = &mut self.slots[i];
        slot.avg = if slot.valid {
            // Round to nearest.
            (w * sample + (10 - w) * slot.avg + 5) / 10
        } else {
            sample
        };
        slot.valid = true;
    }

    /// Average latency in cycles, `None` for an unseen slot.
    pub fn average(&self, pc: Pc) -> Option<f64> {
        let slot = self.slots[self.index(pc)];
        slot.valid.then(|| slot.avg as f64 / ONE as f64)
    }

    /// Raw fixed-point average (8 fractional bits).
    pub fn average_fixed(&self, pc: Pc) -> Option<u64> {
        let slot = self.slots[self.index(pc)];
        slot.valid.then_some(slot.avg)
    }

    pub fn classify_latency(&self, pc: Pc) -> LatencyLevel {
        match self.average_fixed(pc) {
            Some(avg) if avg > self.cfg.threshold_cycles as u64 * ONE => LatencyLevel::High,
            _ => LatencyLevel::Low,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decision_table_exhaustive() {
        use Confidence::*;
        use LatencyLevel as L;
        let expected = [
            ((Low, L::Low), true),
            ((Low, L::High), true),
            ((Med, L::Low), false),
            ((Med, L::High), true),
            ((High, L::Low), false),
            ((High, L::High), false),
        ];
        for ((c, l), mp) in expected {
            assert_eq!(decide(c, l), mp, "{c:?}/{l:?}");
            assert_eq!(CcDecision::new(c, l).use_mp, mp);
        }
    }

    #[test]
    fn confidence_precedence() {
        assert_eq!(classify_confidence(true, true), Confidence::Low);
        assert_eq!(classify_confidence(true, false), Confidence::Low);
        assert_eq!(classify_confidence(false, true), Confidence::High);
        assert_eq!(classify_confidence(false, false), Confidence::Med);
    }

    #[test]
    fn ema_examples() {
        let mut t = LatencyTable::new(ConfCostConfig::default());
        let pc = Pc(4);
        assert_eq!(t.average(pc), None);
        t.record_latency(pc, 100);
        assert_eq!(t.average(pc), Some(100.0));
        t.record_latency(pc, 0);
        assert_eq!(t.average(pc), Some(10.0));
        t.record_latency(pc, 10);
        assert_eq!(t.average(pc), Some(10.0));
    }

    #[test]
    fn latency_threshold() {
        let mut t = LatencyTable::new(ConfCostConfig::default());
        t.record_latency(Pc(1), 200);
        t.record_latency(Pc(2), 3);
        t.record_latency(Pc(3), 50);
        assert_eq!(t.classify_latency(Pc(1)), LatencyLevel::High);
        assert_eq!(t.classify_latency(Pc(2)), LatencyLevel::Low);
        assert_eq!(t.classify_latency(Pc(3)), LatencyLevel::Low);
        assert_eq!(t.classify_latency(Pc(9)), LatencyLevel::Low);
    }

    #[test]
    fn ema_contracts_toward_constant_input() {
        let mut t = LatencyTable::new(ConfCostConfig::default());
        let pc = Pc(11);
        t.record_latency(pc, 317);
        let target = 42.0;
        for _ in 0..6 {
            let before = t.average(pc).unwrap();
            t.record_latency(pc, 42);
            let after = t.average(pc).unwrap();
            let expected = 0.1 * (before - target).abs();
            assert!(
                ((after - target).abs() - expected).abs() <= 1.0 / 256.0,
                "{before} -> {after}"
            );
        }
    }
}
