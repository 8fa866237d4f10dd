//! Dynamic merge point prediction simulator.
//!
//! A branch misprediction exposes both directions of a branch: the wrong path
//! sits in the reorder buffer at flush time and the correct path retires
//! afterwards. The first PC the two share is a merge (reconvergence) point.
//! This crate models that detection mechanism, the predictor table and
//! verification list around it, a confidence-cost gate deciding when merge
//! prediction replaces branch prediction, and an oracle to score it all.

pub mod bpred;
pub mod confcost;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod regs;
pub mod workload;

pub use model::{DynInstr, Pc, ProgramModel};
pub use regs::RegSet;
