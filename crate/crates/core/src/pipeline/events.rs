use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::confcost::{Confidence, LatencyLevel};
use crate::merge::Verdict;
use crate::model::{ModelError, Pc};
use crate::regs::RegSet;

fn is_false(b: &bool) -> bool {
    !*b
}

/// One simulator event. Branch ids are fetch ids; only correct-path
/// branches appear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    BranchPredicted {
        cycle: u64,
        id: u64,
        pc: Pc,
        predicted: bool,
        conf: Confidence,
        lat: LatencyLevel,
        use_mp: bool,
    },
    BranchResolved {
        cycle: u64,
        id: u64,
        pc: Pc,
        actual: bool,
        mispredicted: bool,
        latency: u64,
    },
    Flush {
        cycle: u64,
        id: u64,
        pc: Pc,
        squashed: usize,
    },
    WpbDetected {
        cycle: u64,
        branch_pc: Pc,
        merge_pc: Pc,
        distance: u32,
        wp_distance: u32,
        cp_distance: u32,
    },
    MpPredicted {
        cycle: u64,
        id: u64,
        pc: Pc,
        merge_pc: Pc,
        distance: u32,
        indep: RegSet,
        matched: usize,
    },
    /// MP was selected but the table had no entry for the branch.
    MpMiss { cycle: u64, id: u64, pc: Pc },
    /// The selected prediction found the update list full.
    MpDropped { cycle: u64, id: u64, pc: Pc },
    MpResolved {
        cycle: u64,
        id: u64,
        branch_pc: Pc,
        merge_pc: Pc,
        verdict: Verdict,
        selected: bool,
        predicted_distance: u32,
        /// Distance after the update.
        distance: u32,
        age: u32,
    },
    Retired {
        cycle: u64,
        id: u64,
        seq: u64,
        pc: Pc,
        #[serde(default, skip_serializing_if = "is_false")]
        end: bool,
    },
}

pub fn write_events<W: Write>(events: &[Event], mut sink: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut sink, e)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

pub fn events_to_string(events: &[Event]) -> String {
    let mut buf = Vec::new();
    write_events(events, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn read_events<R: BufRead>(source: R) -> Result<Vec<Event>, ModelError> {
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| ModelError::Parse {
            line: n + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_roundtrip() {
        let evs = vec![
            Event::Retired {
                cycle: 3,
                id: 1,
                seq: 0,
                pc: Pc(4),
                end: false,
            },
            Event::MpResolved {
                cycle: 9,
                id: 2,
                branch_pc: Pc(2),
                merge_pc: Pc(9),
                verdict: Verdict::UnexpectedWrite,
                selected: true,
                predicted_distance: 4,
                distance: 4,
                age: 2,
            },
        ];
        let text = events_to_string(&evs);
        assert!(!text.contains("\"end\""));
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_events(text.as_bytes()).unwrap(), evs);
        assert!(read_events("{\"ev\":\"nope\"}\n".as_bytes()).is_err());
    }
}
