//! Scoring of a simulator event log against the oracle, the soundness audit,
//! and report formatting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::merge::Verdict;
use crate::model::{ModelError, Pc, ProgramModel};
use crate::oracle::{merge_in, reach_from, NoMerge, OracleMerge, Reach};
use crate::pipeline::Event;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub pc: Pc,
    pub instances: u64,
    pub mispredicts: u64,
    pub mp_gated: u64,
    pub mp_resolved: u64,
    pub mp_correct: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub coverage: f64,
    pub mean_predicted_distance: f64,
    pub mean_true_distance: f64,
    pub mean_overestimate: f64,
    pub old_mpki: f64,
    pub new_mpki: f64,
    pub mpki_improvement: f64,
    /// Selected predictions that resolved, loop-back instances excluded.
    pub resolved: u64,
    pub correct: u64,
    /// MP-selected branches the table had nothing for.
    pub mp_misses: u64,
    /// Resolutions and misses on instances whose oracle result is a loop-back.
    pub excluded_loop: u64,
    pub retired: u64,
    pub per_branch: Vec<BranchRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub id: u64,
    pub branch_pc: Pc,
    pub merge_pc: Pc,
    pub reason: String,
}

/// Per-instance view of a log.
struct Replay<'a> {
    model: &'a ProgramModel,
    max_dist: u32,
    pcs: Vec<Pc>,
    first_seq: u64,
    seq_of: HashMap<u64, u64>,
    resolved: HashMap<u64, (Pc, bool, bool)>,
    reach: HashMap<(Pc, bool), Reach>,
}

impl<'a> Replay<'a> {
    fn new(model: &'a ProgramModel, events: &[Event], max_dist: u32) -> Self {
        let mut pcs = Vec::new();
        let mut first_seq = None;
        let mut seq_of = HashMap::new();
        let mut resolved = HashMap::new();
        for e in events {
            match e {
                Event::Retired { id, seq, pc, .. } => {
                    first_seq.get_or_insert(*seq);
                    pcs.push(*pc);
                    seq_of.insert(*id, *seq);
                }
                Event::BranchResolved {
                    id,
                    pc,
                    actual,
                    mispredicted,
                    ..
                } => {
                    resolved.insert(*id, (*pc, *actual, *mispredicted));
                }
                _ => {}
            }
        }
        Replay {
            model,
            max_dist,
            pcs,
            first_seq: first_seq.unwrap_or(0),
            seq_of,
            resolved,
            reach: HashMap::new(),
        }
    }

    /// The branch retired in the log at or after `warmup` retirements.
    fn counted(&self, id: u64, warmup: u64) -> bool {
        self.seq_of.get(&id).is_some_and(|s| s - self.first_seq >= warmup)
    }

    fn continuation(&self, id: u64) -> Option<&[Pc]> {
        let seq = *self.seq_of.get(&id)?;
        let start = (seq - self.first_seq) as usize + 1;
        let end = (start + self.max_dist as usize).min(self.pcs.len());
        Some(&self.pcs[start.min(end)..end])
    }

    fn reach(&mut self, pc: Pc, alt: bool) -> Result<&Reach, ModelError> {
        if !self.reach.contains_key(&(pc, alt)) {
            let r = reach_from(self.model, pc, alt, self.max_dist)?;
            self.reach.insert((pc, alt), r);
        }
        Ok(&self.reach[&(pc, alt)])
    }

    /// Oracle result for one retired branch instance.
    fn oracle(&mut self, id: u64) -> Result<Option<Result<OracleMerge, NoMerge>>, ModelError> {
        let Some(&(pc, actual, _)) = self.resolved.get(&id) else {
            return Ok(None);
        };
        let Some(cont) = self.continuation(id).map(<[Pc]>::to_vec) else {
            return Ok(None);
        };
        let (model, max) = (self.model, self.max_dist);
        let reach = self.reach(pc, !actual)?;
        Ok(Some(merge_in(model, reach, &cont, max)))
    }
}

fn mean(sum: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scores one run. `max_dist` must match the run's merge configuration.
pub fn score(model: &ProgramModel, events: &[Event], max_dist: u32) -> Result<MetricSet, ModelError> {
    score_after(model, events, max_dist, 0)
}

/// Scores only branch instances retired after the first `warmup`
/// retirements; MPKI is per instruction retired after that point.
pub fn score_after(
    model: &ProgramModel,
    events: &[Event],
    max_dist: u32,
    warmup: u64,
) -> Result<MetricSet, ModelError> {
    let mut rp = Replay::new(model, events, max_dist);
    let mut rows: BTreeMap<Pc, BranchRow> = BTreeMap::new();
    let mut mp_handled = HashSet::new();
    let mut mp_incorrect = 0u64;
    let mut m = MetricSet {
        retired: (rp.pcs.len() as u64).saturating_sub(warmup),
        ..MetricSet::default()
    };
    let (mut pred_sum, mut true_sum, mut over_sum) = (0.0, 0.0, 0.0);
    for e in events {
        match e {
            Event::BranchPredicted { id, pc, use_mp, .. } if rp.counted(*id, warmup) => {
                let row = rows.entry(*pc).or_insert_with(|| BranchRow {
                    pc: *pc,
                    ..BranchRow::default()
                });
                row.instances += 1;
                row.mp_gated += *use_mp as u64;
                row.mispredicts += rp.resolved.get(id).is_some_and(|r| r.2) as u64;
            }
            Event::MpMiss { id, .. } if rp.counted(*id, warmup) => {
                if matches!(rp.oracle(*id)?, Some(Err(NoMerge::LoopBack))) {
                    m.excluded_loop += 1;
                } else {
                    m.mp_misses += 1;
                }
            }
            Event::MpResolved {
                id,
                branch_pc,
                verdict,
                selected: true,
                predicted_distance,
                ..
            } if rp.counted(*id, warmup) => {
                mp_handled.insert(*id);
                mp_incorrect += !verdict.is_correct() as u64;
                let row = rows.entry(*branch_pc).or_insert_with(|| BranchRow {
                    pc: *branch_pc,
                    ..BranchRow::default()
                });
                row.mp_resolved += 1;
                row.mp_correct += verdict.is_correct() as u64;
                let oracle = rp.oracle(*id)?;
                if matches!(oracle, Some(Err(NoMerge::LoopBack))) {
                    m.excluded_loop += 1;
                    continue;
                }
                m.resolved += 1;
                if *verdict == Verdict::Correct {
                    m.correct += 1;
                    if let Some(Ok(o)) = oracle {
                        pred_sum += *predicted_distance as f64;
                        true_sum += o.true_distance as f64;
                        over_sum += *predicted_distance as f64 - o.true_distance as f64;
                    }
                }
            }
            _ => {}
        }
    }
    m.accuracy = mean(m.correct as f64, m.resolved);
    m.coverage = mean(m.correct as f64, m.resolved + m.mp_misses);
    m.mean_predicted_distance = mean(pred_sum, m.correct);
    m.mean_true_distance = mean(true_sum, m.correct);
    m.mean_overestimate = mean(over_sum, m.correct);
    let mut old = 0u64;
    let mut residual = 0u64;
    for (id, (_, _, mispredicted)) in &rp.resolved {
        if *mispredicted && rp.counted(*id, warmup) {
            old += 1;
            residual += !mp_handled.contains(id) as u64;
        }
    }
    let per_k = |n: u64| if m.retired == 0 { 0.0 } else { n as f64 * 1000.0 / m.retired as f64 };
    m.old_mpki = per_k(old);
    m.new_mpki = per_k(residual + mp_incorrect);
    m.mpki_improvement = m.old_mpki - m.new_mpki;
    m.per_branch = rows.into_values().collect();
    Ok(m)
}

/// Every `Correct` resolution must name a PC the alternate direction can
/// reach, no farther along the correct path than the entry's distance.
pub fn audit(model: &ProgramModel, events: &[Event], max_dist: u32) -> Result<Vec<AuditViolation>, ModelError> {
    let mut rp = Replay::new(model, events, max_dist);
    let mut out = Vec::new();
    for e in events {
        let Event::MpResolved {
            id,
            branch_pc,
            merge_pc,
            verdict: Verdict::Correct,
            distance,
            ..
        } = e
        else {
            continue;
        };
        let violation = |reason: String| AuditViolation {
            id: *id,
            branch_pc: *branch_pc,
            merge_pc: *merge_pc,
            reason,
        };
        let Some(&(_, actual, _)) = rp.resolved.get(id) else {
            out.push(violation("branch never resolved".into()));
            continue;
        };
        let Some(cont) = rp.continuation(*id).map(<[Pc]>::to_vec) else {
            out.push(violation("branch never retired".into()));
            continue;
        };
        let reach = rp.reach(*branch_pc, !actual)?;
        if !reach.contains(*merge_pc) {
            out.push(violation("merge pc unreachable from the alternate successor".into()));
            continue;
        }
        match cont.iter().position(|p| p == merge_pc) {
            Some(i) if (i as u32) < *distance => {}
            Some(i) => out.push(violation(format!(
                "merge pc at correct-path distance {} beyond predicted {distance}",
                i + 1
            ))),
            None => out.push(violation("merge pc absent from the correct path".into())),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Human,
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Human => "txt",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human" => Ok(Format::Human),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected human, csv or json)")),
        }
    }
}

pub const CSV_HEADER: &str = "label,accuracy,coverage,mean_predicted_distance,mean_true_distance,mean_overestimate,old_mpki,new_mpki,mpki_improvement,resolved,correct,mp_misses,retired";

/// One report line: the scalar part of a `MetricSet`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub accuracy: f64,
    pub coverage: f64,
    pub mean_predicted_distance: f64,
    pub mean_true_distance: f64,
    pub mean_overestimate: f64,
    pub old_mpki: f64,
    pub new_mpki: f64,
    pub mpki_improvement: f64,
    pub resolved: u64,
    pub correct: u64,
    pub mp_misses: u64,
    pub retired: u64,
}

fn round4(x: f64) -> f64 {
    let r = (x * 10_000.0).round() / 10_000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

impl ReportRow {
    pub fn new(label: impl Into<String>, m: &MetricSet) -> Self {
        ReportRow {
            label: label.into(),
            accuracy: round4(m.accuracy),
            coverage: round4(m.coverage),
            mean_predicted_distance: round4(m.mean_predicted_distance),
            mean_true_distance: round4(m.mean_true_distance),
            mean_overestimate: round4(m.mean_overestimate),
            old_mpki: round4(m.old_mpki),
            new_mpki: round4(m.new_mpki),
            mpki_improvement: round4(m.mpki_improvement),
            resolved: m.resolved,
            correct: m.correct,
            mp_misses: m.mp_misses,
            retired: m.retired,
        }
    }

    fn rates(&self) -> [f64; 8] {
        [
            self.accuracy,
            self.coverage,
            self.mean_predicted_distance,
            self.mean_true_distance,
            self.mean_overestimate,
            self.old_mpki,
            self.new_mpki,
            self.mpki_improvement,
        ]
    }

    fn counts(&self) -> [u64; 4] {
        [self.resolved, self.correct, self.mp_misses, self.retired]
    }
}

/// Column-wise arithmetic mean, labelled `amean`. Counts round to the
/// nearest integer.
pub fn amean(rows: &[ReportRow]) -> Option<ReportRow> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let r: Vec<f64> = (0..8).map(|i| round4(rows.iter().map(|r| r.rates()[i]).sum::<f64>() / n)).collect();
    let c: Vec<u64> = (0..4)
        .map(|i| (rows.iter().map(|r| r.counts()[i] as f64).sum::<f64>() / n).round() as u64)
        .collect();
    Some(ReportRow {
        label: "amean".into(),
        accuracy: r[0],
        coverage: r[1],
        mean_predicted_distance: r[2],
        mean_true_distance: r[3],
        mean_overestimate: r[4],
        old_mpki: r[5],
        new_mpki: r[6],
        mpki_improvement: r[7],
        resolved: c[0],
        correct: c[1],
        mp_misses: c[2],
        retired: c[3],
    })
}

fn cells(r: &ReportRow) -> Vec<String> {
    let mut v = vec![r.label.clone()];
    v.extend(r.rates().iter().map(|x| format!("{x:.4}")));
    v.extend(r.counts().iter().map(|x| x.to_string()));
    v
}

/// Renders `rows`, adding an `amean` row when there is more than one.
pub fn render(rows: &[ReportRow], format: Format) -> String {
    let mut all = rows.to_vec();
    if rows.len() > 1 {
        all.extend(amean(rows));
    }
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&all).expect("rows serialize");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for r in &all {
                s.push_str(&cells(r).join(","));
                s.push('\n');
            }
            s
        }
        Format::Human => {
            let header: Vec<String> = CSV_HEADER.split(',').map(str::to_string).collect();
            let body: Vec<Vec<String>> = all.iter().map(cells).collect();
            let widths: Vec<usize> = (0..header.len())
                .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
                .collect();
            let mut s = String::new();
            for line in std::iter::once(&header).chain(body.iter()) {
                let mut out = String::new();
                for (i, cell) in line.iter().enumerate() {
                    if i == 0 {
                        let _ = write!(out, "{cell:<w$}", w = widths[i]);
                    } else {
                        let _ = write!(out, "  {cell:>w$}", w = widths[i]);
                    }
                }
                s.push_str(out.trim_end());
                s.push('\n');
            }
            s
        }
    }
}

pub fn load_report_json(text: &str) -> Result<Vec<ReportRow>, serde_json::Error> {
    serde_json::from_str(text)
}
