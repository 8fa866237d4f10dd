//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use reconverge::bpred::{GlobalHistory, JrsConfig, JrsTable, TageConfig, TageLite, JRS_COUNTER_MAX};
use reconverge::confcost::{classify_confidence, decide, ConfCostConfig, Confidence, LatencyLevel, LatencyTable};
use reconverge::merge::{
    InstallOutcome, MergeConfig, MergeEntry, MergePredictor, PredictorTable, ProbeResult, SlotRef, UpdateList,
    UpdatePolicy, Verdict, WpbContext, WpbStore, CTR_MAX,
};
use reconverge::metrics::{score, score_after, MetricSet};
use reconverge::model::{
    DynInstr, InstrClass, InstrSpec, LatencyClass, ModelBuilder, OutcomeSource, Pc, ProgramModel, Terminator,
};
use reconverge::oracle::{oracle_merge, reach_from, static_postdominator};
use reconverge::pipeline::{simulate, Event, Policy, RunConfig};
use reconverge::workload::{generate, GenParams, Shape};
use reconverge::RegSet;
use reconverge_cli::{cmd_gen, cmd_run, GenArgs, RunArgs};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run_config(policy: Policy, seed: u64, budget: u64) -> RunConfig {
    RunConfig {
        policy,
        seed,
        budget,
        ..RunConfig::default()
    }
}

fn sim(model: &ProgramModel, policy: Policy, seed: u64, budget: u64) -> Vec<Event> {
    simulate(model, &run_config(policy, seed, budget)).expect("simulation runs").1
}

fn generated(shape: Shape, seed: u64, bias: &[f64]) -> ProgramModel {
    let mut p = GenParams::new(shape);
    p.seed = seed;
    p.branch_bias = bias.to_vec();
    generate(&p).expect("valid parameters").model
}

/// Hammock, nested diamond, loop and 200 random reducible graphs.
fn corpus() -> Vec<(String, ProgramModel)> {
    let mut out = vec![
        ("hammock".to_string(), generated(Shape::Hammock, 0, &[0.5])),
        ("nested".to_string(), generated(Shape::NestedDiamond, 0, &[])),
        ("loop".to_string(), generated(Shape::LoopWithExit, 0, &[])),
    ];
    out.extend((0..200).map(|s| (format!("random.s{s}"), generated(Shape::RandomReducible, s, &[]))));
    out
}

// ---------------------------------------------------------------- 1

fn decision_table() -> Outcome {
    use Confidence::*;
    use LatencyLevel::{High as LatHigh, Low as LatLow};
    let table = [
        (Low, LatLow, true),
        (Low, LatHigh, true),
        (Med, LatLow, false),
        (Med, LatHigh, true),
        (High, LatLow, false),
        (High, LatHigh, false),
    ];
    let mut bad: Vec<String> = table
        .iter()
        .filter(|(c, l, want)| decide(*c, *l) != *want)
        .map(|(c, l, _)| format!("{c:?}/{l:?}"))
        .collect();
    for (weak, jrs_high, want) in [
        (true, true, Low),
        (true, false, Low),
        (false, true, High),
        (false, false, Med),
    ] {
        if classify_confidence(weak, jrs_high) != want {
            bad.push(format!("classify(weak={weak}, jrs_high={jrs_high})"));
        }
    }
    outcome(bad.is_empty(), format!("6 cells, {} mismatches {:?}", bad.len(), bad))
}

// ---------------------------------------------------------------- 2

fn ins(pc: u32, dests: &[u8]) -> DynInstr {
    DynInstr {
        pc: Pc(pc),
        class: InstrClass::Alu,
        dests: dests.iter().copied().collect(),
        srcs: RegSet::EMPTY,
        latency: LatencyClass::Fixed(1),
        seq_no: 0,
        branch: None,
        ends_program: false,
    }
}

fn entry(merge: u32, distance: u32, ctr: u8) -> MergeEntry {
    MergeEntry {
        branch_pc: Pc(1),
        merge_pc: Pc(merge),
        distance,
        indep: RegSet::EMPTY,
        ctr,
        lru_stamp: 0,
    }
}

fn regs(r: &[u8]) -> RegSet {
    r.iter().copied().collect()
}

/// Update list holding one activated prediction for branch pc 1.
fn activated(policy: UpdatePolicy, e: MergeEntry) -> UpdateList {
    let mut ul = UpdateList::new(8, 100, policy);
    assert!(ul.insert(7, SlotRef(0), e, true));
    assert!(ul.on_retire(&ins(1, &[]), 7).is_empty());
    ul
}

fn resolve(ul: &mut UpdateList, stream: &[DynInstr]) -> Vec<(Verdict, u32, u8, u32)> {
    let mut out = Vec::new();
    for (i, s) in stream.iter().enumerate() {
        for r in ul.on_retire(s, 100 + i as u64) {
            out.push((r.verdict, r.age, r.entry.ctr, r.entry.distance));
        }
    }
    out
}

fn mechanism_rules() -> Outcome {
    let mut bad = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            bad.push(what.to_string());
        }
    };
    let ctx = || WpbContext::new(WpbStore::new(128, 4), 100);

    // Fill: end of tail, maximum distance, branch recurrence.
    let mut c = ctx();
    check(c.fill(Pc(99), &[ins(10, &[1]), ins(11, &[2])]) == 2, "fill stops at tail end");
    let a = c.store.lookup(Pc(10));
    let b = c.store.lookup(Pc(11));
    check(
        a.map(|s| (s.distance, s.written)) == Some((1, regs(&[1])))
            && b.map(|s| (s.distance, s.written)) == Some((2, regs(&[1, 2]))),
        "fill accumulates written registers",
    );
    let long: Vec<DynInstr> = (0..150).map(|i| ins(1000 + i, &[])).collect();
    check(ctx().fill(Pc(99), &long) == 100, "fill stops at maximum distance");
    let mut looped: Vec<DynInstr> = (0..10).map(|i| ins(200 + i, &[])).collect();
    looped[6] = ins(99, &[]);
    check(ctx().fill(Pc(99), &looped) == 6, "fill stops at branch recurrence");

    // Probe: hit, maximum distance, branch recurrence.
    let mut c = ctx();
    c.fill(Pc(99), &[ins(20, &[1]), ins(21, &[]), ins(50, &[])]);
    let mut hit = None;
    for i in [ins(30, &[2]), ins(31, &[3]), ins(50, &[4])] {
        if let ProbeResult::Hit(d) = c.probe(&i) {
            hit = Some(d);
        }
    }
    check(
        hit.as_ref().map(|d| (d.merge_pc, d.cp_distance, d.distance, d.written))
            == Some((Pc(50), 3, 3, regs(&[1, 2, 3]))),
        "probe hit at cp distance 3 with gap registers {1,2,3}",
    );
    let mut c = ctx();
    let tail: Vec<DynInstr> = (0..5).map(|i| ins(if i == 4 { 50 } else { 60 + i }, &[])).collect();
    c.fill(Pc(99), &tail);
    c.probe(&ins(70, &[]));
    check(
        matches!(c.probe(&ins(50, &[])), ProbeResult::Hit(d) if d.distance == 5 && d.wp_distance == 5 && d.cp_distance == 2),
        "distance is max(wp 5, cp 2)",
    );
    let mut c = ctx();
    c.fill(Pc(99), &[ins(50, &[])]);
    c.probe(&ins(70, &[]));
    check(c.probe(&ins(99, &[])) == ProbeResult::Exhausted, "probe exhausts on branch recurrence");
    check(c.probe(&ins(50, &[])) == ProbeResult::Exhausted, "exhausted context stays invalid");
    let mut c = WpbContext::new(WpbStore::new(128, 4), 3);
    c.fill(Pc(99), &[ins(50, &[])]);
    let r: Vec<ProbeResult> = (0..4).map(|i| c.probe(&ins(70 + i, &[]))).collect();
    check(
        r[..3].iter().all(|p| *p == ProbeResult::Continue) && r[3] == ProbeResult::Exhausted,
        "probe exhausts past maximum distance",
    );

    // Selection and eviction.
    let pick = |es: &[MergeEntry]| {
        let m: Vec<(SlotRef, MergeEntry)> = es.iter().enumerate().map(|(i, e)| (SlotRef(i), *e)).collect();
        PredictorTable::select(&m).map(|i| m[i].1.merge_pc)
    };
    check(pick(&[entry(4, 10, 5), entry(6, 20, 3)]) == Some(Pc(4)), "select highest counter");
    check(pick(&[entry(6, 20, 4), entry(4, 10, 4)]) == Some(Pc(4)), "select tie goes to smaller distance");
    check(pick(&[]).is_none(), "no match predicts nothing");
    let evict = |es: &[MergeEntry]| {
        let mut t = PredictorTable::new(4, 4);
        for e in es {
            t.install(*e);
        }
        match t.install(entry(90, 1, 4)) {
            InstallOutcome::Evicted { victim, .. } => Some(victim.merge_pc),
            _ => None,
        }
    };
    let ctrs = [entry(10, 5, 7), entry(11, 5, 2), entry(12, 5, 5), entry(13, 5, 6)];
    check(evict(&ctrs) == Some(Pc(11)), "evict smallest counter");
    let dists = [entry(10, 10, 4), entry(11, 80, 4), entry(12, 30, 4), entry(13, 50, 4)];
    check(evict(&dists) == Some(Pc(11)), "evict tie goes to largest distance");
    let mut t = PredictorTable::new(4, 4);
    t.install(entry(10, 5, 4));
    check(matches!(t.install(entry(11, 5, 4)), InstallOutcome::Placed(_)), "free way places without eviction");

    // Update list insertion.
    let mut ul = UpdateList::new(3, 100, UpdatePolicy::Plain);
    check(ul.insert(1, SlotRef(0), entry(10, 5, 4), true) && ul.insert(1, SlotRef(1), entry(11, 5, 4), false), "two matches fit");
    check(ul.len() == 2, "two entries tracked");
    check(ul.insert(2, SlotRef(0), entry(10, 5, 4), true), "same branch again gets its own entry");
    check(!ul.insert(3, SlotRef(0), entry(10, 5, 4), true) && ul.drops == 1, "full list drops and counts");

    // Verdicts.
    let indep: RegSet = (3..16).collect();
    let mut e = entry(50, 5, 4);
    e.indep = indep;
    let r = resolve(&mut activated(UpdatePolicy::Plain, e), &[ins(10, &[1]), ins(11, &[2]), ins(50, &[])]);
    check(r == [(Verdict::Correct, 3, 5, 5)], "correct at age 3, counter 4 to 5");
    let r = resolve(&mut activated(UpdatePolicy::Plain, entry(50, 2, 4)), &[ins(10, &[]), ins(11, &[]), ins(12, &[])]);
    check(r == [(Verdict::WrongDistance, 3, 3, 2)], "wrong distance at age 3, counter down");
    let r = resolve(&mut activated(UpdatePolicy::Plain, e), &[ins(10, &[1]), ins(11, &[5])]);
    check(r.first().map(|x| x.0) == Some(Verdict::UnexpectedWrite), "write to an independent register");
    let r = resolve(&mut activated(UpdatePolicy::Plain, entry(50, 9, 4)), &[ins(10, &[]), ins(1, &[])]);
    check(r == [(Verdict::LoopBack, 2, 3, 9)], "branch recurrence is a loop back");
    let stream: Vec<DynInstr> = (0..8).map(|i| ins(10 + i, &[])).chain([ins(50, &[])]).collect();
    let r = resolve(&mut activated(UpdatePolicy::UpdateMax, entry(50, 5, 4)), &stream);
    check(r == [(Verdict::Correct, 9, 5, 9)], "update max grows distance to age 9");
    let r = resolve(&mut activated(UpdatePolicy::Plain, entry(50, 5, 4)), &stream);
    check(r == [(Verdict::WrongDistance, 6, 3, 5)], "plain policy gives up past the distance");
    let r = resolve(&mut activated(UpdatePolicy::Plain, entry(50, 1, 0)), &[ins(10, &[]), ins(11, &[])]);
    check(r == [(Verdict::WrongDistance, 2, 0, 1)], "counter saturates at zero");

    // Write-back.
    let mut t = PredictorTable::new(4, 4);
    let InstallOutcome::Placed(slot) = t.install(entry(10, 5, 4)) else {
        unreachable!()
    };
    t.writeback(slot, entry(10, 5, 5));
    check(t.get(slot).map(|e| e.ctr) == Some(5), "correct resolution raises the table counter");
    for m in 20..24 {
        t.install(entry(m, 5, 6));
    }
    let out = t.writeback(slot, entry(10, 5, 5));
    check(
        !matches!(out, InstallOutcome::Refreshed(_)) && t.entries().any(|e| e.merge_pc == Pc(10)),
        "evicted slot reinstalls through the eviction policy",
    );
    check(CTR_MAX == 7, "three-bit counters");

    let n = bad.len();
    outcome(n == 0, format!("{n} rule violations {bad:?}"))
}

// ---------------------------------------------------------------- 3

struct Soundness {
    correct: usize,
    contradicted: Vec<String>,
}

/// Checks every correct resolution against `oracle_merge` and `reach_from`.
fn soundness(model: &ProgramModel, events: &[Event], max_dist: u32) -> Soundness {
    let mut pcs = Vec::new();
    let mut pos = HashMap::new();
    let mut actual = HashMap::new();
    let mut indep = HashMap::new();
    for e in events {
        match e {
            Event::Retired { id, pc, .. } => {
                pos.insert(*id, pcs.len());
                pcs.push(*pc);
            }
            Event::BranchResolved { id, actual: a, .. } => {
                actual.insert(*id, *a);
            }
            Event::MpPredicted { id, indep: i, .. } => {
                indep.insert(*id, *i);
            }
            _ => {}
        }
    }
    let mut reach = HashMap::new();
    let mut s = Soundness {
        correct: 0,
        contradicted: Vec::new(),
    };
    for e in events {
        let Event::MpResolved {
            id,
            branch_pc,
            merge_pc,
            verdict: Verdict::Correct,
            selected,
            distance,
            ..
        } = e
        else {
            continue;
        };
        s.correct += 1;
        let mut fail = |why: &str| s.contradicted.push(format!("id {id} pc {}: {why}", branch_pc.0));
        let (Some(&p), Some(&dir)) = (pos.get(id), actual.get(id)) else {
            fail("branch never retired");
            continue;
        };
        let end = (p + 1 + max_dist as usize).min(pcs.len());
        let cont = &pcs[p + 1..end];
        let oracle = oracle_merge(model, *branch_pc, dir, cont, max_dist).expect("branch pc");
        let r = reach
            .entry((*branch_pc, dir))
            .or_insert_with(|| reach_from(model, *branch_pc, !dir, max_dist).expect("branch pc"));
        let at = cont.iter().position(|c| c == merge_pc).map(|i| i as u32 + 1);
        match (oracle, at) {
            (Err(no), _) => fail(&format!("oracle finds no merge ({no:?})")),
            (_, None) => fail("merge pc absent from the correct path"),
            (Ok(o), Some(at)) => {
                if !r.contains(*merge_pc) {
                    fail("merge pc unreachable from the other direction");
                } else if at > *distance {
                    fail("merge beyond the predicted distance");
                } else if at < o.true_distance {
                    fail("merge before the oracle's first merge");
                } else if *selected {
                    let written = cont[..at as usize - 1]
                        .iter()
                        .filter_map(|pc| model.instr_at(*pc))
                        .fold(RegSet::EMPTY, |acc, t| acc | t.dests);
                    if indep.get(id).is_some_and(|i| written.intersects(*i)) {
                        fail("independent register written before the merge");
                    }
                }
            }
        }
    }
    s
}

fn oracle_soundness() -> Outcome {
    let corpus = corpus();
    let max = MergeConfig::default().max_distance;
    let jobs: Vec<(usize, Policy)> = (0..corpus.len())
        .flat_map(|i| [Policy::Mpp, Policy::MppMax].map(|p| (i, p)))
        .collect();
    let results: Vec<(String, Soundness)> = jobs
        .par_iter()
        .map(|(i, p)| {
            let (name, model) = &corpus[*i];
            let ev = sim(model, *p, 1, 100_000);
            (format!("{name}/{p}"), soundness(model, &ev, max))
        })
        .collect();
    let correct: usize = results.iter().map(|(_, s)| s.correct).sum();
    let bad: Vec<String> = results
        .iter()
        .flat_map(|(n, s)| s.contradicted.iter().map(move |c| format!("{n}: {c}")))
        .collect();
    outcome(
        bad.is_empty() && correct > 0,
        format!(
            "{} runs, {correct} correct resolutions, {} contradicted {:?}",
            results.len(),
            bad.len(),
            bad.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 4

fn fig1() -> Outcome {
    let model = generated(Shape::NestedDiamond, 0, &[0.5, 0.0, 0.0]);
    let a = model.entry();
    let b = model.successor(a, true).expect("branch");
    let d = model.successor(b, false).expect("branch");
    let f = model.successors(d)[0];
    let pc_of = |blk: usize| model.blocks()[blk].first_pc().expect("non-empty");
    let (_, a_pc, _) = model
        .branch_sites()
        .into_iter()
        .find(|(_, _, blk)| *blk == a)
        .expect("A branches");
    let pd = static_postdominator(&model, a_pc);

    let ev = sim(&model, Policy::Mpp, 1, 100_000);
    let mut seen = 0u64;
    let mut late = std::collections::HashSet::new();
    let (mut preds, mut to_d) = (0u64, 0u64);
    for e in &ev {
        match e {
            Event::BranchPredicted { id, pc, .. } if *pc == a_pc => {
                seen += 1;
                if seen > 1000 {
                    late.insert(*id);
                }
            }
            Event::MpPredicted { id, merge_pc, .. } if late.contains(id) => {
                preds += 1;
                to_d += (*merge_pc == pc_of(d)) as u64;
            }
            _ => {}
        }
    }
    let (mut resolved, mut correct) = (0u64, 0u64);
    for e in &ev {
        if let Event::MpResolved {
            id,
            verdict,
            selected: true,
            ..
        } = e
        {
            if late.contains(id) {
                resolved += 1;
                correct += verdict.is_correct() as u64;
            }
        }
    }
    let share = to_d as f64 / preds.max(1) as f64;
    let acc = correct as f64 / resolved.max(1) as f64;
    outcome(
        pd == Some(pc_of(f)) && preds > 0 && share >= 0.99 && resolved > 0 && acc >= 0.99,
        format!(
            "postdominator {:?} (F = {:?}), {preds} predictions after 1000 instances, {:.4} name D, accuracy {acc:.4}",
            pd.map(|p| p.0),
            pc_of(f).0,
            share
        ),
    )
}

// ---------------------------------------------------------------- 5

fn hard_branch() -> Outcome {
    const BUDGET: u64 = 100_000;
    const WARMUP: u64 = 20_000;
    let max = MergeConfig::default().max_distance;
    let per_seed: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let model = generated(Shape::Hammock, s, &[0.5]);
            let bp = score_after(&model, &sim(&model, Policy::BpOnly, s, BUDGET), max, WARMUP).expect("scores");
            let mp = score_after(&model, &sim(&model, Policy::Mpp, s, BUDGET), max, WARMUP).expect("scores");
            let reduction = if bp.old_mpki > 0.0 {
                (bp.old_mpki - mp.new_mpki) / bp.old_mpki
            } else {
                0.0
            };
            (mp.coverage, reduction)
        })
        .collect();
    let good = per_seed.iter().filter(|(c, r)| *c >= 0.95 && *r >= 0.40).count();
    let cov_ok = per_seed.iter().filter(|(c, _)| *c >= 0.95).count();
    let red_ok = per_seed.iter().filter(|(_, r)| *r >= 0.40).count();
    let n = per_seed.len() as f64;
    let mean_cov = per_seed.iter().map(|x| x.0).sum::<f64>() / n;
    let mean_red = per_seed.iter().map(|x| x.1).sum::<f64>() / n;
    outcome(
        good >= 95,
        format!(
            "{good}/100 seeds pass (coverage >= 0.95: {cov_ok}, MPKI reduction >= 40%: {red_ok}); \
             mean coverage {mean_cov:.4}, mean reduction {:.1}%",
            mean_red * 100.0
        ),
    )
}

// ---------------------------------------------------------------- 6

fn policy_ordering() -> Outcome {
    let corpus = corpus();
    let max = MergeConfig::default().max_distance;
    let pairs: Vec<(String, MetricSet, MetricSet)> = corpus
        .par_iter()
        .map(|(name, model)| {
            let a = score(model, &sim(model, Policy::Mpp, 1, 100_000), max).expect("scores");
            let b = score(model, &sim(model, Policy::MppMax, 1, 100_000), max).expect("scores");
            (name.clone(), a, b)
        })
        .collect();
    let compared: Vec<&(String, MetricSet, MetricSet)> =
        pairs.iter().filter(|(_, a, b)| a.resolved > 0 && b.resolved > 0).collect();
    let acc_bad: Vec<String> = compared
        .iter()
        .filter(|(_, a, b)| b.accuracy < a.accuracy)
        .map(|(n, a, b)| format!("{n} {:.4}<{:.4}", b.accuracy, a.accuracy))
        .collect();
    let over_bad: Vec<String> = compared
        .iter()
        .filter(|(_, a, b)| b.mean_overestimate < a.mean_overestimate)
        .map(|(n, a, b)| format!("{n} {:.4}<{:.4}", b.mean_overestimate, a.mean_overestimate))
        .collect();
    outcome(
        acc_bad.is_empty() && over_bad.is_empty() && !compared.is_empty(),
        format!(
            "{} workloads compared ({} skipped without resolutions); accuracy violations {} {:?}; \
             overestimate violations {} {:?}",
            compared.len(),
            pairs.len() - compared.len(),
            acc_bad.len(),
            acc_bad,
            over_bad.len(),
            over_bad
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Random hammock, then an always-taken branch over a detour, then a
/// biased hammock whose branch waits on a load that always misses.
fn mixed_workload(seed: u64) -> ProgramModel {
    let mut mb = ModelBuilder::new(16);
    let b0 = mb.block(vec![InstrSpec::alu(&[1], &[0]), InstrSpec::branch(&[1])], Terminator::Halt);
    let b1 = mb.block(vec![InstrSpec::alu(&[2], &[0]), InstrSpec::alu(&[2], &[2])], Terminator::Halt);
    let b2 = mb.block(vec![InstrSpec::alu(&[3], &[0]), InstrSpec::alu(&[3], &[3])], Terminator::Fallthrough);
    let b3 = mb.block(vec![InstrSpec::alu(&[4], &[0]), InstrSpec::branch(&[4])], Terminator::Halt);
    let b4 = mb.block(
        vec![
            InstrSpec::load(5, &[0], LatencyClass::LoadMissProb(1.0, 2, 0)),
            InstrSpec::alu(&[6], &[5]),
            InstrSpec::branch(&[6]),
        ],
        Terminator::Halt,
    );
    let b5 = mb.block(vec![InstrSpec::alu(&[7], &[0])], Terminator::Halt);
    let b6 = mb.block(vec![InstrSpec::alu(&[8], &[0]), InstrSpec::alu(&[8], &[8])], Terminator::Halt);
    let b7 = mb.block(vec![InstrSpec::alu(&[9], &[0]), InstrSpec::alu(&[9], &[9])], Terminator::Fallthrough);
    let b8 = mb.block(vec![InstrSpec::alu(&[10], &[0])], Terminator::Halt);
    let cond = |taken, not_taken, site| Terminator::CondBranch { taken, not_taken, site };
    mb.set_term(b0, cond(b1, b2, 0));
    mb.set_term(b1, Terminator::Jump { target: b3 });
    mb.set_term(b3, cond(b4, b5, 1));
    mb.set_term(b5, Terminator::Jump { target: b4 });
    mb.set_term(b4, cond(b6, b7, 2));
    mb.set_term(b6, Terminator::Jump { target: b8 });
    mb.source(0, OutcomeSource::Bernoulli { bias: 0.5, seed });
    mb.source(1, OutcomeSource::AlwaysTaken);
    mb.source(2, OutcomeSource::Bernoulli { bias: 0.9, seed: seed ^ 0x5a5a });
    mb.build()
}

fn selectivity() -> Outcome {
    let max = MergeConfig::default().max_distance;
    let fractions: Vec<[f64; 3]> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let model = mixed_workload(s);
            let m = score_after(&model, &sim(&model, Policy::Mpp, s, 100_000), max, 20_000).expect("scores");
            let mut f = [0.0; 3];
            for (site, pc, _) in model.branch_sites() {
                let row = m.per_branch.iter().find(|r| r.pc == pc).expect("site executed");
                f[site as usize] = row.mp_gated as f64 / row.instances as f64;
            }
            f
        })
        .collect();
    let range = |k: usize| {
        let v = fractions.iter().map(|f| f[k]);
        (v.clone().fold(f64::MAX, f64::min), v.fold(f64::MIN, f64::max))
    };
    let (r, t, l) = (range(0), range(1), range(2));
    let pass = r.0 > 0.80 && t.1 < 0.05 && l.0 > 0.50;
    outcome(
        pass,
        format!(
            "MP-selected fraction over 10 seeds: random [{:.3}, {:.3}] (need > 0.80), \
             always-taken [{:.3}, {:.3}] (need < 0.05), high-latency [{:.3}, {:.3}] (need > 0.50)",
            r.0, r.1, t.0, t.1, l.0, l.1
        ),
    )
}

// ---------------------------------------------------------------- 8

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).expect("readable") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").display().to_string();
                out.insert(rel, std::fs::read(&p).expect("readable"));
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let t = tempfile::tempdir().expect("temp dir");
    let gen = |shape: &str, out: &str| {
        cmd_gen(&GenArgs {
            shape: Some(shape.into()),
            config: None,
            seed: Some(3),
            out: Some(t.path().join(out)),
            branch_bias: None,
            block_size: None,
            reg_pressure: None,
            arch_reg_count: None,
            trip_count: None,
        })
        .expect("generates")
    };
    gen("hammock", "ham");
    gen("random", "rnd");
    let run = |out: &str| {
        cmd_run(&RunArgs {
            models: vec![t.path().join("ham.cfg"), t.path().join("rnd.cfg")],
            seed: Some("1,2".into()),
            policy: Some("all".into()),
            budget: Some(50_000),
            format: Some("csv".into()),
            out: Some(t.path().join(out)),
            ..RunArgs::default()
        })
        .expect("runs")
    };
    let (s1, s2) = (run("a"), run("b"));
    let (a, b) = (read_tree(&t.path().join("a")), read_tree(&t.path().join("b")));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let events = a.keys().filter(|k| k.ends_with("events.ndjson")).count();
    outcome(
        s1 == s2 && a.len() == b.len() && differing.is_empty() && events == 12,
        format!(
            "{} files per output tree, {events} event logs, {} differ {:?}",
            a.len(),
            differing.len(),
            differing
        ),
    )
}

// ---------------------------------------------------------------- 9

const EVENTS: usize = 1_000_000;
const REGS: u8 = 16;

fn random_instr(rng: &mut ChaCha8Rng) -> DynInstr {
    let mut i = ins(rng.gen_range(0..64), &[]);
    if rng.gen_bool(0.6) {
        i.dests = RegSet::single(rng.gen_range(0..REGS));
    }
    i.ends_program = rng.gen_bool(0.01);
    i
}

fn merge_in_range(mp: &MergePredictor, max: u32, cap: usize) -> Result<(), String> {
    let all = RegSet::all(REGS as usize);
    for e in mp.table().entries() {
        if e.ctr > CTR_MAX || !(1..=max).contains(&e.distance) || !e.indep.is_subset(all) {
            return Err(format!("table entry {e:?}"));
        }
    }
    if mp.update_list().len() > cap {
        return Err("update list over capacity".into());
    }
    for e in mp.update_list().entries() {
        if e.age > max + 1 || e.entry.ctr > CTR_MAX || e.entry.distance > max {
            return Err(format!("update list entry {e:?}"));
        }
    }
    Ok(())
}

fn merge_events(policy: UpdatePolicy, seed: u64) -> Result<(), String> {
    let cfg = MergeConfig {
        policy,
        wpb_contexts: 2,
        max_distance: 40,
        ..MergeConfig::default()
    };
    let (max, cap) = (cfg.max_distance, cfg.update_list_capacity);
    let mut mp = MergePredictor::new(cfg, REGS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in 1..=EVENTS as u64 {
        match rng.gen_range(0..100) {
            0..=4 => {
                let n = rng.gen_range(0..120);
                let tail: Vec<DynInstr> = (0..n).map(|_| random_instr(&mut rng)).collect();
                mp.on_mispredict(Pc(rng.gen_range(0..64)), id, &tail);
            }
            5..=19 => {
                mp.predict(Pc(rng.gen_range(0..64)), id);
            }
            20..=21 => mp.on_squash(id.saturating_sub(rng.gen_range(0..8))),
            _ => {
                let rid = id.saturating_sub(rng.gen_range(0..4));
                let i = random_instr(&mut rng);
                mp.on_retire(&i, rid);
            }
        }
        if id % 1009 == 0 {
            merge_in_range(&mp, max, cap)?;
        }
    }
    merge_in_range(&mp, max, cap)?;
    if mp.stats.detections == 0 || mp.stats.resolutions == 0 {
        return Err("merge predictor never exercised".into());
    }
    Ok(())
}

fn predictor_events() -> Result<(), String> {
    let mut tage = TageLite::new(TageConfig::default());
    let mut jrs = JrsTable::new(JrsConfig::default());
    let mut hist = GlobalHistory::default();
    let mut lat = LatencyTable::new(ConfCostConfig::default());
    let mut hi = [0u64; 256];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad_counter = None;
    for step in 0..EVENTS {
        let pc = Pc(rng.gen_range(0..4096));
        let taken = rng.gen_bool(if pc.0.is_multiple_of(3) { 0.95 } else { 0.5 });
        let p = tage.predict(pc, hist);
        if p.is_weak != matches!(p.provider_ctr, -1 | 0) {
            return Err(format!("weak flag disagrees with counter {}", p.provider_ctr));
        }
        jrs.update(pc, hist, p.dir == taken);
        tage.update(&p, taken);
        hist.push(taken);
        // Stay below the latency table size so no two pcs share a slot.
        let lpc = Pc(pc.0 % 256);
        let cycles = rng.gen_range(0..1000);
        hi[lpc.0 as usize] = hi[lpc.0 as usize].max(cycles);
        lat.record_latency(lpc, cycles);
        let avg = lat.average(lpc).unwrap_or(-1.0);
        if avg < 0.0 || avg > hi[lpc.0 as usize] as f64 + 1.0 / 256.0 {
            return Err(format!("latency average {avg} outside [0, {}]", hi[lpc.0 as usize]));
        }
        if step % 100_003 == 0 || step + 1 == EVENTS {
            tage.for_each_counter(|c, u| {
                if !(-4..=3).contains(&c) || u > 3 {
                    bad_counter = Some((c, u));
                }
            });
            if let Some((c, u)) = bad_counter {
                return Err(format!("tage counter {c} useful {u}"));
            }
        }
    }
    if jrs.counters().iter().any(|c| *c > JRS_COUNTER_MAX) {
        return Err("jrs counter above maximum".into());
    }
    Ok(())
}

fn regset_events() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..EVENTS {
        let n = rng.gen_range(1..=64usize);
        let a = RegSet::from_bits(rng.gen()).intersection(RegSet::all(n));
        let c = a.complement(n);
        if !c.is_subset(RegSet::all(n)) || c.intersects(a) || (a | c).len() != n || a.iter().any(|r| r as usize >= n) {
            return Err(format!("register set width {n}"));
        }
    }
    Ok(())
}

fn range_safety() -> Outcome {
    let checks: Vec<(&str, Result<(), String>)> = vec![
        ("merge plain", merge_events(UpdatePolicy::Plain, 1)),
        ("merge update max", merge_events(UpdatePolicy::UpdateMax, 2)),
        ("predictors", predictor_events()),
        ("register sets", regset_events()),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    outcome(
        bad.is_empty(),
        format!("{} suites x {EVENTS} events, {} out of range {bad:?}", checks.len(), bad.len()),
    )
}

// ----------------------------------------------------------------

fn main() {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check, u64); 9] = [
        ("decision table", decision_table, 1),
        ("mechanism rules", mechanism_rules, 5),
        ("oracle soundness", oracle_soundness, 300),
        ("fig. 1 reproduction", fig1, 10),
        ("hard-branch headline", hard_branch, 120),
        ("MPPmax vs MPP ordering", policy_ordering, 300),
        ("confidence-cost selectivity", selectivity, 60),
        ("determinism", determinism, 60),
        ("counter and range safety", range_safety, 60),
    ];
    let mut failed = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*limit);
        let pass = o.pass && in_time;
        failed += !pass as usize;
        println!(
            "criterion {} {name}: {}  {}  [{:.2}s of {limit}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
