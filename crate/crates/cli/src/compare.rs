use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use reconverge::metrics::{render, Format, MetricSet, ReportRow};
use reconverge::pipeline::Policy;

use crate::error::{read_text, CliError, CliResult};
use crate::run::{pretty, RunMeta};

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Run directories, or output directories holding several.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// human, csv or json.
    #[arg(long, default_value = "human")]
    pub format: String,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct LoadedRun {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub metrics: MetricSet,
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::at(path, e))
}

/// Run directories under `dir`: itself if it holds `run.json`, otherwise
/// its immediate children that do, in name order.
pub fn run_dirs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if dir.join("run.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::at(dir, e))?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("run.json").is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(CliError::at(dir, "no run directories found"));
    }
    Ok(out)
}

pub fn load_run(dir: &Path) -> CliResult<LoadedRun> {
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        meta: load_json(&dir.join("run.json"))?,
        metrics: load_json(&dir.join("metrics.json"))?,
    })
}

/// MPP against MPPmax on one (workload, seed).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyDelta {
    pub workload: String,
    pub seed: u64,
    pub mpp_accuracy: f64,
    pub mpp_max_accuracy: f64,
    pub accuracy_delta: f64,
    pub mpp_overestimate: f64,
    pub mpp_max_overestimate: f64,
    pub overestimate_delta: f64,
}

const DELTA_HEADER: [&str; 8] = [
    "workload",
    "seed",
    "mpp_accuracy",
    "mpp_max_accuracy",
    "accuracy_delta",
    "mpp_overestimate",
    "mpp_max_overestimate",
    "overestimate_delta",
];

fn r4(x: f64) -> f64 {
    let r = (x * 10_000.0).round() / 10_000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn deltas(runs: &[LoadedRun]) -> Vec<PolicyDelta> {
    let mut by_key: BTreeMap<(String, u64), [Option<&MetricSet>; 2]> = BTreeMap::new();
    for r in runs {
        let slot = match r.meta.policy {
            Policy::Mpp => 0,
            Policy::MppMax => 1,
            Policy::BpOnly => continue,
        };
        by_key.entry((r.meta.workload.clone(), r.meta.seed)).or_default()[slot] = Some(&r.metrics);
    }
    by_key
        .into_iter()
        .filter_map(|((workload, seed), pair)| {
            let [Some(a), Some(b)] = pair else { return None };
            Some(PolicyDelta {
                workload,
                seed,
                mpp_accuracy: r4(a.accuracy),
                mpp_max_accuracy: r4(b.accuracy),
                accuracy_delta: r4(b.accuracy - a.accuracy),
                mpp_overestimate: r4(a.mean_overestimate),
                mpp_max_overestimate: r4(b.mean_overestimate),
                overestimate_delta: r4(b.mean_overestimate - a.mean_overestimate),
            })
        })
        .collect()
}

fn delta_cells(d: &PolicyDelta) -> Vec<String> {
    let mut v = vec![d.workload.clone(), d.seed.to_string()];
    v.extend(
        [
            d.mpp_accuracy,
            d.mpp_max_accuracy,
            d.accuracy_delta,
            d.mpp_overestimate,
            d.mpp_max_overestimate,
            d.overestimate_delta,
        ]
        .iter()
        .map(|x| format!("{x:.4}")),
    );
    v
}

fn table(header: &[&str], body: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    for line in std::iter::once(&head).chain(body.iter()) {
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

pub fn render_comparison(runs: &[LoadedRun], format: Format) -> String {
    let rows: Vec<ReportRow> = runs
        .iter()
        .map(|r| ReportRow::new(r.meta.label.clone(), &r.metrics))
        .collect();
    let ds = deltas(runs);
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                runs: &'a [ReportRow],
                deltas: &'a [PolicyDelta],
            }
            pretty(&Out {
                runs: &rows,
                deltas: &ds,
            })
        }
        Format::Csv => {
            let mut s = render(&rows, Format::Csv);
            if !ds.is_empty() {
                s.push('\n');
                s.push_str(&DELTA_HEADER.join(","));
                s.push('\n');
                for d in &ds {
                    s.push_str(&delta_cells(d).join(","));
                    s.push('\n');
                }
            }
            s
        }
        Format::Human => {
            let mut s = render(&rows, Format::Human);
            if !ds.is_empty() {
                s.push('\n');
                let body: Vec<Vec<String>> = ds.iter().map(delta_cells).collect();
                s.push_str(&table(&DELTA_HEADER, &body));
            }
            s
        }
    }
}

pub fn cmd_compare(args: &CompareArgs) -> CliResult<String> {
    let format: Format = args.format.parse().map_err(CliError::Usage)?;
    let mut runs = Vec::new();
    for d in &args.dirs {
        for rd in run_dirs(d)? {
            runs.push(load_run(&rd)?);
        }
    }
    let text = render_comparison(&runs, format);
    if let Some(out) = &args.out {
        crate::error::write_text(out, &text)?;
    }
    Ok(text)
}
