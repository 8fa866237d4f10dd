use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use reconverge::metrics::{render, score, Format, ReportRow};
use reconverge::model::{load_model_str, ProgramModel};
use reconverge::pipeline::{events_to_string, simulate, Policy, RunConfig};

use crate::config::{self, Layered};
use crate::error::{create_dir, read_text, write_text, CliError, CliResult};

pub const THREADS_ENV: &str = "RECONVERGE_THREADS";

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Experiment file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file; repeat for several.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Run configuration applied to every model without its own.
    #[arg(long)]
    pub run_config: Option<PathBuf>,
    /// `N`, `A,B,C` or `LO..HI` (exclusive).
    #[arg(long)]
    pub seed: Option<String>,
    /// bp_only, mpp, mpp_max, a comma list, or `all`.
    #[arg(long)]
    pub policy: Option<String>,
    /// Retired instructions per run.
    #[arg(long)]
    pub budget: Option<u64>,
    /// human, csv or json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Seeds {
    One(u64),
    List(Vec<u64>),
    Text(String),
}

impl Seeds {
    fn expand(&self) -> Result<Vec<u64>, String> {
        let text = match self {
            Seeds::One(s) => return Ok(vec![*s]),
            Seeds::List(v) => return Ok(v.clone()),
            Seeds::Text(t) => t,
        };
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("bad seed `{s}`"));
        if let Some((lo, hi)) = text.split_once("..") {
            return Ok((num(lo)?..num(hi)?).collect());
        }
        text.split(',').map(num).collect()
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum Policies {
    List(Vec<Policy>),
    Text(String),
}

impl Policies {
    fn expand(&self) -> Result<Vec<Policy>, String> {
        match self {
            Policies::List(v) => Ok(v.clone()),
            Policies::Text(t) if t == "all" => Ok(Policy::ALL.to_vec()),
            Policies::Text(t) => t.split(',').map(|p| p.trim().parse()).collect(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunEntry {
    model: PathBuf,
    run_config: Option<PathBuf>,
    seed: Option<Seeds>,
    policy: Option<Policies>,
}

/// The experiment file. Relative paths resolve against its directory.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    #[serde(default)]
    runs: Vec<RunEntry>,
    #[serde(default)]
    model: Vec<PathBuf>,
    run_config: Option<PathBuf>,
    seed: Option<Seeds>,
    policy: Option<Policies>,
    budget: Option<u64>,
    format: Option<Format>,
    out: Option<PathBuf>,
}

/// One (model, config, seed, policy) tuple.
#[derive(Clone, Debug)]
pub struct Job {
    pub label: String,
    pub workload: String,
    pub model_path: PathBuf,
    pub config: RunConfig,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub jobs: Vec<Job>,
    pub format: Format,
    pub out: PathBuf,
}

/// Provenance stored as `run.json` in every run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub workload: String,
    pub model: String,
    pub policy: Policy,
    pub seed: u64,
    pub config: RunConfig,
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn load_run_config(path: Option<&Path>, budget: Option<u64>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        let mut c = RunConfig::default();
        if let Some(b) = budget {
            c.budget = b;
        }
        return Ok(c);
    };
    let mut l = Layered::load(Some(path))?;
    for key in ["seed", "policy"] {
        if l.obj.contains_key(key) {
            return Err(CliError::at(path, format!("`{key}` belongs in the experiment, not the run config")));
        }
    }
    l.flag("budget", "experiment budget", budget.map(Value::from))?;
    let c: RunConfig = l.into_typed("run config")?;
    c.check().map_err(|e| CliError::at(path, e))?;
    Ok(c)
}

/// Merges the experiment file with the flags and expands it into jobs.
pub fn plan(args: &RunArgs) -> CliResult<Experiment> {
    let mut l = Layered::load(args.config.as_deref())?;
    let models: Option<Vec<PathBuf>> = (!args.models.is_empty()).then(|| args.models.clone());
    l.flag("model", "--model", config::json(models))?;
    l.flag("run_config", "--run-config", config::json(args.run_config.as_ref()))?;
    l.flag("seed", "--seed", config::string(args.seed.as_ref()))?;
    l.flag("policy", "--policy", config::string(args.policy.as_ref()))?;
    l.flag("budget", "--budget", config::json(args.budget))?;
    l.flag("format", "--format", config::string(args.format.as_ref()))?;
    l.flag("out", "--out", config::json(args.out.as_ref()))?;
    if let Some(f) = args.format.as_deref() {
        f.parse::<Format>().map_err(CliError::Usage)?;
    }
    if let Some(s) = &args.seed {
        Seeds::Text(s.clone()).expand().map_err(CliError::Usage)?;
    }
    if let Some(p) = &args.policy {
        Policies::Text(p.clone()).expand().map_err(CliError::Usage)?;
    }
    let file: ExperimentFile = l.into_typed("experiment")?;
    let base = args.config.as_deref().and_then(Path::parent);
    // Flag paths stay relative to the working directory.
    let from_file = |flag_given: bool| if flag_given { None } else { base };

    let mut entries = file.runs.clone();
    let model_base = from_file(!args.models.is_empty());
    entries.extend(file.model.iter().map(|m| RunEntry {
        model: resolve(model_base, m),
        run_config: None,
        seed: None,
        policy: None,
    }));
    for e in entries.iter_mut().take(file.runs.len()) {
        e.model = resolve(base, &e.model);
        e.run_config = e.run_config.as_ref().map(|p| resolve(base, p));
    }
    if entries.is_empty() {
        return Err(CliError::Usage("run needs at least one model (--model or `runs`)".into()));
    }
    let default_rc = file
        .run_config
        .as_ref()
        .map(|p| resolve(from_file(args.run_config.is_some()), p));
    let default_seeds = file.seed.clone().unwrap_or(Seeds::One(0));
    let default_policies = file.policy.clone().unwrap_or(Policies::Text("all".into()));

    let mut jobs = Vec::new();
    let mut labels = BTreeSet::new();
    for e in &entries {
        if !e.model.is_file() {
            return Err(CliError::at(&e.model, "model file not found"));
        }
        let rc_path = e.run_config.as_ref().or(default_rc.as_ref());
        let base_cfg = load_run_config(rc_path.map(PathBuf::as_path), file.budget)?;
        let seeds = e.seed.as_ref().unwrap_or(&default_seeds).expand().map_err(CliError::Invalid)?;
        let policies = e
            .policy
            .as_ref()
            .unwrap_or(&default_policies)
            .expand()
            .map_err(CliError::Invalid)?;
        if seeds.is_empty() || policies.is_empty() {
            return Err(CliError::Invalid(format!(
                "{}: seed and policy lists must be non-empty",
                e.model.display()
            )));
        }
        let workload = e
            .model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        for &seed in &seeds {
            for &policy in &policies {
                let label = format!("{workload}.{policy}.s{seed}");
                if !labels.insert(label.clone()) {
                    return Err(CliError::Invalid(format!("run `{label}` is specified twice")));
                }
                let mut config = base_cfg.clone();
                config.seed = seed;
                config.policy = policy;
                config.merge.policy = policy.update_policy();
                jobs.push(Job {
                    label,
                    workload: workload.clone(),
                    model_path: e.model.clone(),
                    config,
                });
            }
        }
    }
    let out = match (&file.out, args.out.is_some()) {
        (Some(o), given) => resolve(from_file(given), o),
        (None, _) => PathBuf::from("runs"),
    };
    Ok(Experiment {
        jobs,
        format: file.format.unwrap_or(Format::Human),
        out,
    })
}

pub fn thread_count() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Invalid(format!("{THREADS_ENV}=`{v}`: expected a positive integer"))),
        },
    }
}

fn load_checked_model(path: &Path) -> CliResult<(String, ProgramModel)> {
    let text = read_text(path)?;
    let model = load_model_str(&text).map_err(|e| CliError::at(path, e))?;
    Ok((text, model))
}

pub fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn execute(job: &Job, format: Format, out: &Path) -> CliResult<ReportRow> {
    let (text, model) = load_checked_model(&job.model_path)?;
    let (sim, events) = simulate(&model, &job.config).map_err(|e| CliError::at(&job.model_path, e))?;
    let metrics = score(&model, &events, job.config.merge.max_distance).map_err(|e| CliError::at(&job.model_path, e))?;
    let row = ReportRow::new(job.label.clone(), &metrics);
    let dir = out.join(&job.label);
    create_dir(&dir)?;
    let meta = RunMeta {
        label: job.label.clone(),
        workload: job.workload.clone(),
        model: job.model_path.display().to_string(),
        policy: job.config.policy,
        seed: job.config.seed,
        config: job.config.clone(),
    };
    write_text(&dir.join("model.cfg"), &text)?;
    write_text(&dir.join("run.json"), &pretty(&meta))?;
    write_text(&dir.join("sim.json"), &pretty(&sim))?;
    write_text(&dir.join("metrics.json"), &pretty(&metrics))?;
    write_text(&dir.join("events.ndjson"), &events_to_string(&events))?;
    write_text(
        &dir.join(format!("report.{}", format.extension())),
        &render(std::slice::from_ref(&row), format),
    )?;
    Ok(row)
}

/// Runs every job and writes per-run directories plus `summary.<ext>`.
/// Returns the summary text.
pub fn cmd_run(args: &RunArgs) -> CliResult<String> {
    let exp = plan(args)?;
    let threads = thread_count()?;
    create_dir(&exp.out)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    let rows: Vec<CliResult<ReportRow>> =
        pool.install(|| exp.jobs.par_iter().map(|j| execute(j, exp.format, &exp.out)).collect());
    let rows = rows.into_iter().collect::<CliResult<Vec<_>>>()?;
    let summary = render(&rows, exp.format);
    write_text(&exp.out.join(format!("summary.{}", exp.format.extension())), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_forms() {
        assert_eq!(Seeds::One(4).expand().unwrap(), vec![4]);
        assert_eq!(Seeds::Text("1,3".into()).expand().unwrap(), vec![1, 3]);
        assert_eq!(Seeds::Text("2..5".into()).expand().unwrap(), vec![2, 3, 4]);
        assert!(Seeds::Text("x".into()).expand().is_err());
    }

    #[test]
    fn policy_forms() {
        assert_eq!(Policies::Text("all".into()).expand().unwrap(), Policy::ALL.to_vec());
        assert_eq!(
            Policies::Text("mpp,mpp_max".into()).expand().unwrap(),
            vec![Policy::Mpp, Policy::MppMax]
        );
        assert!(Policies::Text("tage".into()).expand().is_err());
    }

    #[test]
    fn missing_model_is_a_usage_error() {
        assert_eq!(plan(&RunArgs::default()).unwrap_err().exit_code(), 1);
    }
}
