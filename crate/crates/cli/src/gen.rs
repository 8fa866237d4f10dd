use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::{json, Value};

use reconverge::merge::MergeConfig;
use reconverge::model::save_model_string;
use reconverge::workload::{generate, save_truth_string, GenParams, Shape};

use crate::config::{self, Layered};
use crate::error::{create_dir, write_text, CliError, CliResult};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// hammock, nested, loop or random (long names also accepted).
    pub shape: Option<String>,
    /// JSON object of generator parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model path; the `.truth` sidecar goes next to it. A directory gets
    /// `<shape>.s<seed>.cfg`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Taken probability per site, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub branch_bias: Option<Vec<f64>>,
    /// `N` or `MIN..MAX` instructions per block.
    #[arg(long)]
    pub block_size: Option<String>,
    #[arg(long)]
    pub reg_pressure: Option<f64>,
    #[arg(long)]
    pub arch_reg_count: Option<u8>,
    #[arg(long)]
    pub trip_count: Option<u32>,
}

fn block_size(s: &str) -> CliResult<Value> {
    let bad = || CliError::Usage(format!("--block-size `{s}`: expected N or MIN..MAX"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    Ok(json!([lo, hi]))
}

fn shape_name(shape: Shape) -> &'static str {
    match shape {
        Shape::Hammock => "hammock",
        Shape::NestedDiamond => "nested",
        Shape::LoopWithExit => "loop",
        Shape::RandomReducible => "random",
    }
}

/// Model and truth paths for `out`.
pub fn output_paths(out: Option<&Path>, shape: Shape, seed: u64) -> (PathBuf, PathBuf) {
    let file = format!("{}.s{seed}.cfg", shape_name(shape));
    let model = match out {
        None => PathBuf::from(file),
        Some(p) if p.is_dir() => p.join(file),
        Some(p) if p.extension().is_none() => p.with_extension("cfg"),
        Some(p) => p.to_path_buf(),
    };
    let truth = model.with_extension("truth");
    (model, truth)
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<(PathBuf, PathBuf)> {
    let mut cfg = Layered::load(args.config.as_deref())?;
    let shape = match &args.shape {
        Some(s) => Some(s.parse::<Shape>().map_err(CliError::Usage)?),
        None => None,
    };
    cfg.flag("shape", "SHAPE", config::json(shape))?;
    cfg.flag("seed", "--seed", config::json(args.seed))?;
    cfg.flag("out", "--out", config::json(args.out.as_ref()))?;
    cfg.flag("branch_bias", "--branch-bias", config::json(args.branch_bias.as_ref()))?;
    let bs = args.block_size.as_deref().map(block_size).transpose()?;
    cfg.flag("block_size", "--block-size", bs)?;
    cfg.flag("reg_pressure", "--reg-pressure", config::json(args.reg_pressure))?;
    cfg.flag("arch_reg_count", "--arch-reg-count", config::json(args.arch_reg_count))?;
    cfg.flag("trip_count", "--trip-count", config::json(args.trip_count))?;
    if !cfg.obj.contains_key("shape") {
        return Err(CliError::Usage("gen needs a shape".into()));
    }
    let out: Option<PathBuf> = match cfg.take("out") {
        Some(Value::String(s)) => Some(s.into()),
        Some(_) => return Err(CliError::Invalid("`out` must be a path string".into())),
        None => None,
    };
    let params: GenParams = cfg.into_typed("generator parameters")?;
    let g = generate(&params).map_err(|e| CliError::Invalid(e.to_string()))?;
    let truth = g.truth(MergeConfig::default().max_distance);
    let (model_path, truth_path) = output_paths(out.as_deref(), params.shape, params.seed);
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(&model_path, &save_model_string(&g.model))?;
    write_text(&truth_path, &save_truth_string(&truth))?;
    Ok((model_path, truth_path))
}
