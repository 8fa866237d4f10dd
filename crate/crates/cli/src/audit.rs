use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;

use reconverge::merge::Verdict;
use reconverge::metrics::audit;
use reconverge::model::{load_model_str, validate_model};
use reconverge::pipeline::{read_events, Event};

use crate::compare::{load_run, run_dirs};
use crate::error::{read_text, CliError, CliResult};

#[derive(Args, Debug)]
pub struct AuditArgs {
    /// Run directories, or output directories holding several.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
}

/// Per-run audit lines, and the total violation count.
pub fn cmd_audit(args: &AuditArgs) -> CliResult<(String, usize)> {
    let mut text = String::new();
    let mut total = 0;
    for d in &args.dirs {
        for dir in run_dirs(d)? {
            let run = load_run(&dir)?;
            let model_path = dir.join("model.cfg");
            let model = load_model_str(&read_text(&model_path)?).map_err(|e| CliError::at(&model_path, e))?;
            let report = validate_model(&model);
            if !report.is_ok() {
                return Err(CliError::at(&model_path, report));
            }
            let ev_path = dir.join("events.ndjson");
            let file = std::fs::File::open(&ev_path).map_err(|e| CliError::at(&ev_path, e))?;
            let events = read_events(std::io::BufReader::new(file)).map_err(|e| CliError::at(&ev_path, e))?;
            let checked = events
                .iter()
                .filter(|e| {
                    matches!(
                        e,
                        Event::MpResolved {
                            verdict: Verdict::Correct,
                            ..
                        }
                    )
                })
                .count();
            let violations = audit(&model, &events, run.meta.config.merge.max_distance)
                .map_err(|e| CliError::at(&ev_path, e))?;
            let _ = writeln!(
                text,
                "{}: {checked} correct resolutions, {} violations",
                run.meta.label,
                violations.len()
            );
            for v in violations.iter().take(20) {
                let _ = writeln!(
                    text,
                    "  id {} branch {} merge {}: {}",
                    v.id, v.branch_pc.0, v.merge_pc.0, v.reason
                );
            }
            total += violations.len();
        }
    }
    Ok((text, total))
}
