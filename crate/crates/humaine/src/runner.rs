//! Parallel experiment runs and the files a run leaves behind.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use humaine_core::experiment::{
    assemble_experiment, audit_report, prepare_experiment, run_persona, ExperimentConfig, ExperimentRun, PersonaRun,
    StatsReport,
};
use humaine_core::metrics::MetricsConfig;

use crate::error::{format_err, Result};
use crate::formats::{read_text, render_experiment_config, render_jsonl, write_text};
use crate::report::{render_report, ReportFormat};
use crate::store::write_sessions;

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const EVENTS_DIR: &str = "events";

pub fn default_threads() -> usize {
    thread::available_parallelism().map_or(1, NonZeroUsize::get)
}

/// Run every persona on up to `threads` workers. Each persona draws from its
/// own named streams, so the result does not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, metrics: &MetricsConfig, threads: usize) -> Result<ExperimentRun> {
    let prep = prepare_experiment(cfg, metrics)?;
    let n = prep.cohort.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<humaine_core::Result<PersonaRun>>>> = Mutex::new((0..n).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = run_persona(&prep, i);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let runs = slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every persona ran"))
        .collect::<humaine_core::Result<Vec<_>>>()?;
    Ok(assemble_experiment(&prep, runs)?)
}

pub fn render_report_json(report: &StatsReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serialises");
    text.push('\n');
    text
}

/// Paths written by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub outcomes: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
    pub report_csv: PathBuf,
    pub config: PathBuf,
    pub sessions: Vec<PathBuf>,
}

/// Persist a run: outcomes (one session per line), the resolved config,
/// per-session event logs and the report in JSON, text and CSV.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &ExperimentRun) -> Result<RunFiles> {
    let files = RunFiles {
        outcomes: dir.join(OUTCOMES_FILE),
        report_json: dir.join(REPORT_JSON),
        report_text: dir.join(REPORT_TEXT),
        report_csv: dir.join(REPORT_CSV),
        config: dir.join(CONFIG_FILE),
        sessions: write_sessions(&dir.join(EVENTS_DIR), &run.events)?,
    };
    write_text(&files.config, &render_experiment_config(cfg))?;
    write_text(&files.outcomes, &render_jsonl(&run.outcomes))?;
    write_text(&files.report_json, &render_report_json(&run.report))?;
    write_text(&files.report_text, &render_report(&run.report, ReportFormat::Text)?)?;
    write_text(&files.report_csv, &render_report(&run.report, ReportFormat::Csv)?)?;
    Ok(files)
}

/// Load a report from a run directory or a `report.json`, recomputing every
/// statistic from its outcomes to catch edits.
pub fn load_report(path: &Path) -> Result<StatsReport> {
    let file = if path.is_dir() { path.join(REPORT_JSON) } else { path.to_path_buf() };
    let report: StatsReport = serde_json::from_str(&read_text(&file)?).map_err(|e| format_err(&file, e))?;
    audit_report(&report)?;
    Ok(report)
}
