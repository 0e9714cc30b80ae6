use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use placebocil_core::data::split_phases;
use placebocil_core::engine::{
    ablation_cells, load_task, run_on_task, ExperimentConfig, PolicyMode, RunOutput, Task,
};
use placebocil_core::placebo::placebo_log_csv;
use placebocil_core::policy::{policy_trace_csv, regret_harness, weight_dump_csv, BanditSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::OutDir;
use crate::CliError;

const RUN_REPORT: &str = "run_report.json";
const SUMMARY: &str = "summary.csv";
const BANDIT_CSV: &str = "bandit.csv";

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Validation plus every check that needs the data but not training.
fn check_data(cfg: &ExperimentConfig) -> Result<Task, CliError> {
    let task = load_task(cfg)?;
    let schedule = cfg.schedule()?;
    let splits = split_phases(&task.train, &schedule)?;
    if cfg.uses_stream() {
        let removal = cfg.memory.u_cap + cfg.memory.p_cap;
        for (i, d) in splits.iter().enumerate().skip(1) {
            if d.len() <= removal {
                return Err(CliError::config(format!(
                    "phase {i} has {} new samples, not more than u_cap + p_cap = {removal}",
                    d.len()
                )));
            }
        }
    }
    Ok(task)
}

fn write_run(out: &OutDir, run: &RunOutput) -> Result<(), CliError> {
    out.write_json(RUN_REPORT, &run.report)?;
    out.write("phases.csv", run.report.phases_csv().as_bytes())?;
    out.write("audit.csv", run.audit.to_csv().as_bytes())?;
    let cfg = &run.report.config;
    if cfg.policy.mode == PolicyMode::Online && cfg.action_matters() {
        out.write("policy_trace.csv", policy_trace_csv(&run.policy_trace).as_bytes())?;
        let space = cfg.action_space()?;
        out.write(
            "policy_weights.csv",
            weight_dump_csv(&space, &run.weights, cfg.policy.floor).as_bytes(),
        )?;
    }
    if cfg.placebo.log {
        out.write("placebo_log.csv", placebo_log_csv(&run.placebo_log).as_bytes())?;
    }
    Ok(())
}

fn execute(cfg: &ExperimentConfig, task: &Task, verbose: bool) -> Result<RunOutput, CliError> {
    let run = run_on_task(cfg, task)?;
    if verbose {
        for p in &run.report.phases {
            eprintln!(
                "seed {} phase {} classes {} accuracy {:.4} ({:.1}s)",
                cfg.seed, p.phase, p.classes_seen, p.accuracy, p.wall_clock_secs
            );
        }
    }
    Ok(run)
}

pub fn run(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
    verbose: bool,
) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let task = check_data(&cfg)?;
    let out = OutDir::open(out, RUN_REPORT, force)?;
    let run = execute(&cfg, &task, verbose)?;
    write_run(&out, &run)?;
    match &run.failure {
        None => {
            println!(
                "average {:.4} last {:.4} ({} phases) -> {}",
                run.report.average,
                run.report.last,
                run.report.phases.len(),
                out.path().display()
            );
            Ok(())
        }
        Some(e) => Err(CliError {
            code: if e.is_config() { 2 } else { 1 },
            message: format!("run incomplete after {} phases: {e}", run.report.phases.len()),
        }),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    cell: String,
    kd_mode: String,
    selection: String,
    policy: String,
    seed: u64,
    average: Option<f64>,
    last: Option<f64>,
    status: String,
    error: String,
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("cell,kd_mode,selection,policy,seed,average,last,status,error\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},\"{}\"",
            r.cell,
            r.kd_mode,
            r.selection,
            r.policy,
            r.seed,
            opt(r.average),
            opt(r.last),
            r.status,
            r.error.replace('"', "'")
        );
    }
    out
}

pub fn ablate(
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    force: bool,
    jobs: usize,
    verbose: bool,
) -> Result<(), CliError> {
    let mut base = load_config(config, seed)?;
    if let Some(s) = seed {
        base.ablation.seeds = vec![s];
    }
    let cells = ablation_cells(&base);
    if cells.is_empty() {
        return Err(CliError::config("ablation has no cells (empty seed list?)"));
    }
    load_task(&base)?;
    let out = OutDir::open(out, SUMMARY, force)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let write_lock = Mutex::new(());
    let rows: Vec<SummaryRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let dir = out.subdir(&format!("cells/{}", cell.name));
                let result = dir.and_then(|dir| {
                    let task = check_data(&cell.config)?;
                    let run = execute(&cell.config, &task, verbose)?;
                    let _guard = write_lock.lock().expect("no panics while writing");
                    write_run(&dir, &run)?;
                    Ok(run)
                });
                let (average, last, status, error) = match result {
                    Ok(run) => match &run.failure {
                        None => (Some(run.report.average), Some(run.report.last), "ok", String::new()),
                        Some(e) => (Some(run.report.average), Some(run.report.last), "incomplete", e.to_string()),
                    },
                    Err(e) => (None, None, "failed", e.message),
                };
                if verbose {
                    eprintln!("cell {} {status}", cell.name);
                }
                SummaryRow {
                    cell: cell.name.clone(),
                    kd_mode: cell.kd_mode.name().to_string(),
                    selection: format!("{:?}", cell.selection).to_lowercase(),
                    policy: format!("{:?}", cell.policy).to_lowercase(),
                    seed: cell.seed,
                    average,
                    last,
                    status: status.to_string(),
                    error,
                }
            })
            .collect()
    });
    out.write(SUMMARY, summary_csv(&rows).as_bytes())?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!(
        "{} cells ({} not ok) -> {}",
        rows.len(),
        failed,
        out.path().display()
    );
    Ok(())
}

pub fn validate(config: Option<&Path>, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let task = check_data(&cfg)?;
    println!(
        "ok: {} phases, {} classes, {} train / {} test samples, stream {}",
        cfg.schedule.len(),
        cfg.schedule.last().copied().unwrap_or(0),
        task.train.len(),
        task.test.len(),
        if task.stream.is_some() { "present" } else { "absent" }
    );
    Ok(())
}

pub fn bandit_bench(
    config: &Path,
    seed: Option<u64>,
    out: &Path,
    force: bool,
) -> Result<(), CliError> {
    if !config.exists() {
        return Err(CliError::config(format!("missing file {}", config.display())));
    }
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::runtime(format!("{}: {e}", config.display())))?;
    let mut spec: BanditSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", config.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let out = OutDir::open(out, BANDIT_CSV, force)?;
    let report = regret_harness(&spec)?;
    out.write(BANDIT_CSV, report.to_csv().as_bytes())?;
    out.write_json("bandit_report.json", &report)?;
    println!(
        "best arm {} final mass {:.4} over {} rounds -> {}",
        report.best_arm,
        report.final_best_mass(),
        spec.rounds,
        out.path().display()
    );
    Ok(())
}
