use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{DataConfig, ExperimentConfig, KdMode, PolicyMode};
use super::phase::{run_phase, LearnerState, PhaseInputs, PhaseReport, StreamHandle};
use crate::data::{
    make_synthetic_task, read_dataset_csv, split_phases, Dataset, PhaseSchedule, StreamSource,
};
use crate::error::{Error, Result};
use crate::memory::{AuditTrail, ExemplarStore};
use crate::nn::Model;
use crate::placebo::{PlaceboLogRow, Selection};
use crate::policy::{PolicyState, RewardRecord, WeightDump};
use crate::seed;

/// Loaded task data.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: Dataset,
    pub test: Dataset,
    pub stream: Option<StreamSource>,
}

pub fn load_task(cfg: &ExperimentConfig) -> Result<Task> {
    match &cfg.data {
        DataConfig::Synthetic(spec) => {
            let t = make_synthetic_task(spec, seed::component(cfg.seed, seed::DATA))?;
            let stream = if spec.stream_pool_size > 0 {
                StreamSource::Pool(t.stream_pool)
            } else {
                StreamSource::Generator(t.generator)
            };
            Ok(Task {
                train: t.train,
                test: t.test,
                stream: Some(stream),
            })
        }
        DataConfig::Files {
            train,
            test,
            stream,
        } => {
            let train = read_dataset_csv(train)?;
            let test = read_dataset_csv(test)?;
            if test.dim() != train.dim() {
                return Err(Error::Config(format!(
                    "test data has {} features, train has {}",
                    test.dim(),
                    train.dim()
                )));
            }
            let stream = match stream {
                Some(path) => {
                    let pool = read_dataset_csv(path)?;
                    if !pool.is_empty() && pool.dim() != train.dim() {
                        return Err(Error::Config(format!(
                            "stream data has {} features, train has {}",
                            pool.dim(),
                            train.dim()
                        )));
                    }
                    Some(StreamSource::Pool(pool.into_samples()))
                }
                None => None,
            };
            if cfg.uses_stream() && stream.is_none() {
                return Err(Error::Config(
                    "data.stream is required for placebo distillation".into(),
                ));
            }
            Ok(Task {
                train,
                test,
                stream,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub phases: Vec<PhaseReport>,
    /// Mean overall accuracy over the completed phases.
    pub average: f64,
    /// Overall accuracy of the last completed phase.
    pub last: f64,
    pub complete: bool,
    pub error: Option<String>,
    pub stream_draw_calls: u64,
    pub config: ExperimentConfig,
}

impl RunReport {
    /// `phase,classes_seen,accuracy,accuracy_old,accuracy_new,beta,gamma,policy_iterations,removed,refills,audit_checks,audit_failures`.
    pub fn phases_csv(&self) -> String {
        phases_csv(&self.phases)
    }
}

pub fn phases_csv(phases: &[PhaseReport]) -> String {
    let mut out = String::from(
        "phase,classes_seen,accuracy,accuracy_old,accuracy_new,beta,gamma,policy_iterations,removed,refills,audit_checks,audit_failures\n",
    );
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in phases {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.phase,
            p.classes_seen,
            p.accuracy,
            opt(p.accuracy_old),
            opt(p.accuracy_new),
            opt(p.action.map(|a| a.beta)),
            opt(p.action.map(|a| a.gamma)),
            p.policy_iterations,
            p.removed,
            p.refills,
            p.audit.checks,
            p.audit.failures
        );
    }
    out
}

/// Report plus traces of one run.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub audit: AuditTrail,
    pub policy_trace: Vec<RewardRecord>,
    pub weights: Vec<WeightDump>,
    pub placebo_log: Vec<PlaceboLogRow>,
    /// The error that stopped an incomplete run.
    pub failure: Option<Error>,
}

/// Average and last of per-phase accuracies; `(0, 0)` when empty.
pub fn summarize(accuracies: &[f64]) -> (f64, f64) {
    match accuracies.last() {
        None => (0.0, 0.0),
        Some(&last) => (accuracies.iter().sum::<f64>() / accuracies.len() as f64, last),
    }
}

/// Validates, loads data and runs every phase.
///
/// Configuration and data errors are returned before training starts. A
/// failure inside a phase stops the run and yields a report flagged
/// incomplete, with the error kept in [`RunOutput::failure`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let task = load_task(cfg)?;
    run_on_task(cfg, &task)
}

pub fn run_on_task(cfg: &ExperimentConfig, task: &Task) -> Result<RunOutput> {
    cfg.validate()?;
    let schedule: PhaseSchedule = cfg.schedule()?;
    let splits = split_phases(&task.train, &schedule)?;
    if let Some(bad) = task.test.labels()?.iter().find(|&&l| l >= schedule.total_classes()) {
        return Err(Error::Config(format!(
            "test label {bad} is outside the schedule's {} classes",
            schedule.total_classes()
        )));
    }
    let space = cfg.action_space()?;
    let mut dims = vec![task.train.dim()];
    dims.extend(&cfg.model.hidden);
    let model = Model::random(
        &dims,
        schedule.seen(0),
        &mut seed::rng(cfg.seed, seed::MODEL_INIT, &[]),
    )?;
    let mut state = LearnerState {
        model,
        exemplars: ExemplarStore::new(cfg.memory.exemplars_per_class),
        policy: PolicyState::new(space.len(), cfg.policy.xi, cfg.policy.floor)?,
    };
    let mut streams = StreamHandle::new(task.stream.clone(), cfg.seed);
    let mut phases = Vec::new();
    let mut audit = AuditTrail::default();
    let mut policy_trace = Vec::new();
    let mut weights = Vec::new();
    let mut placebo_log = Vec::new();
    let mut failure = None;

    for (i, new_data) in splits.iter().enumerate() {
        let old_classes = schedule.old(i);
        let classes = schedule.seen(i);
        let test = task.test.filter(|s| s.label.is_some_and(|l| l < classes));
        let old_data = if cfg.training.kd_mode == KdMode::OldDataOracle {
            task.train.filter(|s| s.label.is_some_and(|l| l < old_classes))
        } else {
            Dataset::empty(task.train.dim())
        };
        let inputs = PhaseInputs {
            phase: i,
            new_data,
            old_data: &old_data,
            test: &test,
            old_classes,
            classes,
        };
        match run_phase(&mut state, &inputs, &mut streams, &space, cfg) {
            Ok((report, traces)) => {
                phases.push(report);
                audit.append(traces.audit);
                policy_trace.extend(traces.rewards);
                weights.extend(traces.weights);
                placebo_log.extend(traces.placebo_log);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }

    let accs: Vec<f64> = phases.iter().map(|p| p.accuracy).collect();
    let (average, last) = summarize(&accs);
    Ok(RunOutput {
        report: RunReport {
            seed: cfg.seed,
            phases,
            average,
            last,
            complete: failure.is_none(),
            error: failure.as_ref().map(|e| e.to_string()),
            stream_draw_calls: streams.draw_calls(),
            config: cfg.clone(),
        },
        audit,
        policy_trace,
        weights,
        placebo_log,
        failure,
    })
}

/// One cell of the ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub name: String,
    pub kd_mode: KdMode,
    pub selection: Selection,
    pub policy: PolicyMode,
    pub seed: u64,
    pub config: ExperimentConfig,
}

/// Expands the ablation section into cells, seed-major within each variant.
///
/// Without `cross`, the base variant runs once and each listed kd mode,
/// selection and policy mode differing from the base runs as its own variant.
pub fn ablation_cells(base: &ExperimentConfig) -> Vec<AblationCell> {
    let ab = &base.ablation;
    let b = (
        base.training.kd_mode,
        base.placebo.selection,
        base.policy.mode,
    );
    let mut variants: Vec<(KdMode, Selection, PolicyMode)> = Vec::new();
    if ab.cross {
        for &k in &ab.kd_modes {
            for &s in &ab.selections {
                for &p in &ab.policies {
                    variants.push((k, s, p));
                }
            }
        }
    } else {
        variants.push(b);
        variants.extend(ab.kd_modes.iter().map(|&k| (k, b.1, b.2)));
        variants.extend(ab.selections.iter().map(|&s| (b.0, s, b.2)));
        variants.extend(ab.policies.iter().map(|&p| (b.0, b.1, p)));
    }
    let mut seen = Vec::new();
    variants.retain(|v| {
        let fresh = !seen.contains(v);
        seen.push(*v);
        fresh
    });
    let mut cells = Vec::new();
    for (k, s, p) in variants {
        for &seed in &ab.seeds {
            let mut config = base.clone();
            config.training.kd_mode = k;
            config.placebo.selection = s;
            config.policy.mode = p;
            config.seed = seed;
            let selection = match s {
                Selection::Scored => "scored",
                Selection::Random => "random",
                Selection::Confidence => "confidence",
            };
            let policy = match p {
                PolicyMode::Online => "online",
                PolicyMode::Fixed => "fixed",
            };
            cells.push(AblationCell {
                name: format!("{}-{selection}-{policy}-seed{seed}", k.name()),
                kd_mode: k,
                selection: s,
                policy: p,
                seed,
                config,
            });
        }
    }
    cells
}
