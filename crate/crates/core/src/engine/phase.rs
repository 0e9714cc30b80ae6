//! One incremental phase: budget removal, online policy learning on the local
//! environment, the real training run and the exemplar refresh.

use std::cell::Cell;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Classifier, ExperimentConfig, KdMode, PolicyMode};
use super::train::{nme_accuracy, train_with_action, Accuracy, KdSource, RunContext, RunData};
use crate::data::{rebuild_local_env, Dataset, FreeStream, Sample, StreamSource};
use crate::error::{Error, Result};
use crate::memory::{apply_strict_budget, select_exemplars, AuditTrail, BudgetLedger, ExemplarStore, HeldCounts};
use crate::nn::Model;
use crate::placebo::{Action, PlaceboLogRow};
use crate::policy::{decoupled_reward, normalized_reward, ActionSpace, PolicyState, RewardRecord, WeightDump};
use crate::seed;

/// Path tag for the final per-phase action draw.
const FINAL_DRAW: u64 = u64::MAX;

/// Everything that persists between phases.
#[derive(Debug, Clone)]
pub struct LearnerState {
    pub model: Model,
    pub exemplars: ExemplarStore,
    pub policy: PolicyState,
}

/// Inputs of phase `phase`.
#[derive(Debug, Clone, Copy)]
pub struct PhaseInputs<'a> {
    pub phase: usize,
    /// Full new-class training data before any removal.
    pub new_data: &'a Dataset,
    /// Training data of all old classes; read only by the oracle mode.
    pub old_data: &'a Dataset,
    /// Held-out test data of every class seen so far.
    pub test: &'a Dataset,
    pub old_classes: usize,
    pub classes: usize,
}

/// Owns the free stream and hands out per-phase and per-rollout cursors.
#[derive(Debug, Clone)]
pub struct StreamHandle {
    source: Option<StreamSource>,
    seed: u64,
    real: Option<FreeStream>,
    fork_draw_calls: Cell<u64>,
}

impl StreamHandle {
    pub fn new(source: Option<StreamSource>, seed: u64) -> Self {
        Self {
            source,
            seed,
            real: None,
            fork_draw_calls: Cell::new(0),
        }
    }

    /// `draw_candidates` calls served so far, over every cursor handed out.
    pub fn draw_calls(&self) -> u64 {
        self.fork_draw_calls.get() + self.real.as_ref().map_or(0, FreeStream::draw_calls)
    }

    fn source(&self) -> Result<&StreamSource> {
        self.source
            .as_ref()
            .ok_or_else(|| Error::Config("placebo distillation needs a stream source".into()))
    }

    fn real(&mut self, phase: usize) -> Result<&mut FreeStream> {
        if self.real.is_none() {
            let src = self.source()?.clone();
            self.real = Some(FreeStream::new(src, seed::component(self.seed, seed::STREAM)));
        }
        let s = self.real.as_mut().expect("created above");
        s.begin_phase(phase as u64);
        Ok(s)
    }

    /// Independent cursor for a policy rollout.
    fn fork(&self, phase: usize, iteration: usize) -> Result<FreeStream> {
        let s = seed::mix(
            seed::component(self.seed, seed::STREAM),
            seed::mix(phase as u64, iteration as u64 + 1),
        );
        let mut stream = FreeStream::new(self.source()?.clone(), s);
        stream.begin_phase(phase as u64);
        Ok(stream)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub checks: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: usize,
    pub classes_seen: usize,
    pub accuracy: f64,
    pub accuracy_old: Option<f64>,
    pub accuracy_new: Option<f64>,
    pub n_test_old: usize,
    pub n_test_new: usize,
    /// `(beta, gamma)` used for the real run, when it affects training.
    pub action: Option<Action>,
    pub policy_iterations: usize,
    pub removed: usize,
    pub refills: usize,
    pub placebos_consumed: usize,
    pub audit: AuditSummary,
    pub wall_clock_secs: f64,
}

/// Per-phase traces kept next to the report.
#[derive(Debug, Clone, Default)]
pub struct PhaseTraces {
    pub audit: AuditTrail,
    pub rewards: Vec<RewardRecord>,
    pub weights: Option<WeightDump>,
    pub placebo_log: Vec<PlaceboLogRow>,
}

/// Produces the per-virtual-phase accuracies of one policy iteration.
pub trait RolloutEvaluator {
    fn rollout(&mut self, iteration: usize, action: Action, phases: usize) -> Result<Vec<f64>>;
}

/// Runs `iterations` rounds of sample, rollout, reward and Exp3 update.
pub fn learn_policy_for_phase<E: RolloutEvaluator + ?Sized>(
    policy: &mut PolicyState,
    space: &ActionSpace,
    phase: usize,
    iterations: usize,
    lookahead: usize,
    seed_value: u64,
    evaluator: &mut E,
) -> Result<Vec<RewardRecord>> {
    if policy.len() != space.len() {
        return Err(Error::Config(format!(
            "policy has {} weights for {} actions",
            policy.len(),
            space.len()
        )));
    }
    let mut records = Vec::with_capacity(iterations);
    for t in 0..iterations {
        let mut rng = seed::rng(seed_value, seed::POLICY, &[phase as u64, t as u64]);
        let (index, probability) = policy.sample(&mut rng);
        let action = space.get(index);
        let rewards = evaluator.rollout(t, action, lookahead + 1)?;
        let total = decoupled_reward(&rewards)?;
        let normalized = normalized_reward(total, rewards.len());
        policy.update(index, normalized, probability)?;
        records.push(RewardRecord {
            phase,
            iteration: t,
            action_index: index,
            action,
            probability,
            rewards,
            total,
            normalized,
        });
    }
    Ok(records)
}

/// Rollouts on the local environment `h_i = (T \ B, B)`.
struct LocalRollout<'a> {
    cfg: &'a ExperimentConfig,
    teacher: &'a Model,
    /// `T`: reduced new data plus exemplars.
    train: &'a Dataset,
    old_classes: usize,
    classes: usize,
    per_class: usize,
    phase: usize,
    streams: &'a StreamHandle,
    ledger: &'a BudgetLedger,
    traces: &'a mut PhaseTraces,
    audit_index: &'a mut usize,
    refill_index: &'a mut usize,
}

impl RolloutEvaluator for LocalRollout<'_> {
    fn rollout(&mut self, iteration: usize, action: Action, phases: usize) -> Result<Vec<f64>> {
        let mut rng = seed::rng(
            self.cfg.seed,
            seed::LOCAL_ENV,
            &[self.phase as u64, iteration as u64],
        );
        let env = rebuild_local_env(self.train, self.per_class, &mut rng)?;
        let is_old = |s: &Sample| s.label.is_some_and(|l| l < self.old_classes);
        let new_data = env.train.filter(|s| !is_old(s));
        let exemplars: Vec<Sample> = env.train.iter().filter(|s| is_old(s)).cloned().collect();
        let held_old = env.validation.iter().filter(|s| is_old(s)).count();
        let extra_held = HeldCounts {
            new_data: env.validation.len() - held_old,
            exemplars: held_old,
            candidates: 0,
            placebos: 0,
        };
        let mut stream = self.streams.fork(self.phase, iteration)?;
        let mut teacher = self.teacher.clone();
        let mut accs = Vec::with_capacity(phases);
        for j in 0..phases {
            let mut ctx = RunContext {
                cfg: self.cfg,
                phase: self.phase,
                epochs: self.cfg.policy_epochs(),
                path: vec![iteration as u64 + 1, j as u64],
                ledger: self.ledger,
                extra_held,
                audit: &mut self.traces.audit,
                audit_index: self.audit_index,
                placebo_log: None,
                refill_index: self.refill_index,
            };
            let out = train_with_action(
                &teacher,
                action,
                RunData {
                    new_data: &new_data,
                    exemplars: &exemplars,
                    old_classes: self.old_classes,
                    classes: self.classes,
                    test: &env.validation,
                },
                KdMode::Placebo,
                KdSource::Stream(&mut stream),
                &mut ctx,
            )?;
            accs.push(out.accuracy.overall);
            teacher = out.model;
        }
        let forks = &self.streams.fork_draw_calls;
        forks.set(forks.get() + stream.draw_calls());
        Ok(accs)
    }
}

fn report(
    inputs: &PhaseInputs<'_>,
    acc: Accuracy,
    action: Option<Action>,
    traces: &PhaseTraces,
    removed: usize,
    refills: usize,
    consumed: usize,
    started: Instant,
) -> PhaseReport {
    PhaseReport {
        phase: inputs.phase,
        classes_seen: inputs.classes,
        accuracy: acc.overall,
        accuracy_old: acc.old,
        accuracy_new: acc.new,
        n_test_old: acc.n_old,
        n_test_new: acc.n_new,
        action,
        policy_iterations: traces.rewards.len(),
        removed,
        refills,
        placebos_consumed: consumed,
        audit: AuditSummary {
            checks: traces.audit.records.len(),
            failures: traces.audit.failure_count(),
        },
        wall_clock_secs: started.elapsed().as_secs_f64(),
    }
}

fn refresh_exemplars(
    state: &mut LearnerState,
    data: &Dataset,
    cfg: &ExperimentConfig,
    phase: usize,
) -> Result<()> {
    for (class, samples) in data.by_class() {
        let mut rng = seed::rng(cfg.seed, seed::EXEMPLARS, &[phase as u64, class as u64]);
        let chosen = select_exemplars(
            &state.model,
            &samples,
            cfg.memory.exemplars_per_class,
            cfg.memory.strategy,
            &mut rng,
        )?;
        state.exemplars.insert(class, chosen)?;
    }
    Ok(())
}

/// Test accuracy after the exemplar refresh; nearest-mean classification uses
/// the refreshed store.
fn final_accuracy(
    state: &LearnerState,
    inputs: &PhaseInputs<'_>,
    cfg: &ExperimentConfig,
    trained: Accuracy,
) -> Result<Accuracy> {
    match cfg.training.classifier {
        Classifier::Linear => Ok(trained),
        Classifier::Nme => {
            let sets: Vec<&[Sample]> = (0..inputs.classes)
                .map(|c| state.exemplars.class(c).unwrap_or(&[]))
                .collect();
            nme_accuracy(&state.model, &sets, inputs.test, inputs.old_classes)
        }
    }
}

/// Runs phase `inputs.phase` and updates `state` in place.
///
/// Phase 0 is plain cross-entropy training. Later phases distill from the
/// previous model; in placebo mode the new data is first reduced by
/// `u_cap + p_cap` samples, the policy is trained on the local environment
/// and an action is drawn for the real run.
pub fn run_phase(
    state: &mut LearnerState,
    inputs: &PhaseInputs<'_>,
    streams: &mut StreamHandle,
    space: &ActionSpace,
    cfg: &ExperimentConfig,
) -> Result<(PhaseReport, PhaseTraces)> {
    let started = Instant::now();
    let phase = inputs.phase;
    let mut traces = PhaseTraces::default();
    let mut audit_index = 0;
    let mut refill_index = 0;
    let exemplar_capacity = cfg.memory.exemplars_per_class * inputs.old_classes;

    if inputs.old_classes == 0 {
        let ledger = BudgetLedger::new(inputs.new_data.len(), 0, 0, 0);
        let teacher = state.model.clone();
        let mut ctx = RunContext {
            cfg,
            phase,
            epochs: cfg.optimizer.epochs,
            path: vec![0],
            ledger: &ledger,
            extra_held: HeldCounts::default(),
            audit: &mut traces.audit,
            audit_index: &mut audit_index,
            placebo_log: None,
            refill_index: &mut refill_index,
        };
        let out = train_with_action(
            &teacher,
            cfg.policy.fixed,
            RunData {
                new_data: inputs.new_data,
                exemplars: &[],
                old_classes: 0,
                classes: inputs.classes,
                test: inputs.test,
            },
            KdMode::None,
            KdSource::Off,
            &mut ctx,
        )?;
        state.model = out.model;
        refresh_exemplars(state, inputs.new_data, cfg, phase)?;
        let acc = final_accuracy(state, inputs, cfg, out.accuracy)?;
        let r = report(inputs, acc, None, &traces, 0, 0, 0, started);
        return Ok((r, traces));
    }

    if state.exemplars.is_empty() {
        return Err(Error::Config(format!("phase {phase}: exemplar store is empty")));
    }
    let uses_stream = cfg.uses_stream();
    let (u_cap, p_cap) = if uses_stream {
        (cfg.memory.u_cap, cfg.memory.p_cap)
    } else {
        (0, 0)
    };
    let mut ledger = BudgetLedger::new(inputs.new_data.len(), exemplar_capacity, u_cap, p_cap);
    let mut rng = seed::rng(cfg.seed, seed::BUDGET, &[phase as u64]);
    let (new_data, removed) = apply_strict_budget(inputs.new_data, u_cap, p_cap, &mut rng)?;
    ledger.removed = removed;
    let exemplars: Vec<Sample> = state.exemplars.samples().cloned().collect();
    let teacher = state.model.clone();

    let action = if !cfg.action_matters() {
        None
    } else if cfg.policy.mode == PolicyMode::Fixed {
        Some(cfg.policy.fixed)
    } else {
        let mut train = new_data.clone();
        train.extend(exemplars.iter().cloned())?;
        let per_class = match cfg.policy.local_per_class {
            Some(s) => s,
            None => crate::data::default_local_size(&train),
        };
        if per_class == 0 {
            return Err(Error::Config(format!(
                "phase {phase}: local environment needs at least 2 samples per class"
            )));
        }
        let mut eval = LocalRollout {
            cfg,
            teacher: &teacher,
            train: &train,
            old_classes: inputs.old_classes,
            classes: inputs.classes,
            per_class,
            phase,
            streams,
            ledger: &ledger,
            traces: &mut traces,
            audit_index: &mut audit_index,
            refill_index: &mut refill_index,
        };
        let records = learn_policy_for_phase(
            &mut state.policy,
            space,
            phase,
            cfg.policy.iterations,
            cfg.policy.lookahead,
            cfg.seed,
            &mut eval,
        )?;
        traces.rewards = records;
        let mut rng = seed::rng(cfg.seed, seed::POLICY, &[phase as u64, FINAL_DRAW]);
        let (index, _) = state.policy.sample(&mut rng);
        Some(space.get(index))
    };
    if cfg.policy.mode == PolicyMode::Online && cfg.action_matters() {
        traces.weights = Some(WeightDump {
            phase,
            weights: state.policy.weights().to_vec(),
        });
    }

    let mut oracle_pool;
    let source = match cfg.training.kd_mode {
        KdMode::Placebo if uses_stream => KdSource::Stream(streams.real(phase)?),
        KdMode::OldDataOracle => {
            let old: Vec<Sample> = inputs
                .old_data
                .iter()
                .filter(|s| s.label.is_some_and(|l| l < inputs.old_classes))
                .cloned()
                .collect();
            oracle_pool = FreeStream::pool(
                old,
                seed::mix(seed::component(cfg.seed, seed::STREAM), 0x0f_0f_0f),
            );
            oracle_pool.begin_phase(phase as u64);
            KdSource::OldData(&mut oracle_pool)
        }
        _ => KdSource::Off,
    };
    let kd_mode = match (cfg.training.kd_mode, uses_stream) {
        (KdMode::Placebo, false) => KdMode::NewData,
        (m, _) => m,
    };
    let log_placebos = cfg.placebo.log;
    let mut log = Vec::new();
    let mut ctx = RunContext {
        cfg,
        phase,
        epochs: cfg.optimizer.epochs,
        path: vec![0],
        ledger: &ledger,
        extra_held: HeldCounts::default(),
        audit: &mut traces.audit,
        audit_index: &mut audit_index,
        placebo_log: log_placebos.then_some(&mut log),
        refill_index: &mut refill_index,
    };
    let out = train_with_action(
        &teacher,
        action.unwrap_or(cfg.policy.fixed),
        RunData {
            new_data: &new_data,
            exemplars: &exemplars,
            old_classes: inputs.old_classes,
            classes: inputs.classes,
            test: inputs.test,
        },
        kd_mode,
        source,
        &mut ctx,
    )?;
    traces.placebo_log = log;
    state.model = out.model;
    refresh_exemplars(state, &new_data, cfg, phase)?;
    let acc = final_accuracy(state, inputs, cfg, out.accuracy)?;
    let r = report(
        inputs,
        acc,
        action,
        &traces,
        ledger.removed.len(),
        out.refills,
        out.placebos_consumed,
        started,
    );
    Ok((r, traces))
}
