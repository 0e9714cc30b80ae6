//! One training run: student initialized from the teacher, trained with
//! cross-entropy on new data and exemplars plus distillation on placebos.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Classifier, ExperimentConfig, KdMode, SnapshotMode};
use crate::data::{draw_candidates, features_matrix, labels_of, Dataset, FreeStream, Sample};
use crate::error::{Error, Result};
use crate::memory::{AuditTrail, BudgetLedger, HeldCounts};
use crate::memory::select_exemplars;
use crate::nn::matrix::norm;
use crate::nn::{ce_loss_grad, cosine, kd_loss_grad_over, Matrix, Model, Sgd};
use crate::placebo::{
    baseline_select, compute_prototypes, refill_placebos, Action, PlaceboBuffer, PlaceboLogRow,
    PrototypeSet, Selection,
};
use crate::seed;

/// Test accuracy split into old and new classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    pub old: Option<f64>,
    pub new: Option<f64>,
    pub n_old: usize,
    pub n_new: usize,
}

fn accuracy_from(preds: &[usize], labels: &[usize], old_classes: usize) -> Result<Accuracy> {
    if labels.is_empty() {
        return Err(Error::Domain("accuracy of an empty test set".into()));
    }
    let (mut n_old, mut n_new, mut hit_old, mut hit_new) = (0, 0, 0, 0);
    for (p, y) in preds.iter().zip(labels) {
        let hit = usize::from(p == y);
        if *y < old_classes {
            n_old += 1;
            hit_old += hit;
        } else {
            n_new += 1;
            hit_new += hit;
        }
    }
    let frac = |h: usize, n: usize| (n > 0).then(|| h as f64 / n as f64);
    Ok(Accuracy {
        overall: (hit_old + hit_new) as f64 / labels.len() as f64,
        old: frac(hit_old, n_old),
        new: frac(hit_new, n_new),
        n_old,
        n_new,
    })
}

/// Linear-head accuracy on `test`, where labels below `old_classes` count as old.
pub fn evaluate_accuracy(model: &Model, test: &Dataset, old_classes: usize) -> Result<Accuracy> {
    let labels = test.labels()?;
    let preds = model.predict(&test.features())?;
    accuracy_from(&preds, &labels, old_classes)
}

fn unit(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Normalized mean of normalized features per class; `class_sets[c]` holds class `c`.
pub fn class_means(model: &Model, class_sets: &[&[Sample]]) -> Result<Vec<Vec<f64>>> {
    class_sets
        .iter()
        .enumerate()
        .map(|(c, set)| {
            let first = set.first().ok_or_else(|| {
                Error::Domain(format!("class {c} has no exemplars for its mean"))
            })?;
            let feats = model.features(&features_matrix(first.features.len(), set.iter()))?;
            let mut mean = vec![0.0; feats.cols()];
            for row in feats.iter_rows() {
                let mut r = row.to_vec();
                unit(&mut r);
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += v;
                }
            }
            unit(&mut mean);
            Ok(mean)
        })
        .collect()
}

/// Nearest-mean-of-exemplars accuracy: each test sample goes to the class
/// whose mean has the highest cosine similarity with its feature.
pub fn nme_accuracy(
    model: &Model,
    class_sets: &[&[Sample]],
    test: &Dataset,
    old_classes: usize,
) -> Result<Accuracy> {
    let means = class_means(model, class_sets)?;
    let labels = test.labels()?;
    let feats = model.features(&test.features())?;
    let preds: Vec<usize> = feats
        .iter_rows()
        .map(|f| {
            let sims: Vec<f64> = means.iter().map(|m| cosine(f, m)).collect();
            argmax_first(&sims)
        })
        .collect();
    accuracy_from(&preds, &labels, old_classes)
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Data seen by one training run.
#[derive(Debug, Clone, Copy)]
pub struct RunData<'a> {
    /// Labeled new-class training data.
    pub new_data: &'a Dataset,
    /// Old-class exemplars.
    pub exemplars: &'a [Sample],
    /// Number of old classes; distillation covers these logits.
    pub old_classes: usize,
    /// Classes the student must cover.
    pub classes: usize,
    /// Reward / evaluation set.
    pub test: &'a Dataset,
}

/// Where distillation inputs come from.
pub enum KdSource<'a> {
    /// Unlabeled stream feeding the candidate buffer.
    Stream(&'a mut FreeStream),
    /// True old-class samples, drawn batch by batch.
    OldData(&'a mut FreeStream),
    Off,
}

/// Mutable bookkeeping shared by every run of one phase.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub phase: usize,
    pub epochs: usize,
    /// Separates the random streams of different runs in the same phase.
    pub path: Vec<u64>,
    pub ledger: &'a BudgetLedger,
    /// Samples held outside this run's data (the local validation split).
    pub extra_held: HeldCounts,
    pub audit: &'a mut AuditTrail,
    /// Audit index, continuing across runs of the phase.
    pub audit_index: &'a mut usize,
    pub placebo_log: Option<&'a mut Vec<PlaceboLogRow>>,
    /// Refill counter, continuing across runs of the phase.
    pub refill_index: &'a mut usize,
}

impl RunContext<'_> {
    fn rng(&self, offset: u64) -> ChaCha8Rng {
        let mut path = vec![self.phase as u64];
        path.extend(&self.path);
        seed::rng(self.cfg.seed, offset, &path)
    }

    fn audit_now(&mut self, base: HeldCounts, candidates: usize, placebos: usize) {
        let counts = HeldCounts {
            new_data: base.new_data + self.extra_held.new_data,
            exemplars: base.exemplars + self.extra_held.exemplars,
            candidates: candidates + self.extra_held.candidates,
            placebos: placebos + self.extra_held.placebos,
        };
        self.audit
            .record(self.phase, *self.audit_index, self.ledger, counts);
        *self.audit_index += 1;
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub accuracy: Accuracy,
    pub steps: usize,
    pub refills: usize,
    pub placebos_selected: usize,
    pub placebos_consumed: usize,
    /// Placebos still buffered when training ended.
    pub placebos_left: usize,
}

struct Refiller<'a> {
    selection: Selection,
    snapshot_mode: SnapshotMode,
    snapshot: Model,
    protos: Option<PrototypeSet>,
    action: Action,
    k: usize,
    u_cap: usize,
    old_classes: usize,
    data: RunData<'a>,
    rng: ChaCha8Rng,
}

impl Refiller<'_> {
    fn prototypes(&self, model: &Model) -> Result<PrototypeSet> {
        let by_old = group(self.data.exemplars, 0..self.old_classes);
        let by_new = group(self.data.new_data.samples(), self.old_classes..self.data.classes);
        let old: Vec<&[Sample]> = by_old.iter().map(Vec::as_slice).collect();
        let new: Vec<&[Sample]> = by_new.iter().map(Vec::as_slice).collect();
        compute_prototypes(model, &old, &new)
    }

    fn refill(
        &mut self,
        stream: &mut FreeStream,
        live: &Model,
        ctx: &mut RunContext<'_>,
        base: HeldCounts,
    ) -> Result<PlaceboBuffer> {
        let u = draw_candidates(stream, self.u_cap, self.u_cap)?;
        let count = self.old_classes * self.k;
        let mut buffer = match self.selection {
            Selection::Scored => {
                let (model, protos) = match self.snapshot_mode {
                    SnapshotMode::PhaseStart => {
                        if self.protos.is_none() {
                            self.protos = Some(self.prototypes(&self.snapshot)?);
                        }
                        (&self.snapshot, self.protos.clone().expect("set above"))
                    }
                    SnapshotMode::Live => (live, self.prototypes(live)?),
                };
                refill_placebos(
                    &u,
                    &protos,
                    self.action,
                    self.k,
                    model,
                    ctx.cfg.placebo.direction,
                )?
            }
            mode => {
                let model = match self.snapshot_mode {
                    SnapshotMode::PhaseStart => &self.snapshot,
                    SnapshotMode::Live => live,
                };
                baseline_select(&u, mode, model, self.old_classes, count, &mut self.rng)?
            }
        };
        ctx.audit_now(base, u.len(), buffer.len());
        let refill_index = *ctx.refill_index;
        *ctx.refill_index += 1;
        if let Some(log) = ctx.placebo_log.as_deref_mut() {
            log.extend(buffer.entries().map(|e| PlaceboLogRow {
                phase: ctx.phase,
                refill_index,
                class: e.class,
                candidate_id: e.sample.id,
                score: e.score,
            }));
        }
        buffer.shuffle(&mut self.rng);
        Ok(buffer)
    }
}

fn group(samples: &[Sample], classes: std::ops::Range<usize>) -> Vec<Vec<Sample>> {
    let start = classes.start;
    let mut out = vec![Vec::new(); classes.len()];
    for s in samples {
        if let Some(l) = s.label.filter(|l| classes.contains(l)) {
            out[l - start].push(s.clone());
        }
    }
    out
}

fn rows_matrix(dim: usize, samples: &[&Sample]) -> Matrix {
    features_matrix(dim, samples.iter().copied())
}

/// Trains a student from `teacher` for `ctx.epochs` epochs.
///
/// Each optimizer step takes a batch `d` of new data, a batch `e` of
/// exemplars (with replacement) and, in placebo mode, a batch `p` consumed
/// from the placebo buffer, which is refilled from the stream whenever it
/// runs dry. The loss is `CE(d + e) + lambda * KD(p + e)`.
pub fn train_with_action(
    teacher: &Model,
    action: Action,
    data: RunData<'_>,
    kd_mode: KdMode,
    mut source: KdSource<'_>,
    ctx: &mut RunContext<'_>,
) -> Result<TrainOutcome> {
    let cfg = ctx.cfg;
    let dim = teacher.input_dim();
    if data.new_data.dim() != dim {
        return Err(Error::shape("new-class data", dim, data.new_data.dim()));
    }
    if data.new_data.is_empty() {
        return Err(Error::Domain(format!("phase {}: no new-class training data", ctx.phase)));
    }
    if data.old_classes > 0 && data.exemplars.is_empty() {
        return Err(Error::Config(format!(
            "phase {}: exemplar store is empty",
            ctx.phase
        )));
    }
    if data.old_classes > teacher.class_count() {
        return Err(Error::Domain(format!(
            "teacher covers {} classes but {} are old",
            teacher.class_count(),
            data.old_classes
        )));
    }
    let kd_mode = if data.old_classes == 0 { KdMode::None } else { kd_mode };
    match (&source, kd_mode) {
        (KdSource::Stream(_), KdMode::Placebo)
        | (KdSource::OldData(_), KdMode::OldDataOracle)
        | (KdSource::Off, KdMode::NewData | KdMode::None) => {}
        _ => {
            return Err(Error::Config(format!(
                "distillation mode {} has no matching data source",
                kd_mode.name()
            )))
        }
    }

    let mut student = teacher.clone();
    if student.class_count() < data.classes {
        student.expand_head(data.classes)?;
    }
    let (d_bs, e_bs, p_bs) = if data.old_classes == 0 {
        (cfg.training.batch_size, 0, 0)
    } else {
        cfg.training.batch_sizes()
    };
    let lambda = cfg.loss.lambda;
    let base = HeldCounts {
        new_data: data.new_data.len(),
        exemplars: data.exemplars.len(),
        candidates: 0,
        placebos: 0,
    };

    let mut refiller = Refiller {
        selection: cfg.placebo.selection,
        snapshot_mode: cfg.placebo.snapshot,
        snapshot: student.clone(),
        protos: None,
        action,
        k: cfg.placebos_per_class(data.old_classes),
        u_cap: cfg.memory.u_cap,
        old_classes: data.old_classes,
        data,
        rng: ctx.rng(seed::SELECTION),
    };
    let mut batch_rng = ctx.rng(seed::BATCHES);
    let mut sgd = Sgd::new(cfg.optimizer.clone());
    let mut buffer = PlaceboBuffer::default();
    let mut order: Vec<usize> = (0..data.new_data.len()).collect();
    let new_samples = data.new_data.samples();
    let mut outcome_steps = 0;
    let (mut refills, mut selected, mut consumed) = (0, 0, 0);

    for epoch in 0..ctx.epochs {
        order.shuffle(&mut batch_rng);
        for chunk in order.chunks(d_bs) {
            let e_count = if data.exemplars.is_empty() { 0 } else { e_bs };
            let e: Vec<&Sample> = (0..e_count)
                .map(|_| &data.exemplars[batch_rng.random_range(0..data.exemplars.len())])
                .collect();
            let d: Vec<&Sample> = chunk.iter().map(|&i| &new_samples[i]).collect();

            let kd_extra: Vec<Sample> = match (&mut source, kd_mode) {
                (KdSource::Stream(stream), KdMode::Placebo) => {
                    if buffer.is_empty() {
                        buffer = refiller.refill(stream, &student, ctx, base)?;
                        refills += 1;
                        selected += buffer.len();
                    }
                    let p = buffer.consume(p_bs);
                    consumed += p.len();
                    p.into_iter().map(|entry| entry.sample).collect()
                }
                (KdSource::OldData(pool), KdMode::OldDataOracle) => {
                    draw_candidates(pool, p_bs, p_bs)?.samples
                }
                _ => Vec::new(),
            };

            let ce_rows: Vec<&Sample> = d.iter().chain(&e).copied().collect();
            let ce_x = rows_matrix(dim, &ce_rows);
            let ce_y = labels_of(ce_rows.iter().copied())?;
            let (_, mut grads) = ce_loss_grad(&student, &ce_x, &ce_y)?;

            if lambda != 0.0 && kd_mode != KdMode::None {
                let kd_rows: Vec<&Sample> = match kd_mode {
                    KdMode::NewData => ce_rows.clone(),
                    _ => kd_extra.iter().chain(e.iter().copied()).collect(),
                };
                if !kd_rows.is_empty() {
                    let kd_x = rows_matrix(dim, &kd_rows);
                    let (_, kd_grads) =
                        kd_loss_grad_over(teacher, &student, &kd_x, &cfg.loss, data.old_classes)?;
                    grads.add_scaled(&kd_grads, lambda);
                }
            }
            sgd.step(&mut student, &grads, epoch);
            outcome_steps += 1;
            if cfg.audit_every_iteration {
                ctx.audit_now(base, 0, buffer.len());
            }
        }
    }
    if !cfg.audit_every_iteration {
        ctx.audit_now(base, 0, buffer.len());
    }
    let accuracy = match cfg.training.classifier {
        Classifier::Linear => evaluate_accuracy(&student, data.test, data.old_classes)?,
        Classifier::Nme => {
            let mut sets = group(data.exemplars, 0..data.old_classes);
            let mut rng = ctx.rng(seed::EXEMPLARS);
            for class_data in group(new_samples, data.old_classes..data.classes) {
                if class_data.is_empty() {
                    sets.push(class_data);
                    continue;
                }
                sets.push(select_exemplars(
                    &student,
                    &class_data,
                    cfg.memory.exemplars_per_class.max(1),
                    cfg.memory.strategy,
                    &mut rng,
                )?);
            }
            let refs: Vec<&[Sample]> = sets.iter().map(Vec::as_slice).collect();
            nme_accuracy(&student, &refs, data.test, data.old_classes)?
        }
    };
    Ok(TrainOutcome {
        model: student,
        accuracy,
        steps: outcome_steps,
        refills,
        placebos_selected: selected,
        placebos_consumed: consumed,
        placebos_left: buffer.len(),
    })
}
