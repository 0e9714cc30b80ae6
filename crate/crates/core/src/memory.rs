//! Exemplar storage and selection, strict-budget removal and the budget ledger.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{features_matrix, Dataset, Sample};
use crate::error::{Error, Result};
use crate::nn::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarStrategy {
    #[default]
    Herding,
    Random,
}

/// Per-class exemplar lists `E_1..E_c`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExemplarStore {
    per_class_cap: usize,
    classes: BTreeMap<usize, Vec<Sample>>,
}

impl ExemplarStore {
    pub fn new(per_class_cap: usize) -> Self {
        Self {
            per_class_cap,
            classes: BTreeMap::new(),
        }
    }

    pub fn per_class_cap(&self) -> usize {
        self.per_class_cap
    }

    pub fn insert(&mut self, class: usize, exemplars: Vec<Sample>) -> Result<()> {
        if exemplars.len() > self.per_class_cap {
            return Err(Error::Domain(format!(
                "class {class}: {} exemplars exceed cap {}",
                exemplars.len(),
                self.per_class_cap
            )));
        }
        if let Some(s) = exemplars.iter().find(|s| s.label != Some(class)) {
            return Err(Error::Domain(format!(
                "exemplar {} is not labeled as class {class}",
                s.id
            )));
        }
        self.classes.insert(class, exemplars);
        Ok(())
    }

    pub fn class(&self, class: usize) -> Option<&[Sample]> {
        self.classes.get(&class).map(Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = (usize, &[Sample])> {
        self.classes.iter().map(|(&c, v)| (c, v.as_slice()))
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every exemplar, classes ascending.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.classes.values().flatten()
    }

    pub fn to_dataset(&self, dim: usize) -> Result<Dataset> {
        Dataset::new(dim, self.samples().cloned().collect())
    }
}

/// Picks `min(cap, |class_data|)` exemplars for one class.
///
/// Herding greedily adds the sample that keeps the running mean of selected
/// features closest to the class-mean feature; ties go to the earlier sample.
pub fn select_exemplars<R: Rng + ?Sized>(
    model: &Model,
    class_data: &[Sample],
    cap: usize,
    strategy: ExemplarStrategy,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    let Some(first) = class_data.first() else {
        return Err(Error::Domain("cannot select exemplars from an empty class".into()));
    };
    if class_data.iter().any(|s| s.label != first.label) {
        return Err(Error::Domain("exemplar selection expects a single class".into()));
    }
    let take = cap.min(class_data.len());
    if take == class_data.len() {
        return Ok(class_data.to_vec());
    }
    match strategy {
        ExemplarStrategy::Random => {
            let mut picks = index::sample(rng, class_data.len(), take).into_vec();
            picks.sort_unstable();
            Ok(picks.into_iter().map(|i| class_data[i].clone()).collect())
        }
        ExemplarStrategy::Herding => {
            let feats = model.features(&features_matrix(first.features.len(), class_data))?;
            let f = feats.cols();
            let n = feats.rows();
            let mut mean = vec![0.0; f];
            for row in feats.iter_rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            Ok(herd(&feats, &mean, take)
                .into_iter()
                .map(|i| class_data[i].clone())
                .collect())
        }
    }
}

fn herd(feats: &crate::nn::Matrix, mean: &[f64], take: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(take);
    let mut used = vec![false; feats.rows()];
    let mut sum = vec![0.0; mean.len()];
    for k in 1..=take {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in feats.iter_rows().enumerate() {
            if used[i] {
                continue;
            }
            let dist: f64 = mean
                .iter()
                .zip(&sum)
                .zip(row)
                .map(|((m, s), x)| (m - (s + x) / k as f64).powi(2))
                .sum();
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("take <= rows");
        used[i] = true;
        for (s, x) in sum.iter_mut().zip(feats.row(i)) {
            *s += x;
        }
        chosen.push(i);
    }
    chosen
}

/// Removes `u_cap + p_cap` new-class samples uniformly at random, once per phase.
pub fn apply_strict_budget<R: Rng + ?Sized>(
    new_data: &Dataset,
    u_cap: usize,
    p_cap: usize,
    rng: &mut R,
) -> Result<(Dataset, Vec<u64>)> {
    let removal = u_cap + p_cap;
    if removal == 0 {
        return Ok((new_data.clone(), Vec::new()));
    }
    if new_data.len() <= removal {
        return Err(Error::BudgetInfeasible {
            new_data: new_data.len(),
            removal,
        });
    }
    let mut drop = vec![false; new_data.len()];
    for i in index::sample(rng, new_data.len(), removal) {
        drop[i] = true;
    }
    let mut removed = Vec::with_capacity(removal);
    let mut kept = Vec::with_capacity(new_data.len() - removal);
    for (s, d) in new_data.iter().zip(drop) {
        if d {
            removed.push(s.id);
        } else {
            kept.push(s.clone());
        }
    }
    Ok((Dataset::new(new_data.dim(), kept)?, removed))
}

/// Samples held in memory, by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldCounts {
    pub new_data: usize,
    pub exemplars: usize,
    pub candidates: usize,
    pub placebos: usize,
}

impl HeldCounts {
    pub fn total(&self) -> usize {
        self.new_data + self.exemplars + self.candidates + self.placebos
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BudgetLedger {
    /// What the no-placebo baseline holds: all new data plus exemplar capacity.
    pub base_budget: usize,
    pub u_cap: usize,
    pub p_cap: usize,
    pub held: HeldCounts,
    pub removed: Vec<u64>,
}

impl BudgetLedger {
    pub fn new(new_data_before_removal: usize, exemplar_capacity: usize, u_cap: usize, p_cap: usize) -> Self {
        Self {
            base_budget: new_data_before_removal + exemplar_capacity,
            u_cap,
            p_cap,
            held: HeldCounts::default(),
            removed: Vec::new(),
        }
    }

    pub fn audit(&self, counts: &HeldCounts) -> AuditReport {
        audit(self, counts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Fails iff the held total exceeds the base budget or a buffer exceeds its cap.
pub fn audit(ledger: &BudgetLedger, counts: &HeldCounts) -> AuditReport {
    let mut violations = Vec::new();
    if counts.candidates > ledger.u_cap {
        violations.push(format!(
            "candidates {} exceed u_cap {}",
            counts.candidates, ledger.u_cap
        ));
    }
    if counts.placebos > ledger.p_cap {
        violations.push(format!(
            "placebos {} exceed p_cap {}",
            counts.placebos, ledger.p_cap
        ));
    }
    if counts.total() > ledger.base_budget {
        violations.push(format!(
            "total held {} exceeds budget {} (new_data {}, exemplars {}, candidates {}, placebos {})",
            counts.total(),
            ledger.base_budget,
            counts.new_data,
            counts.exemplars,
            counts.candidates,
            counts.placebos
        ));
    }
    AuditReport {
        ok: violations.is_empty(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub phase: usize,
    pub iteration: usize,
    pub counts: HeldCounts,
    pub budget: usize,
    pub ok: bool,
}

/// Audit log; serialized as `phase,iteration,new_data,exemplars,candidates,placebos,budget,ok`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditTrail {
    pub records: Vec<AuditRecord>,
    /// Messages of failed audits.
    pub failures: Vec<String>,
}

impl AuditTrail {
    pub fn record(&mut self, phase: usize, iteration: usize, ledger: &BudgetLedger, counts: HeldCounts) -> bool {
        let report = audit(ledger, &counts);
        if !report.ok {
            self.failures.extend(
                report
                    .violations
                    .iter()
                    .map(|v| format!("phase {phase} iteration {iteration}: {v}")),
            );
        }
        self.records.push(AuditRecord {
            phase,
            iteration,
            counts,
            budget: ledger.base_budget,
            ok: report.ok,
        });
        report.ok
    }

    pub fn failure_count(&self) -> usize {
        self.records.iter().filter(|r| !r.ok).count()
    }

    pub fn append(&mut self, other: AuditTrail) {
        self.records.extend(other.records);
        self.failures.extend(other.failures);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,iteration,new_data,exemplars,candidates,placebos,budget,ok\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.phase,
                r.iteration,
                r.counts.new_data,
                r.counts.exemplars,
                r.counts.candidates,
                r.counts.placebos,
                r.budget,
                r.ok
            );
        }
        out
    }
}
