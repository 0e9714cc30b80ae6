use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Cumulative class counts `c_0 < c_1 < ... < c_N`; phase `i` introduces
/// classes `c_{i-1}..c_i` (0-based ids, `c_{-1} = 0`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct PhaseSchedule {
    class_counts: Vec<usize>,
}

impl PhaseSchedule {
    pub fn new(class_counts: Vec<usize>) -> Result<Self> {
        if class_counts.is_empty() {
            return Err(Error::Config("schedule needs at least one phase".into()));
        }
        if class_counts[0] == 0 {
            return Err(Error::Config("schedule phase 0 must introduce classes".into()));
        }
        if class_counts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "schedule class counts must be strictly increasing: {class_counts:?}"
            )));
        }
        Ok(Self { class_counts })
    }

    /// `phases` phases of `per_phase` classes each.
    pub fn uniform(per_phase: usize, phases: usize) -> Result<Self> {
        Self::new((1..=phases).map(|i| i * per_phase).collect())
    }

    pub fn phases(&self) -> usize {
        self.class_counts.len()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn total_classes(&self) -> usize {
        *self.class_counts.last().expect("nonempty")
    }

    /// Classes seen after phase `i` (`c_i`).
    pub fn seen(&self, phase: usize) -> usize {
        self.class_counts[phase]
    }

    /// Classes seen before phase `i` (`c_{i-1}`, 0 for phase 0).
    pub fn old(&self, phase: usize) -> usize {
        if phase == 0 {
            0
        } else {
            self.class_counts[phase - 1]
        }
    }

    pub fn new_classes(&self, phase: usize) -> Range<usize> {
        self.old(phase)..self.seen(phase)
    }
}

impl TryFrom<Vec<usize>> for PhaseSchedule {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PhaseSchedule> for Vec<usize> {
    fn from(s: PhaseSchedule) -> Self {
        s.class_counts
    }
}

/// Per-phase new-class datasets `D_{c_{i-1}+1:c_i}`.
pub fn split_phases(dataset: &Dataset, schedule: &PhaseSchedule) -> Result<Vec<Dataset>> {
    let hist = dataset.class_histogram();
    let total = schedule.total_classes();
    let missing: Vec<usize> = (0..total).filter(|c| !hist.contains_key(c)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "dataset lacks samples for scheduled classes {missing:?}"
        )));
    }
    let extra: Vec<usize> = hist.keys().copied().filter(|&c| c >= total).collect();
    if !extra.is_empty() {
        return Err(Error::Config(format!(
            "dataset has classes {extra:?} outside the schedule's {total}"
        )));
    }
    if let Some(s) = dataset.iter().find(|s| s.label.is_none()) {
        return Err(Error::Config(format!("task sample {} has no label", s.id)));
    }
    Ok((0..schedule.phases())
        .map(|i| {
            let r = schedule.new_classes(i);
            dataset.filter(|s| s.label.is_some_and(|l| r.contains(&l)))
        })
        .collect())
}

/// Local environment `h_i = (T \ B, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEnv {
    pub train: Dataset,
    pub validation: Dataset,
}

/// Default size of the per-class validation subset: `min(5, smallest class - 1)`.
pub fn default_local_size(train: &Dataset) -> usize {
    let min = train.class_histogram().values().copied().min().unwrap_or(0);
    5.min(min.saturating_sub(1))
}

/// Holds out exactly `per_class` samples of every class as a balanced validation set.
pub fn rebuild_local_env<R: Rng + ?Sized>(
    train: &Dataset,
    per_class: usize,
    rng: &mut R,
) -> Result<LocalEnv> {
    if per_class == 0 {
        return Err(Error::Config("local validation size must be positive".into()));
    }
    let mut kept = Dataset::empty(train.dim());
    let mut held = Dataset::empty(train.dim());
    for (class, mut samples) in train.by_class() {
        if samples.len() < per_class + 1 {
            return Err(Error::ClassTooSmall {
                class,
                available: samples.len(),
                required: per_class + 1,
            });
        }
        samples.shuffle(rng);
        let rest = samples.split_off(per_class);
        held.extend(samples)?;
        kept.extend(rest)?;
    }
    Ok(LocalEnv {
        train: kept,
        validation: held,
    })
}
