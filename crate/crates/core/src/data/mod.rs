//! Samples, datasets, phase schedules, the free unlabeled stream and the
//! class-balanced local environment.

mod csv_io;
mod schedule;
mod stream;
mod synthetic;

pub use csv_io::{read_dataset, read_dataset_csv, write_dataset, write_dataset_csv};
pub use schedule::{default_local_size, rebuild_local_env, split_phases, LocalEnv, PhaseSchedule};
pub use stream::{draw_candidates, CandidateBuffer, FreeStream, StreamSource};
pub use synthetic::{make_synthetic_task, StreamGenerator, SyntheticSpec, SyntheticTask};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Ids at or above this value belong to stream samples; task ids stay below it.
pub const STREAM_ID_BASE: u64 = 1 << 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl Sample {
    pub fn labeled(id: u64, features: Vec<f64>, label: usize) -> Self {
        Self {
            id,
            features,
            label: Some(label),
        }
    }

    pub fn unlabeled(id: u64, features: Vec<f64>) -> Self {
        Self {
            id,
            features,
            label: None,
        }
    }

    /// Copy with the label removed.
    pub fn stripped(&self) -> Self {
        Self {
            label: None,
            ..self.clone()
        }
    }
}

/// Collection of samples sharing one feature dimension.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(dim: usize, samples: Vec<Sample>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.features.len() != dim) {
            return Err(Error::shape(
                format!("sample {}", bad.id),
                dim,
                bad.features.len(),
            ));
        }
        Ok(Self { dim, samples })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            samples: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.features.len() != self.dim {
            return Err(Error::shape(
                format!("sample {}", sample.id),
                self.dim,
                sample.features.len(),
            ));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = Sample>) -> Result<()> {
        for s in other {
            self.push(s)?;
        }
        Ok(())
    }

    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Dataset {
        Dataset {
            dim: self.dim,
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Samples grouped by label; unlabeled samples are skipped.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<Sample>> {
        let mut map: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
        for s in &self.samples {
            if let Some(l) = s.label {
                map.entry(l).or_default().push(s.clone());
            }
        }
        map
    }

    pub fn class_histogram(&self) -> BTreeMap<usize, usize> {
        let mut map = BTreeMap::new();
        for s in &self.samples {
            if let Some(l) = s.label {
                *map.entry(l).or_insert(0) += 1;
            }
        }
        map
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn features(&self) -> Matrix {
        features_matrix(self.dim, &self.samples)
    }

    /// Labels of every sample; errors on an unlabeled one.
    pub fn labels(&self) -> Result<Vec<usize>> {
        labels_of(&self.samples)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

pub fn features_matrix<'a, I>(dim: usize, samples: I) -> Matrix
where
    I: IntoIterator<Item = &'a Sample>,
{
    Matrix::from_rows(dim, samples.into_iter().map(|s| s.features.as_slice()))
        .expect("dataset samples share the dimension")
}

pub fn labels_of<'a, I>(samples: I) -> Result<Vec<usize>>
where
    I: IntoIterator<Item = &'a Sample>,
{
    samples
        .into_iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Domain(format!("sample {} has no label", s.id)))
        })
        .collect()
}
