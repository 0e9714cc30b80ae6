//! Class prototypes, the phase-specific evaluation function and placebo
//! buffer management.
//!
//! For old class `m`, a candidate `x` with extractor feature `F(x)` scores
//!
//! ```text
//! S_m(x) = -cos(F(x), P_m)
//!          + beta  * mean_{n != m} cos(F(x), P_n)      (old classes)
//!          + gamma * mean_{l}      cos(F(x), Q_l)      (new classes)
//! ```
//!
//! Good placebos sit close to their own prototype and away from the others,
//! so by default the lowest scores are kept.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{features_matrix, CandidateBuffer, Sample};
use crate::error::{Error, Result};
use crate::nn::loss::softmax;
use crate::nn::{cosine, Matrix, Model};

/// Scoring hyperparameters `(beta, gamma)` chosen by the policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub beta: f64,
    pub gamma: f64,
}

impl Action {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Self { beta, gamma }
    }
}

/// Which end of the score range counts as a good placebo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDirection {
    #[default]
    Lowest,
    Highest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Per-class top-K under the evaluation function.
    #[default]
    Scored,
    Random,
    /// Highest max old-class softmax probability.
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    /// Indexed by old class id `0..c_old`.
    pub old: Vec<Vec<f64>>,
    /// New classes in ascending id order.
    pub new: Vec<Vec<f64>>,
    /// Fingerprint of the model the features came from.
    pub snapshot: u64,
}

impl PrototypeSet {
    pub fn old_classes(&self) -> usize {
        self.old.len()
    }
}

fn mean_feature(model: &Model, samples: &[Sample], class: usize) -> Result<Vec<f64>> {
    let first = samples.first().ok_or_else(|| {
        Error::Domain(format!("class {class} has no samples for its prototype"))
    })?;
    let feats = model.features(&features_matrix(first.features.len(), samples))?;
    let mut mean = vec![0.0; feats.cols()];
    for row in feats.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Mean extractor feature per class: old classes from exemplars, new classes
/// from their training data. `old[m]` is class `m`; `new[j]` is class `old.len() + j`.
pub fn compute_prototypes(
    snapshot: &Model,
    old: &[&[Sample]],
    new: &[&[Sample]],
) -> Result<PrototypeSet> {
    let old_p = old
        .iter()
        .enumerate()
        .map(|(m, s)| mean_feature(snapshot, s, m))
        .collect::<Result<Vec<_>>>()?;
    let new_p = new
        .iter()
        .enumerate()
        .map(|(j, s)| mean_feature(snapshot, s, old.len() + j))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrototypeSet {
        old: old_p,
        new: new_p,
        snapshot: snapshot.fingerprint(),
    })
}

/// Cosine similarities of one feature vector to every prototype.
struct Similarities {
    old: Vec<f64>,
    old_sum: f64,
    new_mean: f64,
}

impl Similarities {
    fn new(feature: &[f64], protos: &PrototypeSet) -> Self {
        let old: Vec<f64> = protos.old.iter().map(|p| cosine(feature, p)).collect();
        let old_sum = old.iter().sum();
        let new_mean = if protos.new.is_empty() {
            0.0
        } else {
            protos.new.iter().map(|p| cosine(feature, p)).sum::<f64>() / protos.new.len() as f64
        };
        Self {
            old,
            old_sum,
            new_mean,
        }
    }

    fn score(&self, m: usize, action: Action) -> f64 {
        let c_old = self.old.len();
        let others = if c_old > 1 {
            (self.old_sum - self.old[m]) / (c_old - 1) as f64
        } else {
            0.0
        };
        -self.old[m] + action.beta * others + action.gamma * self.new_mean
    }
}

/// `S_m` for an already extracted feature vector.
pub fn score_feature(feature: &[f64], m: usize, protos: &PrototypeSet, action: Action) -> Result<f64> {
    if m >= protos.old_classes() {
        return Err(Error::Domain(format!(
            "class {m} is not an old class (have {})",
            protos.old_classes()
        )));
    }
    Ok(Similarities::new(feature, protos).score(m, action))
}

/// `S_m(x)` using the snapshot's extractor.
pub fn evaluate(
    sample: &Sample,
    m: usize,
    protos: &PrototypeSet,
    action: Action,
    snapshot: &Model,
) -> Result<f64> {
    let x = Matrix::from_rows(sample.features.len(), [sample.features.as_slice()])?;
    let f = snapshot.features(&x)?;
    score_feature(f.row(0), m, protos, action)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboEntry {
    pub sample: Sample,
    /// Old class the placebo was selected for (scored and confidence modes).
    pub class: Option<usize>,
    pub score: Option<f64>,
}

/// Bounded store of selected placebos; entries leave as soon as they are used.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlaceboBuffer {
    entries: VecDeque<PlaceboEntry>,
    capacity: usize,
}

impl PlaceboBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn from_entries(entries: Vec<PlaceboEntry>, capacity: usize) -> Self {
        debug_assert!(entries.len() <= capacity);
        Self {
            entries: entries.into(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PlaceboEntry> {
        self.entries.iter()
    }

    /// Removes and returns up to `batch_size` entries in stored order.
    /// Puts the entries in random order so consumed batches mix classes.
    pub fn shuffle<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.entries.make_contiguous().shuffle(rng);
    }

    pub fn consume(&mut self, batch_size: usize) -> Vec<PlaceboEntry> {
        let n = batch_size.min(self.entries.len());
        self.entries.drain(..n).collect()
    }
}

fn candidate_features(candidates: &CandidateBuffer, snapshot: &Model) -> Result<Matrix> {
    let dim = snapshot.input_dim();
    if let Some(s) = candidates.samples.iter().find(|s| s.features.len() != dim) {
        return Err(Error::shape(format!("candidate {}", s.id), dim, s.features.len()));
    }
    snapshot.features(&features_matrix(dim, &candidates.samples))
}

/// Selects `K` placebos per old class.
///
/// Classes are processed in ascending id; each takes its `K` best remaining
/// candidates (ties by candidate id), so no candidate serves two classes.
pub fn refill_placebos(
    candidates: &CandidateBuffer,
    protos: &PrototypeSet,
    action: Action,
    k: usize,
    snapshot: &Model,
    direction: ScoreDirection,
) -> Result<PlaceboBuffer> {
    let classes = protos.old_classes();
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    if classes == 0 {
        return Err(Error::Domain("placebo selection needs at least one old class".into()));
    }
    let needed = classes * k;
    if candidates.len() < needed {
        return Err(Error::RefillUnderflow {
            needed,
            available: candidates.len(),
            classes,
            k,
        });
    }
    let feats = candidate_features(candidates, snapshot)?;
    let sims: Vec<Similarities> = feats.iter_rows().map(|f| Similarities::new(f, protos)).collect();
    let mut taken = vec![false; candidates.len()];
    let mut entries = Vec::with_capacity(needed);
    for m in 0..classes {
        let mut ranked: Vec<(f64, u64, usize)> = (0..candidates.len())
            .filter(|&i| !taken[i])
            .map(|i| (sims[i].score(m, action), candidates.samples[i].id, i))
            .collect();
        ranked.sort_by(|a, b| {
            let by_score = match direction {
                ScoreDirection::Lowest => a.0.total_cmp(&b.0),
                ScoreDirection::Highest => b.0.total_cmp(&a.0),
            };
            by_score.then(a.1.cmp(&b.1))
        });
        for &(score, _, i) in ranked.iter().take(k) {
            taken[i] = true;
            entries.push(PlaceboEntry {
                sample: candidates.samples[i].clone(),
                class: Some(m),
                score: Some(score),
            });
        }
    }
    Ok(PlaceboBuffer::from_entries(entries, needed))
}

/// Ablation comparators: uniform random picks, or the most confident ones
/// under the snapshot's first `old_classes` logits.
pub fn baseline_select<R: Rng + ?Sized>(
    candidates: &CandidateBuffer,
    mode: Selection,
    snapshot: &Model,
    old_classes: usize,
    count: usize,
    rng: &mut R,
) -> Result<PlaceboBuffer> {
    if count > candidates.len() {
        return Err(Error::RefillUnderflow {
            needed: count,
            available: candidates.len(),
            classes: old_classes,
            k: count / old_classes.max(1),
        });
    }
    let entries = match mode {
        Selection::Random => {
            let mut picks = index::sample(rng, candidates.len(), count).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|i| PlaceboEntry {
                    sample: candidates.samples[i].clone(),
                    class: None,
                    score: None,
                })
                .collect()
        }
        Selection::Confidence => {
            if old_classes == 0 || old_classes > snapshot.class_count() {
                return Err(Error::Domain(format!(
                    "confidence selection over {old_classes} classes with a {}-class snapshot",
                    snapshot.class_count()
                )));
            }
            let dim = snapshot.input_dim();
            let logits = snapshot
                .forward(&features_matrix(dim, &candidates.samples))?
                .logits;
            let mut ranked: Vec<(f64, usize, u64, usize)> = logits
                .iter_rows()
                .enumerate()
                .map(|(i, row)| {
                    let p = softmax(&row[..old_classes]);
                    let (cls, conf) = p
                        .iter()
                        .copied()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (c, v)| if v > best.1 { (c, v) } else { best });
                    (conf, cls, candidates.samples[i].id, i)
                })
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)));
            ranked
                .into_iter()
                .take(count)
                .map(|(conf, cls, _, i)| PlaceboEntry {
                    sample: candidates.samples[i].clone(),
                    class: Some(cls),
                    score: Some(conf),
                })
                .collect()
        }
        Selection::Scored => {
            return Err(Error::Domain(
                "scored selection goes through refill_placebos".into(),
            ))
        }
    };
    Ok(PlaceboBuffer::from_entries(entries, count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboLogRow {
    pub phase: usize,
    pub refill_index: usize,
    pub class: Option<usize>,
    pub candidate_id: u64,
    pub score: Option<f64>,
}

/// `phase,refill_index,class,candidate_id,score`; empty cells for missing values.
pub fn placebo_log_csv(rows: &[PlaceboLogRow]) -> String {
    let mut out = String::from("phase,refill_index,class,candidate_id,score\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.phase,
            r.refill_index,
            r.class.map(|c| c.to_string()).unwrap_or_default(),
            r.candidate_id,
            r.score.map(|s| s.to_string()).unwrap_or_default()
        );
    }
    out
}
