//! Gaussian-cluster classification tasks with a disjoint unlabeled stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, STREAM_ID_BASE};
use crate::error::{Error, Result};
use crate::seed::mix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    /// Standard deviation of each class-mean coordinate.
    pub mean_scale: f64,
    /// Isotropic standard deviation within a class.
    pub class_sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Explicit class means; overrides `mean_scale` when present.
    pub means: Option<Vec<Vec<f64>>>,
    pub stream_clusters: usize,
    pub stream_sigma: f64,
    /// Standard deviation of each stream-cluster-mean coordinate.
    pub stream_mean_scale: f64,
    /// Minimum distance between a non-overlapping stream mean and every class mean.
    pub stream_min_distance: f64,
    /// Fraction of stream clusters centered on task class means.
    pub overlap_fraction: f64,
    /// Fraction of stream clusters placed `stream_min_distance` away from a
    /// task class mean, cycling through the classes.
    pub neighbor_fraction: f64,
    pub stream_pool_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 16,
            mean_scale: 1.0,
            class_sigma: 1.0,
            train_per_class: 2500,
            test_per_class: 300,
            means: None,
            stream_clusters: 20,
            stream_sigma: 1.0,
            stream_mean_scale: 1.0,
            stream_min_distance: 1.0,
            overlap_fraction: 0.0,
            neighbor_fraction: 0.0,
            stream_pool_size: 4000,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return cfg(format!("synthetic.dim must be >= 2, got {}", self.dim));
        }
        if self.classes == 0 {
            return cfg("synthetic.classes must be positive".into());
        }
        if self.train_per_class < 2 {
            return cfg(format!(
                "synthetic.train_per_class must be >= 2, got {}",
                self.train_per_class
            ));
        }
        for (name, v) in [
            ("class_sigma", self.class_sigma),
            ("stream_sigma", self.stream_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return cfg(format!("synthetic.{name} must be positive, got {v}"));
            }
        }
        if !(self.mean_scale >= 0.0 && self.stream_mean_scale >= 0.0) {
            return cfg("synthetic mean scales must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction)
            || !(0.0..=1.0).contains(&self.neighbor_fraction)
            || self.overlap_fraction + self.neighbor_fraction > 1.0
        {
            return cfg(
                "synthetic.overlap_fraction and neighbor_fraction must lie in [0, 1] and sum to at most 1"
                    .into(),
            );
        }
        if self.stream_min_distance < 0.0 {
            return cfg("synthetic.stream_min_distance must be nonnegative".into());
        }
        if let Some(means) = &self.means {
            if means.len() != self.classes {
                return cfg(format!(
                    "synthetic.means has {} entries for {} classes",
                    means.len(),
                    self.classes
                ));
            }
            if means.iter().any(|m| m.len() != self.dim) {
                return cfg("synthetic.means entries must have length dim".into());
            }
        }
        if self.stream_clusters == 0 {
            return cfg("synthetic.stream_clusters must be positive".into());
        }
        Ok(())
    }
}

/// Infinite unlabeled source: sample `k` is a pure function of `(seed, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamGenerator {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub seed: u64,
}

impl StreamGenerator {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample(&self, k: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, k));
        let c = rng.random_range(0..self.means.len());
        let features = self.means[c]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + self.sigma * z
            })
            .collect();
        Sample::unlabeled(STREAM_ID_BASE + k, features)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub train: Dataset,
    pub test: Dataset,
    pub stream_pool: Vec<Sample>,
    pub generator: StreamGenerator,
    pub class_means: Vec<Vec<f64>>,
}

fn gaussian_point<R: Rng>(center: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    center
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma * z
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn make_synthetic_task(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTask> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = vec![0.0; spec.dim];
    let class_means = match &spec.means {
        Some(m) => m.clone(),
        None => (0..spec.classes)
            .map(|_| gaussian_point(&origin, spec.mean_scale, &mut rng))
            .collect(),
    };

    let mut next_id = 0u64;
    let mut draw_split = |per_class: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut samples = Vec::with_capacity(per_class * spec.classes);
        for (label, mean) in class_means.iter().enumerate() {
            for _ in 0..per_class {
                samples.push(Sample::labeled(
                    next_id,
                    gaussian_point(mean, spec.class_sigma, rng),
                    label,
                ));
                next_id += 1;
            }
        }
        Dataset::new(spec.dim, samples)
    };
    let train = draw_split(spec.train_per_class, &mut rng)?;
    let test = draw_split(spec.test_per_class, &mut rng)?;

    let overlapping = (spec.overlap_fraction * spec.stream_clusters as f64).round() as usize;
    let mut stream_means = Vec::with_capacity(spec.stream_clusters);
    for c in 0..overlapping {
        stream_means.push(class_means[c % class_means.len()].clone());
    }
    let neighbors = (spec.neighbor_fraction * spec.stream_clusters as f64).round() as usize;
    let neighbors = neighbors.min(spec.stream_clusters - overlapping);
    const MAX_ATTEMPTS: usize = 100_000;
    while stream_means.len() < spec.stream_clusters {
        let k = stream_means.len() - overlapping;
        let mut attempts = 0;
        loop {
            let cand = if k < neighbors {
                let anchor = &class_means[k % class_means.len()];
                let dir = gaussian_point(&origin, 1.0, &mut rng);
                let len = distance(&dir, &origin).max(f64::MIN_POSITIVE);
                anchor
                    .iter()
                    .zip(&dir)
                    .map(|(a, d)| a + spec.stream_min_distance * d / len)
                    .collect()
            } else {
                gaussian_point(&origin, spec.stream_mean_scale, &mut rng)
            };
            if class_means
                .iter()
                .all(|m| distance(m, &cand) >= spec.stream_min_distance * (1.0 - 1e-9))
            {
                stream_means.push(cand);
                break;
            }
            attempts += 1;
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::Config(format!(
                    "could not place a stream cluster {} away from every class mean",
                    spec.stream_min_distance
                )));
            }
        }
    }
    let generator = StreamGenerator {
        means: stream_means,
        sigma: spec.stream_sigma,
        seed: mix(seed, 0x5157_7e4d),
    };
    let stream_pool = (0..spec.stream_pool_size as u64)
        .map(|k| generator.sample(k))
        .collect();
    Ok(SyntheticTask {
        train,
        test,
        stream_pool,
        generator,
        class_means,
    })
}
