use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{PhaseSchedule, SyntheticSpec};
use crate::error::{Error, Result};
use crate::memory::ExemplarStrategy;
use crate::nn::{LossConfig, OptimizerConfig};
use crate::placebo::{Action, ScoreDirection, Selection};
use crate::policy::ActionSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdMode {
    /// Distill on selected placebos and exemplars.
    #[default]
    Placebo,
    /// Distill on the new-class batch and exemplars.
    NewData,
    /// Distill on true old-class training data.
    OldDataOracle,
    None,
}

impl KdMode {
    pub fn name(self) -> &'static str {
        match self {
            KdMode::Placebo => "placebo",
            KdMode::NewData => "new_data",
            KdMode::OldDataOracle => "old_data_oracle",
            KdMode::None => "none",
        }
    }
}

/// Which model state placebo scoring uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    /// Frozen copy taken when the phase starts.
    #[default]
    PhaseStart,
    /// The model being trained, at each refill.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Files {
        train: PathBuf,
        test: PathBuf,
        stream: Option<PathBuf>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Extractor layer widths; the last one is the feature dimension.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub exemplars_per_class: usize,
    pub strategy: ExemplarStrategy,
    /// Capacity of the candidate buffer `U`.
    pub u_cap: usize,
    /// Capacity of the placebo buffer `P`.
    pub p_cap: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            exemplars_per_class: 5,
            strategy: ExemplarStrategy::Herding,
            u_cap: 1000,
            p_cap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboConfig {
    pub selection: Selection,
    /// Placebos per old class; `max(1, p_cap / c_old)` when unset.
    pub k: Option<usize>,
    pub snapshot: SnapshotMode,
    pub direction: ScoreDirection,
    /// Keep every selected placebo in the run output.
    pub log: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Online,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub mode: PolicyMode,
    /// Action used in fixed mode.
    pub fixed: Action,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub xi: f64,
    pub floor: f64,
    /// Policy iterations `T` per phase.
    pub iterations: usize,
    /// Virtual phases after the first in each rollout (`n`).
    pub lookahead: usize,
    /// Epochs per virtual phase (`M1`); a quarter of the main epochs when unset.
    pub epochs: Option<usize>,
    /// Validation samples per class in the local environment.
    pub local_per_class: Option<usize>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let grid = vec![0.0, 0.5, 1.0, 1.5, 2.0];
        Self {
            mode: PolicyMode::Online,
            fixed: Action::new(1.0, 1.0),
            betas: grid.clone(),
            gammas: grid,
            xi: 0.3,
            floor: 0.05,
            iterations: 8,
            lookahead: 1,
            epochs: None,
            local_per_class: None,
        }
    }
}

/// How test samples are classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    /// Nearest mean of exemplars under cosine similarity of extractor features.
    #[default]
    Nme,
    /// Argmax of the linear head.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    /// Relative shares of new data, exemplars and placebos in one batch.
    pub split: [usize; 3],
    pub kd_mode: KdMode,
    pub classifier: Classifier,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            split: [2, 1, 1],
            kd_mode: KdMode::Placebo,
            classifier: Classifier::Nme,
        }
    }
}

impl TrainingConfig {
    /// Batch sizes `(d, e, p)`, each at least 1.
    pub fn batch_sizes(&self) -> (usize, usize, usize) {
        let total: usize = self.split.iter().sum();
        let share = |s: usize| (self.batch_size * s / total).max(1);
        (share(self.split[0]), share(self.split[1]), share(self.split[2]))
    }
}

/// Cells of the ablation matrix. Each axis varies alone against the base
/// config unless `cross` is set, in which case the full product runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub kd_modes: Vec<KdMode>,
    pub selections: Vec<Selection>,
    pub policies: Vec<PolicyMode>,
    pub seeds: Vec<u64>,
    pub cross: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            kd_modes: vec![KdMode::Placebo, KdMode::NewData, KdMode::OldDataOracle, KdMode::None],
            selections: vec![Selection::Scored, Selection::Random, Selection::Confidence],
            policies: vec![PolicyMode::Online, PolicyMode::Fixed],
            seeds: vec![0, 1, 2],
            cross: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Cumulative class counts `c_0 < c_1 < ...`.
    pub schedule: Vec<usize>,
    pub model: ModelConfig,
    /// Epochs here are the main-phase epochs (`M2`).
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub memory: MemoryConfig,
    pub placebo: PlaceboConfig,
    pub policy: PolicyConfig,
    pub training: TrainingConfig,
    /// Audit the budget after every optimizer step rather than once per phase.
    pub audit_every_iteration: bool,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            schedule: vec![2, 4, 6, 8, 10],
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            memory: MemoryConfig::default(),
            placebo: PlaceboConfig::default(),
            policy: PolicyConfig::default(),
            training: TrainingConfig::default(),
            audit_every_iteration: true,
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn schedule(&self) -> Result<PhaseSchedule> {
        PhaseSchedule::new(self.schedule.clone())
            .map_err(|e| Error::Config(format!("schedule: {e}")))
    }

    pub fn action_space(&self) -> Result<ActionSpace> {
        ActionSpace::grid(&self.policy.betas, &self.policy.gammas)
            .map_err(|e| Error::Config(format!("policy grid: {e}")))
    }

    /// Virtual-phase epochs `M1`.
    pub fn policy_epochs(&self) -> usize {
        self.policy
            .epochs
            .unwrap_or_else(|| (self.optimizer.epochs / 4).max(1))
    }

    /// Whether phases after the first hold stream buffers.
    pub fn uses_stream(&self) -> bool {
        self.training.kd_mode == KdMode::Placebo && self.memory.u_cap > 0
    }

    /// Whether the chosen `(beta, gamma)` can change training at all.
    pub fn action_matters(&self) -> bool {
        self.uses_stream() && self.placebo.selection == Selection::Scored
    }

    /// Placebos per old class for a phase with `old_classes` old classes.
    pub fn placebos_per_class(&self, old_classes: usize) -> usize {
        self.placebo
            .k
            .unwrap_or_else(|| (self.memory.p_cap / old_classes.max(1)).max(1))
    }

    /// Field-level checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        let schedule = self.schedule()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return cfg("model.hidden must list positive layer widths".into());
        }
        if self.memory.exemplars_per_class == 0 && schedule.phases() > 1 {
            return cfg("memory.exemplars_per_class must be positive when there are later phases".into());
        }
        if self.training.batch_size == 0 {
            return cfg("training.batch_size must be positive".into());
        }
        if self.training.split.contains(&0) {
            return cfg("training.split entries must be positive".into());
        }
        if self.placebo.k == Some(0) {
            return cfg("placebo.k must be positive".into());
        }
        if self.uses_stream() {
            if self.memory.p_cap == 0 {
                return cfg("memory.p_cap must be positive when u_cap is".into());
            }
            if self.placebo.selection != Selection::Scored && self.memory.p_cap > self.memory.u_cap {
                return cfg(format!(
                    "memory.p_cap {} exceeds memory.u_cap {}",
                    self.memory.p_cap, self.memory.u_cap
                ));
            }
            for phase in 1..schedule.phases() {
                let old = schedule.old(phase);
                let need = old * self.placebos_per_class(old);
                if need > self.memory.p_cap || need > self.memory.u_cap {
                    return cfg(format!(
                        "phase {phase}: {old} old classes x K={} placebos exceed p_cap {} or u_cap {}",
                        self.placebos_per_class(old),
                        self.memory.p_cap,
                        self.memory.u_cap
                    ));
                }
            }
        }
        self.action_space()?;
        crate::policy::PolicyState::new(1, self.policy.xi, self.policy.floor)
            .map_err(|e| Error::Config(format!("policy: {e}")))?;
        if let PolicyMode::Fixed = self.policy.mode {
            let a = self.policy.fixed;
            if !(a.beta >= 0.0 && a.gamma >= 0.0) {
                return cfg("policy.fixed must be nonnegative".into());
            }
        }
        let m1 = self.policy_epochs();
        if m1 == 0 || m1 > self.optimizer.epochs {
            return cfg(format!(
                "policy.epochs {m1} must lie in 1..={}",
                self.optimizer.epochs
            ));
        }
        if self.policy.local_per_class == Some(0) {
            return cfg("policy.local_per_class must be positive".into());
        }
        if let DataConfig::Synthetic(spec) = &self.data {
            spec.validate()?;
            if spec.classes != schedule.total_classes() {
                return cfg(format!(
                    "schedule covers {} classes but data.classes is {}",
                    schedule.total_classes(),
                    spec.classes
                ));
            }
        }
        Ok(())
    }
}
