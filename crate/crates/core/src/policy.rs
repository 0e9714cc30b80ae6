//! Exp3 policy over a discrete grid of `(beta, gamma)` actions.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::placebo::Action;
use crate::seed;

/// Weights above this trigger a rescale by the maximum weight.
pub const RENORMALIZE_ABOVE: f64 = 1e100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    grid: Vec<Action>,
}

impl ActionSpace {
    pub fn new(grid: Vec<Action>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Config("action space is empty".into()));
        }
        for (i, a) in grid.iter().enumerate() {
            if !(a.beta >= 0.0 && a.gamma >= 0.0 && a.beta.is_finite() && a.gamma.is_finite()) {
                return Err(Error::Config(format!(
                    "action ({}, {}) must be finite and nonnegative",
                    a.beta, a.gamma
                )));
            }
            if grid[..i].contains(a) {
                return Err(Error::Config(format!(
                    "duplicate action ({}, {})",
                    a.beta, a.gamma
                )));
            }
        }
        Ok(Self { grid })
    }

    /// Cartesian product, beta-major.
    pub fn grid(betas: &[f64], gammas: &[f64]) -> Result<Self> {
        Self::new(
            betas
                .iter()
                .flat_map(|&b| gammas.iter().map(move |&g| Action::new(b, g)))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn get(&self, index: usize) -> Action {
        self.grid[index]
    }

    pub fn actions(&self) -> &[Action] {
        &self.grid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    weights: Vec<f64>,
    xi: f64,
    floor: f64,
}

impl PolicyState {
    /// All-ones weights.
    pub fn new(actions: usize, xi: f64, floor: f64) -> Result<Self> {
        Self::from_weights(vec![1.0; actions], xi, floor)
    }

    pub fn from_weights(weights: Vec<f64>, xi: f64, floor: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("policy needs at least one action".into()));
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::Config(format!("xi must be positive, got {xi}")));
        }
        if !(0.0..1.0).contains(&floor) {
            return Err(Error::Config(format!("exploration floor must be in [0, 1), got {floor}")));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("policy weight {w} is not positive and finite")));
        }
        Ok(Self { weights, xi, floor })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `p(a) = (1 - floor) w(a) / sum(w) + floor / |A|`.
    pub fn distribution(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        let uniform = self.floor / self.weights.len() as f64;
        self.weights
            .iter()
            .map(|w| (1.0 - self.floor) * w / total + uniform)
            .collect()
    }

    /// Draws an action index and returns it with its probability.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let dist = self.distribution();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in dist.iter().enumerate() {
            acc += p;
            if u < acc {
                return (i, *p);
            }
        }
        // Rounding left u above the running sum; take the last positive entry.
        let i = dist.iter().rposition(|p| *p > 0.0).unwrap_or(dist.len() - 1);
        (i, dist[i])
    }

    /// `w(a) *= exp(xi * r_norm / p)`.
    pub fn update(&mut self, action: usize, r_norm: f64, probability: f64) -> Result<()> {
        if action >= self.weights.len() {
            return Err(Error::Domain(format!("action index {action} out of range")));
        }
        if !(probability > 0.0 && probability <= 1.0) {
            return Err(Error::Domain(format!("action probability {probability} not in (0, 1]")));
        }
        if !(0.0..=1.0).contains(&r_norm) {
            return Err(Error::Domain(format!("normalized reward {r_norm} not in [0, 1]")));
        }
        let log_w = self.weights[action].ln() + self.xi * r_norm / probability;
        if log_w <= RENORMALIZE_ABOVE.ln() {
            self.weights[action] *= (self.xi * r_norm / probability).exp();
            return Ok(());
        }
        let mut logs: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        logs[action] = log_w;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (w, l) in self.weights.iter_mut().zip(logs) {
            *w = (l - max).exp().max(f64::MIN_POSITIVE);
        }
        Ok(())
    }
}

/// Sum of the per-virtual-phase accuracies of one rollout.
pub fn decoupled_reward(accuracies: &[f64]) -> Result<f64> {
    if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Domain(format!("rollout accuracy {a} outside [0, 1]")));
    }
    Ok(accuracies.iter().sum())
}

/// Reward scaled to `[0, 1]` by the rollout length.
pub fn normalized_reward(total: f64, rollout_len: usize) -> f64 {
    if rollout_len == 0 {
        0.0
    } else {
        total / rollout_len as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub phase: usize,
    pub iteration: usize,
    pub action_index: usize,
    pub action: Action,
    pub probability: f64,
    pub rewards: Vec<f64>,
    pub total: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDump {
    pub phase: usize,
    pub weights: Vec<f64>,
}

/// `phase,iter,beta,gamma,p_action,R,R_norm`.
pub fn policy_trace_csv(records: &[RewardRecord]) -> String {
    let mut out = String::from("phase,iter,beta,gamma,p_action,R,R_norm\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.phase, r.iteration, r.action.beta, r.action.gamma, r.probability, r.total, r.normalized
        );
    }
    out
}

/// `phase,beta,gamma,weight,probability`, one row per action per phase.
pub fn weight_dump_csv(space: &ActionSpace, dumps: &[WeightDump], floor: f64) -> String {
    let mut out = String::from("phase,beta,gamma,weight,probability\n");
    for d in dumps {
        let total: f64 = d.weights.iter().sum();
        for (a, w) in space.actions().iter().zip(&d.weights) {
            let p = (1.0 - floor) * w / total + floor / d.weights.len() as f64;
            let _ = writeln!(out, "{},{},{},{},{}", d.phase, a.beta, a.gamma, w, p);
        }
    }
    out
}

/// Stationary Bernoulli bandit used to exercise the policy in isolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditSpec {
    /// Mean reward per arm, each in `[0, 1]`.
    pub arms: Vec<f64>,
    pub rounds: usize,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_xi() -> f64 {
    0.3
}

fn default_floor() -> f64 {
    0.05
}

impl BanditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Config("bandit spec needs at least one arm".into()));
        }
        if let Some(m) = self.arms.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::Config(format!("arm mean {m} outside [0, 1]")));
        }
        PolicyState::new(self.arms.len(), self.xi, self.floor).map(|_| ())
    }

    /// First arm with the highest mean.
    pub fn best_arm(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.arms.iter().enumerate() {
            if *m > self.arms[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessRound {
    pub round: usize,
    pub arm: usize,
    pub reward: f64,
    pub best_arm_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub best_arm: usize,
    pub rounds: Vec<HarnessRound>,
    pub cumulative_reward: f64,
    pub final_distribution: Vec<f64>,
}

impl HarnessReport {
    pub fn final_best_mass(&self) -> f64 {
        self.final_distribution[self.best_arm]
    }

    /// `round,arm,reward,best_arm_mass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,arm,reward,best_arm_mass\n");
        for r in &self.rounds {
            let _ = writeln!(out, "{},{},{},{}", r.round, r.arm, r.reward, r.best_arm_mass);
        }
        out
    }
}

/// Runs the sample, reward, update loop for `spec.rounds` rounds.
pub fn regret_harness(spec: &BanditSpec) -> Result<HarnessReport> {
    spec.validate()?;
    let mut state = PolicyState::new(spec.arms.len(), spec.xi, spec.floor)?;
    let mut rng = seed::rng(spec.seed, seed::POLICY, &[]);
    let best_arm = spec.best_arm();
    let mut rounds = Vec::with_capacity(spec.rounds);
    let mut cumulative = 0.0;
    for round in 0..spec.rounds {
        let (arm, p) = state.sample(&mut rng);
        let mean = spec.arms[arm];
        let reward = if rng.random::<f64>() < mean { 1.0 } else { 0.0 };
        state.update(arm, reward, p)?;
        cumulative += reward;
        rounds.push(HarnessRound {
            round,
            arm,
            reward,
            best_arm_mass: state.distribution()[best_arm],
        });
    }
    Ok(HarnessReport {
        best_arm,
        rounds,
        cumulative_reward: cumulative,
        final_distribution: state.distribution(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn distribution_examples() {
        assert!(close(&PolicyState::new(4, 0.3, 0.0).unwrap().distribution(), &[0.25; 4]));
        let p = PolicyState::from_weights(vec![3.0, 1.0], 0.3, 0.0).unwrap();
        assert!(close(&p.distribution(), &[0.75, 0.25]));
        let p = PolicyState::from_weights(vec![3.0, 1.0], 0.3, 0.1).unwrap();
        assert!(close(&p.distribution(), &[0.725, 0.275]));
    }

    #[test]
    fn invalid_states_rejected() {
        assert!(PolicyState::from_weights(vec![1.0, 0.0], 0.3, 0.0).is_err());
        assert!(PolicyState::new(2, 0.0, 0.0).is_err());
        assert!(PolicyState::new(2, 0.3, 1.0).is_err());
        assert!(ActionSpace::new(vec![]).is_err());
        assert!(ActionSpace::grid(&[0.0, 0.0], &[1.0]).is_err());
        assert_eq!(ActionSpace::grid(&[0.0, 0.5], &[0.0, 1.0, 2.0]).unwrap().len(), 6);
    }

    #[test]
    fn single_action_always_sampled() {
        let p = PolicyState::new(1, 0.3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(p.sample(&mut rng), (0, 1.0));
        }
    }

    #[test]
    fn scalar_update() {
        let mut p = PolicyState::new(2, 0.1, 0.0).unwrap();
        p.update(0, 0.5, 0.5).unwrap();
        assert!((p.weights()[0] - 0.1f64.exp()).abs() < 1e-12);
        assert!((p.weights()[0] - 1.10517).abs() < 1e-5);
        assert_eq!(p.weights()[1], 1.0);
    }

    #[test]
    fn zero_reward_is_noop() {
        let mut p = PolicyState::from_weights(vec![2.0, 3.0], 0.3, 0.05).unwrap();
        let before = p.clone();
        p.update(1, 0.0, 0.4).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let mut p = PolicyState::new(2, 0.3, 0.0).unwrap();
        assert!(p.update(0, 0.5, 0.0).is_err());
        assert!(p.update(0, 1.5, 0.5).is_err());
        assert!(p.update(2, 0.5, 0.5).is_err());
    }

    #[test]
    fn overflow_renormalizes() {
        let mut p = PolicyState::from_weights(vec![1e99, 1.0], 1.0, 0.0).unwrap();
        p.update(0, 1.0, 1e-3).unwrap();
        assert!(p.weights().iter().all(|w| w.is_finite() && *w > 0.0));
        assert_eq!(p.weights()[0], 1.0);
        let d = p.distribution();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rewards() {
        assert_eq!(decoupled_reward(&[0.8]).unwrap(), 0.8);
        assert!((decoupled_reward(&[0.8, 0.7, 0.6]).unwrap() - 2.1).abs() < 1e-12);
        assert_eq!(decoupled_reward(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(decoupled_reward(&[1.2]).is_err());
        assert!((normalized_reward(2.1, 3) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_rounds_is_uniform() {
        let r = regret_harness(&BanditSpec {
            arms: vec![1.0, 0.0],
            rounds: 0,
            xi: 0.2,
            floor: 0.05,
            seed: 0,
        })
        .unwrap();
        assert!(r.rounds.is_empty());
        assert!(close(&r.final_distribution, &[0.5, 0.5]));
        assert_eq!(r.to_csv(), "round,arm,reward,best_arm_mass\n");
    }

    #[test]
    fn trace_layout() {
        let rec = RewardRecord {
            phase: 1,
            iteration: 0,
            action_index: 3,
            action: Action::new(0.5, 1.0),
            probability: 0.25,
            rewards: vec![0.8, 0.6],
            total: 1.4,
            normalized: 0.7,
        };
        let csv = policy_trace_csv(&[rec]);
        assert_eq!(csv, "phase,iter,beta,gamma,p_action,R,R_norm\n1,0,0.5,1,0.25,1.4,0.7\n");
    }
}
