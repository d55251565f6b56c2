//! Three-armed bandit over comparison directions.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 5;

/// Comparison direction shown to a participant on a given day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArmId {
    #[serde(rename = "down")]
    Downward,
    #[serde(rename = "mixed")]
    Mixed,
    #[serde(rename = "up")]
    Upward,
}

impl ArmId {
    pub const ALL: [ArmId; 3] = [ArmId::Downward, ArmId::Mixed, ArmId::Upward];

    /// Direction code used by the analysis: −1, 0, +1.
    pub fn direction(self) -> i8 {
        match self {
            ArmId::Downward => -1,
            ArmId::Mixed => 0,
            ArmId::Upward => 1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ArmId> {
        Self::ALL.get(i).copied()
    }

    /// Short name used in CSV files and on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            ArmId::Downward => "down",
            ArmId::Mixed => "mixed",
            ArmId::Upward => "up",
        }
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ArmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "down" | "downward" => Ok(ArmId::Downward),
            "mixed" => Ok(ArmId::Mixed),
            "up" | "upward" => Ok(ArmId::Upward),
            other => Err(Error::Validation(format!("unknown arm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmCounter {
    pub pulls: u64,
    pub reward_sum: f64,
}

/// Per-arm pull counts and reward sums, indexed by [`ArmId::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    arms: [ArmCounter; 3],
}

impl ArmStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a table from raw pulls and reward sums.
    pub fn from_parts(pulls: [u64; 3], reward_sums: [f64; 3]) -> Self {
        let mut arms = [ArmCounter::default(); 3];
        for i in 0..3 {
            arms[i] = ArmCounter { pulls: pulls[i], reward_sum: reward_sums[i] };
        }
        Self { arms }
    }

    pub fn pulls(&self, arm: ArmId) -> u64 {
        self.arms[arm.index()].pulls
    }

    pub fn reward_sum(&self, arm: ArmId) -> f64 {
        self.arms[arm.index()].reward_sum
    }

    pub fn pulls_array(&self) -> [u64; 3] {
        [self.arms[0].pulls, self.arms[1].pulls, self.arms[2].pulls]
    }

    pub fn total_pulls(&self) -> u64 {
        self.arms.iter().map(|a| a.pulls).sum()
    }

    /// Empirical mean; `None` for an unpulled arm.
    pub fn mean(&self, arm: ArmId) -> Option<f64> {
        let c = &self.arms[arm.index()];
        (c.pulls > 0).then(|| c.reward_sum / c.pulls as f64)
    }

    /// Record one pull of `arm` with the given reward.
    pub fn update(&mut self, arm: ArmId, reward: &Reward) {
        let c = &mut self.arms[arm.index()];
        c.pulls += 1;
        c.reward_sum += reward.value;
    }

    /// Functional form of [`ArmStats::update`].
    pub fn updated(mut self, arm: ArmId, reward: &Reward) -> Self {
        self.update(arm, reward);
        self
    }
}

/// Blend between motivation change and daily steps in the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_motivation: f64,
    pub w_steps: f64,
}

impl RewardWeights {
    pub fn new(w_motivation: f64, w_steps: f64) -> Result<Self> {
        let w = Self { w_motivation, w_steps };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.w_motivation) || !in_unit(self.w_steps) {
            return Err(Error::Config("reward weights must lie in [0, 1]".into()));
        }
        if (self.w_motivation + self.w_steps - 1.0).abs() > 1e-12 {
            return Err(Error::Config("reward weights must sum to 1".into()));
        }
        Ok(())
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w_motivation: 0.5, w_steps: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub motivation_component: f64,
    /// Absent on non-wear days.
    pub steps_component: Option<f64>,
}

pub fn validate_likert(v: u8) -> Result<u8> {
    if (LIKERT_MIN..=LIKERT_MAX).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Validation(format!(
            "Likert rating {v} outside {LIKERT_MIN}..={LIKERT_MAX}"
        )))
    }
}

/// Reward for one day.
///
/// The motivation change in [−4, 4] maps affinely onto [0, 1]; steps map to
/// `min(steps / (2·baseline_mean), 1)`. `steps = None` marks a non-wear day,
/// scored on motivation alone.
pub fn compute_reward(
    pre_motivation: u8,
    post_motivation: u8,
    steps: Option<u32>,
    baseline_mean: f64,
    weights: &RewardWeights,
) -> Result<Reward> {
    let pre = validate_likert(pre_motivation).map_err(|e| Error::Domain(e.to_string()))?;
    let post = validate_likert(post_motivation).map_err(|e| Error::Domain(e.to_string()))?;
    if !baseline_mean.is_finite() || baseline_mean <= 0.0 {
        return Err(Error::Domain(format!("baseline mean must be positive, got {baseline_mean}")));
    }
    let span = f64::from(LIKERT_MAX - LIKERT_MIN);
    let delta = f64::from(post) - f64::from(pre);
    let motivation_component = (delta + span) / (2.0 * span);
    let steps_component = steps.map(|s| (f64::from(s) / (2.0 * baseline_mean)).min(1.0));
    let value = match steps_component {
        Some(s) => weights.w_motivation * motivation_component + weights.w_steps * s,
        None => motivation_component,
    };
    Ok(Reward { value, motivation_component, steps_component })
}

/// Pure form of the per-day statistics update.
pub fn update_stats(stats: &ArmStats, arm: ArmId, reward: &Reward) -> ArmStats {
    stats.updated(arm, reward)
}

fn pick_tied<R: Rng + ?Sized>(candidates: &[ArmId], rng: &mut R) -> ArmId {
    *candidates.choose(rng).expect("at least one candidate arm")
}

fn unpulled(stats: &ArmStats) -> Vec<ArmId> {
    ArmId::ALL.into_iter().filter(|&a| stats.pulls(a) == 0).collect()
}

/// UCB1 score `mean + c·sqrt(2·ln(total)/pulls)`; `None` for unpulled arms.
pub fn ucb_score(stats: &ArmStats, arm: ArmId, exploration_c: f64) -> Option<f64> {
    let mean = stats.mean(arm)?;
    let total = stats.total_pulls() as f64;
    let bonus = (2.0 * total.ln() / stats.pulls(arm) as f64).sqrt();
    Some(mean + exploration_c * bonus)
}

fn argmax_tied<R: Rng + ?Sized>(scores: [(ArmId, f64); 3], rng: &mut R) -> ArmId {
    let best = scores.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<ArmId> = scores.iter().filter(|&&(_, s)| s == best).map(|&(a, _)| a).collect();
    pick_tied(&tied, rng)
}

pub fn select_arm_ucb<R: Rng + ?Sized>(stats: &ArmStats, exploration_c: f64, rng: &mut R) -> ArmId {
    debug_assert!(exploration_c > 0.0);
    let fresh = unpulled(stats);
    if !fresh.is_empty() {
        return pick_tied(&fresh, rng);
    }
    let scores = ArmId::ALL.map(|a| (a, ucb_score(stats, a, exploration_c).unwrap_or(f64::NEG_INFINITY)));
    argmax_tied(scores, rng)
}

/// With probability ε a uniform arm, otherwise the best empirical mean.
/// Unpulled arms are tried first.
pub fn select_arm_epsilon_greedy<R: Rng + ?Sized>(stats: &ArmStats, epsilon: f64, rng: &mut R) -> ArmId {
    let fresh = unpulled(stats);
    if !fresh.is_empty() {
        return pick_tied(&fresh, rng);
    }
    if rng.random::<f64>() < epsilon {
        return select_arm_uniform(rng);
    }
    let scores = ArmId::ALL.map(|a| (a, stats.mean(a).unwrap_or(f64::NEG_INFINITY)));
    argmax_tied(scores, rng)
}

pub fn select_arm_uniform<R: Rng + ?Sized>(rng: &mut R) -> ArmId {
    ArmId::ALL[rng.random_range(0..3)]
}

/// Adaptive-phase selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Ucb1 { c: f64 },
    EpsilonGreedy { epsilon: f64 },
}

impl Strategy {
    pub fn select<R: Rng + ?Sized>(&self, stats: &ArmStats, rng: &mut R) -> ArmId {
        match *self {
            Strategy::Ucb1 { c } => select_arm_ucb(stats, c, rng),
            Strategy::EpsilonGreedy { epsilon } => select_arm_epsilon_greedy(stats, epsilon, rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Ucb1 { c } if c.is_nan() || c <= 0.0 => Err(Error::Config("UCB1 exploration constant must be > 0".into())),
            Strategy::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                Err(Error::Config("epsilon must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Ucb1 { c: 1.0 }
    }
}
