//! Synthetic participants with a known comparison preference, driven through
//! the real platform so every simulated day produces the same events a human
//! session would.
//!
//! Population file (TOML):
//!
//! ```toml
//! n_users = 48
//! seed = 7
//! start_date = "2024-03-04"
//! female_share = 0.5
//! theta = { kind = "bimodal", theta0 = 1.0, mix = 0.5 }
//! tau = { min = 0.05, max = 0.05 }
//! alpha = { min = 2.0, max = 2.0 }
//! beta = { min = 0.3, max = 0.3 }
//! base_steps = { min = 4000.0, max = 10000.0 }
//! step_noise_sigma = { min = 0.1, max = 0.1 }
//! adherence = { min = 1.0, max = 1.0 }
//! ```
//!
//! Every key is optional; omitted keys take the values shown above except
//! `theta`, which defaults to uniform on [−1, 1].

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Days, NaiveDate, NaiveTime, TimeDelta, Utc};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bandit::ArmId;
use crate::error::{Error, Result};
use crate::platform::Platform;
use crate::profiles::{AttributePool, ProfileCard};
use crate::protocol::{Gender, StudyConfig};
use crate::seeding::{substream, Purpose};
use crate::steps::StepSource;

/// Preferred offset of a pure comparer (`theta = ±1`).
pub const PREFERENCE_ANCHOR: f64 = 0.25;
/// Standard deviation of the motivation response, in Likert points.
pub const MOTIVATION_NOISE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUser {
    /// −1 prefers downward targets, +1 upward.
    pub theta: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub base_steps: f64,
    pub step_noise_sigma: f64,
    pub gender: Gender,
    pub adherence: f64,
}

impl SimUser {
    pub fn validate(&self) -> Result<()> {
        let ok = (-1.0..=1.0).contains(&self.theta)
            && self.tau > 0.0
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.base_steps > 0.0
            && self.step_noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.adherence);
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid simulated user {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn point(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    fn check(&self, name: &str, lo: f64, hi: f64) -> Result<()> {
        if self.min.is_finite() && self.max.is_finite() && lo <= self.min && self.min <= self.max && self.max <= hi {
            Ok(())
        } else {
            Err(Error::Config(format!("{name}: range [{}, {}] must lie within [{lo}, {hi}]", self.min, self.max)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaDist {
    Uniform { min: f64, max: f64 },
    /// `+theta0` with probability `mix`, else `−theta0`.
    Bimodal { theta0: f64, mix: f64 },
    Point { value: f64 },
}

impl Default for ThetaDist {
    fn default() -> Self {
        ThetaDist::Uniform { min: -1.0, max: 1.0 }
    }
}

impl ThetaDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ThetaDist::Uniform { min, max } => Range { min, max }.sample(rng),
            ThetaDist::Bimodal { theta0, mix } => {
                if rng.random_bool(mix) {
                    theta0
                } else {
                    -theta0
                }
            }
            ThetaDist::Point { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ThetaDist::Uniform { min, max } => Range { min, max }.check("theta", -1.0, 1.0),
            ThetaDist::Bimodal { theta0, mix } => {
                Range::point(theta0).check("theta0", 0.0, 1.0)?;
                Range::point(mix).check("mix", 0.0, 1.0)
            }
            ThetaDist::Point { value } => Range::point(value).check("theta", -1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub n_users: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub female_share: f64,
    pub theta: ThetaDist,
    pub tau: Range,
    pub alpha: Range,
    pub beta: Range,
    pub base_steps: Range,
    pub step_noise_sigma: Range,
    pub adherence: Range,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_users: 48,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            female_share: 0.5,
            theta: ThetaDist::default(),
            tau: Range::point(0.05),
            alpha: Range::point(2.0),
            beta: Range::point(0.3),
            base_steps: Range { min: 4000.0, max: 10000.0 },
            step_noise_sigma: Range::point(0.1),
            adherence: Range::point(1.0),
        }
    }
}

impl PopulationSpec {
    /// The strongly responsive population: `|theta| = 1`, half each sign.
    pub fn responsive(n_users: usize, seed: u64) -> Self {
        Self { n_users, seed, theta: ThetaDist::Bimodal { theta0: 1.0, mix: 0.5 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be at least 1".into()));
        }
        Range::point(self.female_share).check("female_share", 0.0, 1.0)?;
        self.theta.validate()?;
        if self.tau.min <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        self.tau.check("tau", 0.0, f64::MAX)?;
        self.alpha.check("alpha", 0.0, f64::MAX)?;
        self.beta.check("beta", 0.0, f64::MAX)?;
        if self.base_steps.min <= 0.0 {
            return Err(Error::Config("base_steps must be positive".into()));
        }
        self.base_steps.check("base_steps", 0.0, f64::MAX)?;
        self.step_noise_sigma.check("step_noise_sigma", 0.0, f64::MAX)?;
        self.adherence.check("adherence", 0.0, 1.0)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(format!("population: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

pub fn sample_population(spec: &PopulationSpec) -> Result<Vec<SimUser>> {
    spec.validate()?;
    (0..spec.n_users as u64)
        .map(|i| {
            let mut rng = substream(spec.seed, Purpose::Population, i, 0);
            let gender = if rng.random_bool(spec.female_share) { Gender::Female } else { Gender::Male };
            let u = SimUser {
                theta: spec.theta.sample(&mut rng),
                tau: spec.tau.sample(&mut rng),
                alpha: spec.alpha.sample(&mut rng),
                beta: spec.beta.sample(&mut rng),
                base_steps: spec.base_steps.sample(&mut rng),
                step_noise_sigma: spec.step_noise_sigma.sample(&mut rng),
                gender,
                adherence: spec.adherence.sample(&mut rng),
            };
            u.validate()?;
            Ok(u)
        })
        .collect()
}

/// Softmax choice over `exp(−|offset − 0.25·theta| / tau)`.
pub fn sim_choose_card<R: Rng + ?Sized>(u: &SimUser, cards: &[ProfileCard], rng: &mut R) -> usize {
    assert!(!cards.is_empty(), "no cards to choose from");
    let target = PREFERENCE_ANCHOR * u.theta;
    let dist: Vec<f64> = cards.iter().map(|c| (c.true_offset - target).abs()).collect();
    let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
    // shift by the best distance so tiny temperatures do not underflow
    let weights: Vec<f64> = dist.iter().map(|d| (-(d - best) / u.tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Pre rating uniform on {2, 3, 4}; the post rating shifts it by a rounded
/// normal draw centred on `alpha · theta · dir(arm)`.
pub fn sim_motivation<R: Rng + ?Sized>(u: &SimUser, arm: ArmId, rng: &mut R) -> (u8, u8) {
    let pre: i32 = rng.random_range(2..=4);
    let mu = u.alpha * u.theta * f64::from(arm.direction());
    let shift = Normal::new(mu, MOTIVATION_NOISE).expect("finite parameters").sample(rng).round() as i32;
    (pre as u8, (pre + shift).clamp(1, 5) as u8)
}

pub fn sim_daily_steps<R: Rng + ?Sized>(u: &SimUser, arm: ArmId, rng: &mut R) -> u32 {
    let noise = Normal::new(0.0, u.step_noise_sigma).expect("finite parameters").sample(rng).exp();
    let steps = u.base_steps * (1.0 + u.beta * u.theta * f64::from(arm.direction())) * noise;
    steps.round().clamp(0.0, f64::from(u32::MAX)) as u32
}

/// A finished simulated study.
#[derive(Debug)]
pub struct SimRun {
    pub platform: Platform,
    /// `(participant_id, user)` in enrollment order.
    pub users: Vec<(String, SimUser)>,
}

impl SimRun {
    /// Ground-truth preference score per participant.
    pub fn truth(&self) -> BTreeMap<String, f64> {
        self.users.iter().map(|(pid, u)| (pid.clone(), u.theta)).collect()
    }
}

fn at(date: NaiveDate, minute: i64) -> DateTime<Utc> {
    date.and_time(NaiveTime::MIN).and_utc() + TimeDelta::hours(9) + TimeDelta::minutes(minute)
}

/// Enroll the population and run every participant through the study.
///
/// Each participant has one behaviour stream derived from the population
/// seed and their ordinal, so results do not depend on processing order.
pub fn run_study(config: &StudyConfig, spec: &PopulationSpec) -> Result<SimRun> {
    run_study_with(config, spec, AttributePool::default())
}

pub fn run_study_with(config: &StudyConfig, spec: &PopulationSpec, pool: AttributePool) -> Result<SimRun> {
    let population = sample_population(spec)?;
    let mut platform = Platform::new(config.clone(), pool, crate::events::EventStore::in_memory())?;
    let start = spec.start_date;
    let mut users = Vec::with_capacity(population.len());
    for (i, u) in population.into_iter().enumerate() {
        let (pid, _) = platform.enroll(&format!("sim-{:04}", i + 1), u.gender.as_str(), start, at(start, 0))?;
        users.push((pid, u));
    }
    let window = config.window_days().unwrap_or(config.total_days);
    for (ordinal, (pid, u)) in users.iter().enumerate() {
        let mut rng = substream(spec.seed, Purpose::UserBehavior, ordinal as u64, 0);
        let mut completed = 0;
        for offset in 0..window {
            if completed >= config.total_days {
                break;
            }
            if !rng.random_bool(u.adherence) {
                continue;
            }
            let date = start + Days::new(u64::from(offset));
            simulate_day(&mut platform, pid, u, date, &mut rng)?;
            completed += 1;
        }
    }
    Ok(SimRun { platform, users })
}

fn simulate_day<R: Rng + ?Sized>(platform: &mut Platform, pid: &str, u: &SimUser, date: NaiveDate, rng: &mut R) -> Result<()> {
    let sid = platform.start_session(pid, date, at(date, 1))?;
    let arm = platform.state().session(&sid).map(|s| s.arm).ok_or_else(|| Error::NotFound(sid.clone()))?;
    let (pre, post) = sim_motivation(u, arm, rng);
    platform.pre_motivation(&sid, pre, at(date, 2))?;
    let cards = platform.cards(&sid, at(date, 3))?.cards.clone();
    let pick = sim_choose_card(u, &cards, rng);
    let card_id = &cards[pick].card_id;
    platform.preview(&sid, card_id, at(date, 4))?;
    platform.select(&sid, card_id, at(date, 5))?;
    platform.unlock(&sid, "steps", at(date, 6))?;
    platform.unlock(&sid, "interests", at(date, 7))?;
    platform.post_motivation(&sid, post, at(date, 8))?;
    let steps = sim_daily_steps(u, arm, rng);
    platform.ingest_steps(pid, date, i64::from(steps), StepSource::Simulated, at(date, 12 * 60))?;
    Ok(())
}
