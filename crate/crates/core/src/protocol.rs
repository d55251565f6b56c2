//! Study protocol: condition assignment, arm scheduling, the daily session
//! state machine and next-day finalization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{compute_reward, select_arm_uniform, validate_likert, ArmId, ArmStats, Reward, RewardWeights, Strategy};
use crate::error::{Error, Result};
use crate::profiles::{ProfileCard, CARDS_PER_DAY};
use crate::steps::StepRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Control,
    Experimental,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Control, Condition::Experimental];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Control => "control",
            Condition::Experimental => "experimental",
        }
    }

    pub fn other(self) -> Condition {
        match self {
            Condition::Control => Condition::Experimental,
            Condition::Experimental => Condition::Control,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(Condition::Control),
            "experimental" => Ok(Condition::Experimental),
            other => Err(Error::Validation(format!("unknown condition `{other}`"))),
        }
    }
}

/// Randomization stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
    Other,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Female, Gender::Male, Gender::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
            Gender::Other => "other",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            "other" => Ok(Gender::Other),
            other => Err(Error::Enrollment(format!("unknown gender category `{other}`"))),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub baseline_days: u32,
    pub total_days: u32,
    pub non_wear_threshold: u32,
    pub default_baseline_steps: u32,
    pub weights: RewardWeights,
    pub strategy: Strategy,
    pub likert_min: u8,
    pub likert_max: u8,
    pub seed: u64,
    /// Adaptive phase ignores baseline-period rewards when set.
    pub cold_start: bool,
    /// Calendar days a participant has to complete `total_days` sessions.
    /// Defaults to `total_days + 7`.
    pub window_days: Option<u32>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            baseline_days: 9,
            total_days: 21,
            non_wear_threshold: 100,
            default_baseline_steps: 6000,
            weights: RewardWeights::default(),
            strategy: Strategy::default(),
            likert_min: 1,
            likert_max: 5,
            seed: 0,
            cold_start: false,
            window_days: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.baseline_days >= self.total_days {
            return Err(Error::Config("baseline_days must be smaller than total_days".into()));
        }
        if !self.baseline_days.is_multiple_of(3) || self.baseline_days == 0 {
            return Err(Error::Config("baseline_days must be a positive multiple of 3".into()));
        }
        if self.non_wear_threshold < 1 {
            return Err(Error::Config("non_wear_threshold must be at least 1".into()));
        }
        if self.default_baseline_steps == 0 {
            return Err(Error::Config("default_baseline_steps must be positive".into()));
        }
        if (self.likert_min, self.likert_max) != (1, 5) {
            return Err(Error::Config("only a 1..5 Likert scale is supported".into()));
        }
        if self.window_days().unwrap_or(0) < self.total_days {
            return Err(Error::Config("window_days must be at least total_days".into()));
        }
        self.weights.validate()?;
        self.strategy.validate()
    }

    pub fn window_days(&self) -> Option<u32> {
        Some(self.window_days.unwrap_or(self.total_days + 7))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: StudyConfig = toml::from_str(s).map_err(|e| Error::Config(format!("study config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_baseline_day(&self, day_index: u32) -> bool {
        day_index <= self.baseline_days
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantModel {
    pub participant_id: String,
    /// Enrollment order; keys the participant's random substreams.
    pub ordinal: u64,
    pub external_id: String,
    pub gender: Gender,
    pub condition: Condition,
    pub baseline_schedule: Vec<ArmId>,
    pub arm_stats: ArmStats,
    pub baseline_wear_steps: Vec<u32>,
    pub baseline_mean_steps: Option<f64>,
    pub enrolled_on: NaiveDate,
    pub day_counter: u32,
}

impl ParticipantModel {
    pub fn baseline_mean_or_default(&self, config: &StudyConfig) -> f64 {
        self.baseline_mean_steps.unwrap_or(f64::from(config.default_baseline_steps))
    }
}

/// What [`arm_for_day`] may look at. Lets tests observe which parts of a
/// participant the scheduler reads.
pub trait BanditView {
    fn condition(&self) -> Condition;
    fn baseline_schedule(&self) -> &[ArmId];
    fn arm_stats(&self) -> &ArmStats;
}

impl BanditView for ParticipantModel {
    fn condition(&self) -> Condition {
        self.condition
    }

    fn baseline_schedule(&self) -> &[ArmId] {
        &self.baseline_schedule
    }

    fn arm_stats(&self) -> &ArmStats {
        &self.arm_stats
    }
}

/// Per-gender block state for stratified randomization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRegistry {
    strata: BTreeMap<Gender, Stratum>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
struct Stratum {
    enrolled: u64,
    pending: Option<Condition>,
}

impl EnrollmentRegistry {
    pub fn enrolled(&self, gender: Gender) -> u64 {
        self.strata.get(&gender).map_or(0, |s| s.enrolled)
    }

    /// Index of the block the next enrollee of `gender` falls into.
    pub fn next_block(&self, gender: Gender) -> u64 {
        self.enrolled(gender) / 2
    }

    /// Record an assignment made elsewhere (log replay).
    pub fn record(&mut self, gender: Gender, condition: Condition) -> Result<()> {
        let s = self.strata.entry(gender).or_default();
        match s.pending.take() {
            Some(expected) if expected != condition => {
                return Err(Error::Enrollment(format!(
                    "block for {gender} expects {expected}, log says {condition}"
                )))
            }
            Some(_) => {}
            None => s.pending = Some(condition.other()),
        }
        s.enrolled += 1;
        Ok(())
    }
}

/// Stratified block randomization with blocks of two per gender: each pair of
/// same-gender enrollees gets one of each condition in random order.
pub fn assign_condition<R: Rng + ?Sized>(
    registry: &mut EnrollmentRegistry,
    gender: &str,
    rng: &mut R,
) -> Result<Condition> {
    let gender: Gender = gender.parse()?;
    let s = registry.strata.entry(gender).or_default();
    let condition = match s.pending.take() {
        Some(c) => c,
        None => {
            let c = if rng.random::<bool>() { Condition::Control } else { Condition::Experimental };
            s.pending = Some(c.other());
            c
        }
    };
    s.enrolled += 1;
    Ok(condition)
}

/// Random permutation of `len / 3` copies of each arm.
pub fn make_schedule<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<ArmId> {
    debug_assert_eq!(len % 3, 0);
    let mut schedule: Vec<ArmId> = ArmId::ALL.iter().flat_map(|&a| std::iter::repeat_n(a, len / 3)).collect();
    schedule.shuffle(rng);
    schedule
}

/// Nine-day baseline schedule: each arm three times.
pub fn make_baseline_schedule<R: Rng + ?Sized>(rng: &mut R) -> Vec<ArmId> {
    make_schedule(9, rng)
}

pub fn arm_for_day<V: BanditView + ?Sized, R: Rng + ?Sized>(
    p: &V,
    day_index: u32,
    config: &StudyConfig,
    rng: &mut R,
) -> Result<ArmId> {
    if day_index < 1 || day_index > config.total_days {
        return Err(Error::Domain(format!("day {day_index} outside 1..={}", config.total_days)));
    }
    if config.is_baseline_day(day_index) {
        return p
            .baseline_schedule()
            .get(day_index as usize - 1)
            .copied()
            .ok_or_else(|| Error::Domain(format!("baseline schedule has no day {day_index}")));
    }
    Ok(match p.condition() {
        Condition::Control => select_arm_uniform(rng),
        Condition::Experimental => config.strategy.select(p.arm_stats(), rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SessionState {
    Started,
    PreRated,
    CardsIssued,
    Selected,
    PostRated,
    Closed,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub card_id: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlockEvent {
    pub section: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySession {
    pub session_id: String,
    pub participant_id: String,
    pub day_index: u32,
    pub date: NaiveDate,
    pub arm: ArmId,
    pub reference_steps: u32,
    pub cards: Vec<ProfileCard>,
    pub pre_motivation: Option<u8>,
    pub previews: Vec<Preview>,
    pub selection: Option<String>,
    pub unlock_events: Vec<UnlockEvent>,
    pub post_motivation: Option<u8>,
    pub steps: Option<u32>,
    pub wear: Option<bool>,
    pub reward: Option<Reward>,
    pub state: SessionState,
    pub started_at: DateTime<Utc>,
    pub pre_rated_at: Option<DateTime<Utc>>,
    pub cards_issued_at: Option<DateTime<Utc>>,
    pub selected_at: Option<DateTime<Utc>>,
    pub post_rated_at: Option<DateTime<Utc>>,
    pub closed_at: Option<DateTime<Utc>>,
}

impl DailySession {
    pub fn new(
        session_id: String,
        participant_id: String,
        day_index: u32,
        date: NaiveDate,
        arm: ArmId,
        started_at: DateTime<Utc>,
    ) -> Self {
        Self {
            session_id,
            participant_id,
            day_index,
            date,
            arm,
            reference_steps: 0,
            cards: Vec::new(),
            pre_motivation: None,
            previews: Vec::new(),
            selection: None,
            unlock_events: Vec::new(),
            post_motivation: None,
            steps: None,
            wear: None,
            reward: None,
            state: SessionState::Started,
            started_at,
            pre_rated_at: None,
            cards_issued_at: None,
            selected_at: None,
            post_rated_at: None,
            closed_at: None,
        }
    }

    pub fn card(&self, card_id: &str) -> Option<&ProfileCard> {
        self.cards.iter().find(|c| c.card_id == card_id)
    }

    /// 1-based position of a card in the order shown.
    pub fn card_ordinal(&self, card_id: &str) -> Option<usize> {
        self.cards.iter().position(|c| c.card_id == card_id).map(|i| i + 1)
    }

    pub fn selected_card(&self) -> Option<&ProfileCard> {
        self.selection.as_deref().and_then(|id| self.card(id))
    }

    /// Whether the participant completed the day's flow.
    pub fn is_completed(&self) -> bool {
        self.state >= SessionState::Closed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SessionEvent {
    PreMotivation(u8),
    IssueCards { reference_steps: u32, cards: Vec<ProfileCard> },
    Preview(String),
    Unlock(String),
    Select(String),
    PostMotivation(u8),
    Close,
}

impl SessionEvent {
    fn name(&self) -> &'static str {
        match self {
            SessionEvent::PreMotivation(_) => "pre-motivation",
            SessionEvent::IssueCards { .. } => "issue-cards",
            SessionEvent::Preview(_) => "preview",
            SessionEvent::Unlock(_) => "unlock",
            SessionEvent::Select(_) => "select",
            SessionEvent::PostMotivation(_) => "post-motivation",
            SessionEvent::Close => "close",
        }
    }

    fn legal_in(&self) -> SessionState {
        match self {
            SessionEvent::PreMotivation(_) => SessionState::Started,
            SessionEvent::IssueCards { .. } => SessionState::PreRated,
            SessionEvent::Preview(_) | SessionEvent::Select(_) => SessionState::CardsIssued,
            SessionEvent::Unlock(_) | SessionEvent::PostMotivation(_) => SessionState::Selected,
            SessionEvent::Close => SessionState::PostRated,
        }
    }
}

/// Apply one event to a session. Illegal orderings are sequencing errors,
/// bad values validation errors; the input session is never modified.
pub fn advance_session(s: &DailySession, event: SessionEvent, at: DateTime<Utc>) -> Result<DailySession> {
    if s.state != event.legal_in() {
        return Err(Error::Sequencing(format!(
            "{} not allowed in state {:?}",
            event.name(),
            s.state
        )));
    }
    let mut next = s.clone();
    match event {
        SessionEvent::PreMotivation(v) => {
            next.pre_motivation = Some(validate_likert(v)?);
            next.pre_rated_at = Some(at);
            next.state = SessionState::PreRated;
        }
        SessionEvent::IssueCards { reference_steps, cards } => {
            if cards.len() != CARDS_PER_DAY {
                return Err(Error::Validation(format!("expected {CARDS_PER_DAY} cards, got {}", cards.len())));
            }
            next.reference_steps = reference_steps;
            next.cards = cards;
            next.cards_issued_at = Some(at);
            next.state = SessionState::CardsIssued;
        }
        SessionEvent::Preview(card_id) => {
            if s.card(&card_id).is_none() {
                return Err(Error::Validation(format!("card `{card_id}` is not one of today's cards")));
            }
            next.previews.push(Preview { card_id, at });
        }
        SessionEvent::Select(card_id) => {
            if s.selection.is_some() {
                return Err(Error::Sequencing("a profile was already selected today".into()));
            }
            if s.card(&card_id).is_none() {
                return Err(Error::Validation(format!("card `{card_id}` is not one of today's cards")));
            }
            next.selection = Some(card_id);
            next.selected_at = Some(at);
            next.state = SessionState::Selected;
        }
        SessionEvent::Unlock(section) => {
            if section.trim().is_empty() {
                return Err(Error::Validation("unlock section must be named".into()));
            }
            next.unlock_events.push(UnlockEvent { section, at });
        }
        SessionEvent::PostMotivation(v) => {
            next.post_motivation = Some(validate_likert(v)?);
            next.post_rated_at = Some(at);
            next.state = SessionState::PostRated;
        }
        SessionEvent::Close => {
            next.closed_at = Some(at);
            next.state = SessionState::Closed;
        }
    }
    Ok(next)
}

/// Score a closed session with the day's total steps and fold the reward into
/// the participant's statistics.
pub fn finalize_day(
    p: &ParticipantModel,
    s: &DailySession,
    steps: i64,
    config: &StudyConfig,
) -> Result<(ParticipantModel, DailySession)> {
    match s.state {
        SessionState::Finalized => {
            return Err(Error::Conflict(format!("session {} is already finalized", s.session_id)))
        }
        SessionState::Closed => {}
        other => return Err(Error::Sequencing(format!("cannot finalize a session in state {other:?}"))),
    }
    if s.participant_id != p.participant_id {
        return Err(Error::Validation("session belongs to another participant".into()));
    }
    let steps = u32::try_from(steps).map_err(|_| Error::Validation(format!("invalid step count {steps}")))?;
    let wear = steps >= config.non_wear_threshold;
    let pre = s.pre_motivation.ok_or_else(|| Error::Sequencing("missing pre-motivation".into()))?;
    let post = s.post_motivation.ok_or_else(|| Error::Sequencing("missing post-motivation".into()))?;
    let reward = compute_reward(pre, post, wear.then_some(steps), p.baseline_mean_or_default(config), &config.weights)?;

    let mut p = p.clone();
    let baseline_day = config.is_baseline_day(s.day_index);
    if !(config.cold_start && baseline_day) {
        p.arm_stats.update(s.arm, &reward);
    }
    p.day_counter += 1;
    if baseline_day && wear {
        p.baseline_wear_steps.push(steps);
    }
    p.baseline_mean_steps = Some(if p.baseline_wear_steps.is_empty() {
        f64::from(config.default_baseline_steps)
    } else {
        p.baseline_wear_steps.iter().map(|&x| f64::from(x)).sum::<f64>() / p.baseline_wear_steps.len() as f64
    });

    let mut s = s.clone();
    s.steps = Some(steps);
    s.wear = Some(wear);
    s.reward = Some(reward);
    s.state = SessionState::Finalized;
    Ok((p, s))
}

/// Steps the day's profiles are anchored to: the most recent wear day in
/// `history`, else the baseline mean, else the configured default.
pub fn reference_steps(p: &ParticipantModel, history: &[StepRecord], config: &StudyConfig) -> u32 {
    history
        .iter()
        .filter(|r| r.participant_id == p.participant_id && r.steps >= config.non_wear_threshold)
        .max_by_key(|r| r.date)
        .map(|r| r.steps)
        .or_else(|| p.baseline_mean_steps.map(|m| m.round() as u32))
        .unwrap_or(config.default_baseline_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{generate_cards, AttributePool};
    use crate::steps::StepSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn ts(min: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000 + min * 60, 0).unwrap()
    }

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, d).unwrap()
    }

    fn participant(condition: Condition) -> ParticipantModel {
        ParticipantModel {
            participant_id: "p0001".into(),
            ordinal: 0,
            external_id: "ext".into(),
            gender: Gender::Female,
            condition,
            baseline_schedule: make_baseline_schedule(&mut rng(1)),
            arm_stats: ArmStats::new(),
            baseline_wear_steps: vec![],
            baseline_mean_steps: None,
            enrolled_on: date(1),
            day_counter: 0,
        }
    }

    fn closed_session(pre: u8, post: u8, day: u32) -> DailySession {
        let cards = generate_cards(ArmId::Mixed, 6000, &mut rng(2), &AttributePool::default()).unwrap();
        let pick = cards[2].card_id.clone();
        let mut s = DailySession::new("s".into(), "p0001".into(), day, date(day), ArmId::Mixed, ts(0));
        for (i, e) in [
            SessionEvent::PreMotivation(pre),
            SessionEvent::IssueCards { reference_steps: 6000, cards },
            SessionEvent::Preview(pick.clone()),
            SessionEvent::Select(pick),
            SessionEvent::Unlock("steps".into()),
            SessionEvent::PostMotivation(post),
            SessionEvent::Close,
        ]
        .into_iter()
        .enumerate()
        {
            s = advance_session(&s, e, ts(i as i64 + 1)).unwrap();
        }
        s
    }

    #[test]
    fn block_randomization_balances_each_gender() {
        let mut reg = EnrollmentRegistry::default();
        let mut g = rng(4);
        let female: Vec<_> = (0..10).map(|_| assign_condition(&mut reg, "female", &mut g).unwrap()).collect();
        assert_eq!(female.iter().filter(|&&c| c == Condition::Control).count(), 5);
        for pair in female.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        let male: Vec<_> = (0..7).map(|_| assign_condition(&mut reg, "male", &mut g).unwrap()).collect();
        let ctl = male.iter().filter(|&&c| c == Condition::Control).count();
        assert!(ctl == 3 || ctl == 4);
        assert_eq!(reg.enrolled(Gender::Female), 10);
    }

    #[test]
    fn assignment_is_deterministic_and_rejects_unknown_gender() {
        let run = || {
            let mut reg = EnrollmentRegistry::default();
            let mut g = rng(8);
            ["female", "male", "female", "male", "other"]
                .iter()
                .map(|s| assign_condition(&mut reg, s, &mut g).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let mut reg = EnrollmentRegistry::default();
        assert!(matches!(assign_condition(&mut reg, "robot", &mut rng(0)), Err(Error::Enrollment(_))));
    }

    #[test]
    fn registry_replay_checks_blocks() {
        let mut reg = EnrollmentRegistry::default();
        reg.record(Gender::Male, Condition::Control).unwrap();
        assert!(reg.clone().record(Gender::Male, Condition::Control).is_err());
        reg.record(Gender::Male, Condition::Experimental).unwrap();
        reg.record(Gender::Male, Condition::Experimental).unwrap();
        assert_eq!(reg.enrolled(Gender::Male), 3);
    }

    #[test]
    fn baseline_schedule_counts() {
        for seed in 0..100 {
            let s = make_baseline_schedule(&mut rng(seed));
            assert_eq!(s.len(), 9);
            for a in ArmId::ALL {
                assert_eq!(s.iter().filter(|&&x| x == a).count(), 3);
            }
        }
        assert_eq!(make_baseline_schedule(&mut rng(3)), make_baseline_schedule(&mut rng(3)));
    }

    #[test]
    fn baseline_first_slot_frequencies() {
        let mut counts = [0u32; 3];
        for seed in 0..10_000 {
            counts[make_baseline_schedule(&mut rng(seed))[0].index()] += 1;
        }
        for c in counts {
            assert!((f64::from(c) / 10_000.0 - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn arm_for_day_dispatch() {
        let cfg = StudyConfig::default();
        let p = participant(Condition::Experimental);
        assert_eq!(arm_for_day(&p, 4, &cfg, &mut rng(0)).unwrap(), p.baseline_schedule[3]);
        assert!(arm_for_day(&p, 0, &cfg, &mut rng(0)).is_err());
        assert!(arm_for_day(&p, 22, &cfg, &mut rng(0)).is_err());

        let mut p = participant(Condition::Experimental);
        p.arm_stats = ArmStats::from_parts([5, 5, 5], [1.0, 2.5, 4.5]);
        assert_eq!(arm_for_day(&p, 15, &cfg, &mut rng(0)).unwrap(), ArmId::Upward);

        let c = participant(Condition::Control);
        let mut seen = [0; 3];
        for seed in 0..300 {
            seen[arm_for_day(&c, 15, &cfg, &mut rng(seed)).unwrap().index()] += 1;
        }
        assert!(seen.iter().all(|&n| n > 70), "{seen:?}");
    }

    struct Instrumented {
        inner: ParticipantModel,
        stats_reads: Cell<u32>,
    }

    impl BanditView for Instrumented {
        fn condition(&self) -> Condition {
            self.inner.condition
        }
        fn baseline_schedule(&self) -> &[ArmId] {
            &self.inner.baseline_schedule
        }
        fn arm_stats(&self) -> &ArmStats {
            self.stats_reads.set(self.stats_reads.get() + 1);
            &self.inner.arm_stats
        }
    }

    #[test]
    fn control_never_reads_arm_stats() {
        let cfg = StudyConfig::default();
        for condition in Condition::ALL {
            let v = Instrumented { inner: participant(condition), stats_reads: Cell::new(0) };
            for day in 1..=21 {
                arm_for_day(&v, day, &cfg, &mut rng(u64::from(day))).unwrap();
            }
            let reads = v.stats_reads.get();
            match condition {
                Condition::Control => assert_eq!(reads, 0),
                Condition::Experimental => assert_eq!(reads, 12),
            }
        }
    }

    #[test]
    fn session_transitions() {
        let s = DailySession::new("s".into(), "p".into(), 1, date(1), ArmId::Mixed, ts(0));
        let s1 = advance_session(&s, SessionEvent::PreMotivation(3), ts(1)).unwrap();
        assert_eq!(s1.state, SessionState::PreRated);
        assert_eq!(s1.pre_motivation, Some(3));
        assert!(matches!(advance_session(&s, SessionEvent::PreMotivation(6), ts(1)), Err(Error::Validation(_))));
        assert!(matches!(advance_session(&s, SessionEvent::PreMotivation(0), ts(1)), Err(Error::Validation(_))));
        assert!(matches!(advance_session(&s, SessionEvent::Close, ts(1)), Err(Error::Sequencing(_))));
        assert!(matches!(
            advance_session(&s1, SessionEvent::PreMotivation(4), ts(2)),
            Err(Error::Sequencing(_))
        ));
        let bad = advance_session(&s1, SessionEvent::IssueCards { reference_steps: 1, cards: vec![] }, ts(2));
        assert!(matches!(bad, Err(Error::Validation(_))));
    }

    #[test]
    fn selection_only_once_and_only_from_today() {
        let cards = generate_cards(ArmId::Upward, 6000, &mut rng(2), &AttributePool::default()).unwrap();
        let s = DailySession::new("s".into(), "p".into(), 1, date(1), ArmId::Upward, ts(0));
        let s = advance_session(&s, SessionEvent::PreMotivation(3), ts(1)).unwrap();
        let s = advance_session(&s, SessionEvent::IssueCards { reference_steps: 6000, cards: cards.clone() }, ts(2))
            .unwrap();
        assert!(matches!(
            advance_session(&s, SessionEvent::Select("nope".into()), ts(3)),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            advance_session(&s, SessionEvent::Unlock("steps".into()), ts(3)),
            Err(Error::Sequencing(_))
        ));
        let s = advance_session(&s, SessionEvent::Select(cards[0].card_id.clone()), ts(3)).unwrap();
        assert!(matches!(
            advance_session(&s, SessionEvent::Select(cards[1].card_id.clone()), ts(4)),
            Err(Error::Sequencing(_))
        ));
        assert!(matches!(
            advance_session(&s, SessionEvent::Preview(cards[1].card_id.clone()), ts(4)),
            Err(Error::Sequencing(_))
        ));
    }

    #[test]
    fn scripted_session_reaches_closed_with_all_fields() {
        let s = closed_session(3, 4, 1);
        assert_eq!(s.state, SessionState::Closed);
        assert_eq!(s.pre_motivation, Some(3));
        assert_eq!(s.post_motivation, Some(4));
        assert_eq!(s.cards.len(), 4);
        assert_eq!(s.previews.len(), 1);
        assert!(s.selection.is_some());
        assert_eq!(s.unlock_events.len(), 1);
        assert!(s.pre_rated_at < s.selected_at && s.selected_at < s.closed_at);
    }

    #[test]
    fn finalize_wear_boundary() {
        let cfg = StudyConfig::default();
        let p = participant(Condition::Experimental);
        let (_, s99) = finalize_day(&p, &closed_session(2, 4, 1), 99, &cfg).unwrap();
        assert_eq!(s99.wear, Some(false));
        assert_eq!(s99.reward.unwrap().steps_component, None);
        assert_eq!(s99.reward.unwrap().value, 0.75);
        let (p100, s100) = finalize_day(&p, &closed_session(2, 4, 1), 100, &cfg).unwrap();
        assert_eq!(s100.wear, Some(true));
        assert_eq!(p100.baseline_mean_steps, Some(100.0));
    }

    #[test]
    fn finalize_updates_participant() {
        let cfg = StudyConfig::default();
        let p = participant(Condition::Experimental);
        let (p, s) = finalize_day(&p, &closed_session(3, 3, 1), 5000, &cfg).unwrap();
        assert_eq!(p.day_counter, 1);
        assert_eq!(p.arm_stats.pulls(ArmId::Mixed), 1);
        // day 1 scores against the default 6000
        assert_eq!(s.reward.unwrap().steps_component, Some(5000.0 / 12000.0));
        let (p, _) = finalize_day(&p, &closed_session(3, 3, 2), 7000, &cfg).unwrap();
        assert_eq!(p.baseline_mean_steps, Some(6000.0));
        let (p, _) = finalize_day(&p, &closed_session(3, 3, 3), 20, &cfg).unwrap();
        assert_eq!(p.baseline_mean_steps, Some(6000.0));
        // adaptive-phase steps do not move the baseline
        let (p, _) = finalize_day(&p, &closed_session(3, 3, 10), 20_000, &cfg).unwrap();
        assert_eq!(p.baseline_mean_steps, Some(6000.0));
        assert_eq!(p.day_counter, 4);
    }

    #[test]
    fn finalize_errors() {
        let cfg = StudyConfig::default();
        let p = participant(Condition::Control);
        let (p2, s) = finalize_day(&p, &closed_session(3, 3, 1), 5000, &cfg).unwrap();
        assert!(matches!(finalize_day(&p2, &s, 5000, &cfg), Err(Error::Conflict(_))));
        assert!(matches!(finalize_day(&p, &closed_session(3, 3, 1), -1, &cfg), Err(Error::Validation(_))));
        let open = DailySession::new("s".into(), "p0001".into(), 1, date(1), ArmId::Mixed, ts(0));
        assert!(matches!(finalize_day(&p, &open, 10, &cfg), Err(Error::Sequencing(_))));
    }

    #[test]
    fn cold_start_skips_baseline_updates() {
        let cfg = StudyConfig { cold_start: true, ..StudyConfig::default() };
        let p = participant(Condition::Experimental);
        let (p, _) = finalize_day(&p, &closed_session(3, 3, 1), 5000, &cfg).unwrap();
        assert_eq!(p.arm_stats.total_pulls(), 0);
        let (p, _) = finalize_day(&p, &closed_session(3, 3, 10), 5000, &cfg).unwrap();
        assert_eq!(p.arm_stats.total_pulls(), 1);
    }

    fn rec(day: u32, steps: u32) -> StepRecord {
        StepRecord { participant_id: "p0001".into(), date: date(day), steps, source: StepSource::Ingested }
    }

    #[test]
    fn reference_steps_rules() {
        let cfg = StudyConfig::default();
        let p = participant(Condition::Control);
        assert_eq!(reference_steps(&p, &[rec(1, 8000)], &cfg), 8000);
        assert_eq!(reference_steps(&p, &[rec(1, 8000), rec(2, 50)], &cfg), 8000);
        assert_eq!(reference_steps(&p, &[], &cfg), 6000);
        let mut q = p.clone();
        q.baseline_mean_steps = Some(7200.4);
        assert_eq!(reference_steps(&q, &[rec(2, 30)], &cfg), 7200);
    }

    #[test]
    fn config_validation() {
        assert!(StudyConfig::default().validate().is_ok());
        assert!(StudyConfig { baseline_days: 21, ..Default::default() }.validate().is_err());
        assert!(StudyConfig { non_wear_threshold: 0, ..Default::default() }.validate().is_err());
        assert!(StudyConfig { likert_max: 7, ..Default::default() }.validate().is_err());
        let cfg = StudyConfig::from_toml_str("total_days = 200\n[strategy]\nkind = \"epsilon_greedy\"\nepsilon = 0.1\n")
            .unwrap();
        assert_eq!(cfg.total_days, 200);
        assert_eq!(cfg.strategy, Strategy::EpsilonGreedy { epsilon: 0.1 });
        assert!(StudyConfig::from_toml_str("bogus = 1").is_err());
    }
}
