//! Command side of the study: validates requests against the current state,
//! records them as events, and folds events into [`StudyState`].
//!
//! Every mutation goes through [`Platform::commit`]: the event is planned
//! against the state, appended to the log, and only then applied. Replaying a
//! log with [`Platform::replay`] runs the same planning code, so any state is
//! reproducible from its events.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};

use crate::analysis::{self, AnalysisOptions, AnalysisReport};
use crate::bandit::ArmId;
use crate::error::{Error, Result};
use crate::events::{session_rows, Event, EventBody, EventStore, SessionRow};
use crate::profiles::{generate_cards, AttributePool, ProfileCard, MIN_REFERENCE_STEPS};
use crate::protocol::{
    advance_session, arm_for_day, assign_condition, finalize_day, make_schedule, reference_steps, Condition,
    DailySession, EnrollmentRegistry, Gender, ParticipantModel, SessionEvent, SessionState, StudyConfig,
};
use crate::seeding::{substream, Purpose};
use crate::steps::{StepProvider, StepRecord, StepSource, StepStore};

/// Everything derivable from the event log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyState {
    participants: BTreeMap<String, ParticipantModel>,
    sessions: BTreeMap<String, DailySession>,
    by_date: BTreeMap<(String, NaiveDate), String>,
    latest_session: BTreeMap<String, String>,
    steps: StepStore,
    registry: EnrollmentRegistry,
}

enum Change {
    Enroll(ParticipantModel),
    Session(DailySession),
    Finalize(ParticipantModel, DailySession),
    Steps(StepRecord),
}

impl StudyState {
    pub fn participant(&self, participant_id: &str) -> Option<&ParticipantModel> {
        self.participants.get(participant_id)
    }

    pub fn participants(&self) -> impl Iterator<Item = &ParticipantModel> {
        self.participants.values()
    }

    pub fn session(&self, session_id: &str) -> Option<&DailySession> {
        self.sessions.get(session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &DailySession> {
        self.sessions.values()
    }

    pub fn session_on(&self, participant_id: &str, date: NaiveDate) -> Option<&DailySession> {
        self.by_date.get(&(participant_id.to_string(), date)).and_then(|sid| self.sessions.get(sid))
    }

    pub fn steps(&self) -> &StepStore {
        &self.steps
    }

    pub fn registry(&self) -> &EnrollmentRegistry {
        &self.registry
    }

    /// Sessions of one participant that reached `Closed`.
    pub fn completed_sessions(&self, participant_id: &str) -> u32 {
        self.sessions_of(participant_id).filter(|s| s.is_completed()).count() as u32
    }

    /// Sessions of one participant. Session ids are `{pid}-{YYYYMMDD}`, so
    /// they form one contiguous key range.
    pub fn sessions_of<'a>(&'a self, participant_id: &'a str) -> impl Iterator<Item = &'a DailySession> + 'a {
        self.sessions
            .range(format!("{participant_id}-")..)
            .take_while(move |(k, _)| k.strip_prefix(participant_id).is_some_and(|rest| rest.starts_with('-')))
            .map(|(_, s)| s)
            .filter(move |s| s.participant_id == participant_id)
    }

    fn participant_or_404(&self, participant_id: &str) -> Result<&ParticipantModel> {
        self.participants
            .get(participant_id)
            .ok_or_else(|| Error::NotFound(format!("participant `{participant_id}`")))
    }

    fn session_or_404(&self, session_id: &str) -> Result<&DailySession> {
        self.sessions.get(session_id).ok_or_else(|| Error::NotFound(format!("session `{session_id}`")))
    }

    fn advanced(&self, event: &Event, session_id: &str, step: SessionEvent) -> Result<Change> {
        let s = self.session_or_404(session_id)?;
        if s.participant_id != event.participant_id || Some(s.day_index) != event.day_index {
            return Err(Error::Validation(format!("event does not match session `{session_id}`")));
        }
        Ok(Change::Session(advance_session(s, step, event.timestamp)?))
    }

    fn plan(&self, event: &Event, config: &StudyConfig) -> Result<Change> {
        let pid = event.participant_id.as_str();
        match &event.body {
            EventBody::Enrolled { ordinal, external_id, gender, condition, baseline_schedule, enrolled_on } => {
                if self.participants.contains_key(pid) {
                    return Err(Error::Conflict(format!("participant `{pid}` already enrolled")));
                }
                Ok(Change::Enroll(ParticipantModel {
                    participant_id: pid.to_string(),
                    ordinal: *ordinal,
                    external_id: external_id.clone(),
                    gender: *gender,
                    condition: *condition,
                    baseline_schedule: baseline_schedule.clone(),
                    arm_stats: Default::default(),
                    baseline_wear_steps: Vec::new(),
                    baseline_mean_steps: None,
                    enrolled_on: *enrolled_on,
                    day_counter: 0,
                }))
            }
            EventBody::ArmChosen { session_id, date, arm } => {
                self.participant_or_404(pid)?;
                if self.sessions.contains_key(session_id) {
                    return Err(Error::Conflict(format!("session `{session_id}` exists")));
                }
                if self.by_date.contains_key(&(pid.to_string(), *date)) {
                    return Err(Error::Conflict(format!("participant `{pid}` already has a session on {date}")));
                }
                let day = event.day_index.unwrap_or(0);
                Ok(Change::Session(DailySession::new(
                    session_id.clone(),
                    pid.to_string(),
                    day,
                    *date,
                    *arm,
                    event.timestamp,
                )))
            }
            EventBody::CardsShown { session_id, reference_steps, cards } => self.advanced(
                event,
                session_id,
                SessionEvent::IssueCards { reference_steps: *reference_steps, cards: cards.clone() },
            ),
            EventBody::PreMotivation { session_id, value } => {
                self.advanced(event, session_id, SessionEvent::PreMotivation(*value))
            }
            EventBody::Preview { session_id, card_id } => {
                self.advanced(event, session_id, SessionEvent::Preview(card_id.clone()))
            }
            EventBody::Selected { session_id, card_id } => {
                self.advanced(event, session_id, SessionEvent::Select(card_id.clone()))
            }
            EventBody::Unlock { session_id, section } => {
                self.advanced(event, session_id, SessionEvent::Unlock(section.clone()))
            }
            EventBody::PostMotivation { session_id, value } => {
                let Change::Session(rated) = self.advanced(event, session_id, SessionEvent::PostMotivation(*value))?
                else {
                    unreachable!()
                };
                Ok(Change::Session(advance_session(&rated, SessionEvent::Close, event.timestamp)?))
            }
            EventBody::StepsIngested { date, steps, source } => {
                self.participant_or_404(pid)?;
                Ok(Change::Steps(StepRecord { participant_id: pid.to_string(), date: *date, steps: *steps, source: *source }))
            }
            EventBody::Finalized { session_id, steps, wear, reward } => {
                let p = self.participant_or_404(pid)?;
                let s = self.session_or_404(session_id)?;
                let (p, s) = finalize_day(p, s, i64::from(*steps), config)?;
                if s.wear != Some(*wear) || s.reward.as_ref() != Some(reward) {
                    return Err(Error::Validation(format!(
                        "finalization of `{session_id}` disagrees with the study configuration"
                    )));
                }
                Ok(Change::Finalize(p, s))
            }
        }
    }

    fn apply_change(&mut self, change: Change) {
        match change {
            Change::Enroll(p) => {
                self.registry
                    .record(p.gender, p.condition)
                    .expect("enrollment validated during planning");
                self.participants.insert(p.participant_id.clone(), p);
            }
            Change::Session(s) => self.put_session(s),
            Change::Finalize(p, s) => {
                self.participants.insert(p.participant_id.clone(), p);
                self.put_session(s);
            }
            Change::Steps(r) => {
                self.steps.upsert(r);
            }
        }
    }

    fn put_session(&mut self, s: DailySession) {
        self.by_date.insert((s.participant_id.clone(), s.date), s.session_id.clone());
        let latest = self.latest_session.entry(s.participant_id.clone()).or_insert_with(|| s.session_id.clone());
        let newer = self.sessions.get(latest.as_str()).is_none_or(|cur| cur.date <= s.date);
        if newer {
            *latest = s.session_id.clone();
        }
        self.sessions.insert(s.session_id.clone(), s);
    }

    /// Fold one event into the state.
    pub fn apply(&mut self, event: &Event, config: &StudyConfig) -> Result<()> {
        if let EventBody::Enrolled { gender, condition, .. } = &event.body {
            self.registry.clone().record(*gender, *condition)?;
        }
        let change = self.plan(event, config)?;
        self.apply_change(change);
        Ok(())
    }
}

/// Outcome of a step ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestAck {
    pub overwritten: Option<u32>,
    /// Session finalized as a consequence of the ingestion.
    pub finalized: Option<String>,
}

/// A running study: configuration, event log and derived state.
#[derive(Debug)]
pub struct Platform {
    config: StudyConfig,
    pool: AttributePool,
    store: EventStore,
    state: StudyState,
}

impl Platform {
    pub fn new(config: StudyConfig, pool: AttributePool, store: EventStore) -> Result<Self> {
        config.validate()?;
        pool.validate()?;
        let events: Vec<Event> = store.events().to_vec();
        let mut platform = Self { config, pool, store, state: StudyState::default() };
        for e in &events {
            platform
                .state
                .apply(e, &platform.config)
                .map_err(|err| Error::Validation(format!("replaying event {}: {err}", e.seq)))?;
        }
        Ok(platform)
    }

    pub fn in_memory(config: StudyConfig) -> Result<Self> {
        Self::new(config, AttributePool::default(), EventStore::in_memory())
    }

    /// Rebuild a platform from an existing log.
    pub fn replay(config: StudyConfig, pool: AttributePool, store: EventStore) -> Result<Self> {
        Self::new(config, pool, store)
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn store(&self) -> &EventStore {
        &self.store
    }

    pub fn state(&self) -> &StudyState {
        &self.state
    }

    pub fn into_parts(self) -> (StudyConfig, EventStore, StudyState) {
        (self.config, self.store, self.state)
    }

    fn commit(&mut self, event: Event) -> Result<u64> {
        if let EventBody::Enrolled { gender, condition, .. } = &event.body {
            self.state.registry.clone().record(*gender, *condition)?;
        }
        let change = self.state.plan(&event, &self.config)?;
        let seq = self.store.append(event)?;
        self.state.apply_change(change);
        Ok(seq)
    }

    pub fn enroll(&mut self, external_id: &str, gender: &str, enrolled_on: NaiveDate, now: DateTime<Utc>) -> Result<(String, Condition)> {
        if external_id.trim().is_empty() {
            return Err(Error::Validation("external_id must not be empty".into()));
        }
        let g: Gender = gender.parse()?;
        let ordinal = self.state.participants.len() as u64;
        let participant_id = format!("p{:04}", ordinal + 1);
        let mut registry = self.state.registry.clone();
        let block = registry.next_block(g);
        let mut rng = substream(self.config.seed, Purpose::Enrollment, g as u64, block);
        let condition = assign_condition(&mut registry, gender, &mut rng)?;
        let mut rng = substream(self.config.seed, Purpose::BaselineSchedule, ordinal, 0);
        let baseline_schedule = make_schedule(self.config.baseline_days as usize, &mut rng);
        self.commit(Event::new(
            participant_id.clone(),
            None,
            now,
            EventBody::Enrolled {
                ordinal,
                external_id: external_id.to_string(),
                gender: g,
                condition,
                baseline_schedule,
                enrolled_on,
            },
        ))?;
        Ok((participant_id, condition))
    }

    pub fn start_session(&mut self, participant_id: &str, date: NaiveDate, now: DateTime<Utc>) -> Result<String> {
        let p = self.state.participant_or_404(participant_id)?;
        if self.state.session_on(participant_id, date).is_some() {
            return Err(Error::Conflict(format!("a session already exists for {date}")));
        }
        if let Some(latest) = self.state.latest_session.get(participant_id).and_then(|s| self.state.sessions.get(s)) {
            if latest.date > date {
                return Err(Error::Validation(format!("{date} precedes the latest session ({})", latest.date)));
            }
        }
        let day_index = self.state.completed_sessions(participant_id) + 1;
        if day_index > self.config.total_days {
            return Err(Error::Conflict(format!("participant completed all {} days", self.config.total_days)));
        }
        let mut rng = substream(self.config.seed, Purpose::ArmSelection, p.ordinal, u64::from(day_index));
        let arm = arm_for_day(p, day_index, &self.config, &mut rng)?;
        let session_id = format!("{participant_id}-{}", date.format("%Y%m%d"));
        self.commit(Event::new(
            participant_id,
            Some(day_index),
            now,
            EventBody::ArmChosen { session_id: session_id.clone(), date, arm },
        ))?;
        Ok(session_id)
    }

    fn live_session(&self, session_id: &str) -> Result<&DailySession> {
        let s = self.state.session_or_404(session_id)?;
        let latest = self.state.latest_session.get(&s.participant_id).map(String::as_str);
        if latest != Some(session_id) && !s.is_completed() {
            return Err(Error::Conflict(format!("session `{session_id}` was superseded by a later day")));
        }
        Ok(s)
    }

    fn session_event(&mut self, session_id: &str, now: DateTime<Utc>, body: EventBody) -> Result<&DailySession> {
        let s = self.live_session(session_id)?;
        let event = Event::new(s.participant_id.clone(), Some(s.day_index), now, body);
        self.commit(event)?;
        Ok(&self.state.sessions[session_id])
    }

    pub fn pre_motivation(&mut self, session_id: &str, value: u8, now: DateTime<Utc>) -> Result<&DailySession> {
        self.session_event(session_id, now, EventBody::PreMotivation { session_id: session_id.into(), value })
    }

    /// The day's four cards, generated on first request and fixed afterwards.
    pub fn cards(&mut self, session_id: &str, now: DateTime<Utc>) -> Result<&DailySession> {
        let s = self.live_session(session_id)?;
        match s.state {
            SessionState::Started => {
                return Err(Error::Sequencing("pre-selection motivation must be rated before cards are shown".into()))
            }
            SessionState::PreRated => {}
            _ => return Ok(&self.state.sessions[session_id]),
        }
        let p = self.state.participant_or_404(&s.participant_id)?;
        let history: Vec<StepRecord> =
            self.state.steps.last_wear_before(&s.participant_id, s.date, self.config.non_wear_threshold).into_iter().collect();
        let mut reference = reference_steps(p, &history, &self.config);
        if reference < MIN_REFERENCE_STEPS {
            reference = self.config.default_baseline_steps.max(MIN_REFERENCE_STEPS);
        }
        let mut rng = substream(self.config.seed, Purpose::Cards, p.ordinal, u64::from(s.day_index));
        let cards = generate_cards(s.arm, reference, &mut rng, &self.pool)?;
        self.session_event(
            session_id,
            now,
            EventBody::CardsShown { session_id: session_id.into(), reference_steps: reference, cards },
        )
    }

    pub fn preview(&mut self, session_id: &str, card_id: &str, now: DateTime<Utc>) -> Result<ProfileCard> {
        let s = self.session_event(
            session_id,
            now,
            EventBody::Preview { session_id: session_id.into(), card_id: card_id.into() },
        )?;
        Ok(s.card(card_id).cloned().expect("previewed card exists"))
    }

    pub fn select(&mut self, session_id: &str, card_id: &str, now: DateTime<Utc>) -> Result<ProfileCard> {
        let s = self.live_session(session_id)?;
        if s.selection.is_some() {
            return Err(Error::Conflict("only one full profile may be viewed per day".into()));
        }
        let s = self.session_event(
            session_id,
            now,
            EventBody::Selected { session_id: session_id.into(), card_id: card_id.into() },
        )?;
        Ok(s.card(card_id).cloned().expect("selected card exists"))
    }

    pub fn unlock(&mut self, session_id: &str, section: &str, now: DateTime<Utc>) -> Result<&DailySession> {
        self.session_event(session_id, now, EventBody::Unlock { session_id: session_id.into(), section: section.into() })
    }

    /// Post-selection rating; closes the session and finalizes it if the day's
    /// steps are already known.
    pub fn post_motivation(&mut self, session_id: &str, value: u8, now: DateTime<Utc>) -> Result<&DailySession> {
        self.session_event(session_id, now, EventBody::PostMotivation { session_id: session_id.into(), value })?;
        Ok(&self.state.sessions[session_id])
    }

    fn finalize(&mut self, session_id: &str, steps: u32, now: DateTime<Utc>) -> Result<()> {
        let s = self.state.session_or_404(session_id)?;
        let p = self.state.participant_or_404(&s.participant_id)?;
        let (_, done) = finalize_day(p, s, i64::from(steps), &self.config)?;
        let event = Event::new(
            s.participant_id.clone(),
            Some(s.day_index),
            now,
            EventBody::Finalized {
                session_id: session_id.into(),
                steps,
                wear: done.wear.unwrap_or(false),
                reward: done.reward.expect("finalized sessions carry a reward"),
            },
        );
        self.commit(event)?;
        Ok(())
    }

    /// Upsert a day's step total; finalizes a closed session for that date.
    pub fn ingest_steps(
        &mut self,
        participant_id: &str,
        date: NaiveDate,
        steps: i64,
        source: StepSource,
        now: DateTime<Utc>,
    ) -> Result<IngestAck> {
        self.state.participant_or_404(participant_id)?;
        let steps = u32::try_from(steps).map_err(|_| Error::Validation(format!("invalid step count {steps}")))?;
        let previous = self.state.steps.get_steps(participant_id, date);
        self.commit(Event::new(participant_id, None, now, EventBody::StepsIngested { date, steps, source }))?;
        let mut finalized = None;
        if let Some(s) = self.state.session_on(participant_id, date) {
            if s.state == SessionState::Closed {
                let sid = s.session_id.clone();
                self.finalize(&sid, steps, now)?;
                finalized = Some(sid);
            }
        }
        Ok(IngestAck { overwritten: previous, finalized })
    }

    /// Finalize closed sessions dated before `today`, using stored steps or
    /// zero (a non-wear day) when none arrived.
    pub fn tick(&mut self, today: NaiveDate, now: DateTime<Utc>) -> Result<Vec<String>> {
        self.finalize_stale(None, today, now)
    }

    /// [`Platform::tick`] restricted to one participant.
    pub fn tick_participant(&mut self, participant_id: &str, today: NaiveDate, now: DateTime<Utc>) -> Result<Vec<String>> {
        self.state.participant_or_404(participant_id)?;
        self.finalize_stale(Some(participant_id), today, now)
    }

    fn finalize_stale(&mut self, only: Option<&str>, today: NaiveDate, now: DateTime<Utc>) -> Result<Vec<String>> {
        let due: Vec<(String, u32)> = self
            .state
            .sessions
            .values()
            .filter(|s| s.state == SessionState::Closed && s.date < today)
            .filter(|s| only.is_none_or(|p| s.participant_id == p))
            .map(|s| (s.session_id.clone(), self.state.steps.get_steps(&s.participant_id, s.date).unwrap_or(0)))
            .collect();
        for (sid, steps) in &due {
            self.finalize(sid, *steps, now)?;
        }
        Ok(due.into_iter().map(|(sid, _)| sid).collect())
    }

    /// Arms each participant was shown, in day order.
    pub fn arm_history(&self, participant_id: &str) -> Vec<(u32, ArmId)> {
        let mut v: Vec<(u32, ArmId)> = self
            .state
            .sessions_of(participant_id)
            .filter(|s| s.is_completed())
            .map(|s| (s.day_index, s.arm))
            .collect();
        v.sort();
        v
    }

    pub fn session_rows(&self) -> Vec<SessionRow> {
        session_rows(&self.state)
    }

    pub fn report(&self, truth: Option<&BTreeMap<String, f64>>) -> AnalysisReport {
        let options = AnalysisOptions::from_config(&self.config);
        analysis::analyze(&self.session_rows(), truth, &options)
    }
}
