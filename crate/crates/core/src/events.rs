//! Append-only event log and flat CSV exports.
//!
//! The durable log is newline-delimited JSON, one event per line. Every piece
//! of participant and session state is a left fold over this log (see
//! [`crate::platform::StudyState`]); exports are projections of that fold.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::bandit::{validate_likert, ArmId, Reward};
use crate::error::{Error, Result};
use crate::platform::StudyState;
use crate::profiles::{ProfileCard, CARDS_PER_DAY};
use crate::protocol::{Condition, Gender, SessionState};
use crate::steps::{steps_to_csv, StepSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    Enrolled {
        ordinal: u64,
        external_id: String,
        gender: Gender,
        condition: Condition,
        baseline_schedule: Vec<ArmId>,
        enrolled_on: NaiveDate,
    },
    ArmChosen {
        session_id: String,
        date: NaiveDate,
        arm: ArmId,
    },
    CardsShown {
        session_id: String,
        reference_steps: u32,
        cards: Vec<ProfileCard>,
    },
    PreMotivation {
        session_id: String,
        value: u8,
    },
    Preview {
        session_id: String,
        card_id: String,
    },
    Selected {
        session_id: String,
        card_id: String,
    },
    Unlock {
        session_id: String,
        section: String,
    },
    /// Post-selection rating; also closes the session.
    PostMotivation {
        session_id: String,
        value: u8,
    },
    StepsIngested {
        date: NaiveDate,
        steps: u32,
        source: StepSource,
    },
    Finalized {
        session_id: String,
        steps: u32,
        wear: bool,
        reward: Reward,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Enrolled { .. } => "Enrolled",
            EventBody::ArmChosen { .. } => "ArmChosen",
            EventBody::CardsShown { .. } => "CardsShown",
            EventBody::PreMotivation { .. } => "PreMotivation",
            EventBody::Preview { .. } => "Preview",
            EventBody::Selected { .. } => "Selected",
            EventBody::Unlock { .. } => "Unlock",
            EventBody::PostMotivation { .. } => "PostMotivation",
            EventBody::StepsIngested { .. } => "StepsIngested",
            EventBody::Finalized { .. } => "Finalized",
        }
    }

    pub fn session_id(&self) -> Option<&str> {
        match self {
            EventBody::ArmChosen { session_id, .. }
            | EventBody::CardsShown { session_id, .. }
            | EventBody::PreMotivation { session_id, .. }
            | EventBody::Preview { session_id, .. }
            | EventBody::Selected { session_id, .. }
            | EventBody::Unlock { session_id, .. }
            | EventBody::PostMotivation { session_id, .. }
            | EventBody::Finalized { session_id, .. } => Some(session_id),
            EventBody::Enrolled { .. } | EventBody::StepsIngested { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Assigned by the store on append.
    pub seq: u64,
    pub participant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day_index: Option<u32>,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn new(participant_id: impl Into<String>, day_index: Option<u32>, timestamp: DateTime<Utc>, body: EventBody) -> Self {
        Self { seq: 0, participant_id: participant_id.into(), day_index, timestamp, body }
    }

    /// Payload checks that do not need study state.
    pub fn validate(&self) -> Result<()> {
        if self.participant_id.is_empty() {
            return Err(Error::Validation("event without participant".into()));
        }
        let needs_day = self.body.session_id().is_some();
        if needs_day != self.day_index.is_some() {
            return Err(Error::Validation(format!(
                "{} events {} a day index",
                self.body.kind(),
                if needs_day { "require" } else { "must not carry" }
            )));
        }
        if let Some(sid) = self.body.session_id() {
            if sid.is_empty() {
                return Err(Error::Validation("empty session id".into()));
            }
        }
        match &self.body {
            EventBody::Enrolled { external_id, baseline_schedule, .. } => {
                if external_id.is_empty() {
                    return Err(Error::Validation("empty external id".into()));
                }
                if baseline_schedule.is_empty() || baseline_schedule.len() % 3 != 0 {
                    return Err(Error::Validation("baseline schedule must hold a multiple of 3 days".into()));
                }
                for a in ArmId::ALL {
                    if baseline_schedule.iter().filter(|&&x| x == a).count() * 3 != baseline_schedule.len() {
                        return Err(Error::Validation("baseline schedule must be balanced across arms".into()));
                    }
                }
            }
            EventBody::CardsShown { cards, .. } if cards.len() != CARDS_PER_DAY => {
                return Err(Error::Validation(format!("expected {CARDS_PER_DAY} cards, got {}", cards.len())));
            }
            EventBody::PreMotivation { value, .. } | EventBody::PostMotivation { value, .. } => {
                validate_likert(*value)?;
            }
            EventBody::Preview { card_id, .. } | EventBody::Selected { card_id, .. } if card_id.is_empty() => {
                return Err(Error::Validation("empty card id".into()));
            }
            EventBody::Unlock { section, .. } if section.trim().is_empty() => {
                return Err(Error::Validation("empty unlock section".into()));
            }
            EventBody::Finalized { reward, .. } if !(0.0..=1.0).contains(&reward.value) => {
                return Err(Error::Validation("reward outside [0, 1]".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Single-writer, append-only event log, optionally backed by a file.
#[derive(Debug, Default)]
pub struct EventStore {
    events: Vec<Event>,
    file: Option<(PathBuf, File)>,
}

impl EventStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a log file; existing events are loaded and appends continue the sequence.
    pub fn open(path: &Path) -> Result<Self> {
        let mut events = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line)
                    .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
                event.validate()?;
                if let Some(last) = events.last().map(|e: &Event| e.seq) {
                    if event.seq <= last {
                        return Err(Error::Validation(format!(
                            "{}:{}: sequence {} does not follow {last}",
                            path.display(),
                            i + 1,
                            event.seq
                        )));
                    }
                }
                events.push(event);
            }
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { events, file: Some((path.to_path_buf(), file)) })
    }

    /// Load a log without attaching a writer.
    pub fn load(path: &Path) -> Result<Self> {
        let mut store = Self::open(path)?;
        store.file = None;
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn next_seq(&self) -> u64 {
        self.events.last().map_or(1, |e| e.seq + 1)
    }

    /// Validate, number and persist an event. On error the store is unchanged.
    pub fn append(&mut self, mut event: Event) -> Result<u64> {
        event.validate()?;
        event.seq = self.next_seq();
        if let Some((_, file)) = self.file.as_mut() {
            let mut line = serde_json::to_string(&event)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn read_stream(&self, participant_id: &str) -> Vec<Event> {
        self.events.iter().filter(|e| e.participant_id == participant_id).cloned().collect()
    }

    /// The whole log in its on-disk form.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub const SESSIONS_CSV_HEADER: &str =
    "participant_id,condition,day_index,date,arm,pre_motivation,post_motivation,selected_offset,previews,steps,wear,reward";
pub const REWARDS_CSV_HEADER: &str = "participant_id,day_index,arm,motivation_component,steps_component,reward";

/// One finalized session in flat form; the unit the analysis works on.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRow {
    pub participant_id: String,
    pub condition: Condition,
    pub day_index: u32,
    pub date: NaiveDate,
    pub arm: ArmId,
    pub pre_motivation: u8,
    pub post_motivation: u8,
    pub selected_offset: Option<f64>,
    /// 1-based card positions in preview order.
    pub previews: Vec<usize>,
    pub steps: u32,
    pub wear: bool,
    pub reward: f64,
}

impl SessionRow {
    pub fn delta_motivation(&self) -> i32 {
        i32::from(self.post_motivation) - i32::from(self.pre_motivation)
    }

    fn to_csv_line(&self) -> String {
        let previews: Vec<String> = self.previews.iter().map(usize::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.participant_id,
            self.condition,
            self.day_index,
            self.date.format("%Y-%m-%d"),
            self.arm,
            self.pre_motivation,
            self.post_motivation,
            self.selected_offset.map(|o| format!("{o:.2}")).unwrap_or_default(),
            previews.join(";"),
            self.steps,
            self.wear,
            self.reward
        )
    }

    fn from_csv_line(line: &str) -> std::result::Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(format!("expected 12 fields, found {}", f.len()));
        }
        fn num<T: FromStr>(s: &str, what: &str) -> std::result::Result<T, String> {
            s.parse().map_err(|_| format!("invalid {what} `{s}`"))
        }
        Ok(SessionRow {
            participant_id: f[0].to_string(),
            condition: f[1].parse().map_err(|e: Error| e.to_string())?,
            day_index: num(f[2], "day_index")?,
            date: NaiveDate::parse_from_str(f[3], "%Y-%m-%d").map_err(|_| format!("invalid date `{}`", f[3]))?,
            arm: f[4].parse().map_err(|e: Error| e.to_string())?,
            pre_motivation: num(f[5], "pre_motivation")?,
            post_motivation: num(f[6], "post_motivation")?,
            selected_offset: if f[7].is_empty() { None } else { Some(num(f[7], "selected_offset")?) },
            previews: if f[8].is_empty() {
                Vec::new()
            } else {
                f[8].split(';').map(|p| num(p, "preview ordinal")).collect::<std::result::Result<_, _>>()?
            },
            steps: num(f[9], "steps")?,
            wear: num(f[10], "wear")?,
            reward: num(f[11], "reward")?,
        })
    }
}

pub fn sessions_to_csv(rows: &[SessionRow]) -> String {
    let mut out = String::from(SESSIONS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

pub fn parse_sessions_csv(text: &str) -> Result<Vec<SessionRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some((_, h)) if h == SESSIONS_CSV_HEADER => {}
        Some((_, h)) => return Err(Error::Validation(format!("line 1: unexpected header `{h}`"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| SessionRow::from_csv_line(l).map_err(|m| Error::Validation(format!("line {}: {m}", i + 1))))
        .collect()
}

pub fn read_sessions_csv(path: &Path) -> Result<Vec<SessionRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_sessions_csv(&text)
}

/// Finalized sessions ordered by (participant, day).
pub fn session_rows(state: &StudyState) -> Vec<SessionRow> {
    let mut rows: Vec<SessionRow> = state
        .sessions()
        .filter(|s| s.state == SessionState::Finalized)
        .filter_map(|s| {
            let p = state.participant(&s.participant_id)?;
            Some(SessionRow {
                participant_id: s.participant_id.clone(),
                condition: p.condition,
                day_index: s.day_index,
                date: s.date,
                arm: s.arm,
                pre_motivation: s.pre_motivation?,
                post_motivation: s.post_motivation?,
                selected_offset: s.selected_card().map(|c| c.true_offset),
                previews: s.previews.iter().filter_map(|p| s.card_ordinal(&p.card_id)).collect(),
                steps: s.steps?,
                wear: s.wear?,
                reward: s.reward?.value,
            })
        })
        .collect();
    rows.sort_by(|a, b| (&a.participant_id, a.day_index).cmp(&(&b.participant_id, b.day_index)));
    rows
}

fn rewards_to_csv(state: &StudyState) -> (String, usize) {
    let mut sessions: Vec<_> = state.sessions().filter(|s| s.state == SessionState::Finalized).collect();
    sessions.sort_by(|a, b| (&a.participant_id, a.day_index).cmp(&(&b.participant_id, b.day_index)));
    let mut out = String::from(REWARDS_CSV_HEADER);
    out.push('\n');
    let mut n = 0;
    for s in sessions {
        if let Some(r) = s.reward {
            let steps = r.steps_component.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.participant_id, s.day_index, s.arm, r.motivation_component, steps, r.value
            );
            n += 1;
        }
    }
    (out, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Export {
    Sessions,
    Steps,
    Rewards,
}

impl Export {
    pub const ALL: [Export; 3] = [Export::Sessions, Export::Steps, Export::Rewards];

    pub fn file_name(self) -> &'static str {
        match self {
            Export::Sessions => "sessions.csv",
            Export::Steps => "steps.csv",
            Export::Rewards => "rewards.csv",
        }
    }
}

/// Render one export; returns the text and its data row count.
pub fn render_export(which: Export, state: &StudyState) -> (String, usize) {
    match which {
        Export::Sessions => {
            let rows = session_rows(state);
            (sessions_to_csv(&rows), rows.len())
        }
        Export::Steps => (steps_to_csv(state.steps().iter()), state.steps().len()),
        Export::Rewards => rewards_to_csv(state),
    }
}

pub fn export_csv(which: Export, state: &StudyState, destination: &Path) -> Result<usize> {
    let (text, n) = render_export(which, state);
    std::fs::write(destination, text).map_err(|e| Error::Io(format!("{}: {e}", destination.display())))?;
    Ok(n)
}
