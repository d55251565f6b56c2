//! Daily step counts: storage, providers and the step CSV format.
//!
//! CSV layout, UTF-8 with `\n` line endings:
//!
//! ```text
//! participant_id,date,steps
//! p0001,2024-03-01,8200
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEPS_CSV_HEADER: &str = "participant_id,date,steps";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSource {
    Replay,
    Simulated,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub participant_id: String,
    pub date: NaiveDate,
    pub steps: u32,
    pub source: StepSource,
}

/// Anything that can answer "how many steps did this participant take that day".
pub trait StepProvider {
    fn get_steps(&self, participant_id: &str, date: NaiveDate) -> Option<u32>;
}

/// Result of an upsert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsert {
    Inserted,
    Overwrote { previous: u32 },
}

/// One record per (participant, date); later writes win and are audited.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStore {
    records: BTreeMap<(String, NaiveDate), StepRecord>,
    overwrites: Vec<(StepRecord, u32)>,
}

impl StepStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert(&mut self, record: StepRecord) -> Upsert {
        let key = (record.participant_id.clone(), record.date);
        match self.records.insert(key, record.clone()) {
            Some(old) => {
                self.overwrites.push((record, old.steps));
                Upsert::Overwrote { previous: old.steps }
            }
            None => Upsert::Inserted,
        }
    }

    pub fn record(&self, participant_id: &str, date: NaiveDate) -> Option<&StepRecord> {
        self.records.get(&(participant_id.to_string(), date))
    }

    /// All records of one participant, by date.
    pub fn history(&self, participant_id: &str) -> Vec<StepRecord> {
        self.records
            .range((participant_id.to_string(), NaiveDate::MIN)..=(participant_id.to_string(), NaiveDate::MAX))
            .map(|(_, r)| r.clone())
            .collect()
    }

    /// Records of one participant strictly before `date`.
    pub fn history_before(&self, participant_id: &str, date: NaiveDate) -> Vec<StepRecord> {
        self.history(participant_id).into_iter().filter(|r| r.date < date).collect()
    }

    /// Most recent record before `date` with at least `min_steps` steps.
    pub fn last_wear_before(&self, participant_id: &str, date: NaiveDate, min_steps: u32) -> Option<StepRecord> {
        self.records
            .range((participant_id.to_string(), NaiveDate::MIN)..(participant_id.to_string(), date))
            .rev()
            .map(|(_, r)| r)
            .find(|r| r.steps >= min_steps)
            .cloned()
    }

    /// Overwritten records with the value they replaced.
    pub fn overwrites(&self) -> &[(StepRecord, u32)] {
        &self.overwrites
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records ordered by (participant, date).
    pub fn iter(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.values()
    }
}

impl StepProvider for StepStore {
    fn get_steps(&self, participant_id: &str, date: NaiveDate) -> Option<u32> {
        self.record(participant_id, date).map(|r| r.steps)
    }
}

/// Serialize records in the step CSV format.
pub fn steps_to_csv<'a>(records: impl IntoIterator<Item = &'a StepRecord>) -> String {
    let mut out = String::from(STEPS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.participant_id, r.date.format("%Y-%m-%d"), r.steps);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Replay {
    pub records: Vec<StepRecord>,
    pub skipped: Vec<RowError>,
}

fn parse_row(fields: &[&str]) -> std::result::Result<(String, NaiveDate, u32), String> {
    let [pid, date, steps] = fields else {
        return Err(format!("expected 3 fields, found {}", fields.len()));
    };
    if pid.is_empty() {
        return Err("empty participant_id".into());
    }
    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| format!("invalid date `{date}`"))?;
    if steps.is_empty() || !steps.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("invalid steps `{steps}`"));
    }
    let steps = steps.parse::<u32>().map_err(|_| format!("steps `{steps}` out of range"))?;
    Ok((pid.to_string(), date, steps))
}

/// Parse step CSV text. With `strict`, the first malformed row aborts with its
/// line number; otherwise malformed rows are skipped and reported.
pub fn parse_steps_csv(text: &str, strict: bool) -> Result<Replay> {
    let mut out = Replay::default();
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        None => return Ok(out),
        Some((_, "")) => return Ok(out),
        Some((_, h)) if h.trim_end_matches('\r') == STEPS_CSV_HEADER => {}
        Some((_, h)) => return Err(Error::Validation(format!("line 1: unexpected header `{h}`"))),
    }
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = idx as u64 + 1;
        let fields: Vec<&str> = line.split(',').collect();
        match parse_row(&fields) {
            Ok((participant_id, date, steps)) => {
                out.records.push(StepRecord { participant_id, date, steps, source: StepSource::Replay })
            }
            Err(message) if strict => return Err(Error::Validation(format!("line {lineno}: {message}"))),
            Err(message) => out.skipped.push(RowError { line: lineno, message }),
        }
    }
    Ok(out)
}

pub fn replay_from_file(path: &Path, strict: bool) -> Result<Replay> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_steps_csv(&text, strict)
}
