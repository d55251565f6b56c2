//! The study analysis pipeline over finalized session rows.
//!
//! Everything here is a pure function of its inputs; the report keeps a
//! stable ordering (condition, arm, phase) so reruns serialize identically.

pub mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use stats::{icc_oneway, pearson, pearson_pairs, welch_t, WelchTest};

use crate::bandit::ArmId;
use crate::error::{Error, Result};
use crate::events::SessionRow;
use crate::protocol::{Condition, StudyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    During,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Pre, Phase::During];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::During => "during",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub baseline_days: u32,
    pub total_days: u32,
    /// Participants with fewer finalized sessions are dropped from step tables.
    pub min_completed_days: u32,
    pub non_wear_threshold: u32,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self::from_config(&StudyConfig::default())
    }
}

impl AnalysisOptions {
    pub fn from_config(config: &StudyConfig) -> Self {
        Self {
            baseline_days: config.baseline_days,
            total_days: config.total_days,
            min_completed_days: 14,
            non_wear_threshold: config.non_wear_threshold,
        }
    }

    pub fn phase(&self, day_index: u32) -> Phase {
        if day_index <= self.baseline_days {
            Phase::Pre
        } else {
            Phase::During
        }
    }

    fn is_wear(&self, row: &SessionRow) -> bool {
        row.steps >= self.non_wear_threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub day: u32,
    /// Number of (direction, truth) pairs that day.
    pub n: usize,
    pub r: Option<f64>,
}

/// Per-day Pearson r between the shown arm's direction code and the
/// participant's preference score, experimental participants only.
/// Days with fewer than three pairs or no variance come back as `r: None`.
pub fn correlation_series(
    rows: &[SessionRow],
    truth: &BTreeMap<String, f64>,
    options: &AnalysisOptions,
) -> Vec<CorrelationPoint> {
    let mut by_day: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.condition == Condition::Experimental) {
        let Some(score) = truth.get(&row.participant_id) else { continue };
        let (xs, ys) = by_day.entry(row.day_index).or_default();
        xs.push(f64::from(row.arm.direction()));
        ys.push(*score);
    }
    let last = by_day.keys().next_back().copied().unwrap_or(0).max(options.total_days);
    (1..=last)
        .map(|day| {
            let (n, r) = match by_day.get(&day) {
                Some((xs, ys)) if xs.len() >= 3 => (xs.len(), pearson(xs, ys).ok()),
                Some((xs, _)) => (xs.len(), None),
                None => (0, None),
            };
            CorrelationPoint { day, n, r }
        })
        .collect()
}

/// Mean of the present `r` values over days `from..=to`.
pub fn mean_correlation(series: &[CorrelationPoint], from: u32, to: u32) -> Option<f64> {
    let rs: Vec<f64> = series.iter().filter(|p| (from..=to).contains(&p.day)).filter_map(|p| p.r).collect();
    stats::mean(&rs)
}

fn selection_groups(rows: &[SessionRow], condition: Condition, phase: Phase, options: &AnalysisOptions) -> Vec<Vec<f64>> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for row in rows {
        if row.condition != condition || options.phase(row.day_index) != phase {
            continue;
        }
        if let Some(offset) = row.selected_offset {
            groups.entry(&row.participant_id).or_default().push(offset);
        }
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}

/// ICC of selected offsets within participants for one condition and phase.
pub fn selection_stability(
    rows: &[SessionRow],
    condition: Condition,
    phase: Phase,
    options: &AnalysisOptions,
) -> Result<f64> {
    let groups = selection_groups(rows, condition, phase, options);
    if groups.len() < 2 {
        return Err(Error::Domain(format!(
            "{condition}/{}: {} eligible participants, need 2",
            phase.as_str(),
            groups.len()
        )));
    }
    icc_oneway(&groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccCell {
    pub condition: Condition,
    pub phase: Phase,
    pub participants: usize,
    pub observations: usize,
    pub icc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

pub fn icc_table(rows: &[SessionRow], options: &AnalysisOptions) -> Vec<IccCell> {
    let mut out = Vec::new();
    for condition in Condition::ALL {
        for phase in Phase::ALL {
            let groups = selection_groups(rows, condition, phase, options);
            let (icc, note) = match selection_stability(rows, condition, phase, options) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(IccCell {
                condition,
                phase,
                participants: groups.len(),
                observations: groups.iter().map(Vec::len).sum(),
                icc,
                note,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCell {
    pub arm: ArmId,
    pub condition: Condition,
    pub phase: Phase,
    pub n: usize,
    pub mean: f64,
    pub se: Option<f64>,
}

fn completed_days(rows: &[SessionRow]) -> BTreeMap<&str, u32> {
    let mut days: BTreeMap<&str, u32> = BTreeMap::new();
    for row in rows {
        *days.entry(&row.participant_id).or_default() += 1;
    }
    days
}

fn under_min_days<'a>(rows: &'a [SessionRow], options: &AnalysisOptions) -> BTreeSet<&'a str> {
    completed_days(rows)
        .into_iter()
        .filter(|(_, n)| *n < options.min_completed_days)
        .map(|(p, _)| p)
        .collect()
}

/// Mean daily steps per (arm, condition, phase) over wear days of participants
/// with enough completed days. Empty cells are omitted.
pub fn step_summary(rows: &[SessionRow], options: &AnalysisOptions) -> Vec<StepCell> {
    let excluded = under_min_days(rows, options);
    let mut cells: BTreeMap<(ArmId, Condition, Phase), Vec<f64>> = BTreeMap::new();
    for row in rows {
        if excluded.contains(row.participant_id.as_str()) || !options.is_wear(row) {
            continue;
        }
        cells
            .entry((row.arm, row.condition, options.phase(row.day_index)))
            .or_default()
            .push(f64::from(row.steps));
    }
    cells
        .into_iter()
        .map(|((arm, condition, phase), xs)| StepCell {
            arm,
            condition,
            phase,
            n: xs.len(),
            mean: stats::mean(&xs).unwrap_or(0.0),
            se: stats::standard_error(&xs),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotivationCell {
    pub condition: Condition,
    /// `None` on the per-condition overall rows.
    pub arm: Option<ArmId>,
    pub n: usize,
    pub mean: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotivationTable {
    pub cells: Vec<MotivationCell>,
    pub overall: Vec<MotivationCell>,
}

impl MotivationTable {
    pub fn overall_mean(&self, condition: Condition) -> Option<f64> {
        self.overall.iter().find(|c| c.condition == condition).map(|c| c.mean)
    }
}

fn deltas(rows: &[SessionRow], condition: Condition) -> Vec<f64> {
    rows.iter().filter(|r| r.condition == condition).map(|r| f64::from(r.delta_motivation())).collect()
}

fn motivation_cell(condition: Condition, arm: Option<ArmId>, xs: &[f64]) -> MotivationCell {
    MotivationCell { condition, arm, n: xs.len(), mean: stats::mean(xs).unwrap_or(0.0), se: stats::standard_error(xs) }
}

/// Post minus pre motivation per (condition, arm) and per condition, all days.
pub fn motivation_summary(rows: &[SessionRow]) -> MotivationTable {
    let mut table = MotivationTable::default();
    for condition in Condition::ALL {
        for arm in ArmId::ALL {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.condition == condition && r.arm == arm)
                .map(|r| f64::from(r.delta_motivation()))
                .collect();
            if !xs.is_empty() {
                table.cells.push(motivation_cell(condition, Some(arm), &xs));
            }
        }
        let xs = deltas(rows, condition);
        if !xs.is_empty() {
            table.overall.push(motivation_cell(condition, None, &xs));
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureCell {
    pub condition: Condition,
    pub phase: Phase,
    pub arm: ArmId,
    pub sessions: usize,
    /// Share of the (condition, phase) sessions shown this arm.
    pub share: f64,
}

/// How often each arm was shown, all finalized sessions included.
pub fn arm_exposure(rows: &[SessionRow], options: &AnalysisOptions) -> Vec<ExposureCell> {
    let mut counts: BTreeMap<(Condition, Phase), [usize; 3]> = BTreeMap::new();
    for row in rows {
        counts.entry((row.condition, options.phase(row.day_index))).or_default()[row.arm.index()] += 1;
    }
    let mut out = Vec::new();
    for ((condition, phase), c) in counts {
        let total: usize = c.iter().sum();
        for arm in ArmId::ALL {
            let sessions = c[arm.index()];
            out.push(ExposureCell { condition, phase, arm, sessions, share: sessions as f64 / total as f64 });
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusions {
    pub sessions: usize,
    /// Finalized sessions below the wear threshold.
    pub non_wear_days: usize,
    /// Participants with fewer than the minimum completed days.
    pub participants_under_min_days: usize,
    pub excluded_participants: Vec<String>,
}

pub fn exclusions(rows: &[SessionRow], options: &AnalysisOptions) -> Exclusions {
    let excluded = under_min_days(rows, options);
    Exclusions {
        sessions: rows.len(),
        non_wear_days: rows.iter().filter(|r| !options.is_wear(r)).count(),
        participants_under_min_days: excluded.len(),
        excluded_participants: excluded.into_iter().map(str::to_string).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    /// Experimental minus control, on per-session motivation deltas.
    pub test: Option<WelchTest>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub options: AnalysisOptions,
    pub correlation_series: Vec<CorrelationPoint>,
    pub icc_table: Vec<IccCell>,
    pub step_table: Vec<StepCell>,
    pub motivation_table: MotivationTable,
    pub arm_exposure: Vec<ExposureCell>,
    pub t_test: TTestResult,
    pub exclusions: Exclusions,
    pub not_computed: Vec<String>,
}

impl AnalysisReport {
    pub fn icc(&self, condition: Condition, phase: Phase) -> Option<f64> {
        self.icc_table.iter().find(|c| c.condition == condition && c.phase == phase).and_then(|c| c.icc)
    }

    pub fn step_cell(&self, arm: ArmId, condition: Condition, phase: Phase) -> Option<&StepCell> {
        self.step_table.iter().find(|c| c.arm == arm && c.condition == condition && c.phase == phase)
    }

    pub fn exposure(&self, condition: Condition, phase: Phase, arm: ArmId) -> Option<&ExposureCell> {
        self.arm_exposure.iter().find(|c| c.condition == condition && c.phase == phase && c.arm == arm)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Run the whole pipeline. Without `truth` the correlation series is empty.
pub fn analyze(rows: &[SessionRow], truth: Option<&BTreeMap<String, f64>>, options: &AnalysisOptions) -> AnalysisReport {
    let t_test = match welch_t(&deltas(rows, Condition::Experimental), &deltas(rows, Condition::Control)) {
        Ok(t) => TTestResult { test: Some(t), note: None },
        Err(e) => TTestResult { test: None, note: Some(e.to_string()) },
    };
    AnalysisReport {
        options: *options,
        correlation_series: truth.map(|t| correlation_series(rows, t, options)).unwrap_or_default(),
        icc_table: icc_table(rows, options),
        step_table: step_summary(rows, options),
        motivation_table: motivation_summary(rows),
        arm_exposure: arm_exposure(rows, options),
        t_test,
        exclusions: exclusions(rows, options),
        not_computed: vec![
            "multilevel models with covariate adjustment (B, SE, F, sr): not computed".into(),
            "ICC comparison between conditions: not computed".into(),
        ],
    }
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

/// Plain-text rendering of a report.
pub fn render_text(report: &AnalysisReport) -> String {
    let mut s = String::new();
    let ex = &report.exclusions;
    let _ = writeln!(s, "sessions: {}  non-wear days: {}  participants under {} days: {}",
        ex.sessions, ex.non_wear_days, report.options.min_completed_days, ex.participants_under_min_days);

    let _ = writeln!(s, "\nstep averages (wear days)");
    let _ = writeln!(s, "{:<6} {:<13} {:<7} {:>5} {:>10} {:>9}", "arm", "condition", "phase", "n", "mean", "se");
    for c in &report.step_table {
        let _ = writeln!(s, "{:<6} {:<13} {:<7} {:>5} {:>10.2} {:>9}",
            c.arm.short_name(), c.condition.as_str(), c.phase.as_str(), c.n, c.mean, opt(c.se, 2));
    }

    let _ = writeln!(s, "\nmotivation change (post - pre)");
    let _ = writeln!(s, "{:<13} {:<8} {:>5} {:>9} {:>9}", "condition", "arm", "n", "mean", "se");
    let mt = &report.motivation_table;
    for c in mt.cells.iter().chain(&mt.overall) {
        let arm = c.arm.map_or("overall", ArmId::short_name);
        let _ = writeln!(s, "{:<13} {:<8} {:>5} {:>9.4} {:>9}", c.condition.as_str(), arm, c.n, c.mean, opt(c.se, 4));
    }
    match (&report.t_test.test, &report.t_test.note) {
        (Some(t), _) => {
            let _ = writeln!(s, "welch t (experimental vs control): t={:.4} df={:.2} p={:.4}", t.t, t.df, t.p);
        }
        (None, note) => {
            let _ = writeln!(s, "welch t: {}", note.as_deref().unwrap_or("unavailable"));
        }
    }

    let _ = writeln!(s, "\nselection stability (ICC of selected offsets)");
    for c in &report.icc_table {
        let _ = writeln!(s, "{:<13} {:<7} participants={:<4} icc={}",
            c.condition.as_str(), c.phase.as_str(), c.participants, opt(c.icc, 4));
    }

    let _ = writeln!(s, "\narm exposure");
    for c in &report.arm_exposure {
        let _ = writeln!(s, "{:<13} {:<7} {:<6} {:>5} ({:.3})",
            c.condition.as_str(), c.phase.as_str(), c.arm.short_name(), c.sessions, c.share);
    }

    if !report.correlation_series.is_empty() {
        let _ = writeln!(s, "\ncorrelation of arm direction with preference, by day");
        for p in &report.correlation_series {
            let _ = writeln!(s, "day {:>3}  n={:<4} r={}", p.day, p.n, opt(p.r, 4));
        }
    }

    let _ = writeln!(s);
    for line in &report.not_computed {
        let _ = writeln!(s, "{line}");
    }
    s
}
