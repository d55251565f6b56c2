//! Personalized social comparison for physical activity.
//!
//! A three-armed bandit learns, per participant, whether downward, mixed or
//! upward comparison targets produce the most motivation and steps, and the
//! profile generator turns the chosen arm into four artificial peer profiles
//! with step counts offset from the participant's own.
//!
//! The crate is organised around an append-only event log:
//!
//! - [`bandit`]: arm statistics, reward function, UCB1 / ε-greedy / uniform selection.
//! - [`profiles`]: offset table, card generation, attribute pool.
//! - [`protocol`]: condition assignment, baseline schedules, the daily session
//!   state machine and next-day finalization.
//! - [`steps`]: step-count providers and the step CSV format.
//! - [`events`]: the event log, projections and CSV exports.
//! - [`platform`]: the command side tying the above together.
//! - [`sim`]: synthetic participants driving complete studies.
//! - [`analysis`]: correlation series, ICC, step and motivation tables, Welch's t-test.
//! - [`service`]: the HTTP API.

pub mod analysis;
pub mod bandit;
pub mod config;
pub mod error;
pub mod events;
pub mod platform;
pub mod profiles;
pub mod protocol;
pub mod seeding;
pub mod service;
pub mod sim;
pub mod steps;

pub use bandit::{ArmId, ArmStats, Reward, RewardWeights, Strategy};
pub use error::{Error, Result};
pub use events::{Event, EventBody, EventStore};
pub use platform::Platform;
pub use profiles::{AttributePool, ProfileAttributes, ProfileCard};
pub use protocol::{Condition, DailySession, Gender, ParticipantModel, SessionState, StudyConfig};
