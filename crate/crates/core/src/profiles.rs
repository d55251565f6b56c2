//! Artificial comparison-target profiles.
//!
//! Each arm prescribes four step offsets relative to the participant's
//! reference steps. Displayed step counts are obfuscated by up to ±2% and the
//! four cards are shown in a random order.

use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::ArmId;
use crate::error::{Error, Result};

/// Minimum reference steps accepted by [`generate_cards`]; also the wear threshold.
pub const MIN_REFERENCE_STEPS: u32 = 100;

/// Maximum obfuscation, as a fraction of both the target and the reference.
pub const OBFUSCATION: f64 = 0.02;

pub const CARDS_PER_DAY: usize = 4;

const DOWNWARD: [f64; 4] = [-0.40, -0.30, -0.20, -0.10];
const MIXED: [f64; 4] = [-0.20, -0.10, 0.10, 0.20];
const UPWARD: [f64; 4] = [0.10, 0.20, 0.30, 0.40];

pub fn offsets_for_arm(arm: ArmId) -> [f64; 4] {
    match arm {
        ArmId::Downward => DOWNWARD,
        ArmId::Mixed => MIXED,
        ArmId::Upward => UPWARD,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileAttributes {
    pub age: u32,
    pub sex: String,
    pub profession: String,
    pub height_cm: u32,
    pub weight_kg: u32,
    pub gym_minutes_per_week: u32,
    pub preferred_activities: Vec<String>,
    pub hobbies: Vec<String>,
    pub exercise_location: String,
    pub favorite_spot: String,
    pub average_distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCard {
    pub card_id: String,
    pub display_name: String,
    pub displayed_steps: u32,
    pub true_offset: f64,
    pub attributes: ProfileAttributes,
}

impl ProfileCard {
    /// Offset implied by the displayed steps.
    pub fn recovered_offset(&self, ref_steps: u32) -> f64 {
        f64::from(self.displayed_steps) / f64::from(ref_steps) - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealRange {
    pub min: f64,
    pub max: f64,
}

/// Curated values profiles are drawn from. Loaded from a TOML file; the
/// shipped default lives in `data/attribute_pool.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePool {
    pub age: IntRange,
    pub height_cm: IntRange,
    pub weight_kg: IntRange,
    pub bmi: RealRange,
    pub gym_minutes_per_week: IntRange,
    pub average_distance_km: RealRange,
    pub sexes: Vec<String>,
    pub professions: Vec<String>,
    pub preferred_activities: Vec<String>,
    pub hobbies: Vec<String>,
    pub exercise_locations: Vec<String>,
    pub favorite_spots: Vec<String>,
}

const DEFAULT_POOL: &str = include_str!("../data/attribute_pool.toml");

impl AttributePool {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let pool: AttributePool = toml::from_str(s).map_err(|e| Error::Config(format!("attribute pool: {e}")))?;
        pool.validate()?;
        Ok(pool)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("attribute pool {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("sexes", &self.sexes),
            ("professions", &self.professions),
            ("preferred_activities", &self.preferred_activities),
            ("hobbies", &self.hobbies),
            ("exercise_locations", &self.exercise_locations),
            ("favorite_spots", &self.favorite_spots),
        ];
        for (name, list) in lists {
            if list.is_empty() || list.iter().any(|s| s.trim().is_empty()) {
                return Err(Error::Config(format!("attribute pool field `{name}` is empty")));
            }
        }
        let ints = [
            ("age", self.age),
            ("height_cm", self.height_cm),
            ("weight_kg", self.weight_kg),
            ("gym_minutes_per_week", self.gym_minutes_per_week),
        ];
        for (name, r) in ints {
            if r.min > r.max {
                return Err(Error::Config(format!("attribute pool range `{name}` is empty")));
            }
        }
        for (name, r) in [("bmi", self.bmi), ("average_distance_km", self.average_distance_km)] {
            if r.min.is_nan() || r.max.is_nan() || r.min > r.max || r.min < 0.0 {
                return Err(Error::Config(format!("attribute pool range `{name}` is invalid")));
            }
        }
        if self.age.min < 18 {
            return Err(Error::Config("profiles must be adults (age.min >= 18)".into()));
        }
        Ok(())
    }
}

impl Default for AttributePool {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_POOL).expect("bundled attribute pool is valid")
    }
}

fn pick<R: Rng + ?Sized>(list: &[String], rng: &mut R) -> String {
    list.choose(rng).cloned().unwrap_or_default()
}

fn pick_several<R: Rng + ?Sized>(list: &[String], n: usize, rng: &mut R) -> Vec<String> {
    list.choose_multiple(rng, n.min(list.len())).cloned().collect()
}

pub fn sample_attributes<R: Rng + ?Sized>(rng: &mut R, pool: &AttributePool) -> Result<ProfileAttributes> {
    pool.validate()?;
    let age = rng.random_range(pool.age.min..=pool.age.max);
    let sex = pick(&pool.sexes, rng);
    let profession = pick(&pool.professions, rng);
    let height_cm = rng.random_range(pool.height_cm.min..=pool.height_cm.max);
    let bmi = rng.random_range(pool.bmi.min..=pool.bmi.max);
    let h = f64::from(height_cm) / 100.0;
    let weight_kg = ((bmi * h * h).round() as u32).clamp(pool.weight_kg.min, pool.weight_kg.max);
    let gym_minutes_per_week = rng.random_range(pool.gym_minutes_per_week.min..=pool.gym_minutes_per_week.max);
    let n_act = rng.random_range(1..=3);
    let preferred_activities = pick_several(&pool.preferred_activities, n_act, rng);
    let n_hob = rng.random_range(1..=3);
    let hobbies = pick_several(&pool.hobbies, n_hob, rng);
    let exercise_location = pick(&pool.exercise_locations, rng);
    let favorite_spot = pick(&pool.favorite_spots, rng);
    let d = rng.random_range(pool.average_distance_km.min..=pool.average_distance_km.max);
    let average_distance_km = (d * 10.0).round() / 10.0;
    Ok(ProfileAttributes {
        age,
        sex,
        profession,
        height_cm,
        weight_kg,
        gym_minutes_per_week,
        preferred_activities,
        hobbies,
        exercise_location,
        favorite_spot,
        average_distance_km,
    })
}

/// A handle like `azb30`: three lowercase letters and two digits.
pub fn random_display_name<R: Rng + ?Sized>(rng: &mut R) -> String {
    let mut s = String::with_capacity(5);
    for _ in 0..3 {
        s.push(char::from(b'a' + rng.random_range(0..26u8)));
    }
    for _ in 0..2 {
        s.push(char::from(b'0' + rng.random_range(0..10u8)));
    }
    s
}

/// Integer band a displayed step count may fall in for `offset`.
///
/// The band is the intersection of ±2% around the target and ±0.02 around the
/// offset, so that neither the displayed value nor the recovered offset strays
/// more than the obfuscation allows.
pub fn displayed_band(ref_steps: u32, offset: f64) -> (u32, u32) {
    let r = f64::from(ref_steps);
    let target = r * (1.0 + offset);
    let lo = (target * (1.0 - OBFUSCATION)).max(r * (1.0 + offset - OBFUSCATION));
    let hi = (target * (1.0 + OBFUSCATION)).min(r * (1.0 + offset + OBFUSCATION));
    (lo.ceil().max(0.0) as u32, hi.floor().max(0.0) as u32)
}

fn obfuscate<R: Rng + ?Sized>(ref_steps: u32, offset: f64, rng: &mut R) -> u32 {
    let target = f64::from(ref_steps) * (1.0 + offset);
    let amplitude = OBFUSCATION / (1.0 + offset).max(1.0);
    let u = rng.random_range(-amplitude..=amplitude);
    // round half up; clamp absorbs rounding at the band edges
    let shown = (target * (1.0 + u) + 0.5).floor().max(0.0) as u32;
    let (lo, hi) = displayed_band(ref_steps, offset);
    shown.clamp(lo, hi)
}

pub fn generate_cards<R: Rng + ?Sized>(
    arm: ArmId,
    ref_steps: u32,
    rng: &mut R,
    pool: &AttributePool,
) -> Result<Vec<ProfileCard>> {
    if ref_steps < MIN_REFERENCE_STEPS {
        return Err(Error::Domain(format!(
            "reference steps {ref_steps} below {MIN_REFERENCE_STEPS}; use the fallback reference"
        )));
    }
    let mut offsets = offsets_for_arm(arm);
    offsets.shuffle(rng);

    let mut names: Vec<String> = Vec::with_capacity(CARDS_PER_DAY);
    while names.len() < CARDS_PER_DAY {
        let n = random_display_name(rng);
        if !names.contains(&n) {
            names.push(n);
        }
    }

    offsets
        .into_iter()
        .zip(names)
        .map(|(offset, display_name)| {
            let displayed_steps = obfuscate(ref_steps, offset, rng);
            let card_id = format!("{:08x}", rng.random::<u32>());
            let attributes = sample_attributes(rng, pool)?;
            Ok(ProfileCard { card_id, display_name, displayed_steps, true_offset: offset, attributes })
        })
        .collect()
}
