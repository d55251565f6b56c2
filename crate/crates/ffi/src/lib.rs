//! C ABI for the bandit, the profile generator and the statistics kernels.
//!
//! Every function returns a [`PsStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and can be copied out with
//! [`ps_last_error_message`]. Arms cross the boundary as direction codes:
//! -1 downward, 0 mixed, +1 upward.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use peerstep::analysis::stats;
use peerstep::bandit::{compute_reward, select_arm_ucb, ArmStats, Reward, RewardWeights};
use peerstep::profiles::{generate_cards, offsets_for_arm, AttributePool};
use peerstep::{ArmId, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidArm = 3,
    UndefinedCorrelation = 4,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: PsStatus, msg: impl Into<String>) -> PsStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> PsStatus {
    let status = match e {
        Error::UndefinedCorrelation(_) => PsStatus::UndefinedCorrelation,
        _ => PsStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> PsStatus) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PsStatus::Panic, "internal panic"),
    }
}

fn arm_from_code(code: i8) -> Result<ArmId, PsStatus> {
    match code {
        -1 => Ok(ArmId::Downward),
        0 => Ok(ArmId::Mixed),
        1 => Ok(ArmId::Upward),
        _ => Err(fail(PsStatus::InvalidArm, format!("arm code {code} is not -1, 0 or 1"))),
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Result<&'a [T], PsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(PsStatus::NullPointer, "null input array"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `out` must be null or valid for one write.
unsafe fn put<T>(out: *mut T, value: T) -> PsStatus {
    if out.is_null() {
        return fail(PsStatus::NullPointer, "null output pointer");
    }
    out.write(value);
    PsStatus::Ok
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL;
/// 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn ps_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            buf.add(n).write(0);
        }
        bytes.len()
    })
}

/// UCB1 bandit over the three arms with its own seeded generator.
pub struct PsBandit {
    stats: ArmStats,
    exploration_c: f64,
    rng: ChaCha8Rng,
}

/// Create a bandit; null if `exploration_c` is negative or not finite.
#[no_mangle]
pub extern "C" fn ps_bandit_new(seed: u64, exploration_c: f64) -> *mut PsBandit {
    if !(exploration_c >= 0.0 && exploration_c.is_finite()) {
        set_error(format!("exploration constant {exploration_c} must be finite and non-negative"));
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(PsBandit { stats: ArmStats::new(), exploration_c, rng: ChaCha8Rng::seed_from_u64(seed) }))
}

/// # Safety
/// `bandit` must be null or come from [`ps_bandit_new`] and not be freed yet.
#[no_mangle]
pub unsafe extern "C" fn ps_bandit_free(bandit: *mut PsBandit) {
    if !bandit.is_null() {
        drop(Box::from_raw(bandit));
    }
}

/// # Safety
/// `bandit` must be a live handle; `out_arm` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ps_bandit_select(bandit: *mut PsBandit, out_arm: *mut i8) -> PsStatus {
    guard(|| {
        let Some(b) = bandit.as_mut() else { return fail(PsStatus::NullPointer, "null bandit") };
        let arm = select_arm_ucb(&b.stats, b.exploration_c, &mut b.rng);
        put(out_arm, arm.direction())
    })
}

/// Record a reward in [0, 1] for an arm.
///
/// # Safety
/// `bandit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ps_bandit_update(bandit: *mut PsBandit, arm: i8, reward: f64) -> PsStatus {
    guard(|| {
        let Some(b) = bandit.as_mut() else { return fail(PsStatus::NullPointer, "null bandit") };
        let arm = tri!(arm_from_code(arm));
        if !(0.0..=1.0).contains(&reward) {
            return fail(PsStatus::InvalidArgument, format!("reward {reward} outside [0, 1]"));
        }
        b.stats.update(arm, &Reward { value: reward, motivation_component: reward, steps_component: None });
        PsStatus::Ok
    })
}

/// # Safety
/// `bandit` must be a live handle; `out_pulls` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ps_bandit_pulls(bandit: *const PsBandit, arm: i8, out_pulls: *mut u64) -> PsStatus {
    guard(|| {
        let Some(b) = bandit.as_ref() else { return fail(PsStatus::NullPointer, "null bandit") };
        let arm = tri!(arm_from_code(arm));
        put(out_pulls, b.stats.pulls(arm))
    })
}

/// Mean reward of an arm; `InvalidArgument` while it has no pulls.
///
/// # Safety
/// `bandit` must be a live handle; `out_mean` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ps_bandit_mean(bandit: *const PsBandit, arm: i8, out_mean: *mut f64) -> PsStatus {
    guard(|| {
        let Some(b) = bandit.as_ref() else { return fail(PsStatus::NullPointer, "null bandit") };
        let arm = tri!(arm_from_code(arm));
        match b.stats.mean(arm) {
            Some(m) => put(out_mean, m),
            None => fail(PsStatus::InvalidArgument, "arm has not been pulled"),
        }
    })
}

/// Daily reward. A negative `steps` marks a non-wear day.
///
/// # Safety
/// `out_reward` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ps_compute_reward(
    pre: u8,
    post: u8,
    steps: i64,
    baseline_mean: f64,
    w_motivation: f64,
    w_steps: f64,
    out_reward: *mut f64,
) -> PsStatus {
    guard(|| {
        let weights = tri!(RewardWeights::new(w_motivation, w_steps).map_err(from_error));
        let steps = if steps < 0 { None } else { Some(u32::try_from(steps).unwrap_or(u32::MAX)) };
        let r = tri!(compute_reward(pre, post, steps, baseline_mean, &weights).map_err(from_error));
        put(out_reward, r.value)
    })
}

/// The arm's four offsets in ascending order.
///
/// # Safety
/// `out_offsets` must be valid for four writes.
#[no_mangle]
pub unsafe extern "C" fn ps_offsets_for_arm(arm: i8, out_offsets: *mut f64) -> PsStatus {
    guard(|| {
        let arm = tri!(arm_from_code(arm));
        if out_offsets.is_null() {
            return fail(PsStatus::NullPointer, "null output pointer");
        }
        for (i, o) in offsets_for_arm(arm).into_iter().enumerate() {
            out_offsets.add(i).write(o);
        }
        PsStatus::Ok
    })
}

/// One day's four cards: displayed steps and true offsets, in display order.
///
/// # Safety
/// Both output pointers must be valid for four writes.
#[no_mangle]
pub unsafe extern "C" fn ps_generate_cards(
    arm: i8,
    ref_steps: u32,
    seed: u64,
    out_steps: *mut u32,
    out_offsets: *mut f64,
) -> PsStatus {
    guard(|| {
        let arm = tri!(arm_from_code(arm));
        if out_steps.is_null() || out_offsets.is_null() {
            return fail(PsStatus::NullPointer, "null output pointer");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cards = tri!(generate_cards(arm, ref_steps, &mut rng, &AttributePool::default()).map_err(from_error));
        for (i, c) in cards.iter().enumerate() {
            out_steps.add(i).write(c.displayed_steps);
            out_offsets.add(i).write(c.true_offset);
        }
        PsStatus::Ok
    })
}

/// # Safety
/// `xs` and `ys` must be valid for `n` reads; `out_r` for one write.
#[no_mangle]
pub unsafe extern "C" fn ps_pearson(xs: *const f64, ys: *const f64, n: usize, out_r: *mut f64) -> PsStatus {
    guard(|| {
        let xs = tri!(slice(xs, n));
        let ys = tri!(slice(ys, n));
        put(out_r, tri!(stats::pearson(xs, ys).map_err(from_error)))
    })
}

/// Welch's t-test; any of the output pointers may be null.
///
/// # Safety
/// `xs` valid for `nx` reads, `ys` for `ny`; non-null outputs for one write.
#[no_mangle]
pub unsafe extern "C" fn ps_welch_t(
    xs: *const f64,
    nx: usize,
    ys: *const f64,
    ny: usize,
    out_t: *mut f64,
    out_df: *mut f64,
    out_p: *mut f64,
) -> PsStatus {
    guard(|| {
        let xs = tri!(slice(xs, nx));
        let ys = tri!(slice(ys, ny));
        let w = tri!(stats::welch_t(xs, ys).map_err(from_error));
        for (out, v) in [(out_t, w.t), (out_df, w.df), (out_p, w.p)] {
            if !out.is_null() {
                out.write(v);
            }
        }
        PsStatus::Ok
    })
}

/// One-way ICC. `values` holds the groups back to back; `group_sizes[i]` is
/// the length of group `i`.
///
/// # Safety
/// `group_sizes` valid for `n_groups` reads, `values` for their sum.
#[no_mangle]
pub unsafe extern "C" fn ps_icc_oneway(
    values: *const f64,
    group_sizes: *const usize,
    n_groups: usize,
    out_icc: *mut f64,
) -> PsStatus {
    guard(|| {
        let sizes = tri!(slice(group_sizes, n_groups));
        let total = sizes.iter().try_fold(0usize, |acc, n| acc.checked_add(*n));
        let Some(total) = total else { return fail(PsStatus::InvalidArgument, "group sizes overflow") };
        let values = tri!(slice(values, total));
        let mut groups = Vec::with_capacity(n_groups);
        let mut at = 0;
        for n in sizes {
            groups.push(values[at..at + n].to_vec());
            at += n;
        }
        put(out_icc, tri!(stats::icc_oneway(&groups).map_err(from_error)))
    })
}
