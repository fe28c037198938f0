//! C ABI over the `kmaxband` learners, grid utilities and experiment runner.
//!
//! Every fallible function returns a [`KmaxStatus`]; on failure the message
//! is kept per thread and can be read with [`kmax_last_error_message`].
//! Learners are opaque heap handles released by their `_free` function.
//! Arm indices are 0-based and bins 1-based, as in the Rust API.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kmaxband::dck_ucb::{BonusLogArg, DckConfig, DckUcb, OracleChoice};
use kmaxband::discretize::{binary_reward, discrete_reward, p_to_q, BinGrid, GridMode, ProbGrid};
use kmaxband::env_continuous::ValueIndexFeedback;
use kmaxband::harness::{csv_string, run_experiment, ExperimentConfig, RunOptions};
use kmaxband::kmin_exp::{MleExp, MleExpConfig};
use kmaxband::subsets::DEFAULT_SUBSET_CAP;
use kmaxband::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmaxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Validation = 3,
    Capacity = 4,
    Size = 5,
    Consistency = 6,
    Model = 7,
    Solver = 8,
    Config = 9,
    Io = 10,
    /// A Rust panic was caught at the boundary.
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KmaxStatus {
    match e {
        Error::Input(_) => KmaxStatus::InvalidInput,
        Error::Validation(_) => KmaxStatus::Validation,
        Error::Capacity { .. } => KmaxStatus::Capacity,
        Error::Size { .. } => KmaxStatus::Size,
        Error::Consistency(_) => KmaxStatus::Consistency,
        Error::Model(_) => KmaxStatus::Model,
        Error::Solver { .. } => KmaxStatus::Solver,
        Error::Config(_) => KmaxStatus::Config,
        Error::Io { .. } => KmaxStatus::Io,
        Error::AtRound { source, .. } => status_of(source),
    }
}

struct Fail(KmaxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(KmaxStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(KmaxStatus::InvalidInput, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KmaxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            KmaxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside kmaxband".into());
            KmaxStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null("handle"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn kmax_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Number of bins `M` for width `epsilon`, 0 when `epsilon` is invalid.
#[no_mangle]
pub extern "C" fn kmax_grid_bins(epsilon: f64) -> usize {
    BinGrid::new(epsilon).map_or(0, |g| g.m())
}

unsafe fn grid_arg(mode: GridMode, entries: *const f64, n: usize, epsilon: f64) -> Result<ProbGrid, Fail> {
    let grid = BinGrid::new(epsilon)?;
    let m = grid.m();
    let data = slice(entries, n * m, "grid")?;
    let rows = data.chunks(m).map(<[f64]>::to_vec).collect();
    Ok(ProbGrid::new(mode, grid, rows)?)
}

/// Discrete expected maximum of `subset` under bin masses `p` (`n x M`,
/// row-major, `M = kmax_grid_bins(epsilon)`).
///
/// # Safety
/// `p` must hold `n * M` values, `subset` `k` values, `out` one.
#[no_mangle]
pub unsafe extern "C" fn kmax_discrete_reward(
    p: *const f64,
    n: usize,
    epsilon: f64,
    subset: *const usize,
    k: usize,
    out: *mut f64,
) -> KmaxStatus {
    guard(|| {
        let p = grid_arg(GridMode::P, p, n, epsilon)?;
        let s = slice(subset, k, "subset")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = discrete_reward(s, &p)?;
        Ok(())
    })
}

/// Same objective evaluated on the binary-arm parameters `q`.
///
/// # Safety
/// As for [`kmax_discrete_reward`].
#[no_mangle]
pub unsafe extern "C" fn kmax_binary_reward(
    q: *const f64,
    n: usize,
    epsilon: f64,
    subset: *const usize,
    k: usize,
    out: *mut f64,
) -> KmaxStatus {
    guard(|| {
        let q = grid_arg(GridMode::Q, q, n, epsilon)?;
        let s = slice(subset, k, "subset")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = binary_reward(s, &q)?;
        Ok(())
    })
}

/// Converts bin masses to conditional bin probabilities, both `n x M`.
///
/// # Safety
/// `p` and `q_out` must each hold `n * M` values.
#[no_mangle]
pub unsafe extern "C" fn kmax_p_to_q(p: *const f64, n: usize, epsilon: f64, q_out: *mut f64) -> KmaxStatus {
    guard(|| {
        let p = grid_arg(GridMode::P, p, n, epsilon)?;
        let q = p_to_q(&p)?;
        slice_mut(q_out, q.entries.len(), "q_out")?.copy_from_slice(&q.entries);
        Ok(())
    })
}

/// Opaque discretized UCB learner.
pub struct KmaxDck(DckUcb);

/// Creates a learner. `greedy_oracle` selects the greedy maximiser instead
/// of exact enumeration; `bonus_uses_round` puts the current round rather
/// than the horizon inside the bonus logarithm.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kmax_dck_new(
    n: usize,
    k: usize,
    epsilon: f64,
    lipschitz: f64,
    horizon: u64,
    greedy_oracle: bool,
    bonus_uses_round: bool,
    out: *mut *mut KmaxDck,
) -> KmaxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let config = DckConfig {
            epsilon,
            lipschitz,
            horizon,
            n,
            k,
            oracle: if greedy_oracle {
                OracleChoice::Greedy
            } else {
                OracleChoice::Exact
            },
            bonus_log_arg: if bonus_uses_round {
                BonusLogArg::Round
            } else {
                BonusLogArg::Horizon
            },
            subset_cap: DEFAULT_SUBSET_CAP,
        };
        *out = Box::into_raw(Box::new(KmaxDck(DckUcb::new(config)?)));
        Ok(())
    })
}

/// Writes the next action (`k` sorted indices) into `subset_out`.
///
/// # Safety
/// `h` must come from [`kmax_dck_new`]; `subset_out` must hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn kmax_dck_select(h: *mut KmaxDck, subset_out: *mut usize, k: usize) -> KmaxStatus {
    guard(|| {
        let h = handle(h)?;
        if k != h.0.config().k {
            return Err(invalid(format!("buffer holds {k} indices, K = {}", h.0.config().k)));
        }
        let s = h.0.select_action()?;
        slice_mut(subset_out, k, "subset_out")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Feeds back the maximum `reward` and the index of the arm that produced it.
///
/// # Safety
/// `h` must come from [`kmax_dck_new`]; `subset` must hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn kmax_dck_update(
    h: *mut KmaxDck,
    subset: *const usize,
    k: usize,
    reward: f64,
    winner: usize,
) -> KmaxStatus {
    guard(|| {
        let h = handle(h)?;
        let s = slice(subset, k, "subset")?;
        h.0.update(
            s,
            &ValueIndexFeedback {
                reward,
                winner,
                bin: None,
            },
        )?;
        Ok(())
    })
}

/// Current estimate `q_hat(i, j)`, `j` 1-based.
///
/// # Safety
/// `h` must come from [`kmax_dck_new`]; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kmax_dck_q_hat(h: *mut KmaxDck, i: usize, j: usize, out: *mut f64) -> KmaxStatus {
    guard(|| {
        let h = handle(h)?;
        let (n, m) = (h.0.config().n, h.0.grid().m());
        if i >= n || j == 0 || j > m {
            return Err(invalid(format!("cell ({i}, {j}) outside {n} x {m}")));
        }
        *out.as_mut().ok_or_else(|| null("out"))? = h.0.q_hat(i, j);
        Ok(())
    })
}

/// # Safety
/// `h` must be null or come from [`kmax_dck_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn kmax_dck_free(h: *mut KmaxDck) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Opaque optimistic MLE learner.
pub struct KmaxMle(MleExp);

/// Creates a learner over `n` arms with `d`-dimensional features (`n x d`,
/// row-major). `l_star` bounds the expected loss of every subset. A
/// nonpositive `delta` means `1 / horizon`.
///
/// # Safety
/// `features` must hold `n * d` values; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kmax_mle_new(
    features: *const f64,
    n: usize,
    d: usize,
    k: usize,
    v_bound: f64,
    l_star: f64,
    horizon: u64,
    delta: f64,
    out: *mut *mut KmaxMle,
) -> KmaxStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if d == 0 {
            return Err(invalid("d must be >= 1"));
        }
        let feats = slice(features, n * d, "features")?
            .chunks(d)
            .map(<[f64]>::to_vec)
            .collect();
        let mut config = MleExpConfig::new(horizon);
        config.l_star = Some(l_star);
        config.delta = (delta > 0.0).then_some(delta);
        *out = Box::into_raw(Box::new(KmaxMle(MleExp::from_features(config, feats, v_bound, k)?)));
        Ok(())
    })
}

/// Fits the MLE and writes the next action into `subset_out`.
///
/// # Safety
/// `h` must come from [`kmax_mle_new`]; `subset_out` must hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn kmax_mle_select(h: *mut KmaxMle, subset_out: *mut usize, k: usize) -> KmaxStatus {
    guard(|| {
        let h = handle(h)?;
        if k != h.0.k() {
            return Err(invalid(format!("buffer holds {k} indices, K = {}", h.0.k())));
        }
        let s = h.0.select()?;
        slice_mut(subset_out, k, "subset_out")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Records the loss observed for `subset`.
///
/// # Safety
/// `h` must come from [`kmax_mle_new`]; `subset` must hold `k` values.
#[no_mangle]
pub unsafe extern "C" fn kmax_mle_observe(h: *mut KmaxMle, subset: *const usize, k: usize, loss: f64) -> KmaxStatus {
    guard(|| {
        let h = handle(h)?;
        h.0.observe(slice(subset, k, "subset")?, loss)?;
        Ok(())
    })
}

/// Writes the most recent fitted parameter (length `d`).
///
/// # Safety
/// `h` must come from [`kmax_mle_new`]; `theta_out` must hold `d` values.
#[no_mangle]
pub unsafe extern "C" fn kmax_mle_theta_hat(h: *mut KmaxMle, theta_out: *mut f64, d: usize) -> KmaxStatus {
    guard(|| {
        let h = handle(h)?;
        if d != h.0.d() {
            return Err(invalid(format!("buffer holds {d} values, d = {}", h.0.d())));
        }
        let st = h.0.state().ok_or_else(|| invalid("no round selected yet"))?;
        slice_mut(theta_out, d, "theta_out")?.copy_from_slice(st.theta_hat.as_slice());
        Ok(())
    })
}

/// # Safety
/// `h` must be null or come from [`kmax_mle_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn kmax_mle_free(h: *mut KmaxMle) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Runs the experiment described by the TOML text `config` and returns the
/// regret CSV as a newly allocated string in `csv_out`, to be released with
/// [`kmax_string_free`]. `workers = 0` keeps the configured pool size.
///
/// # Safety
/// `config` must be a NUL-terminated string; `csv_out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kmax_run_experiment(
    config: *const c_char,
    workers: usize,
    csv_out: *mut *mut c_char,
) -> KmaxStatus {
    guard(|| {
        let text = str_arg(config, "config")?;
        let out = csv_out.as_mut().ok_or_else(|| null("csv_out"))?;
        let cfg = ExperimentConfig::from_toml_str(text)?;
        let opts = RunOptions {
            workers: (workers > 0).then_some(workers),
            ..RunOptions::default()
        };
        let csv = csv_string(&run_experiment(&cfg, opts)?)?;
        *out = CString::new(csv).expect("CSV has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn kmax_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
