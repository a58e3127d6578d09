//! C ABI over `msrl-core`.
//!
//! Every function returns an [`MsrlStatus`]; outputs go through pointer
//! arguments. On failure the message is kept per thread and can be read with
//! [`msrl_last_error_message`]. Enumerations cross the boundary as plain
//! integers (see the `MSRL_*` constants) so that an out-of-range value from C
//! is reported as `MSRL_STATUS_INVALID` instead of being undefined behaviour.
//!
//! Handles returned by `*_load` are owned by the caller and released with
//! the matching `*_free`. Strings returned through `char **` are released
//! with [`msrl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use msrl_core::corpus::{load_corpus, Label, PreferenceExample, TaskKind};
use msrl_core::grammar::{parse_rationale, StageFormat};
use msrl_core::harness::evaluate;
use msrl_core::policy::{Channel, PolicyParams};
use msrl_core::rewards::{bt_loss, format_reward, total_reward, RewardConfig};

pub const MSRL_FORMAT_THINK_ANSWER: i32 = 0;
pub const MSRL_FORMAT_TYPED_THINK_ANSWER: i32 = 1;

pub const MSRL_LABEL_A: i32 = 0;
pub const MSRL_LABEL_B: i32 = 1;

pub const MSRL_TASK_IMAGE_UNDERSTANDING: i32 = 0;
pub const MSRL_TASK_IMAGE_GENERATION: i32 = 1;
pub const MSRL_TASK_VIDEO_UNDERSTANDING: i32 = 2;
pub const MSRL_TASK_VIDEO_GENERATION: i32 = 3;

pub const MSRL_CHANNEL_VISUAL: i32 = 0;
pub const MSRL_CHANNEL_CAPTION: i32 = 1;
pub const MSRL_CHANNEL_TEXT_ONLY: i32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Invalid = 5,
    Panic = 6,
}

/// Reward components in reward units.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MsrlRewardBreakdown {
    pub format: f64,
    pub accuracy: f64,
    pub task: f64,
    pub total: f64,
}

/// Opaque policy handle.
pub struct MsrlPolicy {
    params: PolicyParams,
}

/// Opaque corpus handle.
pub struct MsrlCorpus {
    examples: Vec<PreferenceExample>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MsrlStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: MsrlStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MsrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsrlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            MsrlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(MsrlStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|e| fail(MsrlStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .map_or_else(|| fail(MsrlStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .map_or_else(|| fail(MsrlStatus::NullPointer, format!("{name} is null")), Ok)
}

fn format_arg(code: i32) -> FfiResult<StageFormat> {
    match code {
        MSRL_FORMAT_THINK_ANSWER => Ok(StageFormat::ThinkAnswer),
        MSRL_FORMAT_TYPED_THINK_ANSWER => Ok(StageFormat::TypedThinkAnswer),
        _ => fail(MsrlStatus::Invalid, format!("unknown format code {code}")),
    }
}

fn label_arg(code: i32) -> FfiResult<Label> {
    usize::try_from(code)
        .ok()
        .and_then(Label::from_index)
        .map_or_else(|| fail(MsrlStatus::Invalid, format!("unknown label code {code}")), Ok)
}

fn task_arg(code: i32) -> FfiResult<TaskKind> {
    usize::try_from(code)
        .ok()
        .and_then(TaskKind::from_index)
        .map_or_else(|| fail(MsrlStatus::Invalid, format!("unknown task code {code}")), Ok)
}

fn channel_arg(code: i32) -> FfiResult<Channel> {
    match code {
        MSRL_CHANNEL_VISUAL => Ok(Channel::Visual),
        MSRL_CHANNEL_CAPTION => Ok(Channel::Caption),
        MSRL_CHANNEL_TEXT_ONLY => Ok(Channel::TextOnly),
        _ => fail(MsrlStatus::Invalid, format!("unknown channel code {code}")),
    }
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next `msrl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn msrl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn msrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// 1.0 when `text` parses in `format`, 0.0 otherwise.
///
/// # Safety
/// `text` must be null or a valid NUL-terminated string; `out` must be null
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_format_reward(text: *const c_char, format: i32, out: *mut f64) -> MsrlStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let format = format_arg(format)?;
        let out = out_arg(out, "out")?;
        *out = format_reward(text, format).as_f64();
        Ok(())
    })
}

/// Full reward for one output. The task component uses the default value
/// of 0.2 when `use_task_reward` is set.
///
/// # Safety
/// As for [`msrl_format_reward`].
#[no_mangle]
pub unsafe extern "C" fn msrl_score(
    text: *const c_char,
    format: i32,
    gold: i32,
    task: i32,
    use_task_reward: bool,
    out: *mut MsrlRewardBreakdown,
) -> MsrlStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let format = format_arg(format)?;
        let gold = label_arg(gold)?;
        let task = task_arg(task)?;
        let out = out_arg(out, "out")?;
        let cfg = RewardConfig {
            use_task_reward,
            ..RewardConfig::default()
        };
        let r = total_reward(text, format, gold, task, &cfg).or_else(|e| fail(MsrlStatus::Invalid, e.to_string()))?;
        *out = MsrlRewardBreakdown {
            format: r.format.as_f64(),
            accuracy: r.accuracy.as_f64(),
            task: r.task.as_f64(),
            total: r.total.as_f64(),
        };
        Ok(())
    })
}

/// Parses `text` and writes the rationale as a JSON object to `*out_json`.
/// Returns `MSRL_STATUS_PARSE` with the violation as the error message when
/// the text does not conform.
///
/// # Safety
/// `text` as for [`msrl_format_reward`]; `out_json` must be null or
/// writable. Free the result with [`msrl_string_free`].
#[no_mangle]
pub unsafe extern "C" fn msrl_parse_rationale(
    text: *const c_char,
    format: i32,
    out_json: *mut *mut c_char,
) -> MsrlStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let format = format_arg(format)?;
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let r = parse_rationale(text, format).or_else(|e| fail(MsrlStatus::Parse, e.to_string()))?;
        let json = serde_json::to_string(&r).or_else(|e| fail(MsrlStatus::Invalid, e.to_string()))?;
        *out = CString::new(json)
            .or_else(|e| fail(MsrlStatus::Invalid, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn msrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Bradley-Terry loss `-log sigmoid(s_pref - s_other)`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_bt_loss(score_a: f64, score_b: f64, preferred: i32, out: *mut f64) -> MsrlStatus {
    guard(|| {
        let preferred = label_arg(preferred)?;
        let out = out_arg(out, "out")?;
        *out = bt_loss(score_a, score_b, preferred).or_else(|e| fail(MsrlStatus::Invalid, e.to_string()))?;
        Ok(())
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `path` as for [`msrl_format_reward`]; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_policy_load(path: *const c_char, out: *mut *mut MsrlPolicy) -> MsrlStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let params = PolicyParams::load(path).or_else(|e| {
            let status = match e {
                msrl_core::policy::PolicyError::Io { .. } => MsrlStatus::Io,
                _ => MsrlStatus::Parse,
            };
            fail(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(MsrlPolicy { params }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a live handle from [`msrl_policy_load`].
#[no_mangle]
pub unsafe extern "C" fn msrl_policy_free(policy: *mut MsrlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Length of the policy's feature vector.
///
/// # Safety
/// `policy` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_policy_feature_dim(policy: *const MsrlPolicy, out: *mut usize) -> MsrlStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        *out_arg(out, "out")? = policy.params.dim();
        Ok(())
    })
}

/// Loads and validates a JSONL corpus.
///
/// # Safety
/// As for [`msrl_policy_load`].
#[no_mangle]
pub unsafe extern "C" fn msrl_corpus_load(path: *const c_char, out: *mut *mut MsrlCorpus) -> MsrlStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let examples = load_corpus(path).or_else(|e| {
            let status = match e {
                msrl_core::corpus::CorpusError::Io { .. } => MsrlStatus::Io,
                _ => MsrlStatus::Parse,
            };
            fail(status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(MsrlCorpus { examples }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must be null or a live handle from [`msrl_corpus_load`].
#[no_mangle]
pub unsafe extern "C" fn msrl_corpus_free(corpus: *mut MsrlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of examples in the corpus.
///
/// # Safety
/// `corpus` must be null or a live handle; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_corpus_len(corpus: *const MsrlCorpus, out: *mut usize) -> MsrlStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        *out_arg(out, "out")? = corpus.examples.len();
        Ok(())
    })
}

/// Voting@k accuracy of `policy` on `corpus`.
///
/// # Safety
/// Handles must be null or live; `out_accuracy` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn msrl_evaluate(
    policy: *const MsrlPolicy,
    corpus: *const MsrlCorpus,
    format: i32,
    channel: i32,
    k: usize,
    seed: u64,
    out_accuracy: *mut f64,
) -> MsrlStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let corpus = ref_arg(corpus, "corpus")?;
        let format = format_arg(format)?;
        let channel = channel_arg(channel)?;
        let out = out_arg(out_accuracy, "out_accuracy")?;
        let report = evaluate(&policy.params, &corpus.examples, format, channel, k, seed)
            .or_else(|e| fail(MsrlStatus::Invalid, e.to_string()))?;
        *out = report.overall_accuracy;
        Ok(())
    })
}
