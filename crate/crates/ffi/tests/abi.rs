use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use msrl_core::corpus::{save_corpus, synth_corpus, CorpusSpec, Label, LabelRule, Modality, TaskKind};
use msrl_core::grammar::{render_rationale, Rationale, StageFormat};
use msrl_core::policy::{FeatureSpec, PolicyParams};
use msrl_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = msrl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn typed(answer: Label, task: TaskKind) -> String {
    let r = Rationale::templated(StageFormat::TypedThinkAnswer, task, Some("bits: 0101.".into()), answer);
    render_rationale(&r).unwrap()
}

#[test]
fn score_matches_core() {
    let text = cstr(&typed(Label::B, TaskKind::VideoGeneration));
    let mut out = MsrlRewardBreakdown::default();
    let status = unsafe {
        msrl_score(
            text.as_ptr(),
            MSRL_FORMAT_TYPED_THINK_ANSWER,
            MSRL_LABEL_B,
            MSRL_TASK_VIDEO_GENERATION,
            true,
            &mut out,
        )
    };
    assert_eq!(status, MsrlStatus::Ok);
    assert!(msrl_last_error_message().is_null());
    assert_eq!(
        out,
        MsrlRewardBreakdown {
            format: 1.0,
            accuracy: 1.0,
            task: 0.2,
            total: 2.2
        }
    );

    let status = unsafe {
        msrl_score(
            text.as_ptr(),
            MSRL_FORMAT_TYPED_THINK_ANSWER,
            MSRL_LABEL_A,
            MSRL_TASK_IMAGE_GENERATION,
            true,
            &mut out,
        )
    };
    assert_eq!(status, MsrlStatus::Ok);
    assert_eq!(out.total, 1.0);

    let mut f = -1.0;
    let status = unsafe { msrl_format_reward(text.as_ptr(), MSRL_FORMAT_THINK_ANSWER, &mut f) };
    assert_eq!(status, MsrlStatus::Ok);
    assert_eq!(f, 0.0);
}

#[test]
fn task_codes_follow_core_order() {
    let codes = [
        (MSRL_TASK_IMAGE_UNDERSTANDING, TaskKind::ImageUnderstanding),
        (MSRL_TASK_IMAGE_GENERATION, TaskKind::ImageGeneration),
        (MSRL_TASK_VIDEO_UNDERSTANDING, TaskKind::VideoUnderstanding),
        (MSRL_TASK_VIDEO_GENERATION, TaskKind::VideoGeneration),
    ];
    for (code, task) in codes {
        let text = cstr(&typed(Label::A, task));
        let mut out = MsrlRewardBreakdown::default();
        let s = unsafe {
            msrl_score(
                text.as_ptr(),
                MSRL_FORMAT_TYPED_THINK_ANSWER,
                MSRL_LABEL_A,
                code,
                true,
                &mut out,
            )
        };
        assert_eq!(s, MsrlStatus::Ok);
        assert_eq!(out.task, 0.2, "{task:?}");
    }
}

#[test]
fn bad_arguments_report_status_and_message() {
    let text = cstr("x");
    let mut out = 0.0;
    assert_eq!(
        unsafe { msrl_format_reward(ptr::null(), MSRL_FORMAT_THINK_ANSWER, &mut out) },
        MsrlStatus::NullPointer
    );
    assert!(last_error().contains("text"));
    assert_eq!(
        unsafe { msrl_format_reward(text.as_ptr(), 9, &mut out) },
        MsrlStatus::Invalid
    );
    assert!(last_error().contains("format code 9"));
    assert_eq!(
        unsafe { msrl_format_reward(text.as_ptr(), MSRL_FORMAT_THINK_ANSWER, ptr::null_mut()) },
        MsrlStatus::NullPointer
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { msrl_format_reward(bad.as_ptr().cast(), MSRL_FORMAT_THINK_ANSWER, &mut out) },
        MsrlStatus::InvalidUtf8
    );
    assert_eq!(
        unsafe { msrl_bt_loss(f64::NAN, 0.0, MSRL_LABEL_A, &mut out) },
        MsrlStatus::Invalid
    );
}

#[test]
fn parse_rationale_returns_json() {
    let text = cstr(&typed(Label::A, TaskKind::ImageUnderstanding));
    let mut json: *mut std::ffi::c_char = ptr::null_mut();
    let s = unsafe { msrl_parse_rationale(text.as_ptr(), MSRL_FORMAT_TYPED_THINK_ANSWER, &mut json) };
    assert_eq!(s, MsrlStatus::Ok);
    let parsed: Rationale = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    unsafe { msrl_string_free(json) };
    assert_eq!(parsed.answer, Label::A);
    assert_eq!(parsed.task_tag, Some(TaskKind::ImageUnderstanding));

    let broken = cstr("<think>\nno\n</think>");
    let s = unsafe { msrl_parse_rationale(broken.as_ptr(), MSRL_FORMAT_THINK_ANSWER, &mut json) };
    assert_eq!(s, MsrlStatus::Parse);
    assert!(json.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn bt_loss_at_equal_scores_is_ln2() {
    let mut out = 0.0;
    assert_eq!(
        unsafe { msrl_bt_loss(0.3, 0.3, MSRL_LABEL_B, &mut out) },
        MsrlStatus::Ok
    );
    assert!((out - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn handles_load_evaluate_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = CorpusSpec::new(40, 4, LabelRule::Constant { label: Label::A }, 3);
    spec.modality = Modality::Textual;
    let corpus = synth_corpus(&spec).unwrap();
    let corpus_path = dir.path().join("c.jsonl");
    save_corpus(&corpus_path, &corpus).unwrap();
    let params = PolicyParams::zeros(FeatureSpec::new(4));
    let ckpt = dir.path().join("p.ckpt");
    params.save(&ckpt).unwrap();

    let cp = cstr(corpus_path.to_str().unwrap());
    let pp = cstr(ckpt.to_str().unwrap());
    let mut corpus_h: *mut MsrlCorpus = ptr::null_mut();
    let mut policy_h: *mut MsrlPolicy = ptr::null_mut();
    unsafe {
        assert_eq!(msrl_corpus_load(cp.as_ptr(), &mut corpus_h), MsrlStatus::Ok);
        assert_eq!(msrl_policy_load(pp.as_ptr(), &mut policy_h), MsrlStatus::Ok);
        let mut n = 0usize;
        assert_eq!(msrl_corpus_len(corpus_h, &mut n), MsrlStatus::Ok);
        assert_eq!(n, 40);
        assert_eq!(msrl_policy_feature_dim(policy_h, &mut n), MsrlStatus::Ok);
        assert_eq!(n, FeatureSpec::new(4).dim());

        let mut acc = -1.0;
        let s = msrl_evaluate(
            policy_h,
            corpus_h,
            MSRL_FORMAT_THINK_ANSWER,
            MSRL_CHANNEL_TEXT_ONLY,
            1,
            7,
            &mut acc,
        );
        assert_eq!(s, MsrlStatus::Ok);
        let expected = msrl_core::harness::evaluate(
            &params,
            &corpus,
            StageFormat::ThinkAnswer,
            msrl_core::policy::Channel::TextOnly,
            1,
            7,
        )
        .unwrap()
        .overall_accuracy;
        assert_eq!(acc.to_bits(), expected.to_bits());

        let s = msrl_evaluate(
            policy_h,
            corpus_h,
            MSRL_FORMAT_THINK_ANSWER,
            MSRL_CHANNEL_TEXT_ONLY,
            0,
            7,
            &mut acc,
        );
        assert_eq!(s, MsrlStatus::Invalid);

        msrl_policy_free(policy_h);
        msrl_corpus_free(corpus_h);
        msrl_policy_free(ptr::null_mut());
        msrl_corpus_free(ptr::null_mut());
    }

    let missing = cstr(dir.path().join("nope.ckpt").to_str().unwrap());
    assert_eq!(
        unsafe { msrl_policy_load(missing.as_ptr(), &mut policy_h) },
        MsrlStatus::Io
    );
    assert!(policy_h.is_null());
    std::fs::write(dir.path().join("bad.ckpt"), "{}").unwrap();
    let bad = cstr(dir.path().join("bad.ckpt").to_str().unwrap());
    assert_eq!(
        unsafe { msrl_policy_load(bad.as_ptr(), &mut policy_h) },
        MsrlStatus::Parse
    );
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/msrl.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "msrl_last_error_message",
        "msrl_version",
        "msrl_format_reward",
        "msrl_score",
        "msrl_parse_rationale",
        "msrl_string_free",
        "msrl_bt_loss",
        "msrl_policy_load",
        "msrl_policy_free",
        "msrl_policy_feature_dim",
        "msrl_corpus_load",
        "msrl_corpus_free",
        "msrl_corpus_len",
        "msrl_evaluate",
        "typedef struct MsrlPolicy MsrlPolicy;",
        "typedef struct MsrlCorpus MsrlCorpus;",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Compiles a small C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let target_dir = std::env::current_exe()
        .unwrap()
        .parent()
        .and_then(Path::parent)
        .unwrap()
        .to_path_buf();
    let lib = target_dir.join("libmsrl_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include "msrl.h"
#include <stdio.h>
int main(void) {
    double loss = 0.0;
    if (msrl_bt_loss(1.0, 1.0, MSRL_LABEL_A, &loss) != MSRL_STATUS_OK) return 1;
    if (loss < 0.6931 || loss > 0.6932) return 2;
    double f = 1.0;
    if (msrl_format_reward("nope", MSRL_FORMAT_THINK_ANSWER, &f) != MSRL_STATUS_OK || f != 0.0) return 3;
    if (msrl_format_reward(NULL, MSRL_FORMAT_THINK_ANSWER, &f) != MSRL_STATUS_NULL_POINTER) return 4;
    if (msrl_last_error_message() == NULL) return 5;
    printf("%s\n", msrl_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let out = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("cc available");
    assert!(
        out.status.success(),
        "cc failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
