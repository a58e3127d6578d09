use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, HarnessError, SweepTable};
use crate::corpus::TaskKind;

/// Percentage with one decimal, as in `75.5`.
pub fn format_pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

const ABSENT: &str = "–";

pub fn render_eval(r: &EvalReport) -> String {
    let mut rows: Vec<(String, String)> = vec![("overall".into(), format_pct(r.overall_accuracy))];
    for t in TaskKind::ALL {
        let v = r.per_task.get(&t).map_or(ABSENT.to_string(), |&a| format_pct(a));
        rows.push((t.name().into(), v));
    }
    rows.push(("format rate".into(), format_pct(r.format_rate)));
    rows.push(("task tag rate".into(), format_pct(r.task_tag_rate)));
    rows.push(("examples".into(), r.n_examples.to_string()));
    rows.push(("voting k".into(), r.voting_k.to_string()));
    let w = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
    let vw = rows.iter().map(|(_, v)| v.chars().count()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let pad = w - k.chars().count();
        let vpad = vw - v.chars().count();
        let _ = writeln!(out, "{k}{}  {}{v}", " ".repeat(pad), " ".repeat(vpad));
    }
    out
}

pub fn render_sweep(t: &SweepTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}  {:>7}  {:>7}", "ratio", "caption", "text");
    let _ = writeln!(
        out,
        "{:<8}  {:>7}  {:>7}",
        "stage 1",
        format_pct(t.stage1_caption_accuracy),
        format_pct(t.stage1_text_accuracy)
    );
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{:<8}  {:>7}  {:>7}",
            r.ratio.to_string(),
            format_pct(r.caption_accuracy),
            format_pct(r.text_accuracy)
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Eval(EvalReport),
    Sweep(SweepTable),
}

impl Report {
    pub fn render_text(&self) -> String {
        match self {
            Report::Eval(r) => render_eval(r),
            Report::Sweep(t) => render_sweep(t),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Writes `<stem>.txt` and `<stem>.json` under `dir`.
pub fn write_report(report: &Report, dir: &Path, stem: &str) -> Result<(), HarnessError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&txt, report.render_text()).map_err(io(&txt))?;
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, report.to_json() + "\n").map_err(io(&json))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn report() -> EvalReport {
        EvalReport {
            overall_accuracy: 0.7550,
            per_task: BTreeMap::from([(TaskKind::ImageUnderstanding, 0.7550)]),
            per_task_counts: BTreeMap::from([(TaskKind::ImageUnderstanding, 400)]),
            n_examples: 400,
            n_correct: 302,
            voting_k: 16,
            format_rate: 1.0,
            task_tag_rate: 0.25,
        }
    }

    #[test]
    fn table_style() {
        assert_eq!(format_pct(0.7550), "75.5");
        let text = render_eval(&report());
        assert!(text.lines().any(|l| l.starts_with("overall") && l.ends_with("75.5")));
        assert!(text
            .lines()
            .any(|l| l.starts_with("video generation") && l.ends_with("–")));
    }

    #[test]
    fn json_round_trip() {
        let r = Report::Eval(report());
        assert_eq!(Report::from_json(&r.to_json()).unwrap(), r);
    }
}
