//! Structured rationale format: canonical rendering and a strict, linear-time
//! parser that classifies the first structural violation.
//!
//! Accepted shape (`TypedThinkAnswer`; `ThinkAnswer` drops the `<type>`
//! element and the `Caption:` section):
//!
//! ```text
//! <think>
//! <type>image understanding</type>
//! Caption:
//! ...
//!
//! Feedback:
//! ...
//!
//! Comparision:
//! ...
//!
//! Conclusion:
//! ...
//! </think>
//! <answer>
//! A
//! </answer>
//! ```
//!
//! Section headings must start a line. Body text between headings is free
//! and compared after trimming; so is the answer token. `Comparison:` is
//! accepted in either spelling.

mod template;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TaskKind};

pub use template::{render_prompt, render_prompt_for, PromptBundle};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const TYPE_OPEN: &str = "<type>";
pub const TYPE_CLOSE: &str = "</type>";

const RESERVED_TAGS: [&str; 6] = [
    THINK_OPEN,
    THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
    TYPE_OPEN,
    TYPE_CLOSE,
];

const HEADINGS: [(&str, Section); 5] = [
    ("Caption:", Section::Caption),
    ("Feedback:", Section::Feedback),
    ("Comparision:", Section::Comparison),
    ("Comparison:", Section::Comparison),
    ("Conclusion:", Section::Conclusion),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageFormat {
    /// `<think>…</think><answer>…</answer>` with Feedback / Comparison / Conclusion.
    ThinkAnswer,
    /// Adds a leading `<type>` element and a non-empty `Caption:` section.
    TypedThinkAnswer,
}

impl StageFormat {
    pub fn sections(self) -> &'static [Section] {
        match self {
            StageFormat::ThinkAnswer => &[Section::Feedback, Section::Comparison, Section::Conclusion],
            StageFormat::TypedThinkAnswer => &[
                Section::Caption,
                Section::Feedback,
                Section::Comparison,
                Section::Conclusion,
            ],
        }
    }

    pub fn is_typed(self) -> bool {
        self == StageFormat::TypedThinkAnswer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Caption,
    Feedback,
    Comparison,
    Conclusion,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Caption => "Caption",
            Section::Feedback => "Feedback",
            Section::Comparison => "Comparison",
            Section::Conclusion => "Conclusion",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    ThinkOpen,
    ThinkClose,
    AnswerOpen,
    AnswerClose,
    TypeOpen,
    TypeClose,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::ThinkOpen => THINK_OPEN,
            Tag::ThinkClose => THINK_CLOSE,
            Tag::AnswerOpen => ANSWER_OPEN,
            Tag::AnswerClose => ANSWER_CLOSE,
            Tag::TypeOpen => TYPE_OPEN,
            Tag::TypeClose => TYPE_CLOSE,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First structural violation found in a model output.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("missing tag {0}")]
    MissingTag(Tag),
    #[error("tags are duplicated, misplaced or out of order")]
    TagOrder,
    #[error("missing or misplaced section {0}")]
    MissingSection(Section),
    #[error("unexpected extra section {0}")]
    UnexpectedSection(Section),
    #[error("answer token must be exactly A or B")]
    BadAnswerToken,
    #[error("type tag does not name a known task")]
    BadTaskTag,
    #[error("content after </answer>")]
    TrailingContent,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("typed rationale needs a task tag")]
    MissingTaskTag,
    #[error("untyped rationale cannot carry a task tag")]
    UnexpectedTaskTag,
    #[error("typed rationale needs a non-empty caption")]
    MissingCaption,
    #[error("untyped rationale cannot carry a caption")]
    UnexpectedCaption,
    #[error("section {section} body contains reserved text {token:?}")]
    ReservedText { section: Section, token: String },
    #[error("section {0} body has leading or trailing whitespace")]
    Untrimmed(Section),
}

/// Parsed structured output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub stage_format: StageFormat,
    pub task_tag: Option<TaskKind>,
    pub caption: Option<String>,
    pub feedback: String,
    pub comparison: String,
    pub conclusion: String,
    pub answer: Label,
}

impl Rationale {
    /// Rationale with deterministic body text for the given decision.
    pub fn templated(stage_format: StageFormat, task: TaskKind, caption: Option<String>, answer: Label) -> Rationale {
        let other = answer.flip();
        let (task_tag, caption) = match stage_format {
            StageFormat::ThinkAnswer => (None, None),
            StageFormat::TypedThinkAnswer => (
                Some(task),
                Some(
                    caption
                        .filter(|c| !c.trim().is_empty())
                        .unwrap_or_else(|| "no description".into()),
                ),
            ),
        };
        Rationale {
            stage_format,
            task_tag,
            caption: caption.map(|c| c.trim().to_string()),
            feedback: format!(
                "Response {answer} addresses the request with the attributes that matter most.\nResponse {other} leaves important attributes unaddressed."
            ),
            comparison: format!("Weighing the attributes, Response {answer} is better than Response {other}."),
            conclusion: format!("Response {answer} is preferred."),
            answer,
        }
    }

    fn check(&self) -> Result<(), RenderError> {
        match self.stage_format {
            StageFormat::TypedThinkAnswer => {
                if self.task_tag.is_none() {
                    return Err(RenderError::MissingTaskTag);
                }
                match &self.caption {
                    Some(c) if !c.trim().is_empty() => {}
                    _ => return Err(RenderError::MissingCaption),
                }
            }
            StageFormat::ThinkAnswer => {
                if self.task_tag.is_some() {
                    return Err(RenderError::UnexpectedTaskTag);
                }
                if self.caption.is_some() {
                    return Err(RenderError::UnexpectedCaption);
                }
            }
        }
        let bodies = [
            (Section::Caption, self.caption.as_deref().unwrap_or("")),
            (Section::Feedback, self.feedback.as_str()),
            (Section::Comparison, self.comparison.as_str()),
            (Section::Conclusion, self.conclusion.as_str()),
        ];
        for (section, body) in bodies {
            check_body(section, body)?;
        }
        Ok(())
    }

    fn comparison_heading(&self) -> &'static str {
        match self.task_tag {
            Some(t) if t.is_generation() => "Comparison:",
            _ => "Comparision:",
        }
    }
}

fn check_body(section: Section, body: &str) -> Result<(), RenderError> {
    if body.trim() != body {
        return Err(RenderError::Untrimmed(section));
    }
    if let Some(tag) = RESERVED_TAGS.iter().find(|t| body.contains(*t)) {
        return Err(RenderError::ReservedText {
            section,
            token: tag.to_string(),
        });
    }
    for line in body.split('\n') {
        if let Some((h, _)) = heading_at(line) {
            return Err(RenderError::ReservedText {
                section,
                token: h.to_string(),
            });
        }
    }
    Ok(())
}

fn heading_at(line: &str) -> Option<(&'static str, Section)> {
    HEADINGS.iter().find(|(h, _)| line.starts_with(h)).map(|&(h, s)| (h, s))
}

/// Canonical, byte-deterministic serialization.
pub fn render_rationale(r: &Rationale) -> Result<String, RenderError> {
    r.check()?;
    let mut out = String::with_capacity(256);
    out.push_str(THINK_OPEN);
    out.push('\n');
    if let (Some(task), Some(caption)) = (r.task_tag, &r.caption) {
        out.push_str(TYPE_OPEN);
        out.push_str(task.name());
        out.push_str(TYPE_CLOSE);
        out.push('\n');
        push_section(&mut out, "Caption:", caption);
    }
    push_section(&mut out, "Feedback:", &r.feedback);
    push_section(&mut out, r.comparison_heading(), &r.comparison);
    out.push_str("Conclusion:\n");
    if !r.conclusion.is_empty() {
        out.push_str(&r.conclusion);
        out.push('\n');
    }
    out.push_str(THINK_CLOSE);
    out.push('\n');
    out.push_str(ANSWER_OPEN);
    out.push('\n');
    out.push_str(r.answer.as_str());
    out.push('\n');
    out.push_str(ANSWER_CLOSE);
    Ok(out)
}

fn push_section(out: &mut String, heading: &str, body: &str) {
    out.push_str(heading);
    out.push('\n');
    if !body.is_empty() {
        out.push_str(body);
        out.push('\n');
    }
    out.push('\n');
}

fn is_blank(s: &str) -> bool {
    s.chars().all(char::is_whitespace)
}

fn single(text: &str, tag: Tag) -> Result<Option<usize>, FormatError> {
    let mut it = text.match_indices(tag.as_str()).map(|(i, _)| i);
    let first = it.next();
    if it.next().is_some() {
        return Err(FormatError::TagOrder);
    }
    Ok(first)
}

/// Parses `text` against `expected`. Total over arbitrary input.
pub fn parse_rationale(text: &str, expected: StageFormat) -> Result<Rationale, FormatError> {
    let tags = [Tag::ThinkOpen, Tag::ThinkClose, Tag::AnswerOpen, Tag::AnswerClose];
    let mut counts = [0usize; 4];
    let mut pos = [0usize; 4];
    for (k, tag) in tags.iter().enumerate() {
        for (i, _) in text.match_indices(tag.as_str()) {
            if counts[k] == 0 {
                pos[k] = i;
            }
            counts[k] += 1;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(FormatError::MissingTag(tags[k]));
    }
    if counts.iter().any(|&c| c > 1) {
        return Err(FormatError::TagOrder);
    }
    let [think_open, think_close, answer_open, answer_close] = pos;
    if !(think_open < think_close && think_close < answer_open && answer_open < answer_close) {
        return Err(FormatError::TagOrder);
    }
    let think_body_start = think_open + THINK_OPEN.len();
    if !is_blank(&text[..think_open]) || !is_blank(&text[think_close + THINK_CLOSE.len()..answer_open]) {
        return Err(FormatError::TagOrder);
    }
    if !is_blank(&text[answer_close + ANSWER_CLOSE.len()..]) {
        return Err(FormatError::TrailingContent);
    }

    let type_open = single(text, Tag::TypeOpen)?;
    let type_close = single(text, Tag::TypeClose)?;
    let mut task_span = None;
    let rest_start = match expected {
        StageFormat::ThinkAnswer => {
            if type_open.is_some() || type_close.is_some() {
                return Err(FormatError::TagOrder);
            }
            think_body_start
        }
        StageFormat::TypedThinkAnswer => {
            let open = type_open.ok_or(FormatError::MissingTag(Tag::TypeOpen))?;
            let close = type_close.ok_or(FormatError::MissingTag(Tag::TypeClose))?;
            let inside = |p: usize| p >= think_body_start && p < think_close;
            if !inside(open) || !inside(close) || open > close {
                return Err(FormatError::TagOrder);
            }
            if !is_blank(&text[think_body_start..open]) {
                return Err(FormatError::TagOrder);
            }
            task_span = Some((open + TYPE_OPEN.len(), close));
            close + TYPE_CLOSE.len()
        }
    };

    let answer = match text[answer_open + ANSWER_OPEN.len()..answer_close].trim() {
        "A" => Label::A,
        "B" => Label::B,
        _ => return Err(FormatError::BadAnswerToken),
    };
    let task_tag = match task_span {
        Some((a, b)) => Some(TaskKind::from_name(&text[a..b]).ok_or(FormatError::BadTaskTag)?),
        None => None,
    };

    let bodies = parse_sections(&text[rest_start..think_close], expected.sections())?;
    let mut bodies = bodies.into_iter();
    let caption = if expected.is_typed() {
        let c = bodies.next().unwrap_or_default();
        if c.is_empty() {
            return Err(FormatError::MissingSection(Section::Caption));
        }
        Some(c)
    } else {
        None
    };
    let feedback = bodies.next().unwrap_or_default();
    let comparison = bodies.next().unwrap_or_default();
    let conclusion = bodies.next().unwrap_or_default();
    Ok(Rationale {
        stage_format: expected,
        task_tag,
        caption,
        feedback,
        comparison,
        conclusion,
        answer,
    })
}

/// Splits the think body into the expected sections. `region` starts mid-line
/// (right after `<think>` or `</type>`), so its first fragment is never a
/// heading line and must be blank.
fn parse_sections(region: &str, expected: &[Section]) -> Result<Vec<String>, FormatError> {
    let mut bodies: Vec<String> = Vec::with_capacity(expected.len());
    // byte offset where the current section's body begins
    let mut body_start: Option<usize> = None;
    let mut offset = 0usize;
    let mut first = true;
    for line in region.split('\n') {
        let line_start = offset;
        offset += line.len() + 1;
        let heading = if first { None } else { heading_at(line) };
        first = false;
        match heading {
            Some((h, section)) => {
                if let Some(start) = body_start {
                    bodies.push(region[start..line_start].trim().to_string());
                }
                match expected.get(bodies.len()) {
                    Some(&want) if want == section => {}
                    Some(&want) => return Err(FormatError::MissingSection(want)),
                    None => return Err(FormatError::UnexpectedSection(section)),
                }
                body_start = Some(line_start + h.len());
            }
            None => {
                if body_start.is_none() && !is_blank(line) {
                    return Err(FormatError::MissingSection(expected[0]));
                }
            }
        }
    }
    match body_start {
        Some(start) => bodies.push(region[start..].trim().to_string()),
        None => return Err(FormatError::MissingSection(expected[0])),
    }
    if bodies.len() < expected.len() {
        return Err(FormatError::MissingSection(expected[bodies.len()]));
    }
    Ok(bodies)
}

/// Answer token inside the first `<answer>…</answer>` pair, ignoring the rest
/// of the structure.
pub fn extract_answer(text: &str) -> Option<Label> {
    let start = text.find(ANSWER_OPEN)? + ANSWER_OPEN.len();
    let len = text[start..].find(ANSWER_CLOSE)?;
    match text[start..start + len].trim() {
        "A" => Some(Label::A),
        "B" => Some(Label::B),
        _ => None,
    }
}

/// Task named by the first `<type>…</type>` element anywhere in the text.
pub fn extract_task_tag(text: &str) -> Option<TaskKind> {
    let start = text.find(TYPE_OPEN)? + TYPE_OPEN.len();
    let len = text[start..].find(TYPE_CLOSE)?;
    TaskKind::from_name(&text[start..start + len])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn typed(task: TaskKind, answer: Label) -> Rationale {
        Rationale::templated(
            StageFormat::TypedThinkAnswer,
            task,
            Some("bits: 0110. Visible attributes: grounded, concise.".into()),
            answer,
        )
    }

    #[test]
    fn minimal_think_answer_ends_with_answer_block() {
        let r = Rationale {
            stage_format: StageFormat::ThinkAnswer,
            task_tag: None,
            caption: None,
            feedback: String::new(),
            comparison: String::new(),
            conclusion: String::new(),
            answer: Label::A,
        };
        let text = render_rationale(&r).unwrap();
        assert!(text.ends_with("<answer>\nA\n</answer>"), "{text}");
        assert_eq!(parse_rationale(&text, StageFormat::ThinkAnswer).unwrap(), r);
    }

    #[test]
    fn typed_rendering_puts_type_before_caption() {
        let text = render_rationale(&typed(TaskKind::ImageGeneration, Label::B)).unwrap();
        let ty = text.find("<type>image generation</type>").unwrap();
        let cap = text.find("Caption:").unwrap();
        assert!(ty < cap);
        assert!(text.contains("\nComparison:\n"));
        let text = render_rationale(&typed(TaskKind::ImageUnderstanding, Label::B)).unwrap();
        assert!(text.contains("\nComparision:\n"));
    }

    #[test]
    fn round_trip_each_task() {
        for task in TaskKind::ALL {
            for answer in Label::ALL {
                let r = typed(task, answer);
                let text = render_rationale(&r).unwrap();
                assert_eq!(parse_rationale(&text, StageFormat::TypedThinkAnswer).unwrap(), r);
            }
        }
    }

    #[test]
    fn answer_before_think_is_tag_order() {
        let text = "<answer>\nA\n</answer>\n<think>\nFeedback:\nx\nComparision:\ny\nConclusion:\nz\n</think>";
        assert_eq!(
            parse_rationale(text, StageFormat::ThinkAnswer),
            Err(FormatError::TagOrder)
        );
    }

    #[test]
    fn violations_are_classified() {
        let base = render_rationale(&typed(TaskKind::VideoUnderstanding, Label::A)).unwrap();
        let f = StageFormat::TypedThinkAnswer;

        let t = base.replace("</think>", "");
        assert_eq!(parse_rationale(&t, f), Err(FormatError::MissingTag(Tag::ThinkClose)));

        let t = base.replace("<type>video understanding</type>\n", "");
        assert_eq!(parse_rationale(&t, f), Err(FormatError::MissingTag(Tag::TypeOpen)));

        let t = base.replace("\nA\n</answer>", "\nboth\n</answer>");
        assert_eq!(parse_rationale(&t, f), Err(FormatError::BadAnswerToken));
        let t = base.replace("\nA\n</answer>", "\nneither\n</answer>");
        assert_eq!(parse_rationale(&t, f), Err(FormatError::BadAnswerToken));

        let t = format!("{base}\nextra");
        assert_eq!(parse_rationale(&t, f), Err(FormatError::TrailingContent));

        let t = base.replace("Feedback:", "Notes:");
        assert_eq!(
            parse_rationale(&t, f),
            Err(FormatError::MissingSection(Section::Feedback))
        );

        let t = base.replace("video understanding</type>", "audio</type>");
        assert_eq!(parse_rationale(&t, f), Err(FormatError::BadTaskTag));

        // typed text is not a valid untyped output
        assert_eq!(
            parse_rationale(&base, StageFormat::ThinkAnswer),
            Err(FormatError::TagOrder)
        );
    }

    #[test]
    fn lenient_whitespace_and_spelling() {
        let text = "  <think>\n<type> Image Understanding </type>\nCaption: a yellow kayaker\n\nFeedback:\n  fine  \nComparison:\nA wins\nConclusion: A\n</think>\n\n<answer> B </answer>\n";
        let r = parse_rationale(text, StageFormat::TypedThinkAnswer).unwrap();
        assert_eq!(r.task_tag, Some(TaskKind::ImageUnderstanding));
        assert_eq!(r.caption.as_deref(), Some("a yellow kayaker"));
        assert_eq!(r.feedback, "fine");
        assert_eq!(r.answer, Label::B);
    }

    #[test]
    fn empty_caption_is_missing_section() {
        let text = "<think>\n<type>image generation</type>\nCaption:\n\nFeedback:\nx\nComparison:\ny\nConclusion:\nz\n</think>\n<answer>\nA\n</answer>";
        assert_eq!(
            parse_rationale(text, StageFormat::TypedThinkAnswer),
            Err(FormatError::MissingSection(Section::Caption))
        );
    }

    #[test]
    fn render_rejects_invalid_rationales() {
        let mut r = typed(TaskKind::ImageUnderstanding, Label::A);
        r.task_tag = None;
        assert_eq!(render_rationale(&r), Err(RenderError::MissingTaskTag));
        let mut r = typed(TaskKind::ImageUnderstanding, Label::A);
        r.feedback = "ok\nConclusion: early".into();
        assert!(matches!(render_rationale(&r), Err(RenderError::ReservedText { .. })));
        let mut r = typed(TaskKind::ImageUnderstanding, Label::A);
        r.comparison = " padded".into();
        assert_eq!(render_rationale(&r), Err(RenderError::Untrimmed(Section::Comparison)));
    }

    #[test]
    fn extractors() {
        let text = render_rationale(&typed(TaskKind::VideoGeneration, Label::B)).unwrap();
        let broken = text.replace("</think>", "");
        assert_eq!(extract_answer(&broken), Some(Label::B));
        assert_eq!(extract_task_tag(&broken), Some(TaskKind::VideoGeneration));
        assert_eq!(extract_answer("<answer>C</answer>"), None);
        assert_eq!(extract_task_tag("no tag"), None);
    }
}
