//! Test-only oracles and generators shared by the integration targets.
#![allow(dead_code)]

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

use msrl_core::corpus::{Label, TaskKind};
use msrl_core::grammar::{Rationale, StageFormat};

struct Patterns {
    envelope: Regex,
    typed_body: Regex,
    task_name: Regex,
    heading: Regex,
    blank: Regex,
    untyped_layout: Regex,
    typed_layout: Regex,
    answer_pair: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        envelope: Regex::new(r"(?s)\A\s*<think>(.*)</think>\s*<answer>\s*[AB]\s*</answer>\s*\z").unwrap(),
        typed_body: Regex::new(r"(?s)\A\s*<type>(.*)</type>(.*)\z").unwrap(),
        task_name: Regex::new(
            r"\A\s*(?i-u:image understanding|video understanding|image generation|video generation)\s*\z",
        )
        .unwrap(),
        heading: Regex::new(r"\A(Caption|Feedback|Comparison|Comparision|Conclusion):(.*)\z").unwrap(),
        blank: Regex::new(r"\A\s*\z").unwrap(),
        // b = blank line, t = text line, x = non-blank first fragment;
        // F / M / N = Feedback / Comparison / Conclusion headings;
        // C = Caption heading with nothing after it, c = with inline text.
        untyped_layout: Regex::new(r"\Ab+F[bt]*M[bt]*N[bt]*\z").unwrap(),
        typed_layout: Regex::new(r"\Ab+(?:c[bt]*|Cb*t[bt]*)F[bt]*M[bt]*N[bt]*\z").unwrap(),
        answer_pair: Regex::new(r"(?s)<answer>(.*?)</answer>").unwrap(),
    })
}

fn count(text: &str, needle: &str) -> usize {
    text.matches(needle).count()
}

fn layout(region: &str) -> String {
    let p = patterns();
    let mut out = String::new();
    for (i, line) in region.split('\n').enumerate() {
        let blank = p.blank.is_match(line);
        if i == 0 {
            out.push(if blank { 'b' } else { 'x' });
            continue;
        }
        match p.heading.captures(line) {
            Some(c) => out.push(match &c[1] {
                "Caption" if p.blank.is_match(&c[2]) => 'C',
                "Caption" => 'c',
                "Feedback" => 'F',
                "Conclusion" => 'N',
                _ => 'M',
            }),
            None => out.push(if blank { 'b' } else { 't' }),
        }
    }
    out
}

/// Independent acceptance check for the structured output format.
pub fn reference_valid(text: &str, format: StageFormat) -> bool {
    let p = patterns();
    for tag in ["<think>", "</think>", "<answer>", "</answer>"] {
        if count(text, tag) != 1 {
            return false;
        }
    }
    let type_tags = (count(text, "<type>"), count(text, "</type>"));
    let Some(env) = p.envelope.captures(text) else {
        return false;
    };
    let body = env.get(1).unwrap().as_str();
    match format {
        StageFormat::ThinkAnswer => type_tags == (0, 0) && p.untyped_layout.is_match(&layout(body)),
        StageFormat::TypedThinkAnswer => {
            if type_tags != (1, 1) {
                return false;
            }
            let Some(t) = p.typed_body.captures(body) else {
                return false;
            };
            p.task_name.is_match(&t[1]) && p.typed_layout.is_match(&layout(&t[2]))
        }
    }
}

/// Answer read from the first `<answer>…</answer>` pair.
pub fn reference_answer(text: &str) -> Option<Label> {
    let c = patterns().answer_pair.captures(text)?;
    match c[1].trim() {
        "A" => Some(Label::A),
        "B" => Some(Label::B),
        _ => None,
    }
}

const WORDS: &[&str] = &[
    "the",
    "image",
    "response",
    "A",
    "B",
    "shows",
    "more",
    "detail",
    "than",
    "caption",
    "video",
    "frame",
    "accurate",
    "is",
    "Conclusion",
    "Feedback",
    "answer",
    "think",
    "type",
    "<",
    ">",
    "/",
    ":",
    "a<b",
    "x>y",
    "é",
    "日本",
    "🙂",
    "Comparison",
    "\t",
    "score: 3",
    "(ok)",
    "Caption:",
    "Feedback:",
    "</ans",
    "think>",
    "<thin",
];

fn random_line<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(1..8);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    words.join(" ")
}

fn is_heading_line(line: &str) -> bool {
    ["Caption:", "Feedback:", "Comparison:", "Comparision:", "Conclusion:"]
        .iter()
        .any(|h| line.starts_with(h))
}

/// Random body text that a renderer must accept: trimmed, free of tags, and
/// with no line that starts like a heading.
pub fn random_body<R: Rng>(rng: &mut R, allow_empty: bool) -> String {
    loop {
        let n_lines = if allow_empty {
            rng.gen_range(0..4)
        } else {
            rng.gen_range(1..4)
        };
        let mut lines = Vec::new();
        for _ in 0..n_lines {
            if rng.gen_bool(0.15) {
                lines.push(String::new());
            } else {
                lines.push(random_line(rng));
            }
        }
        let body = lines.join("\n").trim().to_string();
        if !allow_empty && body.is_empty() {
            continue;
        }
        let tagged = ["<think>", "</think>", "<answer>", "</answer>", "<type>", "</type>"]
            .iter()
            .any(|t| body.contains(t));
        if tagged || body.split('\n').any(is_heading_line) {
            continue;
        }
        return body;
    }
}

pub fn random_rationale<R: Rng>(rng: &mut R) -> Rationale {
    let format = if rng.gen_bool(0.5) {
        StageFormat::ThinkAnswer
    } else {
        StageFormat::TypedThinkAnswer
    };
    let typed = format == StageFormat::TypedThinkAnswer;
    Rationale {
        stage_format: format,
        task_tag: typed.then(|| *TaskKind::ALL.choose(rng).unwrap()),
        caption: typed.then(|| random_body(rng, false)),
        feedback: random_body(rng, true),
        comparison: random_body(rng, true),
        conclusion: random_body(rng, true),
        answer: *Label::ALL.choose(rng).unwrap(),
    }
}

const TOKENS: &[&str] = &[
    "<think>",
    "</think>",
    "<answer>",
    "</answer>",
    "<type>",
    "</type>",
    "\n",
    " ",
    "A",
    "B",
    "C",
    "Caption:",
    "Feedback:",
    "Comparison:",
    "Comparision:",
    "Conclusion:",
    "\u{2003}",
    "x",
    ":",
    "<",
    "/",
    ">",
    "\r\n",
    "image understanding",
    "IMAGE GENERATION",
    "video  generation",
];

fn char_boundary(s: &str, at: usize) -> usize {
    let mut i = at.min(s.len());
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// One random edit of `text`.
pub fn mutate<R: Rng>(rng: &mut R, text: &str) -> String {
    let mut s = text.to_string();
    match rng.gen_range(0..12) {
        0 => {
            // delete a span
            let a = char_boundary(&s, rng.gen_range(0..=s.len()));
            let b = char_boundary(&s, (a + rng.gen_range(1..6)).min(s.len()));
            s.replace_range(a..b, "");
        }
        1 | 2 => {
            let at = char_boundary(&s, rng.gen_range(0..=s.len()));
            s.insert_str(at, TOKENS.choose(rng).unwrap());
        }
        3 => {
            // drop one occurrence of a structural tag
            let tag = TOKENS[..6].choose(rng).unwrap();
            if let Some(i) = s.find(tag) {
                s.replace_range(i..i + tag.len(), "");
            }
        }
        4 => {
            let mut lines: Vec<&str> = s.split('\n').collect();
            let i = rng.gen_range(0..lines.len());
            let j = rng.gen_range(0..lines.len());
            lines.swap(i, j);
            s = lines.join("\n");
        }
        5 => {
            let mut lines: Vec<String> = s.split('\n').map(str::to_string).collect();
            let i = rng.gen_range(0..lines.len());
            if rng.gen_bool(0.5) {
                lines.remove(i);
            } else {
                let l = lines[i].clone();
                lines.insert(i, l);
            }
            s = lines.join("\n");
        }
        6 => {
            let to = ["A", "B", "C", "a", " A ", "AB", "", "\nB\n"].choose(rng).unwrap();
            if let Some(i) = s.find("<answer>") {
                if let Some(j) = s[i..].find("</answer>") {
                    s.replace_range(i + 8..i + j, to);
                }
            }
        }
        7 => {
            let pad = [" ", "\n", "x", "\t\n", "</answer>", "\u{a0}"].choose(rng).unwrap();
            if rng.gen_bool(0.5) {
                s.insert_str(0, pad);
            } else {
                s.push_str(pad);
            }
        }
        8 => {
            let from = ["Comparision:", "Comparison:", "Caption:", "Feedback:", "Conclusion:"]
                .choose(rng)
                .unwrap();
            let to = [
                "Comparision:",
                "Comparison:",
                "Caption:",
                " Feedback:",
                "conclusion:",
                "",
            ]
            .choose(rng)
            .unwrap();
            s = s.replacen(from, to, 1);
        }
        9 => {
            let from = TaskKind::ALL.choose(rng).unwrap().name();
            let to = [
                "Image Understanding",
                " video generation ",
                "image-generation",
                "video understanding",
                "images",
            ]
            .choose(rng)
            .unwrap();
            s = s.replacen(from, to, 1);
        }
        10 => {
            // join or split lines
            if rng.gen_bool(0.5) {
                if let Some(i) = s.match_indices('\n').map(|(i, _)| i).collect::<Vec<_>>().choose(rng) {
                    s.replace_range(*i..*i + 1, " ");
                }
            } else {
                let at = char_boundary(&s, rng.gen_range(0..=s.len()));
                s.insert(at, '\n');
            }
        }
        _ => {
            let at = char_boundary(&s, rng.gen_range(0..=s.len()));
            s.truncate(at);
        }
    }
    s
}
