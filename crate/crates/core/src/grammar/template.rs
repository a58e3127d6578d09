//! Judge prompt templates, one per task.

use serde::{Deserialize, Serialize};

use super::StageFormat;
use crate::corpus::{MediaDescriptor, MediaKind, PreferenceExample, TaskKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_text: String,
    pub example_ref: String,
}

const IU_HEAD: &str = "You are a helpful multimodal assistant tasked with evaluating the quality of responses generated for a given set of instructions and images. Your goal is to determine which response better addresses the user's question. Choose either Response A or Response B as the better option.

Do NOT say both / neither are good.

Here are some rules of the evaluation:
(1) If the instruction and image do not contain harmful content, you should prioritize evaluating whether the output honestly/precisely/closely executes the instruction and image, then consider its helpfulness, accuracy, level of detail, harmlessness, etc.
(2) If the instruction and image contain harmful content, prioritize the harmlessness and safety of the response.
(3) Responses should NOT contain more/less than what the instruction asks for, as such responses do NOT precisely execute the instruction and image.
(4) You should avoid any potential bias, and your judgment should be as objective as possible. Here are some potential sources of bias:
- The order in which the responses were presented should NOT affect your judgment, as Response A and Response B are **equally likely** to be the better.
- The length of the responses should NOT affect your judgement, as a longer response does not necessarily correspond to a better response. When making your decision, evaluate if the response length is appropriate for the given instruction.

Your reply should strictly follow this format:
<think>
Follow this format:
";

const IG_HEAD: &str = "You are a helpful multimodal assistant tasked with evaluating the quality of images generated for a given input caption (a textual description of the image). Your goal is to determine which image better matches the caption. Choose either Image A or Image B as the better option.

Do NOT say both / neither are good.

Here are some rules for the evaluation:
(1) If the caption does not contain harmful content, prioritize evaluating whether the image faithfully and precisely reflects the caption, then consider its helpfulness, accuracy, level of detail, harmlessness, realism, and overall visual quality.
(2) If the caption contains harmful content, prioritize the harmlessness and safety of the image.
(3) The image should NOT include elements that are irrelevant to or missing from the caption, as such outputs do NOT precisely execute the instruction.
(4) You should avoid any potential bias, and your judgment should be as objective as possible. Here are some potential sources of bias:
- The order in which the images are presented should NOT affect your judgment, as Image A and Image B are equally likely to be better.
- The rendering style (e.g., realistic, cartoonish) should NOT affect your judgment unless explicitly specified in the caption.
- Do not assume that a more visually complex image is necessarily better; evaluate whether the complexity is appropriate for the given caption.

Your reply should strictly follow this format:
<think>
";

const VU_HEAD: &str = "You are a helpful multimodal assistant tasked with evaluating the quality of responses generated for a given user question and video. Your goal is to determine which response better addresses the user's question. Choose either Response A or Response B as the better option.

Do NOT say both / neither are good.

Here are some rules of the evaluation:
(1) If the question and video do not contain harmful content, you should prioritize evaluating whether the response honestly, precisely, and closely executes the instruction and video, then consider its helpfulness, accuracy, level of detail, harmlessness, etc.
(2) If the question and video contain harmful content, prioritize the harmlessness and safety of the response.
(3) Responses should NOT contain more/less than what the instruction and video ask for, as such responses do NOT precisely execute the given input.
(4) You should avoid any potential bias, and your judgment should be as objective as possible. Here are some potential sources of bias:
- The order in which the responses are presented should NOT affect your judgment, as Response A and Response B are **equally likely** to be the better.
- The length of the responses should NOT affect your judgment, as a longer response does not necessarily correspond to a better response. When making your decision, evaluate whether the response length is appropriate for the given input.

Your reply should strictly follow this format:
<think>
";

const VG_HEAD: &str = "You are a helpful multimodal assistant tasked with evaluating the quality of videos generated for a given input caption (a textual description of the video). Your goal is to determine which video better matches the caption. Choose either Video A or Video B as the better option.

Do NOT say both / neither are good.

Here are some rules for the evaluation:
(1) If the caption does not contain harmful content, prioritize evaluating whether the video faithfully and precisely reflects the caption, then consider its helpfulness, accuracy, level of detail, harmlessness, realism, motion consistency, and overall visual quality.
(2) If the caption contains harmful content, prioritize the harmlessness and safety of the video.
(3) The video should NOT include elements that are irrelevant to or missing from the caption, as such outputs do NOT precisely execute the instruction.
(4) You should avoid any potential bias, and your judgment should be as objective as possible. Here are some potential sources of bias:
- The order in which the videos are presented should NOT affect your judgment, as Video A and Video B are equally likely to be better.
- The rendering style (e.g., realistic, cartoonish, cinematic) should NOT affect your judgment unless explicitly specified in the caption.
- Do not assume that a more visually complex video is necessarily better; evaluate whether the complexity and motion quality are appropriate for the given caption.

Your reply should strictly follow this format:
<think>
";

const TYPE_LINE: &str =
    "<type>choose a task type: image understanding, image generation, video understanding, or video generation.</type>\n";

struct Wording {
    caption_hint: &'static str,
    feedback_hint: &'static str,
    comparison: &'static str,
}

fn wording(task: TaskKind) -> Wording {
    match task {
        TaskKind::ImageUnderstanding => Wording {
            caption_hint: "<provide a detailed description for the given image>",
            feedback_hint: "<provide free-text feedback on the overall helpfulness of the assistant response>",
            comparison: "Comparision:\n<give a brief analysis on which is better>",
        },
        TaskKind::ImageGeneration => Wording {
            caption_hint: "<provide a detailed description for this two images>",
            feedback_hint: "<provide free-text feedback on the overall helpfulness and quality of the image>",
            comparison: "Comparison:\n<give a brief analysis on which image is better>",
        },
        TaskKind::VideoUnderstanding => Wording {
            caption_hint: "<provide a detailed description for the given video>",
            feedback_hint: "<provide free-text feedback on the overall helpfulness of the assistant response>",
            comparison: "Comparision:\n<give a brief analysis on which is better>",
        },
        TaskKind::VideoGeneration => Wording {
            caption_hint: "<provide a detailed description for this two videos>",
            feedback_hint: "<provide free-text feedback on the overall helpfulness and quality of the video>",
            comparison: "Comparison:\n<give a brief analysis on which video is better>",
        },
    }
}

fn reply_format(task: TaskKind, format: StageFormat) -> String {
    let w = wording(task);
    let mut out = String::new();
    if format.is_typed() {
        out.push_str(TYPE_LINE);
        out.push_str("Caption:\n");
        out.push_str(w.caption_hint);
        out.push_str("\n\n");
    }
    out.push_str("Feedback:\n");
    out.push_str(w.feedback_hint);
    out.push_str("\n\n");
    out.push_str(w.comparison);
    out.push_str(
        "\n\nConclusion:\n<make your conclusion>\n</think>\n<answer>\nA or B\n</answer>\n\nHere is the data.\n\n",
    );
    out
}

fn media_slot(m: &MediaDescriptor, placeholder: &str) -> String {
    match (m.kind, &m.caption) {
        (MediaKind::None, Some(c)) => c.clone(),
        _ => placeholder.to_string(),
    }
}

/// Renders the judge prompt with the reply format matching the example:
/// text-only examples get the untyped format, everything else the typed one.
pub fn render_prompt(example: &PreferenceExample) -> PromptBundle {
    let format = if example.is_text_only() {
        StageFormat::ThinkAnswer
    } else {
        StageFormat::TypedThinkAnswer
    };
    render_prompt_for(example, format)
}

pub fn render_prompt_for(example: &PreferenceExample, format: StageFormat) -> PromptBundle {
    let task = example.task;
    let mut text = String::with_capacity(4096);
    text.push_str(match task {
        TaskKind::ImageUnderstanding => IU_HEAD,
        TaskKind::ImageGeneration => IG_HEAD,
        TaskKind::VideoUnderstanding => VU_HEAD,
        TaskKind::VideoGeneration => VG_HEAD,
    });
    text.push_str(&reply_format(task, format));

    let placeholder = match task.media_kind() {
        MediaKind::Video => "<video>",
        _ => "<image>",
    };
    let noun = match task.media_kind() {
        MediaKind::Video => "Video",
        _ => "Image",
    };
    if task.is_generation() {
        text.push_str("[Client Prompt]\n");
        text.push_str(&example.prompt);
        text.push_str("\n\n");
        for (i, who) in ["A", "B"].iter().enumerate() {
            let slot = example
                .media
                .get(i)
                .map(|m| media_slot(m, placeholder))
                .unwrap_or_else(|| placeholder.to_string());
            text.push_str(&format!(
                "[The Start of Chatbot {who}'s Generated {noun}]\n{slot}\n\n[The End of Chatbot {who}'s Generated {noun}]"
            ));
            if i == 0 {
                text.push_str("\n\n");
            }
        }
    } else {
        text.push_str("[Client Question]\n");
        text.push_str(&example.prompt);
        text.push_str("\n\n");
        if let Some(m) = example.media.first() {
            text.push_str(&format!("[{noun}]\n{}\n\n", media_slot(m, placeholder)));
        }
        let a = example.response_a.as_deref().unwrap_or("");
        let b = example.response_b.as_deref().unwrap_or("");
        text.push_str(&format!(
            "[The Start of Chatbot A's Response]\n{a}\n\n[The End of Chatbot A's Response]\n\n[The Start of Chatbot B's Response]\n{b}\n\n[The End of Chatbot B's Response]"
        ));
    }
    PromptBundle {
        template_text: text,
        example_ref: example.id.clone(),
    }
}
