mod common;

use proptest::prelude::*;

use common::{mutate, random_rationale, reference_valid};
use msrl_core::corpus::{
    read_corpus, synth_corpus, write_corpus, CorpusSpec, Label, LabelRule, MixRatio, Modality, TaskKind,
};
use msrl_core::grammar::{parse_rationale, render_rationale, Rationale, StageFormat};
use msrl_core::rewards::format_reward;
use msrl_core::seed;

fn body(allow_empty: bool) -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 <>/:.\n\u{e9}]{0,40}".prop_filter_map("not a renderable body", move |s| {
        let s = s.trim().to_string();
        let tagged = ["<think>", "</think>", "<answer>", "</answer>", "<type>", "</type>"]
            .iter()
            .any(|t| s.contains(t));
        let heading = s.split('\n').any(|l| {
            ["Caption:", "Feedback:", "Comparison:", "Comparision:", "Conclusion:"]
                .iter()
                .any(|h| l.starts_with(h))
        });
        (!tagged && !heading && (allow_empty || !s.is_empty())).then_some(s)
    })
}

fn rationale() -> impl Strategy<Value = Rationale> {
    (
        any::<bool>(),
        0..4usize,
        body(false),
        body(true),
        body(true),
        body(true),
        any::<bool>(),
    )
        .prop_map(
            |(typed, task, caption, feedback, comparison, conclusion, a)| Rationale {
                stage_format: if typed {
                    StageFormat::TypedThinkAnswer
                } else {
                    StageFormat::ThinkAnswer
                },
                task_tag: typed.then(|| TaskKind::ALL[task]),
                caption: typed.then_some(caption),
                feedback,
                comparison,
                conclusion,
                answer: if a { Label::A } else { Label::B },
            },
        )
}

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![
        Just(Modality::Multimodal),
        Just(Modality::CaptionBased),
        Just(Modality::Textual)
    ]
}

proptest! {
    #[test]
    fn rendered_rationales_parse_back(r in rationale()) {
        let text = render_rationale(&r).unwrap();
        prop_assert_eq!(parse_rationale(&text, r.stage_format).unwrap(), r);
    }

    #[test]
    fn format_reward_matches_reference_on_mutations(s in any::<u64>(), edits in 1..5usize) {
        let mut rng = seed::rng(s);
        let mut text = render_rationale(&random_rationale(&mut rng)).unwrap();
        for _ in 0..edits {
            text = mutate(&mut rng, &text);
        }
        for f in [StageFormat::ThinkAnswer, StageFormat::TypedThinkAnswer] {
            prop_assert_eq!(format_reward(&text, f).as_f64() == 1.0, reference_valid(&text, f), "{:?}", text);
        }
    }

    #[test]
    fn parser_is_total(text in "(<think>|</think>|<answer>|</answer>|<type>|</type>|Feedback:|Caption:|Conclusion:|Comparison:|\n| |A|B|x|image generation){0,24}") {
        for f in [StageFormat::ThinkAnswer, StageFormat::TypedThinkAnswer] {
            let ok = parse_rationale(&text, f).is_ok();
            prop_assert_eq!(ok, reference_valid(&text, f), "{:?}", text);
        }
    }

    #[test]
    fn corpus_jsonl_round_trip(
        n in 1..25usize,
        d in 1..12usize,
        m in modality(),
        s in any::<u64>(),
        noise in 0.0..=1.0f64,
        with_rationales in any::<bool>(),
    ) {
        let mut spec = CorpusSpec::new(n, d, LabelRule::RandomLinear { rule_seed: s ^ 7 }, s);
        spec.modality = m;
        spec.noise_rate = noise;
        spec.with_rationales = with_rationales;
        let corpus = synth_corpus(&spec).unwrap();
        prop_assert_eq!(corpus.len(), n);
        let mut bytes = Vec::new();
        write_corpus(&mut bytes, &corpus).unwrap();
        let back = read_corpus(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &corpus);
        let mut again = Vec::new();
        write_corpus(&mut again, &back).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn mix_ratio_text_round_trip(a in 0..50usize, b in 0..50usize) {
        prop_assume!(a + b > 0);
        let r = MixRatio::new(a, b).unwrap();
        prop_assert_eq!(r.to_string().parse::<MixRatio>().unwrap(), r);
    }
}
