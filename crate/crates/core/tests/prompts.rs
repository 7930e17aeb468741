use eventcause::prompt::{
    dump_templates, render_intervention, render_mcqa_causal, render_temporal_mcqa, AnswerSlot, McqaTemplate, Polarity,
    OPTION_A, OPTION_B,
};
use eventcause::triplets::Question;

#[test]
fn baking_mcqa_golden() {
    let p = render_mcqa_causal(
        McqaTemplate::V1,
        "baking a cake",
        "preheat oven to 350 degrees.",
        ["turn off oven.", "prepare the microwave oven and required utensils"],
        Question::Effect,
        None,
    )
    .unwrap();
    assert_eq!(p.text, include_str!("golden/mcqa_baking.txt"));
    assert_eq!(p.option_tokens, [OPTION_A, OPTION_B]);
    assert_eq!(p.answer_slot, AnswerSlot::NextToken);
}

#[test]
fn multiple_choice_preamble_golden() {
    let p = render_mcqa_causal(
        McqaTemplate::V2,
        "going on a train",
        "get the bill for groceries.",
        ["pay the cashier for your items.", "place cart into cart corral."],
        Question::Cause,
        None,
    )
    .unwrap();
    assert_eq!(p.text, include_str!("golden/mcqa_train_v2.txt"));
}

#[test]
fn temporal_mcqa_golden() {
    let p = render_temporal_mcqa("baking a cake", "mix the batter", "bake the cake").unwrap();
    assert_eq!(p.text, include_str!("golden/temporal_mcqa.txt"));
}

#[test]
fn intervention_golden() {
    let prefix = ["gather ingredients", "preheat oven to 350 degrees."];
    let p = render_intervention(
        "baking a cake",
        &prefix,
        "mix the batter",
        Polarity::Negated,
        "bake the cake",
        true,
    )
    .unwrap();
    assert_eq!(p.text, include_str!("golden/intervention_negated_flipped.txt"));
}

#[test]
fn intervention_variants() {
    let prefix = ["gather ingredients"];
    let render = |pol, flip| {
        render_intervention("baking a cake", &prefix, "mix", pol, "bake", flip)
            .unwrap()
            .text
    };
    let plain = render(Polarity::Occurred, false);
    assert!(plain.contains("Further, the event 'mix' took place.\n"));
    assert!(plain.ends_with("A. Increase\nB. Decrease\nAnswer:"));
    assert!(render(Polarity::Negated, false).contains("did NOT take place."));
    assert!(render(Polarity::Occurred, true).ends_with("A. Decrease\nB. Increase\nAnswer:"));
    assert_eq!(
        plain.replace("took place", "did NOT take place"),
        render(Polarity::Negated, false)
    );

    let bare = render_intervention("baking a cake", &[], "mix", Polarity::Occurred, "bake", false)
        .unwrap()
        .text;
    assert!(bare.starts_with("CAUSAL REASONING ANALYSIS:\nContext: For the activity baking a cake.\nFurther"));
}

#[test]
fn empty_slots_are_rejected() {
    assert!(render_mcqa_causal(McqaTemplate::V1, "a", " ", ["x", "y"], Question::Cause, None).is_err());
    assert!(render_temporal_mcqa("a", "x", "").is_err());
    assert!(render_intervention("a", &["ok", ""], "x", Polarity::Occurred, "y", false).is_err());
}

#[test]
fn renderings_are_canonical() {
    for (name, text) in dump_templates() {
        assert!(!text.contains('\r'), "{name}");
        assert!(text.lines().all(|l| l == l.trim_end()), "{name}");
        if name != "temporal_masked" {
            assert!(text.ends_with("Answer:"), "{name}");
        }
    }
}
