//! Prompt templates for option-token scoring.
//!
//! Every renderer is a pure function of its inputs. Output uses `\n` line
//! endings with trailing whitespace stripped from each line, and MCQA-style
//! prompts end exactly at `Answer:`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triplets::Question;

/// Bumped whenever any template's text changes.
pub const TEMPLATE_VERSION: u32 = 1;

pub const OPTION_A: &str = " A";
pub const OPTION_B: &str = " B";
pub const MASK_TOKEN: &str = "<mask>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt slot `{0}` is empty")]
    EmptySlot(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    McqaCausal,
    TemporalMasked,
    TemporalMcqa,
    Intervention,
}

/// Preamble variant for causal MCQA prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McqaTemplate {
    /// "Consider the activity of ..."
    #[default]
    V1,
    /// "The following are multiple choice questions about ..."
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Occurred,
    Negated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSlot {
    /// Score the next token after the final `Answer:`.
    NextToken,
    /// Score the token at the mask position.
    Mask,
}

/// Structured description of what a prompt asks, for scorers that answer
/// from ground truth rather than text. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptMeta {
    Mcqa {
        premise: String,
        choices: [String; 2],
    },
    Temporal {
        first: String,
        second: String,
    },
    Intervention {
        e1: String,
        e2: String,
        polarity: Polarity,
        flipped: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
    pub option_tokens: Vec<String>,
    pub answer_slot: AnswerSlot,
    pub meta: Option<PromptMeta>,
}

impl RenderedPrompt {
    pub fn with_meta(mut self, meta: PromptMeta) -> Self {
        self.meta = Some(meta);
        self
    }
}

fn canonical(lines: &[String]) -> String {
    lines.iter().map(|l| l.trim_end()).collect::<Vec<_>>().join("\n")
}

fn require(slot: &'static str, value: &str) -> Result<(), PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::EmptySlot(slot))
    } else {
        Ok(())
    }
}

fn letter_options() -> Vec<String> {
    vec![OPTION_A.to_string(), OPTION_B.to_string()]
}

/// Cause/effect multiple-choice prompt. `examples` is an optional
/// in-context block inserted after the preamble.
pub fn render_mcqa_causal(
    template: McqaTemplate,
    activity: &str,
    premise: &str,
    choices: [&str; 2],
    question: Question,
    examples: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    require("activity", activity)?;
    require("premise", premise)?;
    require("choice1", choices[0])?;
    require("choice2", choices[1])?;
    let mut lines = vec![match template {
        McqaTemplate::V1 => format!("Consider the activity of {activity}."),
        McqaTemplate::V2 => format!(
            "The following are multiple choice questions about {activity}. You should directly answer the question by choosing the correct option."
        ),
    }];
    if let Some(ex) = examples.filter(|e| !e.trim().is_empty()) {
        lines.extend(ex.lines().map(str::to_string));
    }
    lines.push(format!(
        "Which of the following events (given as options A or B) is a plausible {question} of the event {premise}?"
    ));
    lines.push(format!("A. {}", choices[0]));
    lines.push(format!("B. {}", choices[1]));
    lines.push("Answer:".into());
    Ok(RenderedPrompt {
        kind: PromptKind::McqaCausal,
        text: canonical(&lines),
        option_tokens: letter_options(),
        answer_slot: AnswerSlot::NextToken,
        meta: None,
    })
}

/// Masked-LM temporal prompt; options are the words scored at the mask.
pub fn render_temporal_masked(first: &str, second: &str) -> Result<RenderedPrompt, PromptError> {
    require("first event", first)?;
    require("second event", second)?;
    let line = format!(
        "In terms of 'before' and 'after', the event: \"{first}\" would have happened {MASK_TOKEN} the event: \"{second}\""
    );
    Ok(RenderedPrompt {
        kind: PromptKind::TemporalMasked,
        text: canonical(&[line]),
        option_tokens: vec!["before".into(), "after".into()],
        answer_slot: AnswerSlot::Mask,
        meta: None,
    })
}

/// Autoregressive temporal prompt; option A is "before".
pub fn render_temporal_mcqa(activity: &str, first: &str, second: &str) -> Result<RenderedPrompt, PromptError> {
    require("activity", activity)?;
    require("first event", first)?;
    require("second event", second)?;
    let lines = [
        format!("Consider the activity of {activity}."),
        "Question: Determine the temporal order.".to_string(),
        format!("The following events took place: 1. {first}, 2. {second}"),
        "Did the first event occur 'before' or 'after' the second event? (choose from the given options)".to_string(),
        "A: before".to_string(),
        "B: after".to_string(),
        "Answer:".to_string(),
    ];
    Ok(RenderedPrompt {
        kind: PromptKind::TemporalMcqa,
        text: canonical(&lines),
        option_tokens: letter_options(),
        answer_slot: AnswerSlot::NextToken,
        meta: None,
    })
}

/// Intervention prompt over a trajectory prefix. Unflipped puts
/// "Increase" at option A; flipped puts "Decrease" there. An empty prefix
/// drops the sequence listing from the context.
pub fn render_intervention(
    activity: &str,
    trajectory: &[&str],
    e1: &str,
    polarity: Polarity,
    e2: &str,
    flipped: bool,
) -> Result<RenderedPrompt, PromptError> {
    require("activity", activity)?;
    require("e1", e1)?;
    require("e2", e2)?;
    for step in trajectory {
        require("trajectory event", step)?;
    }
    let mut lines = vec![
        "CAUSAL REASONING ANALYSIS:".to_string(),
        if trajectory.is_empty() {
            format!("Context: For the activity {activity}.")
        } else {
            format!("Context: For the activity {activity}. During the activity, the following set of sequences occurred in order:")
        },
    ];
    lines.extend(trajectory.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)));
    lines.push(match polarity {
        Polarity::Occurred => format!("Further, the event '{e1}' took place."),
        Polarity::Negated => format!("Further, the event '{e1}' did NOT take place."),
    });
    lines.push(format!(
        "Question: Given the above information, will the chances of the occurrence of the event '{e2}' increase or decrease?"
    ));
    let (a, b) = if flipped {
        ("Decrease", "Increase")
    } else {
        ("Increase", "Decrease")
    };
    lines.push(format!("A. {a}"));
    lines.push(format!("B. {b}"));
    lines.push("Answer:".into());
    Ok(RenderedPrompt {
        kind: PromptKind::Intervention,
        text: canonical(&lines),
        option_tokens: letter_options(),
        answer_slot: AnswerSlot::NextToken,
        meta: None,
    })
}

/// Every template with `{placeholder}` slots, for audit.
pub fn dump_templates() -> Vec<(&'static str, String)> {
    let ph = |s: &str| format!("{{{s}}}");
    let mcqa = |t| {
        render_mcqa_causal(
            t,
            &ph("activity"),
            &ph("premise"),
            [&ph("choice1"), &ph("choice2")],
            Question::Cause,
            None,
        )
        .expect("placeholders are non-empty")
        .text
        .replace("plausible cause", "plausible {question}")
    };
    let traj = ph("trajectory_event_1");
    let intervention = |pol, flipped| {
        render_intervention(&ph("activity"), &[&traj], &ph("e1"), pol, &ph("e2"), flipped)
            .expect("placeholders are non-empty")
            .text
    };
    vec![
        ("mcqa_causal.v1", mcqa(McqaTemplate::V1)),
        ("mcqa_causal.v2", mcqa(McqaTemplate::V2)),
        (
            "temporal_masked",
            render_temporal_masked(&ph("first"), &ph("second"))
                .expect("non-empty")
                .text,
        ),
        (
            "temporal_mcqa",
            render_temporal_mcqa(&ph("activity"), &ph("first"), &ph("second"))
                .expect("non-empty")
                .text,
        ),
        ("intervention.occurred", intervention(Polarity::Occurred, false)),
        ("intervention.occurred.flipped", intervention(Polarity::Occurred, true)),
        ("intervention.negated", intervention(Polarity::Negated, false)),
        ("intervention.negated.flipped", intervention(Polarity::Negated, true)),
        (
            "intervention.no_prefix",
            render_intervention(&ph("activity"), &[], &ph("e1"), Polarity::Occurred, &ph("e2"), false)
                .expect("placeholders are non-empty")
                .text,
        ),
    ]
}
