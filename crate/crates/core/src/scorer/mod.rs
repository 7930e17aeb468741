//! Scorers map a rendered prompt to a non-negative score per option token.

mod oracle;
mod remote;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::prompt::RenderedPrompt;
use crate::triplets::Label;

pub use oracle::OracleScorer;
pub use remote::{RemoteScorer, RemoteScorerConfig, ScoreKind};

pub type OptionScores = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("response is missing a score for option {0:?}")]
    MissingOption(String),
    #[error("score for option {token:?} is not a finite non-negative number: {value}")]
    InvalidScore { token: String, value: f64 },
    #[error("scorer cannot handle this prompt: {0}")]
    Unsupported(String),
    #[error("invalid scorer configuration: {0}")]
    Config(String),
}

pub trait Scorer: Send + Sync {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError>;

    /// Scores several prompts; results are positionally aligned with the
    /// input and identical to sequential [`Scorer::score`] calls.
    fn score_batch(&self, prompts: &[RenderedPrompt]) -> Result<Vec<OptionScores>, ScoreError> {
        prompts.iter().map(|p| self.score(p)).collect()
    }

    fn name(&self) -> String;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError> {
        (**self).score(prompt)
    }

    fn score_batch(&self, prompts: &[RenderedPrompt]) -> Result<Vec<OptionScores>, ScoreError> {
        (**self).score_batch(prompts)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError> {
        (**self).score(prompt)
    }

    fn score_batch(&self, prompts: &[RenderedPrompt]) -> Result<Vec<OptionScores>, ScoreError> {
        (**self).score_batch(prompts)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// Scores of the prompt's two options in option order, after checking that
/// each is present, finite and non-negative.
pub fn option_pair(prompt: &RenderedPrompt, scores: &OptionScores) -> Result<[f64; 2], ScoreError> {
    let mut out = [0.0; 2];
    for (slot, token) in prompt.option_tokens.iter().take(2).enumerate() {
        let v = *scores
            .get(token)
            .ok_or_else(|| ScoreError::MissingOption(token.clone()))?;
        if !v.is_finite() || v < 0.0 {
            return Err(ScoreError::InvalidScore {
                token: token.clone(),
                value: v,
            });
        }
        out[slot] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McqaPrediction {
    pub choice: Label,
    pub tie: bool,
}

/// Argmax over the two option scores; ties go to option 1.
pub fn mcqa_predict(scorer: &dyn Scorer, prompt: &RenderedPrompt) -> Result<McqaPrediction, ScoreError> {
    let scores = scorer.score(prompt)?;
    let [a, b] = option_pair(prompt, &scores)?;
    Ok(McqaPrediction {
        choice: if b > a { Label::Two } else { Label::One },
        tie: a == b,
    })
}

/// Running count of tied predictions, shareable across workers.
#[derive(Debug, Default)]
pub struct TieCounter(AtomicU64);

impl TieCounter {
    pub fn record(&self, p: &McqaPrediction) {
        if p.tie {
            self.0.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Equal score for every option.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl Scorer for UniformScorer {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError> {
        Ok(prompt.option_tokens.iter().map(|t| (t.clone(), 1.0)).collect())
    }

    fn name(&self) -> String {
        "uniform".into()
    }
}

/// Multiplies the first option's score of an inner scorer by a constant,
/// modelling a position bias towards option A.
#[derive(Debug, Clone)]
pub struct PositionBiasedScorer<S> {
    pub inner: S,
    pub factor: f64,
}

impl<S: Scorer> Scorer for PositionBiasedScorer<S> {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError> {
        let mut scores = self.inner.score(prompt)?;
        if let Some(first) = prompt.option_tokens.first() {
            if let Some(v) = scores.get_mut(first) {
                *v *= self.factor;
            }
        }
        Ok(scores)
    }

    fn name(&self) -> String {
        format!("{}+bias({})", self.inner.name(), self.factor)
    }
}
