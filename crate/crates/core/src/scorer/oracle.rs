use crate::graph::{Dag, GraphError};
use crate::prompt::{Polarity, PromptMeta, RenderedPrompt};

use super::{OptionScores, ScoreError, Scorer};

/// Answers from the causal graph instead of the prompt text: d-connection
/// for MCQA and intervention prompts, ancestry for temporal prompts. Needs
/// [`PromptMeta`] on every prompt.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    causal: Dag,
    connected: Vec<Vec<bool>>,
    descendants: Vec<Vec<bool>>,
    margin: f64,
    inverted: bool,
}

impl OracleScorer {
    pub fn new(causal: Dag, margin: f64) -> Result<Self, ScoreError> {
        if !(margin > 0.0 && margin <= 0.5) {
            return Err(ScoreError::Config(format!(
                "oracle margin must lie in (0, 0.5], got {margin}"
            )));
        }
        let connected = causal.d_connection_matrix();
        let descendants = (0..causal.len()).map(|x| causal.descendants(x)).collect();
        Ok(Self {
            causal,
            connected,
            descendants,
            margin,
            inverted: false,
        })
    }

    /// The same oracle with its two option scores exchanged; always picks
    /// the wrong MCQA answer.
    pub fn inverted(mut self) -> Self {
        self.inverted = !self.inverted;
        self
    }

    fn ix(&self, id: &str) -> Result<usize, ScoreError> {
        self.causal
            .ix(id)
            .map_err(|e: GraphError| ScoreError::Unsupported(e.to_string()))
    }

    fn connected(&self, a: &str, b: &str) -> Result<bool, ScoreError> {
        Ok(self.connected[self.ix(a)?][self.ix(b)?])
    }

    /// Scores for the two options in option order.
    fn pair(&self, meta: &PromptMeta) -> Result<[f64; 2], ScoreError> {
        let m = self.margin;
        Ok(match meta {
            PromptMeta::Mcqa { premise, choices } => {
                let c = [
                    self.connected(premise, &choices[0])?,
                    self.connected(premise, &choices[1])?,
                ];
                match c {
                    [true, false] => [0.5 + m, 0.5 - m],
                    [false, true] => [0.5 - m, 0.5 + m],
                    _ => [0.5, 0.5],
                }
            }
            PromptMeta::Intervention {
                e1,
                e2,
                polarity,
                flipped,
            } => {
                let increase = if self.connected(e1, e2)? {
                    match polarity {
                        Polarity::Occurred => 0.5 + m,
                        Polarity::Negated => 0.5 - m,
                    }
                } else {
                    0.5
                };
                if *flipped {
                    [1.0 - increase, increase]
                } else {
                    [increase, 1.0 - increase]
                }
            }
            PromptMeta::Temporal { first, second } => {
                let (a, b) = (self.ix(first)?, self.ix(second)?);
                let before = if self.descendants[a][b] {
                    0.5 + m
                } else if self.descendants[b][a] {
                    0.5 - m
                } else {
                    0.5
                };
                [before, 1.0 - before]
            }
        })
    }
}

impl Scorer for OracleScorer {
    fn score(&self, prompt: &RenderedPrompt) -> Result<OptionScores, ScoreError> {
        let meta = prompt
            .meta
            .as_ref()
            .ok_or_else(|| ScoreError::Unsupported("oracle scorer needs node metadata on the prompt".into()))?;
        let mut pair = self.pair(meta)?;
        if self.inverted {
            pair.swap(0, 1);
        }
        Ok(prompt.option_tokens.iter().cloned().zip(pair).collect())
    }

    fn name(&self) -> String {
        if self.inverted { "anti-oracle" } else { "oracle" }.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::render_intervention;
    use crate::scorer::option_pair;

    fn causal() -> Dag {
        let edges = vec![("a".to_string(), "b".to_string())];
        Dag::new(["a", "b", "c"], &edges, "a", "c").unwrap()
    }

    fn intervention(e1: &str, e2: &str, polarity: Polarity, flipped: bool) -> RenderedPrompt {
        render_intervention("x", &["t"], e1, polarity, e2, flipped)
            .unwrap()
            .with_meta(PromptMeta::Intervention {
                e1: e1.into(),
                e2: e2.into(),
                polarity,
                flipped,
            })
    }

    #[test]
    fn connected_pair_under_treatment() {
        let o = OracleScorer::new(causal(), 0.4).unwrap();
        let p = intervention("a", "b", Polarity::Occurred, false);
        let [inc, dec] = option_pair(&p, &o.score(&p).unwrap()).unwrap();
        assert!((inc - 0.9).abs() < 1e-15 && (dec - 0.1).abs() < 1e-15);
        let p = intervention("a", "b", Polarity::Occurred, true);
        let [dec, inc] = option_pair(&p, &o.score(&p).unwrap()).unwrap();
        assert!((inc - 0.9).abs() < 1e-15 && (dec - 0.1).abs() < 1e-15);
    }

    #[test]
    fn separated_pair_is_even() {
        let o = OracleScorer::new(causal(), 0.4).unwrap();
        for pol in [Polarity::Occurred, Polarity::Negated] {
            let p = intervention("a", "c", pol, false);
            assert_eq!(option_pair(&p, &o.score(&p).unwrap()).unwrap(), [0.5, 0.5]);
        }
    }

    #[test]
    fn margin_bounds_and_missing_meta() {
        assert!(OracleScorer::new(causal(), 0.0).is_err());
        assert!(OracleScorer::new(causal(), 0.6).is_err());
        let o = OracleScorer::new(causal(), 0.2).unwrap();
        let p = render_intervention("x", &["t"], "a", Polarity::Occurred, "b", false).unwrap();
        assert!(matches!(o.score(&p), Err(ScoreError::Unsupported(_))));
    }
}
