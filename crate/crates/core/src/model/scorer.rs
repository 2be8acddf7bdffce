use std::sync::Arc;

use thiserror::Error;

use super::{Alphabet, NGramModel, SequenceModel, TokenSequence};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("label {label:?} spans {tokens} tokens; exactly one is required")]
    MultiTokenLabel { label: String, tokens: usize },
    #[error("label {0:?} is not a token known to the model")]
    UnknownLabel(String),
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl ScoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Transport(_))
    }
}

/// Probability of each candidate label token as the next token after a prompt.
pub trait LabelScorer: Sync {
    /// One probability in (0, 1] per candidate, in candidate order.
    fn label_probabilities(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, ScoreError>;

    /// Stable description of the scorer, recorded in reports.
    fn identity(&self) -> String;
}

/// Confidence of a single label: the probability the scorer assigns to
/// `label` as the next token after `prompt`.
pub fn remote_label_confidence(client: &dyn LabelScorer, prompt: &str, label: &str) -> Result<f64, ScoreError> {
    let probs = client.label_probabilities(prompt, &[label.to_string()])?;
    probs
        .first()
        .copied()
        .ok_or_else(|| ScoreError::Protocol("no probability returned".into()))
}

/// Offline scorer: a byte-level n-gram trained on the prompt itself scores
/// each candidate continuation; probabilities are normalized over the
/// candidate set.
#[derive(Debug, Clone)]
pub struct InContextScorer {
    order: usize,
    alpha: f64,
    alphabet: Arc<Alphabet>,
}

impl InContextScorer {
    pub fn new(order: usize, alpha: f64) -> Result<Self, ScoreError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ScoreError::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self {
            order,
            alpha,
            alphabet: Arc::new(Alphabet::bytes()),
        })
    }
}

impl LabelScorer for InContextScorer {
    fn label_probabilities(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, ScoreError> {
        let seq = TokenSequence::from_bytes(Arc::clone(&self.alphabet), prompt.as_bytes())
            .map_err(|e| ScoreError::Protocol(e.to_string()))?;
        let mut model = NGramModel::new(Arc::clone(&self.alphabet), self.order, self.alpha)
            .map_err(|e| ScoreError::Config(e.to_string()))?;
        model.train_on(&seq).map_err(|e| ScoreError::Protocol(e.to_string()))?;

        let tail_len = self.order.min(seq.len());
        let tail = &seq.tokens()[seq.len() - tail_len..];
        let mut log_probs = Vec::with_capacity(candidates.len());
        for cand in candidates {
            if cand.is_empty() {
                return Err(ScoreError::UnknownLabel(cand.clone()));
            }
            let mut context: Vec<usize> = tail.to_vec();
            let mut lp = 0.0;
            for &b in cand.as_bytes() {
                let sym = usize::from(b);
                lp += model.distribution_for(&context).prob(sym).log2();
                context.push(sym);
            }
            log_probs.push(lp);
        }
        let max = log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_probs.iter().map(|lp| (lp - max).exp2()).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }

    fn identity(&self) -> String {
        format!("icl-ngram(order={},alpha={})", self.order, self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn in_context_scorer_follows_the_prompt() {
        let scorer = InContextScorer::new(3, 0.01).unwrap();
        let prompt = "x: yes\nx: yes\nx: yes\nx: no\nx:";
        let labels = vec![" yes".to_string(), " no".to_string()];
        let p = scorer.label_probabilities(prompt, &labels).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
        assert_eq!(p, scorer.label_probabilities(prompt, &labels).unwrap());
        assert_eq!(remote_label_confidence(&scorer, prompt, " yes").unwrap(), 1.0);
    }

    #[test]
    fn empty_label_is_unknown() {
        let scorer = InContextScorer::new(2, 0.5).unwrap();
        let err = scorer.label_probabilities("abc", &[String::new()]).unwrap_err();
        assert_eq!(err, ScoreError::UnknownLabel(String::new()));
    }
}
