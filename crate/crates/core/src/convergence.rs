//! Monte Carlo estimates of the cumulative squared prediction error
//! `Σ_{t≤T} (M̂(0 | x_{1:t}) − μ(0 | x_{1:t}))²` for computable sources μ and
//! online predictors M̂.
//!
//! Trials run in parallel. Trial `i` draws from ChaCha20 seeded with the run
//! seed on stream `i`, and results are reduced in trial order, so a run is
//! reproducible regardless of thread scheduling.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Alphabet, Distribution, ModelError, NGramModel, SequenceModel, TokenSequence, DEFAULT_ALPHA};

const ROW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvergenceError {
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("seed must be at least 1")]
    ZeroSeed,
    #[error("length must be at least 1")]
    ZeroLength,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("T grid must be nonempty, positive and strictly increasing")]
    BadGrid,
    #[error("context does not belong to the source alphabet")]
    BadContext,
    #[error("model: {0}")]
    Model(#[from] ModelError),
}

/// A computable data source. Symbol 0 is the one whose conditional
/// probability is tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ComputableSource {
    /// i.i.d. binary source with `P(0) = p`.
    Bernoulli { p: f64 },
    /// First-order chain; `transition[i][j] = P(next = j | current = i)`.
    Markov {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

impl ComputableSource {
    pub fn bernoulli(p: f64) -> Result<Self, ConvergenceError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ConvergenceError::InvalidSource(format!(
                "bernoulli p must lie in (0, 1), got {p}"
            )));
        }
        Ok(ComputableSource::Bernoulli { p })
    }

    pub fn markov(transition: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self, ConvergenceError> {
        let n = transition.len();
        if n < 2 {
            return Err(ConvergenceError::InvalidSource(
                "markov chains need at least 2 states".into(),
            ));
        }
        check_row(&initial, n, "initial distribution")?;
        for (i, row) in transition.iter().enumerate() {
            check_row(row, n, &format!("transition row {i}"))?;
        }
        Ok(ComputableSource::Markov { transition, initial })
    }

    /// Parses `bernoulli:<p>` or `markov:<row>;<row>...[@<initial>]`, rows
    /// and the initial distribution being comma-separated probabilities.
    /// The initial distribution defaults to uniform.
    pub fn parse(spec: &str) -> Result<Self, ConvergenceError> {
        let bad = |msg: String| ConvergenceError::InvalidSource(msg);
        let numbers = |s: &str| -> Result<Vec<f64>, ConvergenceError> {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}"))))
                .collect()
        };
        match spec.split_once(':') {
            Some(("bernoulli", p)) => Self::bernoulli(p.trim().parse().map_err(|e| bad(format!("{p:?}: {e}")))?),
            Some(("markov", body)) => {
                let (rows, initial) = match body.split_once('@') {
                    Some((rows, init)) => (rows, Some(numbers(init)?)),
                    None => (body, None),
                };
                let transition = rows.split(';').map(numbers).collect::<Result<Vec<_>, _>>()?;
                let n = transition.len();
                let initial = initial.unwrap_or_else(|| vec![1.0 / n as f64; n]);
                Self::markov(transition, initial)
            }
            _ => Err(bad(format!("expected bernoulli:<p> or markov:<rows>, got {spec:?}"))),
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match self {
            ComputableSource::Bernoulli { .. } => 2,
            ComputableSource::Markov { transition, .. } => transition.len(),
        }
    }

    /// Symbols `'0'`, `'1'`, ... in index order.
    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new((0..self.alphabet_size() as u32).map(|i| char::from_u32(0x30 + i).expect("small alphabet")))
            .expect("at least two symbols")
    }

    fn next_probs(&self, last: Option<usize>) -> &[f64] {
        match (self, last) {
            (ComputableSource::Bernoulli { .. }, _) => unreachable!("bernoulli handled separately"),
            (ComputableSource::Markov { initial, .. }, None) => initial,
            (ComputableSource::Markov { transition, .. }, Some(s)) => &transition[s],
        }
    }

    fn prob_zero(&self, last: Option<usize>) -> f64 {
        match self {
            ComputableSource::Bernoulli { p } => *p,
            ComputableSource::Markov { .. } => self.next_probs(last)[0],
        }
    }

    fn draw(&self, last: Option<usize>, rng: &mut ChaCha20Rng) -> usize {
        let u = unit(rng);
        match self {
            ComputableSource::Bernoulli { p } => usize::from(u >= *p),
            ComputableSource::Markov { .. } => {
                let probs = self.next_probs(last);
                let mut acc = 0.0;
                for (i, &q) in probs.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        return i;
                    }
                }
                // Rounding left `acc` just below 1: take the last symbol
                // with positive probability.
                probs.iter().rposition(|&q| q > 0.0).unwrap_or(0)
            }
        }
    }
}

fn check_row(row: &[f64], n: usize, what: &str) -> Result<(), ConvergenceError> {
    if row.len() != n {
        return Err(ConvergenceError::InvalidSource(format!(
            "{what} has {} entries, expected {n}",
            row.len()
        )));
    }
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ConvergenceError::InvalidSource(format!(
            "{what} has an entry outside [0, 1]"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(ConvergenceError::InvalidSource(format!("{what} sums to {sum}")));
    }
    Ok(())
}

fn unit(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn sample_into(source: &ComputableSource, len: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let next = source.draw(out.last().copied(), rng);
        out.push(next);
    }
    out
}

/// `len` symbols from `source`, determined by `(source, len, seed)`.
pub fn sample_sequence(source: &ComputableSource, len: usize, seed: u64) -> Result<TokenSequence, ConvergenceError> {
    if seed == 0 {
        return Err(ConvergenceError::ZeroSeed);
    }
    if len == 0 {
        return Err(ConvergenceError::ZeroLength);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let tokens = sample_into(source, len, &mut rng);
    Ok(TokenSequence::new(Arc::new(source.alphabet()), tokens)?)
}

/// `μ(0 | context)`.
pub fn true_conditional(source: &ComputableSource, context: &TokenSequence) -> Result<f64, ConvergenceError> {
    if context.alphabet().size() != source.alphabet_size() {
        return Err(ConvergenceError::BadContext);
    }
    Ok(source.prob_zero(context.tokens().last().copied()))
}

/// An online predictor: it sees each symbol after predicting it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Predictor {
    /// Add-α n-gram counts; order 0 with α = ½ is the KT estimator.
    NGram { order: usize, alpha: f64 },
    /// The source's own conditional.
    Oracle,
}

impl Predictor {
    pub const KT: Predictor = Predictor::NGram {
        order: 0,
        alpha: DEFAULT_ALPHA,
    };

    /// Parses `kt`, `oracle` or `ngram:<order>[:<alpha>]`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            ["kt"] => Ok(Predictor::KT),
            ["oracle"] => Ok(Predictor::Oracle),
            ["ngram", order] | ["ngram", order, _] => {
                let order = order.parse().map_err(|e| format!("n-gram order {order:?}: {e}"))?;
                let alpha = match parts.get(2) {
                    Some(a) => a.parse().map_err(|e| format!("alpha {a:?}: {e}"))?,
                    None => DEFAULT_ALPHA,
                };
                Ok(Predictor::NGram { order, alpha })
            }
            _ => Err(format!(
                "unknown predictor {spec:?} (expected kt, oracle or ngram:<order>[:<alpha>])"
            )),
        }
    }

    /// Which bound describes the expected growth of the cumulative error.
    pub fn regime(&self) -> &'static str {
        match self {
            Predictor::Oracle => "exact: predictor equals the source, error identically zero",
            Predictor::NGram { .. } => "logarithmic: computable count-based surrogate, error grows like ln T",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub source: ComputableSource,
    pub predictor: Predictor,
    pub seed: u64,
    pub trials: usize,
    pub t_grid: Vec<usize>,
    /// Mean over trials of the cumulative error up to each grid point.
    pub cumulative_mean: Vec<f64>,
    /// Standard error of `cumulative_mean` (sample deviation / √trials).
    pub cumulative_stderr: Vec<f64>,
    /// Mean over trials of the single-step error at each grid point.
    pub last_step_error: Vec<f64>,
    pub regime: String,
}

impl ErrorSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,cumulative_mean,cumulative_stderr,last_step_error\n");
        for i in 0..self.t_grid.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.t_grid[i], self.cumulative_mean[i], self.cumulative_stderr[i], self.last_step_error[i]
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// `cumulative(T_last) / cumulative(T_prev)` for the last two grid points.
    pub fn growth_ratio(&self) -> Option<f64> {
        let n = self.cumulative_mean.len();
        (n >= 2).then(|| self.cumulative_mean[n - 1] / self.cumulative_mean[n - 2])
    }
}

/// Powers of ten up to `max`.
pub fn default_grid(max: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |t| t.checked_mul(10))
        .take_while(|&t| t <= max)
        .collect()
}

pub fn cumulative_error(
    source: &ComputableSource,
    predictor: Predictor,
    t_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ErrorSeries, ConvergenceError> {
    if seed == 0 {
        return Err(ConvergenceError::ZeroSeed);
    }
    if trials == 0 {
        return Err(ConvergenceError::NoTrials);
    }
    if t_grid.is_empty() || t_grid[0] == 0 || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConvergenceError::BadGrid);
    }
    let alphabet = Arc::new(source.alphabet());
    if let Predictor::NGram { order, alpha } = predictor {
        NGramModel::new(Arc::clone(&alphabet), order, alpha)?;
    }

    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            run_trial(source, predictor, &alphabet, t_grid, &mut rng)
        })
        .collect();

    let n = trials as f64;
    let mut cumulative_mean = Vec::with_capacity(t_grid.len());
    let mut cumulative_stderr = Vec::with_capacity(t_grid.len());
    let mut last_step_error = Vec::with_capacity(t_grid.len());
    for g in 0..t_grid.len() {
        let mean = per_trial.iter().map(|(c, _)| c[g]).sum::<f64>() / n;
        let stderr = if trials > 1 {
            let var = per_trial.iter().map(|(c, _)| (c[g] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        cumulative_mean.push(mean);
        cumulative_stderr.push(stderr);
        last_step_error.push(per_trial.iter().map(|(_, s)| s[g]).sum::<f64>() / n);
    }
    Ok(ErrorSeries {
        source: source.clone(),
        predictor,
        seed,
        trials,
        t_grid: t_grid.to_vec(),
        cumulative_mean,
        cumulative_stderr,
        last_step_error,
        regime: predictor.regime().to_string(),
    })
}

/// One trial: returns (cumulative error, step error) at each grid point.
fn run_trial(
    source: &ComputableSource,
    predictor: Predictor,
    alphabet: &Arc<Alphabet>,
    t_grid: &[usize],
    rng: &mut ChaCha20Rng,
) -> (Vec<f64>, Vec<f64>) {
    let t_max = *t_grid.last().expect("grid checked nonempty");
    let mut model = match predictor {
        Predictor::NGram { order, alpha } => {
            Some(NGramModel::new(Arc::clone(alphabet), order, alpha).expect("parameters checked"))
        }
        Predictor::Oracle => None,
    };
    let mut history: Vec<usize> = Vec::with_capacity(t_max);
    let mut cumulative = 0.0;
    let mut cum_out = Vec::with_capacity(t_grid.len());
    let mut step_out = Vec::with_capacity(t_grid.len());
    let mut next_grid = 0;
    for t in 1..=t_max {
        let symbol = source.draw(history.last().copied(), rng);
        if let Some(m) = model.as_mut() {
            m.observe(&history, symbol);
        }
        history.push(symbol);
        let truth = source.prob_zero(Some(symbol));
        let predicted = match &model {
            Some(m) => m.distribution_for(&history).prob(0),
            None => truth,
        };
        let err = (predicted - truth).powi(2);
        cumulative += err;
        if t == t_grid[next_grid] {
            cum_out.push(cumulative);
            step_out.push(err);
            next_grid += 1;
        }
    }
    (cum_out, step_out)
}

/// `Σ_{t=1}^{T} E[(p̂_t − p)²]` for the KT estimator on bernoulli(p), where
/// `p̂_t = (n₀ + ½)/(t + 1)` after `t` symbols:
/// `E[(p̂_t − p)²] = (t·p(1−p) + (½ − p)²)/(t + 1)²`.
pub fn kt_expected_cumulative(p: f64, t_max: usize) -> f64 {
    (1..=t_max)
        .map(|t| {
            let t = t as f64;
            (t * p * (1.0 - p) + (0.5 - p).powi(2)) / (t + 1.0).powi(2)
        })
        .sum()
}

/// The predictor's next-symbol distribution after `history`, for callers
/// that want to inspect a trained online model.
pub fn predictor_distribution(
    source: &ComputableSource,
    predictor: Predictor,
    history: &TokenSequence,
) -> Result<Distribution, ConvergenceError> {
    let alphabet = Arc::new(source.alphabet());
    if history.alphabet().size() != alphabet.size() {
        return Err(ConvergenceError::BadContext);
    }
    match predictor {
        Predictor::Oracle => {
            let probs = match source {
                ComputableSource::Bernoulli { p } => vec![*p, 1.0 - p],
                ComputableSource::Markov { .. } => source.next_probs(history.tokens().last().copied()).to_vec(),
            };
            Ok(Distribution::new(probs)?)
        }
        Predictor::NGram { order, alpha } => {
            let mut m = NGramModel::new(Arc::clone(&alphabet), order, alpha)?;
            let tokens = history.tokens();
            for i in 0..tokens.len() {
                m.observe(&tokens[..i], tokens[i]);
            }
            Ok(m.distribution_for(tokens))
        }
    }
}
