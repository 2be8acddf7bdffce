//! A computable prior over sequences built from a next-token model.
//!
//! A sequence `x` of length `t` is produced by the program family
//! `(t, s, e(x))`, where `e(x)` is the model's code for `x`. Summing
//! `2^{-ℓ}` over the seed `s` factors out, leaving
//!
//! ```text
//! log₂ M̄(x) = log₂ Σ_s 2^{-γ(s)} − ℓ_t − ℓ_e
//! ```
//!
//! Two length models are provided. [`PriorMode::Exact`] uses integer Elias
//! gamma lengths, matching the bits of a real program file.
//! [`PriorMode::PaperApprox`] uses the smooth `2·log₂ n` forms, whose seed
//! sum is π²/6. Everything is kept in the log domain; `2^{-L}` underflows for
//! any realistic `L`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::analytic_code_length;
use crate::model::{check_alphabet, ModelError, SequenceModel, TokenSequence};
use crate::prefix_code::gamma_len;

/// Largest brute-force enumeration [`semimeasure_mass`] will attempt.
pub const MAX_ENUMERATION: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolomonoffError {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("the prior is defined for nonempty sequences only")]
    EmptySequence,
    #[error("seeds start at 1")]
    ZeroSeed,
    #[error("enumerating {alphabet}^{length} strings exceeds the limit of {MAX_ENUMERATION}")]
    EnumerationTooLarge { alphabet: usize, length: usize },
    #[error("length grid is empty")]
    EmptyGrid,
    #[error("no test sequence is long enough for t = {0}")]
    SequenceTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Integer Elias gamma lengths; seed sum 1.
    Exact,
    /// Real-valued `2·log₂ n` lengths; seed sum π²/6.
    PaperApprox,
}

impl PriorMode {
    pub const ALL: [PriorMode; 2] = [PriorMode::Exact, PriorMode::PaperApprox];

    pub fn name(self) -> &'static str {
        match self {
            PriorMode::Exact => "exact",
            PriorMode::PaperApprox => "paper-approx",
        }
    }
}

impl std::str::FromStr for PriorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" | "exact-gamma" => Ok(PriorMode::Exact),
            "paper-approx" | "approx" => Ok(PriorMode::PaperApprox),
            other => Err(format!("unknown prior mode {other:?} (expected exact or paper-approx)")),
        }
    }
}

/// `Σ_{s≥1} 2^{-len(s)}` under the mode's seed-length model.
pub fn seed_sum(mode: PriorMode) -> f64 {
    match mode {
        PriorMode::Exact => 1.0,
        PriorMode::PaperApprox => std::f64::consts::PI.powi(2) / 6.0,
    }
}

/// `Σ_{s=1}^{max_seed} 2^{-γ(s)}`, summed block by block: the `2^k` seeds
/// with a `(2k+1)`-bit codeword contribute `2^{-k-1}` when complete.
pub fn seed_sum_partial(max_seed: u64) -> f64 {
    let mut total = 0.0;
    let mut k = 0u32;
    while k < 64 {
        let first = 1u64 << k;
        if first > max_seed {
            break;
        }
        let last = if k == 63 { u64::MAX } else { (first << 1) - 1 };
        let count = last.min(max_seed) - first + 1;
        total += count as f64 * (-(f64::from(2 * k + 1))).exp2();
        k += 1;
    }
    total
}

/// Bits of the program `(t, s, e(x))` with `|e(x)|` taken as the analytic
/// code length; the model itself carries no length cost.
pub fn program_length<M: SequenceModel + ?Sized>(
    x: &TokenSequence,
    seed: u64,
    model: &M,
) -> Result<f64, SolomonoffError> {
    if seed == 0 {
        return Err(SolomonoffError::ZeroSeed);
    }
    let l = code_length(model, x)?;
    Ok(gamma_len(x.len() as u64) as f64 + gamma_len(seed) as f64 + l + gamma_len(ceil_len(l)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorComponents {
    /// `log₂` of the seed sum.
    pub seed_sum_log: f64,
    /// Length charged for the iteration count `t`.
    pub iteration_len: f64,
    /// Length charged for the wrapped payload, `|e| + len(|e|)`.
    pub payload_len: f64,
}

/// `log₂ M̄(x)` with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPrior {
    pub value: f64,
    pub mode: PriorMode,
    pub components: PriorComponents,
}

impl LogPrior {
    /// Prior for a sequence of `t` tokens whose analytic code length is `l`.
    pub fn from_length(t: usize, l: f64, mode: PriorMode) -> LogPrior {
        let t = t as u64;
        let components = match mode {
            PriorMode::Exact => PriorComponents {
                seed_sum_log: seed_sum(mode).log2(),
                iteration_len: gamma_len(t) as f64,
                payload_len: l + gamma_len(ceil_len(l)) as f64,
            },
            PriorMode::PaperApprox => PriorComponents {
                seed_sum_log: seed_sum(mode).log2(),
                iteration_len: 2.0 * (t as f64).log2(),
                payload_len: l + 2.0 * l.log2(),
            },
        };
        LogPrior {
            value: components.seed_sum_log - components.iteration_len - components.payload_len,
            mode,
            components,
        }
    }
}

pub fn log_prior<M: SequenceModel + ?Sized>(
    x: &TokenSequence,
    model: &M,
    mode: PriorMode,
) -> Result<LogPrior, SolomonoffError> {
    let l = code_length(model, x)?;
    Ok(LogPrior::from_length(x.len(), l, mode))
}

/// Next-symbol prediction from prior ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPrediction {
    pub mode: PriorMode,
    /// `M̄(x·a) / M̄(x)` for each symbol `a`.
    pub raw: Vec<f64>,
    /// `raw`, renormalized to sum to 1.
    pub normalized: Vec<f64>,
    /// `P(a | x)` under the model.
    pub model_probability: Vec<f64>,
    /// `raw(a) / P(a | x)`.
    pub ratio_check: Vec<f64>,
}

impl ConditionalPrediction {
    /// `|ratio_check(a) · 4(t+1)²/t² − 1|` per symbol: the distance from the
    /// asymptotic `t²/4(t+1)²` scaling.
    pub fn deviations(&self, t: usize) -> Vec<f64> {
        let t = t as f64;
        let scale = 4.0 * (t + 1.0).powi(2) / (t * t);
        self.ratio_check.iter().map(|r| (r * scale - 1.0).abs()).collect()
    }
}

pub fn conditional_prior<M: SequenceModel + ?Sized>(
    x: &TokenSequence,
    model: &M,
    mode: PriorMode,
) -> Result<ConditionalPrediction, SolomonoffError> {
    let l = code_length(model, x)?;
    let t = x.len();
    let base = LogPrior::from_length(t, l, mode).value;
    let dist = model.distribution_for(x.tokens());
    let model_probability = dist.probs().to_vec();
    // Appending `a` adds 2 bits of analytic overhead plus −log₂ P(a | x).
    let raw: Vec<f64> = model_probability
        .iter()
        .map(|&p| (LogPrior::from_length(t + 1, l + 2.0 - p.log2(), mode).value - base).exp2())
        .collect();
    // Scaling by the largest entry first keeps symmetric cases exact.
    let max = raw.iter().copied().fold(0.0, f64::max);
    let total: f64 = raw.iter().map(|r| r / max).sum();
    let normalized = raw.iter().map(|r| r / max / total).collect();
    let ratio_check = raw.iter().zip(&model_probability).map(|(r, p)| r / p).collect();
    Ok(ConditionalPrediction {
        mode,
        raw,
        normalized,
        model_probability,
        ratio_check,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Row {
    pub t: usize,
    pub max_deviation: f64,
    pub mean_deviation: f64,
    pub tolerance: f64,
    pub sequences: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub mode: PriorMode,
    pub rows: Vec<Theorem2Row>,
    /// Whether `max_deviation` strictly decreases along the grid.
    pub monotone: bool,
    pub pass: bool,
}

/// Tolerance on the ratio deviation at length `t`.
pub fn theorem2_tolerance(t: usize) -> f64 {
    6.0 / t as f64 + 0.01
}

/// Checks `M̄(a | x_{1:t}) ≈ t²/4(t+1)² · P(a | x_{1:t})` on the length-`t`
/// prefixes of `sequences` for every `t` in `t_grid`. Sequences shorter than
/// `t` are skipped for that row.
pub fn verify_theorem2<M: SequenceModel + ?Sized>(
    model: &M,
    sequences: &[TokenSequence],
    t_grid: &[usize],
    mode: PriorMode,
) -> Result<Theorem2Report, SolomonoffError> {
    if t_grid.is_empty() {
        return Err(SolomonoffError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let usable: Vec<&TokenSequence> = sequences.iter().filter(|s| t >= 1 && s.len() >= t).collect();
        if usable.is_empty() {
            return Err(SolomonoffError::SequenceTooShort(t));
        }
        // Per-sequence results are collected in input order, then reduced
        // sequentially, so the report does not depend on scheduling.
        let per_sequence: Vec<Vec<f64>> = usable
            .par_iter()
            .map(|s| conditional_prior(&s.prefix(t), model, mode).map(|c| c.deviations(t)))
            .collect::<Result<_, _>>()?;
        let mut max = 0.0f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for d in per_sequence.iter().flatten() {
            max = max.max(*d);
            sum += d;
            count += 1;
        }
        let tolerance = theorem2_tolerance(t);
        rows.push(Theorem2Row {
            t,
            max_deviation: max,
            mean_deviation: sum / count as f64,
            tolerance,
            sequences: usable.len(),
            pass: max <= tolerance,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].max_deviation < w[0].max_deviation);
    let pass = monotone && rows.iter().all(|r| r.pass);
    Ok(Theorem2Report {
        mode,
        rows,
        monotone,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemimeasureReport {
    pub length: usize,
    pub strings: u64,
    pub mass: f64,
    pub pass: bool,
}

/// `Σ_{|x| = length} M̄(x)` in exact mode, by brute-force enumeration.
pub fn semimeasure_mass<M: SequenceModel + ?Sized>(
    length: usize,
    model: &M,
) -> Result<SemimeasureReport, SolomonoffError> {
    if length == 0 {
        return Err(SolomonoffError::EmptySequence);
    }
    let v = model.alphabet().size();
    let too_large = SolomonoffError::EnumerationTooLarge { alphabet: v, length };
    let exponent = u32::try_from(length).map_err(|_| too_large.clone())?;
    let strings = (v as u64)
        .checked_pow(exponent)
        .filter(|&n| n <= MAX_ENUMERATION)
        .ok_or(too_large)?;

    // Depth-first over prefixes, carrying the running log-loss.
    let mut mass = 0.0;
    let mut stack: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((prefix, loss)) = stack.pop() {
        if prefix.len() == length {
            let l = 2.0 * length as f64 + loss;
            mass += LogPrior::from_length(length, l, PriorMode::Exact).value.exp2();
            continue;
        }
        let dist = model.distribution_for(&prefix);
        for a in (0..v).rev() {
            let mut next = prefix.clone();
            next.push(a);
            stack.push((next, loss - dist.prob(a).log2()));
        }
    }
    Ok(SemimeasureReport {
        length,
        strings,
        mass,
        pass: mass <= 1.0,
    })
}

fn code_length<M: SequenceModel + ?Sized>(model: &M, x: &TokenSequence) -> Result<f64, SolomonoffError> {
    check_alphabet(model.alphabet(), x)?;
    if x.is_empty() {
        return Err(SolomonoffError::EmptySequence);
    }
    analytic_code_length(model, x).map_err(|e| match e {
        crate::codec::CodecError::Model(m) => SolomonoffError::Model(m),
        other => SolomonoffError::Model(ModelError::Format(other.to_string())),
    })
}

fn ceil_len(l: f64) -> u64 {
    (l.ceil() as u64).max(1)
}
