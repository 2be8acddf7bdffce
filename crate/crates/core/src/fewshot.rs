//! Confidence-based few-shot example selection for text classification.
//!
//! Selection is greedy. At each step every remaining candidate `x` of the
//! current class is appended as a query to the prompt built so far, and the
//! scorer's probability of its true label is its confidence. The candidate
//! with the lowest (or highest) confidence joins the prompt as an answered
//! example. Classes take turns in label order until each has its quota.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelScorer, ScoreError};

pub const SMS_TEMPLATE: &str = include_str!("../templates/sms.txt");
pub const EMOTION_TEMPLATE: &str = include_str!("../templates/emotion.txt");
pub const AGNEWS_TEMPLATE: &str = include_str!("../templates/agnews.txt");

pub const EXAMPLES_PLACEHOLDER: &str = "{examples}";
pub const DEFAULT_K_TOTAL: usize = 10;
/// Confidence queries in flight at once within one greedy step.
pub const MAX_IN_FLIGHT: usize = 4;
pub const QUOTA_RULE: &str = "largest remainder, ties to earlier labels";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FewShotError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: u64, label: String },
    #[error("dataset has no usable examples")]
    EmptyPool,
    #[error("test set is empty")]
    EmptyTest,
    #[error("template has no {EXAMPLES_PLACEHOLDER} placeholder")]
    MissingPlaceholder,
    #[error("invalid verbalizer: {0}")]
    InvalidVerbalizer(String),
    #[error("class {label:?} needs {needed} examples but the pool has {available}")]
    ClassExhausted {
        label: String,
        needed: usize,
        available: usize,
    },
    #[error("k_total must be at least 1")]
    ZeroK,
    #[error("example label {0:?} is not in the template's label set")]
    LabelNotInTemplate(String),
    #[error("scorer: {0}")]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFormat {
    /// `label<TAB>text` per line, labels `ham` / `spam`.
    SmsTsv,
    /// CSV `text,label` with labels 0–5; optional header.
    EmotionRows,
    /// CSV `class,title,description` with classes 1–4; optional header.
    AgnewsRows,
}

impl TaskFormat {
    pub fn name(self) -> &'static str {
        match self {
            TaskFormat::SmsTsv => "sms-tsv",
            TaskFormat::EmotionRows => "emotion-rows",
            TaskFormat::AgnewsRows => "agnews-rows",
        }
    }

    /// Class names in label order.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            TaskFormat::SmsTsv => &["ham", "spam"],
            TaskFormat::EmotionRows => &["sadness", "joy", "love", "anger", "fear", "surprise"],
            TaskFormat::AgnewsRows => &["World", "Sports", "Business", "Sci/Tech"],
        }
    }

    /// Single-word answer for each label.
    pub fn verbalizer(self) -> Vec<Verbalized> {
        self.labels()
            .iter()
            .map(|&label| Verbalized {
                label: label.to_string(),
                surface: match label {
                    "Sci/Tech" => "Sci".to_string(),
                    other => other.to_string(),
                },
            })
            .collect()
    }

    pub fn system_text(self) -> &'static str {
        match self {
            TaskFormat::SmsTsv => SMS_TEMPLATE,
            TaskFormat::EmotionRows => EMOTION_TEMPLATE,
            TaskFormat::AgnewsRows => AGNEWS_TEMPLATE,
        }
    }

    pub fn template(self) -> PromptTemplate {
        PromptTemplate::new(self.system_text(), self.verbalizer()).expect("shipped templates are valid")
    }
}

impl std::str::FromStr for TaskFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sms-tsv" => Ok(TaskFormat::SmsTsv),
            "emotion-rows" => Ok(TaskFormat::EmotionRows),
            "agnews-rows" => Ok(TaskFormat::AgnewsRows),
            other => Err(format!(
                "unknown format {other:?} (expected sms-tsv, emotion-rows or agnews-rows)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub pool: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub pool_cap_per_class: usize,
    pub test_cap: usize,
    /// Used for splitting a single file and for subsampling.
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            pool_cap_per_class: 500,
            test_cap: 2000,
            seed: 1,
            test_fraction: 0.2,
        }
    }
}

/// Loads a dataset. A directory must hold `train.*` and `test.*` files (a
/// predefined split); a single file is split with `options.seed`. Both sides
/// are then subsampled to the caps, keeping file order.
pub fn load_dataset(path: &Path, format: TaskFormat, options: &LoadOptions) -> Result<Dataset, FewShotError> {
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let (train, test) = if path.is_dir() {
        let train = parse_file(&find_split(path, "train")?, format)?;
        let test = parse_file(&find_split(path, "test")?, format)?;
        (train, test)
    } else {
        let all = parse_file(path, format)?;
        if all.is_empty() {
            return Err(FewShotError::EmptyPool);
        }
        let n_test = ((all.len() as f64) * options.test_fraction).round() as usize;
        let mut is_test = vec![false; all.len()];
        for i in sample(&mut rng, all.len(), n_test.min(all.len())) {
            is_test[i] = true;
        }
        let (test, train): (Vec<_>, Vec<_>) = all.into_iter().zip(is_test).partition(|(_, t)| *t);
        (
            train.into_iter().map(|(r, _)| r).collect(),
            test.into_iter().map(|(r, _)| r).collect(),
        )
    };
    if train.is_empty() {
        return Err(FewShotError::EmptyPool);
    }

    let mut keep = vec![false; train.len()];
    for label in format.labels() {
        let members: Vec<usize> = (0..train.len()).filter(|&i| train[i].1 == *label).collect();
        if members.len() <= options.pool_cap_per_class {
            members.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in sample(&mut rng, members.len(), options.pool_cap_per_class) {
                keep[members[j]] = true;
            }
        }
    }
    let pool = to_examples(train.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r));

    let test = if test.len() > options.test_cap {
        let mut chosen: Vec<usize> = sample(&mut rng, test.len(), options.test_cap).into_vec();
        chosen.sort_unstable();
        to_examples(chosen.into_iter().map(|i| test[i].clone()))
    } else {
        to_examples(test.into_iter())
    };
    Ok(Dataset { pool, test })
}

fn to_examples(rows: impl Iterator<Item = (String, String)>) -> Vec<LabeledExample> {
    rows.enumerate()
        .map(|(source_index, (text, label))| LabeledExample {
            text,
            label,
            source_index,
        })
        .collect()
}

fn find_split(dir: &Path, stem: &str) -> Result<PathBuf, FewShotError> {
    let io = |e: std::io::Error| FewShotError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    let mut matches: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_stem().and_then(|s| s.to_str()) == Some(stem))
        .collect();
    matches.sort();
    matches.into_iter().next().ok_or_else(|| FewShotError::Io {
        path: dir.to_path_buf(),
        message: format!("no {stem}.* file in directory"),
    })
}

/// `(text, label)` rows in file order.
fn parse_file(path: &Path, format: TaskFormat) -> Result<Vec<(String, String)>, FewShotError> {
    let data = fs::read_to_string(path).map_err(|e| FewShotError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    match format {
        TaskFormat::SmsTsv => parse_sms(&data),
        TaskFormat::EmotionRows | TaskFormat::AgnewsRows => parse_rows(&data, format),
    }
}

fn parse_sms(data: &str) -> Result<Vec<(String, String)>, FewShotError> {
    let mut rows = Vec::new();
    for (i, line) in data.lines().enumerate() {
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line.split_once('\t').ok_or_else(|| FewShotError::Malformed {
            line: line_no,
            message: "expected label<TAB>text".into(),
        })?;
        if !TaskFormat::SmsTsv.labels().contains(&label) {
            return Err(FewShotError::UnknownLabel {
                line: line_no,
                label: label.to_string(),
            });
        }
        rows.push((text.to_string(), label.to_string()));
    }
    Ok(rows)
}

fn parse_rows(data: &str, format: TaskFormat) -> Result<Vec<(String, String)>, FewShotError> {
    let (fields, label_field, first_class) = match format {
        TaskFormat::EmotionRows => (2, 1, 0),
        TaskFormat::AgnewsRows => (3, 0, 1),
        TaskFormat::SmsTsv => unreachable!(),
    };
    let labels = format.labels();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(data.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| FewShotError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != fields {
            return Err(FewShotError::Malformed {
                line,
                message: format!("expected {fields} fields, found {}", record.len()),
            });
        }
        let raw = record[label_field].trim();
        let class: usize = match raw.parse() {
            Ok(c) => c,
            // A non-numeric label on the first row is a header.
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(FewShotError::UnknownLabel {
                    line,
                    label: raw.to_string(),
                })
            }
        };
        let label = class
            .checked_sub(first_class)
            .and_then(|c| labels.get(c))
            .ok_or_else(|| FewShotError::UnknownLabel {
                line,
                label: raw.to_string(),
            })?;
        let text = match format {
            TaskFormat::EmotionRows => record[0].to_string(),
            _ => format!("{} {}", record[1].trim(), record[2].trim()),
        };
        rows.push((text, label.to_string()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalized {
    pub label: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    /// `{text}` and `{answer}` are substituted.
    pub example_pattern: String,
    /// `{text}` is substituted.
    pub query_pattern: String,
    pub delimiter: String,
    pub verbalizer: Vec<Verbalized>,
}

impl PromptTemplate {
    pub fn new(system_text: impl Into<String>, verbalizer: Vec<Verbalized>) -> Result<Self, FewShotError> {
        let system_text = system_text.into();
        if !system_text.contains(EXAMPLES_PLACEHOLDER) {
            return Err(FewShotError::MissingPlaceholder);
        }
        if verbalizer.is_empty() {
            return Err(FewShotError::InvalidVerbalizer("no labels".into()));
        }
        for (i, v) in verbalizer.iter().enumerate() {
            if v.surface.is_empty() || v.surface.chars().any(char::is_whitespace) {
                return Err(FewShotError::InvalidVerbalizer(format!(
                    "{:?} must be a single word",
                    v.surface
                )));
            }
            if verbalizer[..i]
                .iter()
                .any(|w| w.surface == v.surface || w.label == v.label)
            {
                return Err(FewShotError::InvalidVerbalizer(format!("{:?} appears twice", v.label)));
            }
        }
        Ok(Self {
            system_text,
            example_pattern: "Text: {text}\nAnswer: {answer}".into(),
            query_pattern: "Text: {text}\nAnswer:".into(),
            delimiter: "\n\n".into(),
            verbalizer,
        })
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.verbalizer.iter().position(|v| v.label == label)
    }

    /// The continuations scored after a query: a space then the surface word.
    pub fn continuations(&self) -> Vec<String> {
        self.verbalizer.iter().map(|v| format!(" {}", v.surface)).collect()
    }

    fn surface(&self, label: &str) -> Result<&str, FewShotError> {
        self.label_index(label)
            .map(|i| self.verbalizer[i].surface.as_str())
            .ok_or_else(|| FewShotError::LabelNotInTemplate(label.to_string()))
    }
}

/// System text with the examples block filled in, followed by the query
/// when one is given.
pub fn render_prompt(
    template: &PromptTemplate,
    examples: &[LabeledExample],
    query: Option<&str>,
) -> Result<String, FewShotError> {
    let mut rendered = Vec::with_capacity(examples.len());
    for ex in examples {
        rendered.push(
            template
                .example_pattern
                .replace("{answer}", template.surface(&ex.label)?)
                .replacen("{text}", &ex.text, 1),
        );
    }
    let block = rendered.join(&template.delimiter);
    let mut prompt = template.system_text.replacen(EXAMPLES_PLACEHOLDER, &block, 1);
    if let Some(text) = query {
        prompt.truncate(prompt.trim_end_matches('\n').len());
        prompt.push_str(&template.delimiter);
        prompt.push_str(&template.query_pattern.replacen("{text}", text, 1));
    }
    Ok(prompt)
}

/// Splits `k_total` over `classes` by largest remainder; the fractional
/// parts are all equal, so leftover slots go to the earliest labels.
pub fn class_quotas(k_total: usize, classes: usize) -> Vec<usize> {
    let base = k_total / classes;
    let extra = k_total % classes;
    (0..classes).map(|i| base + usize::from(i < extra)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Low,
    High,
}

impl std::str::FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(SelectionMode::Low),
            "high" => Ok(SelectionMode::High),
            other => Err(format!("unknown mode {other:?} (expected low or high)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step: usize,
    pub example: LabeledExample,
    pub confidence: f64,
    pub candidates_scanned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: SelectionMode,
    pub k_total: usize,
    pub quota_rule: String,
    /// Quota per label, in label order.
    pub quotas: BTreeMap<String, usize>,
    pub class_counts: BTreeMap<String, usize>,
    pub selected: Vec<SelectionStep>,
    pub final_prompt: String,
    pub scorer: String,
    pub complete: bool,
    pub error: Option<String>,
}

impl SelectionReport {
    pub fn examples(&self) -> Vec<LabeledExample> {
        self.selected.iter().map(|s| s.example.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectOptions {
    /// Extra attempts at a greedy step after a failed query.
    pub step_retries: u32,
    pub max_in_flight: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            step_retries: 1,
            max_in_flight: MAX_IN_FLIGHT,
        }
    }
}

/// Runs `jobs` through `f` with at most `width` in flight, returning the
/// results in job order.
fn bounded_map<T: Sync, R: Send>(jobs: &[T], width: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let mut out = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(width.max(1)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|job| scope.spawn(|| f(job))).collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("scoring thread panicked")));
        });
    }
    out
}

/// Probability of `label` after `prompt`, among the template's continuations.
pub fn label_confidence(
    scorer: &dyn LabelScorer,
    template: &PromptTemplate,
    prompt: &str,
    label: &str,
) -> Result<f64, FewShotError> {
    let index = template
        .label_index(label)
        .ok_or_else(|| FewShotError::LabelNotInTemplate(label.to_string()))?;
    let probs = scorer.label_probabilities(prompt, &template.continuations())?;
    probs
        .get(index)
        .copied()
        .ok_or_else(|| ScoreError::Protocol("too few probabilities returned".into()).into())
}

/// Sends one probe query so a multi-token or unknown verbalizer fails
/// before any selection work is done.
pub fn validate_verbalizer(scorer: &dyn LabelScorer, template: &PromptTemplate) -> Result<(), FewShotError> {
    let probe = render_prompt(template, &[], Some(""))?;
    scorer.label_probabilities(&probe, &template.continuations())?;
    Ok(())
}

pub fn select_examples(
    pool: &[LabeledExample],
    scorer: &dyn LabelScorer,
    template: &PromptTemplate,
    k_total: usize,
    mode: SelectionMode,
    options: &SelectOptions,
) -> Result<SelectionReport, FewShotError> {
    if k_total == 0 {
        return Err(FewShotError::ZeroK);
    }
    if let Some(ex) = pool.iter().find(|e| template.label_index(&e.label).is_none()) {
        return Err(FewShotError::LabelNotInTemplate(ex.label.clone()));
    }
    let labels: Vec<&str> = template.verbalizer.iter().map(|v| v.label.as_str()).collect();
    let quotas = class_quotas(k_total, labels.len());
    for (label, &needed) in labels.iter().zip(&quotas) {
        let available = pool.iter().filter(|e| e.label == *label).count();
        if available < needed {
            return Err(FewShotError::ClassExhausted {
                label: label.to_string(),
                needed,
                available,
            });
        }
    }

    let mut remaining: Vec<&LabeledExample> = pool.iter().collect();
    remaining.sort_by_key(|e| e.source_index);
    let mut selected: Vec<LabeledExample> = Vec::with_capacity(k_total);
    let mut steps: Vec<SelectionStep> = Vec::with_capacity(k_total);
    let mut counts = vec![0usize; labels.len()];
    let mut error = None;
    let mut class = 0;

    while steps.len() < k_total {
        while counts[class] >= quotas[class] {
            class = (class + 1) % labels.len();
        }
        let candidates: Vec<&LabeledExample> = remaining.iter().copied().filter(|e| e.label == labels[class]).collect();
        let scan = |cand: &&LabeledExample| -> Result<f64, FewShotError> {
            let prompt = render_prompt(template, &selected, Some(&cand.text))?;
            label_confidence(scorer, template, &prompt, &cand.label)
        };
        let mut attempt = 0;
        let scored = loop {
            let results: Result<Vec<f64>, FewShotError> = bounded_map(&candidates, options.max_in_flight, scan)
                .into_iter()
                .collect();
            match results {
                Ok(confs) => break Ok(confs),
                Err(_) if attempt < options.step_retries => attempt += 1,
                Err(e) => break Err(e),
            }
        };
        let confs = match scored {
            Ok(c) => c,
            Err(e) => {
                error = Some(format!("step {}: {e}", steps.len() + 1));
                break;
            }
        };
        let best = pick(&candidates, &confs, mode);
        let chosen = candidates[best].clone();
        remaining.retain(|e| e.source_index != chosen.source_index);
        steps.push(SelectionStep {
            step: steps.len() + 1,
            example: chosen.clone(),
            confidence: confs[best],
            candidates_scanned: candidates.len(),
        });
        selected.push(chosen);
        counts[class] += 1;
        class = (class + 1) % labels.len();
    }

    Ok(SelectionReport {
        mode,
        k_total,
        quota_rule: QUOTA_RULE.into(),
        quotas: labels.iter().zip(&quotas).map(|(l, &q)| (l.to_string(), q)).collect(),
        class_counts: labels.iter().zip(&counts).map(|(l, &c)| (l.to_string(), c)).collect(),
        final_prompt: render_prompt(template, &selected, None)?,
        selected: steps,
        scorer: scorer.identity(),
        complete: error.is_none(),
        error,
    })
}

/// Index of the extremal candidate; ties go to the smaller source index.
fn pick(candidates: &[&LabeledExample], confs: &[f64], mode: SelectionMode) -> usize {
    let mut best = 0;
    for i in 1..candidates.len() {
        let ord = confs[i].total_cmp(&confs[best]);
        let better = match mode {
            SelectionMode::Low => ord.is_lt(),
            SelectionMode::High => ord.is_gt(),
        };
        if better || (ord.is_eq() && candidates[i].source_index < candidates[best].source_index) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    /// Steps whose recorded confidence differs from the recomputation.
    pub mismatches: Vec<usize>,
}

/// Recomputes every recorded confidence under its recorded prompt prefix.
pub fn audit_selection(
    report: &SelectionReport,
    scorer: &dyn LabelScorer,
    template: &PromptTemplate,
) -> Result<AuditReport, FewShotError> {
    let examples = report.examples();
    let mut mismatches = Vec::new();
    for (i, step) in report.selected.iter().enumerate() {
        let prompt = render_prompt(template, &examples[..i], Some(&step.example.text))?;
        let conf = label_confidence(scorer, template, &prompt, &step.example.label)?;
        if conf.to_bits() != step.confidence.to_bits() {
            mismatches.push(step.step);
        }
    }
    Ok(AuditReport {
        checked: report.selected.len(),
        mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source_index: usize,
    pub label: String,
    /// `None` when the item was skipped after a scorer failure.
    pub predicted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub total: usize,
    pub evaluated: usize,
    pub skipped: usize,
    pub correct: usize,
    /// `correct / evaluated`; absent if nothing could be evaluated.
    pub accuracy: Option<f64>,
    pub predictions: Vec<Prediction>,
}

impl EvaluationReport {
    pub fn summary(&self) -> String {
        match self.accuracy {
            Some(a) => format!(
                "accuracy {:.4} ({}/{} correct, {} skipped)",
                a, self.correct, self.evaluated, self.skipped
            ),
            None => format!("no items evaluated ({} skipped)", self.skipped),
        }
    }
}

/// Classifies each test item by the most probable verbalizer after the
/// prompt with `examples`; ties go to the earlier label. A failed query is
/// retried once, then the item is counted as skipped.
pub fn evaluate(
    scorer: &dyn LabelScorer,
    template: &PromptTemplate,
    examples: &[LabeledExample],
    test: &[LabeledExample],
) -> Result<EvaluationReport, FewShotError> {
    if test.is_empty() {
        return Err(FewShotError::EmptyTest);
    }
    let continuations = template.continuations();
    let predict = |item: &LabeledExample| -> Result<Option<String>, FewShotError> {
        let prompt = render_prompt(template, examples, Some(&item.text))?;
        let probs = match scorer.label_probabilities(&prompt, &continuations) {
            Ok(p) => p,
            Err(_) => match scorer.label_probabilities(&prompt, &continuations) {
                Ok(p) => p,
                Err(_) => return Ok(None),
            },
        };
        let best = probs
            .iter()
            .enumerate()
            .fold(0, |b, (i, p)| if p.total_cmp(&probs[b]).is_gt() { i } else { b });
        Ok(Some(template.verbalizer[best].label.clone()))
    };
    let outcomes = bounded_map(test, MAX_IN_FLIGHT, predict);
    let mut predictions = Vec::with_capacity(test.len());
    let (mut correct, mut skipped) = (0, 0);
    for (item, outcome) in test.iter().zip(outcomes) {
        let predicted = outcome?;
        match &predicted {
            Some(p) if *p == item.label => correct += 1,
            Some(_) => {}
            None => skipped += 1,
        }
        predictions.push(Prediction {
            source_index: item.source_index,
            label: item.label.clone(),
            predicted,
        });
    }
    let evaluated = test.len() - skipped;
    Ok(EvaluationReport {
        total: test.len(),
        evaluated,
        skipped,
        correct,
        accuracy: (evaluated > 0).then(|| correct as f64 / evaluated as f64),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn ex(text: &str, label: &str, i: usize) -> LabeledExample {
        LabeledExample {
            text: text.into(),
            label: label.into(),
            source_index: i,
        }
    }

    /// Confidence = a fixed per-text value, independent of the prompt.
    struct ByText(Vec<(&'static str, f64)>);

    impl LabelScorer for ByText {
        fn label_probabilities(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, ScoreError> {
            let query = prompt.rsplit("Text: ").next().unwrap();
            let text = query.trim_end_matches("\nAnswer:");
            let c = self.0.iter().find(|(t, _)| *t == text).map_or(0.5, |(_, c)| *c);
            // Every label gets `c`; only the true label's value is read.
            Ok(vec![c; candidates.len()])
        }

        fn identity(&self) -> String {
            "by-text".into()
        }
    }

    /// Always fails.
    struct Broken;

    impl LabelScorer for Broken {
        fn label_probabilities(&self, _: &str, _: &[String]) -> Result<Vec<f64>, ScoreError> {
            Err(ScoreError::Transport("connection refused".into()))
        }

        fn identity(&self) -> String {
            "broken".into()
        }
    }

    #[test]
    fn shipped_templates() {
        for f in [TaskFormat::SmsTsv, TaskFormat::EmotionRows, TaskFormat::AgnewsRows] {
            let t = f.template();
            assert!(t.system_text.contains(EXAMPLES_PLACEHOLDER));
            assert_eq!(t.verbalizer.len(), f.labels().len());
        }
        assert!(SMS_TEMPLATE.starts_with("Classify the following SMS message as either spam or ham. \n"));
        assert_eq!(TaskFormat::AgnewsRows.verbalizer()[3].surface, "Sci");
    }

    #[test]
    fn render_examples() {
        let t = TaskFormat::SmsTsv.template();
        let empty = render_prompt(&t, &[], None).unwrap();
        assert!(empty.ends_with("Examples:\n\n"));
        let two = [ex("Free prize", "spam", 0), ex("See you at 5", "ham", 1)];
        let p = render_prompt(&t, &two, Some("Call now")).unwrap();
        assert!(p.ends_with(
            "Examples:\nText: Free prize\nAnswer: spam\n\nText: See you at 5\nAnswer: ham\n\nText: Call now\nAnswer:"
        ));
        assert_eq!(p, render_prompt(&t, &two, Some("Call now")).unwrap());
        assert_eq!(
            PromptTemplate::new("no placeholder", TaskFormat::SmsTsv.verbalizer()),
            Err(FewShotError::MissingPlaceholder)
        );
    }

    #[test]
    fn quotas() {
        assert_eq!(class_quotas(10, 2), vec![5, 5]);
        assert_eq!(class_quotas(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(class_quotas(10, 6), vec![2, 2, 2, 2, 1, 1]);
        assert_eq!(class_quotas(1, 3), vec![1, 0, 0]);
    }

    #[test]
    fn low_mode_takes_the_least_confident() {
        let pool = vec![
            ex("a", "ham", 0),
            ex("b", "ham", 1),
            ex("c", "spam", 2),
            ex("d", "spam", 3),
        ];
        let scorer = ByText(vec![("a", 0.9), ("b", 1e-9), ("c", 0.4), ("d", 0.4)]);
        let t = TaskFormat::SmsTsv.template();
        let low = select_examples(&pool, &scorer, &t, 2, SelectionMode::Low, &SelectOptions::default()).unwrap();
        let picked: Vec<usize> = low.selected.iter().map(|s| s.example.source_index).collect();
        // Tie between c and d goes to the smaller index.
        assert_eq!(picked, vec![1, 2]);
        let high = select_examples(&pool, &scorer, &t, 2, SelectionMode::High, &SelectOptions::default()).unwrap();
        let picked: Vec<usize> = high.selected.iter().map(|s| s.example.source_index).collect();
        assert_eq!(picked, vec![0, 2]);
        assert_eq!(low.class_counts, high.class_counts);
        let audit = audit_selection(&low, &scorer, &t).unwrap();
        assert_eq!(audit.checked, 2);
        assert!(audit.mismatches.is_empty());
    }

    #[test]
    fn class_exhaustion() {
        let pool = vec![ex("a", "ham", 0), ex("b", "ham", 1)];
        let err = select_examples(
            &pool,
            &ByText(vec![]),
            &TaskFormat::SmsTsv.template(),
            2,
            SelectionMode::Low,
            &SelectOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, FewShotError::ClassExhausted { .. }));
    }

    #[test]
    fn failures_abort_with_a_partial_report() {
        let pool = vec![ex("a", "ham", 0), ex("c", "spam", 1)];
        let r = select_examples(
            &pool,
            &Broken,
            &TaskFormat::SmsTsv.template(),
            2,
            SelectionMode::Low,
            &SelectOptions::default(),
        )
        .unwrap();
        assert!(!r.complete);
        assert!(r.selected.is_empty());
        assert!(r.error.unwrap().contains("connection refused"));

        let e = evaluate(&Broken, &TaskFormat::SmsTsv.template(), &[], &pool).unwrap();
        assert_eq!((e.skipped, e.evaluated, e.accuracy), (2, 0, None));
    }

    #[test]
    fn oracle_and_adversary_accuracy() {
        struct Fixed(usize);
        impl LabelScorer for Fixed {
            fn label_probabilities(&self, prompt: &str, c: &[String]) -> Result<Vec<f64>, ScoreError> {
                // Test texts encode their label index.
                let digit = prompt.trim_end_matches("\nAnswer:").chars().last().unwrap();
                let truth = digit.to_digit(10).unwrap() as usize;
                let hot = (truth + self.0) % c.len();
                Ok((0..c.len()).map(|i| if i == hot { 1.0 } else { 1e-6 }).collect())
            }
            fn identity(&self) -> String {
                "fixed".into()
            }
        }
        let t = TaskFormat::EmotionRows.template();
        let test: Vec<LabeledExample> = (0..12)
            .map(|i| ex(&format!("item {}", i % 6), TaskFormat::EmotionRows.labels()[i % 6], i))
            .collect();
        assert_eq!(evaluate(&Fixed(0), &t, &[], &test).unwrap().accuracy, Some(1.0));
        assert_eq!(evaluate(&Fixed(1), &t, &[], &test).unwrap().accuracy, Some(0.0));
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn dataset_formats() {
        let dir = tempfile::tempdir().unwrap();
        let sms = write(dir.path(), "sms.tsv", "ham\tOk lar...\nspam\tWIN now\n\nham\tsure\n");
        let d = load_dataset(
            &sms,
            TaskFormat::SmsTsv,
            &LoadOptions {
                test_fraction: 0.0,
                ..LoadOptions::default()
            },
        )
        .unwrap();
        assert_eq!(d.pool[0], ex("Ok lar...", "ham", 0));
        assert_eq!(d.pool.len(), 3);

        let ag = write(
            dir.path(),
            "ag.csv",
            "Class Index,Title,Description\n3,\"Stocks, bonds\",Up today\n1,War,Ended\n",
        );
        let rows = parse_file(&ag, TaskFormat::AgnewsRows).unwrap();
        assert_eq!(rows[0], ("Stocks, bonds Up today".to_string(), "Business".to_string()));

        let emo = write(dir.path(), "emo.csv", "text,label\ni am happy,1\nso sad,0\n");
        let rows = parse_file(&emo, TaskFormat::EmotionRows).unwrap();
        assert_eq!(rows[1], ("so sad".to_string(), "sadness".to_string()));

        let bad = write(dir.path(), "bad.csv", "i am happy,1\nhmm,9\n");
        assert_eq!(
            parse_file(&bad, TaskFormat::EmotionRows),
            Err(FewShotError::UnknownLabel {
                line: 2,
                label: "9".into()
            })
        );
        let bad = write(dir.path(), "bad.tsv", "ham\tfine\nno tab here\n");
        assert!(matches!(
            parse_file(&bad, TaskFormat::SmsTsv),
            Err(FewShotError::Malformed { line: 2, .. })
        ));
        let empty = write(dir.path(), "empty.tsv", "");
        assert_eq!(
            load_dataset(&empty, TaskFormat::SmsTsv, &LoadOptions::default()),
            Err(FewShotError::EmptyPool)
        );
    }

    #[test]
    fn split_and_caps_are_seeded_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (0..100)
            .map(|i| format!("{}\tmsg {i}\n", if i % 3 == 0 { "spam" } else { "ham" }))
            .collect();
        let path = write(dir.path(), "all.tsv", &body);
        let opts = LoadOptions {
            pool_cap_per_class: 10,
            test_cap: 5,
            ..LoadOptions::default()
        };
        let a = load_dataset(&path, TaskFormat::SmsTsv, &opts).unwrap();
        assert_eq!(a, load_dataset(&path, TaskFormat::SmsTsv, &opts).unwrap());
        assert_eq!(a.pool.len(), 20);
        assert_eq!(a.test.len(), 5);
        let num = |e: &LabeledExample| e.text[4..].parse::<usize>().unwrap();
        assert!(a.pool.windows(2).all(|w| num(&w[0]) < num(&w[1])));
        assert!(a.test.iter().all(|t| !a.pool.iter().any(|p| p.text == t.text)));

        let split = tempfile::tempdir().unwrap();
        write(split.path(), "train.tsv", "ham\ta\nspam\tb\n");
        write(split.path(), "test.tsv", "spam\tc\n");
        let d = load_dataset(split.path(), TaskFormat::SmsTsv, &opts).unwrap();
        assert_eq!((d.pool.len(), d.test.len()), (2, 1));
    }
}
