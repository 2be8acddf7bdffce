use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ait_core::codec::{compress_with_stats, decompress, CompressedPayload};
use ait_core::convergence::{cumulative_error, default_grid, ComputableSource, Predictor};
use ait_core::fewshot::{
    audit_selection, evaluate, load_dataset, select_examples, validate_verbalizer, FewShotError, LabeledExample,
    LoadOptions, PromptTemplate, SelectOptions, SelectionMode, SelectionReport, TaskFormat, DEFAULT_K_TOTAL,
};
use ait_core::model::remote::Protocol;
use ait_core::model::{generate, sequence_log_loss, ScoreError, DEFAULT_ALPHA};
use ait_core::solomonoff::{
    conditional_prior, log_prior, program_length, semimeasure_mass, verify_theorem2, PriorMode,
};
use ait_core::{analytic_code_length, NGramModel, SequenceModel, TokenSequence};
use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{fail, parse_with, FileConfig, Kind, OrKind, Resolver};
use crate::specs::{build_scorer, detokenize, load_model, parse_alphabet, parse_protocol, tokenize, Scorer};

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub version: &'static str,
    pub config: BTreeMap<String, Value>,
    pub model_id: Option<String>,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u128>,
}

/// What a command produced.
pub struct Outcome {
    pub report: Report,
    /// Where to write a copy of the report, if anywhere.
    pub report_path: Option<PathBuf>,
    /// Set when the command ran but its post-condition does not hold.
    pub violation: Option<String>,
}

struct Run {
    command: &'static str,
    resolver: Resolver,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            resolver: Resolver::new(),
        }
    }

    fn finish(self, model_id: Option<String>, result: Value) -> Report {
        Report {
            command: self.command,
            version: ait_core::VERSION,
            config: self.resolver.finish(),
            model_id,
            result,
            duration_ms: None,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report values serialize")
}

fn read_input(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).map_err(|e| fail(Kind::Input, format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).map_err(|e| fail(Kind::Other, format!("{}: {e}", path.display())))
}

fn score_kind(e: &ScoreError) -> Kind {
    match e {
        ScoreError::MultiTokenLabel { .. } | ScoreError::UnknownLabel(_) | ScoreError::Config(_) => Kind::Config,
        ScoreError::Transport(_) | ScoreError::Protocol(_) | ScoreError::ContextOverflow(_) => Kind::Remote,
    }
}

fn fewshot_error(e: FewShotError) -> anyhow::Error {
    let kind = match &e {
        FewShotError::Score(s) => score_kind(s),
        FewShotError::Io { .. }
        | FewShotError::Malformed { .. }
        | FewShotError::UnknownLabel { .. }
        | FewShotError::EmptyPool
        | FewShotError::EmptyTest
        | FewShotError::ClassExhausted { .. }
        | FewShotError::LabelNotInTemplate(_) => Kind::Input,
        FewShotError::MissingPlaceholder | FewShotError::InvalidVerbalizer(_) | FewShotError::ZeroK => Kind::Config,
    };
    fail(kind, e.to_string())
}

// ---------------------------------------------------------------- codec

#[derive(Debug, Args)]
pub struct CompressArgs {
    /// uniform:bytes, uniform:<symbols> or a trained .aitm file.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Container to write (default: <input>.aitc).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed recorded in the program.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn compress(args: &CompressArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("compress");
    let r = &mut run.resolver;
    let model_spec = r.required("model", args.model.clone(), file.model.clone())?;
    let input = r.required("input", args.input.clone(), file.input.clone())?;
    let out = r.with_default("out", args.out.clone(), file.out.clone(), input.with_extension("aitc"));
    let seed = r.with_default("seed", args.seed, file.seed, 1);
    if seed == 0 {
        return Err(fail(Kind::Config, "seed must be at least 1"));
    }

    let model = load_model(&model_spec)?;
    let x = tokenize(model.alphabet(), &read_input(&input)?)?;
    let (payload, stats) = compress_with_stats(model.as_ref(), &x).or_kind(Kind::Input)?;
    let analytic = analytic_code_length(model.as_ref(), &x).or_kind(Kind::Input)?;
    let container = payload.to_container(seed).or_kind(Kind::Other)?;
    let program_bits = payload.to_program(seed).or_kind(Kind::Other)?.total_len();
    write_output(&out, &container)?;

    let lossless = decompress(model.as_ref(), &payload).map(|y| y == x).unwrap_or(false);
    let result = json!({
        "tokens": x.len(),
        "measured_bits": payload.bits.len(),
        "analytic_bits": analytic,
        "quantized_ideal_bits": stats.quantized_ideal_bits,
        "program_bits": program_bits,
        "container_bytes": container.len(),
        "roundtrip_verified": lossless,
    });
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), result),
        report_path: None,
        violation: (!lossless).then(|| "decoding the payload did not reproduce the input".to_string()),
    })
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    model: Option<String>,
    /// A .aitc container.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn decompress_cmd(args: &DecompressArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("decompress");
    let r = &mut run.resolver;
    let model_spec = r.required("model", args.model.clone(), file.model.clone())?;
    let input = r.required("input", args.input.clone(), file.input.clone())?;
    let out = r.required("out", args.out.clone(), file.out.clone())?;

    let model = load_model(&model_spec)?;
    let (payload, seed) = CompressedPayload::from_container(&read_input(&input)?).or_kind(Kind::Input)?;
    let x = decompress(model.as_ref(), &payload).or_kind(Kind::Input)?;
    let bytes = detokenize(&x)?;
    write_output(&out, &bytes)?;
    let result = json!({
        "tokens": x.len(),
        "measured_bits": payload.bits.len(),
        "seed": seed,
        "output_bytes": bytes.len(),
    });
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), result),
        report_path: None,
        violation: None,
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `bytes` or the symbols of the alphabet, e.g. `01`.
    #[arg(long)]
    alphabet: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Model file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train(args: &TrainArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("train");
    let r = &mut run.resolver;
    let input = r.required("input", args.input.clone(), file.input.clone())?;
    let alphabet = r.with_default("alphabet", args.alphabet.clone(), file.alphabet.clone(), "bytes".into());
    let order = r.with_default("order", args.order, file.order, 3);
    let alpha = r.with_default("alpha", args.alpha, file.alpha, DEFAULT_ALPHA);
    let out = r.required("out", args.out.clone(), file.out.clone())?;

    let alphabet = Arc::new(parse_alphabet(&alphabet)?);
    let corpus = tokenize(&alphabet, &read_input(&input)?)?;
    let mut model = NGramModel::new(alphabet, order, alpha).or_kind(Kind::Config)?;
    model.train_on(&corpus).or_kind(Kind::Input)?;
    model.save(&out).or_kind(Kind::Other)?;
    let loss = if corpus.is_empty() {
        Value::Null
    } else {
        json!(sequence_log_loss(&model, &corpus).or_kind(Kind::Input)?)
    };
    let result = json!({"tokens": corpus.len(), "order": order, "alpha": alpha, "training_log_loss_bits": loss});
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), result),
        report_path: None,
        violation: None,
    })
}

// ---------------------------------------------------------------- prior

#[derive(Debug, Args)]
pub struct SequenceArgs {
    #[arg(long)]
    model: Option<String>,
    /// File holding the sequence.
    #[arg(long, conflicts_with = "text")]
    input: Option<PathBuf>,
    /// The sequence itself.
    #[arg(long)]
    text: Option<String>,
    /// Seed used for the program length.
    #[arg(long)]
    seed: Option<u64>,
    /// Report copy.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct SequenceSetup {
    model: Box<dyn SequenceModel>,
    x: TokenSequence,
    seed: u64,
    out: Option<PathBuf>,
}

fn sequence_setup(run: &mut Run, args: &SequenceArgs, file: &FileConfig) -> anyhow::Result<SequenceSetup> {
    let r = &mut run.resolver;
    let model_spec = r.required("model", args.model.clone(), file.model.clone())?;
    let input = r.value("input", args.input.clone(), file.input.clone(), None);
    let text = r.value("text", args.text.clone(), file.text.clone(), None);
    let seed = r.with_default("seed", args.seed, file.seed, 1);
    let out = r.value("out", args.out.clone(), file.out.clone(), None);
    let model = load_model(&model_spec)?;
    let data = match (input, text) {
        (Some(path), None) => read_input(&path)?,
        (None, Some(text)) => text.into_bytes(),
        _ => return Err(fail(Kind::Config, "give exactly one of --input and --text")),
    };
    let x = tokenize(model.alphabet(), &data)?;
    if x.is_empty() {
        return Err(fail(Kind::Input, "the sequence is empty"));
    }
    Ok(SequenceSetup { model, x, seed, out })
}

pub fn prior(args: &SequenceArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("prior");
    let SequenceSetup { model, x, seed, out } = sequence_setup(&mut run, args, file)?;
    let mut priors = BTreeMap::new();
    for mode in PriorMode::ALL {
        priors.insert(
            mode.name(),
            to_value(&log_prior(&x, model.as_ref(), mode).or_kind(Kind::Input)?),
        );
    }
    let result = json!({
        "tokens": x.len(),
        "analytic_bits": analytic_code_length(model.as_ref(), &x).or_kind(Kind::Input)?,
        "program_bits": program_length(&x, seed, model.as_ref()).or_kind(Kind::Config)?,
        "log_prior": priors,
    });
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), result),
        report_path: out,
        violation: None,
    })
}

pub fn predict(args: &SequenceArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("predict");
    let SequenceSetup { model, x, out, .. } = sequence_setup(&mut run, args, file)?;
    let t = x.len();
    let symbols: Vec<String> = model.alphabet().symbols().iter().map(|c| c.to_string()).collect();
    let mut modes = BTreeMap::new();
    let mut normalized = Vec::new();
    for mode in PriorMode::ALL {
        let c = conditional_prior(&x, model.as_ref(), mode).or_kind(Kind::Input)?;
        let deviations = c.deviations(t);
        normalized.push(c.normalized.clone());
        let mut row = to_value(&c);
        row["theorem2_deviation"] = to_value(&deviations);
        modes.insert(mode.name(), row);
    }
    let gap = normalized[0]
        .iter()
        .zip(&normalized[1])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let result = json!({
        "tokens": t,
        "symbols": symbols,
        "modes": modes,
        "normalized_mode_gap": gap,
    });
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), result),
        report_path: out,
        violation: None,
    })
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    model: Option<String>,
    /// Sequence lengths to check, comma-separated.
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<usize>>,
    /// Number of test sequences sampled from the model.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// exact or paper-approx.
    #[arg(long)]
    prior_mode: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn verify(args: &VerifyArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("verify-theorem2");
    let r = &mut run.resolver;
    let model_spec = r.required("model", args.model.clone(), file.model.clone())?;
    let t_grid = r.with_default("t_grid", args.t_grid.clone(), file.t_grid.clone(), vec![10, 100, 1000]);
    let samples = r.with_default("samples", args.samples, file.samples, 20);
    let seed = r.with_default("seed", args.seed, file.seed, 1);
    let mode = r.with_default(
        "prior_mode",
        args.prior_mode.clone(),
        file.prior_mode.clone(),
        "paper-approx".into(),
    );
    let out = r.value("out", args.out.clone(), file.out.clone(), None);
    let mode: PriorMode = parse_with(Kind::Config, "prior_mode", &mode, str::parse)?;
    if samples == 0 || seed == 0 {
        return Err(fail(Kind::Config, "samples and seed must be at least 1"));
    }

    let model = load_model(&model_spec)?;
    let t_max = t_grid.iter().copied().max().unwrap_or(0);
    let empty = TokenSequence::empty(Arc::clone(model.alphabet()));
    let sequences = (0..samples as u64)
        .map(|i| generate(model.as_ref(), &empty, seed + i, t_max))
        .collect::<Result<Vec<_>, _>>()
        .or_kind(Kind::Config)?;
    let report = verify_theorem2(model.as_ref(), &sequences, &t_grid, mode).or_kind(Kind::Config)?;
    let violation = (!report.pass).then(|| "deviation exceeds tolerance or is not decreasing in t".to_string());
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), to_value(&report)),
        report_path: out,
        violation,
    })
}

#[derive(Debug, Args)]
pub struct SemimeasureArgs {
    #[arg(long)]
    model: Option<String>,
    /// Enumerate all lengths 1..=max.
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn semimeasure(args: &SemimeasureArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("semimeasure");
    let r = &mut run.resolver;
    let model_spec = r.required("model", args.model.clone(), file.model.clone())?;
    let max_length = r.with_default("max_length", args.max_length, file.max_length, 8);
    let out = r.value("out", args.out.clone(), file.out.clone(), None);
    let model = load_model(&model_spec)?;
    let rows = (1..=max_length)
        .map(|l| semimeasure_mass(l, model.as_ref()))
        .collect::<Result<Vec<_>, _>>()
        .or_kind(Kind::Config)?;
    let pass = rows.iter().all(|r| r.pass);
    let result = json!({"lengths": rows, "pass": pass});
    Ok(Outcome {
        report: run.finish(Some(model.model_id().to_hex()), result),
        report_path: out,
        violation: (!pass).then(|| "total mass exceeds 1".to_string()),
    })
}

// ---------------------------------------------------------------- convergence

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    /// bernoulli:<p> or markov:<row>;<row>...[@<initial>]
    #[arg(long)]
    source: Option<String>,
    /// kt, oracle or ngram:<order>[:<alpha>]
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn converge(args: &ConvergeArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("converge");
    let r = &mut run.resolver;
    let source = r.with_default(
        "source",
        args.source.clone(),
        file.source.clone(),
        "bernoulli:0.7".into(),
    );
    let predictor = r.with_default("predictor", args.predictor.clone(), file.predictor.clone(), "kt".into());
    let t_grid = r.with_default("t_grid", args.t_grid.clone(), file.t_grid.clone(), default_grid(10_000));
    let trials = r.with_default("trials", args.trials, file.trials, 200);
    let seed = r.with_default("seed", args.seed, file.seed, 1);
    let out = r.value("out", args.out.clone(), file.out.clone(), None);

    let source = ComputableSource::parse(&source).or_kind(Kind::Config)?;
    let predictor = parse_with(Kind::Config, "predictor", &predictor, Predictor::parse)?;
    let series = cumulative_error(&source, predictor, &t_grid, trials, seed).or_kind(Kind::Config)?;
    if let Some(path) = &out {
        write_output(path, series.to_csv().as_bytes())?;
    }
    let mut result = to_value(&series);
    result["growth_ratio"] = to_value(&series.growth_ratio());
    let monotone = series.cumulative_mean.windows(2).all(|w| w[0] <= w[1]);
    Ok(Outcome {
        report: run.finish(None, result),
        report_path: None,
        violation: (!monotone).then(|| "cumulative error decreased along the grid".to_string()),
    })
}

// ---------------------------------------------------------------- few-shot

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// icl-ngram:<order>[:<alpha>] or remote:<model id>.
    #[arg(long)]
    model: Option<String>,
    /// Remote scoring URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// native or completions.
    #[arg(long)]
    protocol: Option<String>,
    /// A data file (split with --seed) or a directory with train.* and test.*.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// sms-tsv, emotion-rows or agnews-rows.
    #[arg(long)]
    format: Option<String>,
    /// System prompt file with an {examples} placeholder.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Seed for splitting and subsampling the dataset.
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate pool size per class.
    #[arg(long)]
    pool_cap: Option<usize>,
    /// Largest number of test items kept.
    #[arg(long)]
    test_cap: Option<usize>,
    /// Share held out when splitting a single file.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Report copy.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct FewShotSetup {
    scorer: Scorer,
    template: PromptTemplate,
    pool: Vec<LabeledExample>,
    test: Vec<LabeledExample>,
    out: Option<PathBuf>,
}

fn fewshot_setup(r: &mut Resolver, args: &ScorerArgs, file: &FileConfig) -> anyhow::Result<FewShotSetup> {
    let model = r.required("model", args.model.clone(), file.model.clone())?;
    let endpoint = r.value("endpoint", args.endpoint.clone(), file.endpoint.clone(), None);
    let protocol = r.with_default(
        "protocol",
        args.protocol.clone(),
        file.protocol.clone(),
        "native".into(),
    );
    let dataset = r.required("dataset", args.dataset.clone(), file.dataset.clone())?;
    let format = r.required("format", args.format.clone(), file.format.clone())?;
    let template_path = r.value("template", args.template.clone(), file.template.clone(), None);
    let defaults = LoadOptions::default();
    let options = LoadOptions {
        seed: r.with_default("seed", args.seed, file.seed, defaults.seed),
        pool_cap_per_class: r.with_default("pool_cap", args.pool_cap, file.pool_cap, defaults.pool_cap_per_class),
        test_cap: r.with_default("test_cap", args.test_cap, file.test_cap, defaults.test_cap),
        test_fraction: r.with_default(
            "test_fraction",
            args.test_fraction,
            file.test_fraction,
            defaults.test_fraction,
        ),
    };
    let out = r.value("out", args.out.clone(), file.out.clone(), None);

    let format: TaskFormat = parse_with(Kind::Config, "format", &format, str::parse)?;
    let protocol: Protocol = parse_with(Kind::Config, "protocol", &protocol, parse_protocol)?;
    let template = match template_path {
        Some(path) => {
            let text = fs::read_to_string(&path).map_err(|e| fail(Kind::Config, format!("{}: {e}", path.display())))?;
            PromptTemplate::new(text, format.verbalizer()).map_err(fewshot_error)?
        }
        None => format.template(),
    };
    r.note("verbalizer", &template.verbalizer);
    let scorer = build_scorer(&model, endpoint.as_deref(), protocol)?;
    let data = load_dataset(&dataset, format, &options).map_err(fewshot_error)?;
    validate_verbalizer(scorer.scorer.as_ref(), &template).map_err(fewshot_error)?;
    Ok(FewShotSetup {
        scorer,
        template,
        pool: data.pool,
        test: data.test,
        out,
    })
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    common: ScorerArgs,
    /// low or high confidence.
    #[arg(long)]
    mode: Option<String>,
    /// Total number of examples, split across classes.
    #[arg(long)]
    k_total: Option<usize>,
    /// Also score the held-out test set with the selected examples.
    #[arg(long)]
    evaluate: bool,
    /// Recompute every recorded confidence after selection.
    #[arg(long)]
    audit: bool,
}

pub fn select(args: &SelectArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("select");
    let r = &mut run.resolver;
    let mode = r.with_default("mode", args.mode.clone(), file.mode.clone(), "low".into());
    let k_total = r.with_default("k_total", args.k_total, file.k_total, DEFAULT_K_TOTAL);
    r.note("evaluate", args.evaluate);
    r.note("audit", args.audit);
    let mode: SelectionMode = parse_with(Kind::Config, "mode", &mode, str::parse)?;
    let setup = fewshot_setup(r, &args.common, file)?;
    let scorer = setup.scorer.scorer.as_ref();

    let report: SelectionReport = select_examples(
        &setup.pool,
        scorer,
        &setup.template,
        k_total,
        mode,
        &SelectOptions::default(),
    )
    .map_err(fewshot_error)?;
    let mut violation = report.error.clone();
    let mut result = json!({"selection": report, "pool_size": setup.pool.len()});
    if args.audit && report.complete {
        let audit = audit_selection(&report, scorer, &setup.template).map_err(fewshot_error)?;
        if !audit.mismatches.is_empty() {
            violation = Some(format!("confidences at steps {:?} did not reproduce", audit.mismatches));
        }
        result["audit"] = to_value(&audit);
    }
    if args.evaluate && report.complete {
        let eval = evaluate(scorer, &setup.template, &report.examples(), &setup.test).map_err(fewshot_error)?;
        eprintln!("ait: {}", eval.summary());
        result["evaluation"] = to_value(&eval);
    }
    Ok(Outcome {
        report: run.finish(Some(setup.scorer.id.to_hex()), result),
        report_path: setup.out,
        violation,
    })
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: ScorerArgs,
    /// Report from `ait select` whose examples are used (zero-shot if absent).
    #[arg(long)]
    examples: Option<PathBuf>,
}

pub fn evaluate_cmd(args: &EvaluateArgs, file: &FileConfig) -> anyhow::Result<Outcome> {
    let mut run = Run::new("evaluate");
    let r = &mut run.resolver;
    let examples_path = r.value("examples", args.examples.clone(), file.examples.clone(), None);
    let setup = fewshot_setup(r, &args.common, file)?;
    let examples = match &examples_path {
        Some(path) => read_selected(path)?,
        None => Vec::new(),
    };
    let eval =
        evaluate(setup.scorer.scorer.as_ref(), &setup.template, &examples, &setup.test).map_err(fewshot_error)?;
    eprintln!("ait: {}", eval.summary());
    let result = json!({"examples": examples, "evaluation": eval});
    Ok(Outcome {
        report: run.finish(Some(setup.scorer.id.to_hex()), result),
        report_path: setup.out,
        violation: None,
    })
}

fn read_selected(path: &Path) -> anyhow::Result<Vec<LabeledExample>> {
    let text = fs::read_to_string(path).map_err(|e| fail(Kind::Input, format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).or_kind(Kind::Input)?;
    let selection = value
        .pointer("/result/selection")
        .ok_or_else(|| fail(Kind::Input, format!("{} is not a selection report", path.display())))?;
    let report: SelectionReport = serde_json::from_value(selection.clone()).or_kind(Kind::Input)?;
    Ok(report.examples())
}
