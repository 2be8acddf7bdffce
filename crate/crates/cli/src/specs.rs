//! Model and scorer specifications accepted by `--model`.

use std::path::Path;
use std::sync::Arc;

use ait_core::model::remote::{Protocol, RemoteClient, RemoteConfig, TOKEN_ENV};
use ait_core::model::{InContextScorer, LabelScorer, ModelId};
use ait_core::{Alphabet, NGramModel, SequenceModel, TokenSequence, UniformModel};

use crate::config::{fail, Kind, OrKind};

/// Smoothing for the in-context scorer. Prompts are short relative to the
/// 256-symbol byte alphabet, so add-½ would drown the observed counts.
pub const ICL_ALPHA: f64 = 0.01;

/// `bytes` or an explicit symbol list such as `01`.
pub fn parse_alphabet(spec: &str) -> anyhow::Result<Alphabet> {
    if spec == "bytes" {
        Ok(Alphabet::bytes())
    } else {
        Alphabet::from_chars(spec).or_kind(Kind::Config)
    }
}

/// `uniform:bytes`, `uniform:<symbols>` or the path of a trained model file.
pub fn load_model(spec: &str) -> anyhow::Result<Box<dyn SequenceModel>> {
    if let Some(symbols) = spec.strip_prefix("uniform:") {
        return Ok(Box::new(UniformModel::new(Arc::new(parse_alphabet(symbols)?))));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(fail(
            Kind::Config,
            format!("model {spec:?} is neither uniform:<alphabet> nor an existing model file"),
        ));
    }
    let model = NGramModel::load(path).map_err(|e| fail(Kind::Config, format!("{spec}: {e}")))?;
    Ok(Box::new(model))
}

fn is_bytes(alphabet: &Alphabet) -> bool {
    *alphabet == Alphabet::bytes()
}

/// Byte alphabets take the raw bytes; other alphabets take the UTF-8 text
/// with one trailing line break removed.
pub fn tokenize(alphabet: &Arc<Alphabet>, data: &[u8]) -> anyhow::Result<TokenSequence> {
    if is_bytes(alphabet) {
        return TokenSequence::from_bytes(Arc::clone(alphabet), data).or_kind(Kind::Input);
    }
    let text = std::str::from_utf8(data).or_kind(Kind::Input)?;
    let text = text
        .strip_suffix('\n')
        .map_or(text, |t| t.strip_suffix('\r').unwrap_or(t));
    TokenSequence::from_text(Arc::clone(alphabet), text).or_kind(Kind::Input)
}

pub fn detokenize(seq: &TokenSequence) -> anyhow::Result<Vec<u8>> {
    if is_bytes(seq.alphabet()) {
        seq.to_bytes().or_kind(Kind::Other)
    } else {
        Ok(seq.to_text().into_bytes())
    }
}

pub struct Scorer {
    pub scorer: Box<dyn LabelScorer>,
    pub id: ModelId,
}

/// `icl-ngram:<order>[:<alpha>]` or `remote:<model id>`.
pub fn build_scorer(spec: &str, endpoint: Option<&str>, protocol: Protocol) -> anyhow::Result<Scorer> {
    let scorer: Box<dyn LabelScorer> = if let Some(rest) = spec.strip_prefix("icl-ngram:") {
        let (order, alpha) = match rest.split_once(':') {
            Some((o, a)) => (o, a.parse::<f64>().or_kind(Kind::Config)?),
            None => (rest, ICL_ALPHA),
        };
        let order = order
            .parse::<usize>()
            .map_err(|e| fail(Kind::Config, format!("icl-ngram order {order:?}: {e}")))?;
        Box::new(InContextScorer::new(order, alpha).or_kind(Kind::Config)?)
    } else if let Some(id) = spec.strip_prefix("remote:") {
        let endpoint = endpoint.ok_or_else(|| fail(Kind::Config, "a remote model needs --endpoint"))?;
        let mut config = RemoteConfig::new(endpoint, id);
        config.protocol = protocol;
        config.auth_token = std::env::var(TOKEN_ENV).ok();
        Box::new(RemoteClient::new(config).or_kind(Kind::Config)?)
    } else {
        return Err(fail(
            Kind::Config,
            format!("scorer {spec:?} is neither icl-ngram:<order> nor remote:<model id>"),
        ));
    };
    let id = ModelId::of_bytes(scorer.identity().as_bytes());
    Ok(Scorer { scorer, id })
}

pub fn parse_protocol(raw: &str) -> Result<Protocol, String> {
    match raw {
        "native" => Ok(Protocol::Native),
        "completions" => Ok(Protocol::Completions),
        other => Err(format!("unknown protocol {other:?} (expected native or completions)")),
    }
}
