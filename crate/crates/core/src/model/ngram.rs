use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{Alphabet, Distribution, ModelError, ModelId, SequenceModel, TokenSequence};

/// Krichevsky–Trofimov add-½ smoothing.
pub const DEFAULT_ALPHA: f64 = 0.5;

pub const MODEL_MAGIC: &[u8; 4] = b"AITM";
const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
struct Counts {
    by_symbol: Vec<u64>,
    total: u64,
}

/// Add-α smoothed n-gram model.
///
/// `tables[j]` counts `(x[i-j..i], x[i])` for every position `i ≥ j`, so the
/// order-0 table sees every token and the order-k table only full contexts.
/// A context shorter than `order` (sequence start) is looked up in the table
/// of its own length; a context never seen falls back to order 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    alphabet: Arc<Alphabet>,
    order: usize,
    alpha: f64,
    tables: Vec<HashMap<Vec<usize>, Counts>>,
}

impl NGramModel {
    pub fn new(alphabet: Arc<Alphabet>, order: usize, alpha: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(ModelError::InvalidSmoothing(alpha));
        }
        Ok(Self {
            alphabet,
            order,
            alpha,
            tables: vec![HashMap::new(); order + 1],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Occurrences of `symbol` right after `context`, from the table of
    /// `context.len()` (which must not exceed the order).
    pub fn count(&self, context: &[usize], symbol: usize) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .map_or(0, |c| c.by_symbol[symbol])
    }

    /// Adds every position of `seq` to the count tables.
    pub fn train_on(&mut self, seq: &TokenSequence) -> Result<(), ModelError> {
        super::check_alphabet(&self.alphabet, seq)?;
        let tokens = seq.tokens();
        for i in 0..tokens.len() {
            self.observe(&tokens[..i], tokens[i]);
        }
        Ok(())
    }

    /// Counts one `(history, symbol)` event; `history` is everything before
    /// the symbol, of which at most `order` trailing tokens are used.
    pub fn observe(&mut self, history: &[usize], symbol: usize) {
        let size = self.alphabet.size();
        assert!(symbol < size, "symbol index out of range");
        let longest = self.order.min(history.len());
        for j in 0..=longest {
            let ctx = &history[history.len() - j..];
            let entry = match self.tables[j].get_mut(ctx) {
                Some(e) => e,
                None => self.tables[j].entry(ctx.to_vec()).or_insert_with(|| Counts {
                    by_symbol: vec![0; size],
                    total: 0,
                }),
            };
            entry.by_symbol[symbol] += 1;
            entry.total += 1;
        }
    }

    fn smoothed(&self, counts: Option<&Counts>) -> Distribution {
        let v = self.alphabet.size() as f64;
        let weights = match counts {
            Some(c) => {
                let denom = c.total as f64 + v * self.alpha;
                c.by_symbol.iter().map(|&n| (n as f64 + self.alpha) / denom).collect()
            }
            None => vec![1.0 / v; self.alphabet.size()],
        };
        Distribution::new(weights).expect("smoothed counts are positive")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        out.extend_from_slice(&(self.alphabet.size() as u32).to_be_bytes());
        for &c in self.alphabet.symbols() {
            out.extend_from_slice(&u32::from(c).to_be_bytes());
        }
        out.extend_from_slice(&(self.order as u32).to_be_bytes());
        out.extend_from_slice(&self.alpha.to_bits().to_be_bytes());
        for table in &self.tables {
            let mut keys: Vec<&Vec<usize>> = table.keys().collect();
            keys.sort();
            out.extend_from_slice(&(keys.len() as u64).to_be_bytes());
            for key in keys {
                for &t in key {
                    out.extend_from_slice(&(t as u32).to_be_bytes());
                }
                for &n in &table[key].by_symbol {
                    out.extend_from_slice(&n.to_be_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.take(1)?[0];
        if version != MODEL_VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let size = r.u32()? as usize;
        if size > super::MAX_ALPHABET {
            return Err(ModelError::AlphabetTooLarge(size));
        }
        let mut symbols = Vec::with_capacity(size);
        for _ in 0..size {
            let code = r.u32()?;
            symbols.push(char::from_u32(code).ok_or_else(|| ModelError::Format(format!("invalid symbol {code:#x}")))?);
        }
        let alphabet = Arc::new(Alphabet::new(symbols)?);
        let order = r.u32()? as usize;
        let alpha = f64::from_bits(r.u64()?);
        let mut model = NGramModel::new(alphabet, order, alpha)?;
        for j in 0..=order {
            let contexts = r.u64()?;
            for _ in 0..contexts {
                let mut key = Vec::with_capacity(j);
                for _ in 0..j {
                    let t = r.u32()? as usize;
                    if t >= size {
                        return Err(ModelError::Format(format!("context token {t} out of range")));
                    }
                    key.push(t);
                }
                let mut by_symbol = Vec::with_capacity(size);
                for _ in 0..size {
                    by_symbol.push(r.u64()?);
                }
                let total = by_symbol
                    .iter()
                    .try_fold(0u64, |acc, &n| acc.checked_add(n))
                    .ok_or_else(|| ModelError::Format("count overflow".into()))?;
                if model.tables[j].insert(key, Counts { by_symbol, total }).is_some() {
                    return Err(ModelError::Format("duplicate context".into()));
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Format("trailing bytes".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

impl SequenceModel for NGramModel {
    fn alphabet(&self) -> &Arc<Alphabet> {
        &self.alphabet
    }

    fn distribution_for(&self, context: &[usize]) -> Distribution {
        let j = self.order.min(context.len());
        let key = &context[context.len() - j..];
        match self.tables[j].get(key).filter(|c| c.total > 0) {
            Some(c) => self.smoothed(Some(c)),
            None => self.smoothed(self.tables[0].get(&[][..])),
        }
    }

    fn model_id(&self) -> ModelId {
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        ModelId::from_hasher(h)
    }

    fn describe(&self) -> String {
        format!(
            "order-{} n-gram, alpha={}, {} symbols",
            self.order,
            self.alpha,
            self.alphabet.size()
        )
    }
}

/// Builds an order-`order` model from exact occurrence counts over `corpus`.
pub fn train_ngram(corpus: &[TokenSequence], order: usize, alpha: f64) -> Result<NGramModel, ModelError> {
    let first = corpus.first().ok_or(ModelError::EmptyCorpus)?;
    let alphabet = Arc::clone(first.alphabet());
    let mut model = NGramModel::new(alphabet, order, alpha)?;
    for seq in corpus {
        model.train_on(seq)?;
    }
    Ok(model)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
