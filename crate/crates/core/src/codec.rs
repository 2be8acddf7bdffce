//! Lossless coding of token sequences with a next-token model.
//!
//! The coder is a binary-output range coder: `low` and `range` live in a
//! 56-bit window held in 64-bit registers, frequencies are quantized to 24
//! bits, and a carry out of the window is propagated straight into the bits
//! already emitted. Normalization shifts out one bit at a time and the final
//! flush costs one bit, so the output exceeds the ideal quantized code
//! length by at most a couple of bits.
//!
//! The token count travels beside the bits (as `gamma(t)` in the program
//! container) instead of as an end-of-stream symbol.

use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    check_alphabet, sequence_log_loss, Distribution, ModelError, ModelId, SequenceModel, TokenSequence,
};
use crate::prefix_code::{encode_program, BitString, CodeError, ProgramEncoding};

pub const FREQ_BITS: u32 = 24;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;

const WINDOW_BITS: u32 = 56;
const TOP: u64 = 1 << WINDOW_BITS;
const HALF: u64 = 1 << (WINDOW_BITS - 1);
const WINDOW_MASK: u64 = TOP - 1;

pub const CONTAINER_MAGIC: &[u8; 4] = b"AITC";
const CONTAINER_VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("payload was produced by model {expected}, but model {found} was supplied")]
    ModelMismatch { expected: ModelId, found: ModelId },
    #[error("bitstream truncated: decoding needs {needed} bits, payload has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("corrupt bitstream: {0}")]
    Corrupt(String),
    #[error("cannot compress an empty sequence")]
    EmptySequence,
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("prefix code: {0}")]
    Code(#[from] CodeError),
    #[error("bad container: {0}")]
    Container(String),
}

/// The coded bits `e(x)` plus what is needed to decode them.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPayload {
    pub bits: BitString,
    pub token_count: u64,
    pub model_id: ModelId,
}

/// Side measurements of one coding pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodingStats {
    /// `Σ −log₂ P_q(x_i | x_{<i})` under the quantized tables.
    pub quantized_ideal_bits: f64,
    /// Hash over every quantized frequency table used, in order.
    pub table_digest: u64,
}

/// 24-bit frequencies for `dist`: each at least 1, summing to [`FREQ_TOTAL`].
/// Any rounding surplus or deficit goes to the most probable symbol.
pub fn quantize(dist: &Distribution) -> Vec<u32> {
    let scale = f64::from(FREQ_TOTAL);
    let mut freqs: Vec<u32> = dist
        .probs()
        .iter()
        .map(|&p| ((p * scale).floor() as u32).max(1))
        .collect();
    let sum: i64 = freqs.iter().map(|&f| i64::from(f)).sum();
    let top = dist.argmax();
    let adjusted = i64::from(freqs[top]) + i64::from(FREQ_TOTAL) - sum;
    assert!(adjusted >= 1, "alphabet too large for {FREQ_BITS}-bit frequencies");
    freqs[top] = adjusted as u32;
    freqs
}

fn cumulative(freqs: &[u32]) -> Vec<u32> {
    let mut cum = Vec::with_capacity(freqs.len() + 1);
    let mut acc = 0u32;
    cum.push(0);
    for &f in freqs {
        acc += f;
        cum.push(acc);
    }
    cum
}

/// FNV-1a over the table entries.
struct TableHasher(u64);

impl TableHasher {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn table(&mut self, freqs: &[u32]) {
        for &f in freqs {
            for b in f.to_le_bytes() {
                self.0 ^= u64::from(b);
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
}

struct Encoder {
    low: u64,
    range: u64,
    out: BitString,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: TOP,
            out: BitString::new(),
        }
    }

    fn encode(&mut self, cum: u32, freq: u32) {
        let r = self.range >> FREQ_BITS;
        self.low += r * u64::from(cum);
        self.range = r * u64::from(freq);
        if self.low >= TOP {
            self.carry();
            self.low -= TOP;
        }
        while self.range < HALF {
            self.out.push(self.low & HALF != 0);
            self.low = (self.low << 1) & WINDOW_MASK;
            self.range <<= 1;
        }
    }

    fn carry(&mut self) {
        let propagated = self.out.increment();
        debug_assert!(propagated, "carry past the first output bit");
    }

    /// Emits the single bit selecting a point of `[low, low + range)`; the
    /// decoder reads zeros past the end, so the point is the next multiple
    /// of 2^(W-1) at or above `low`. `range ≥ HALF` makes that always fit.
    fn finish(mut self) -> BitString {
        let mut point = self.low.div_ceil(HALF) * HALF;
        debug_assert!(point < self.low + self.range);
        if point >= TOP {
            self.carry();
            point -= TOP;
        }
        self.out.push(point & HALF != 0);
        self.out
    }
}

struct Decoder<'a> {
    bits: &'a BitString,
    next: usize,
    shifts: usize,
    diff: u64,
    range: u64,
}

impl<'a> Decoder<'a> {
    fn new(bits: &'a BitString) -> Self {
        let mut d = Self {
            bits,
            next: 0,
            shifts: 0,
            diff: 0,
            range: TOP,
        };
        for _ in 0..WINDOW_BITS {
            d.diff = (d.diff << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let bit = self.bits.get(self.next).unwrap_or(false);
        self.next += 1;
        u64::from(bit)
    }

    fn decode(&mut self, cum: &[u32]) -> Result<usize, CodecError> {
        let r = self.range >> FREQ_BITS;
        let target = self.diff / r;
        if target >= u64::from(FREQ_TOTAL) {
            return Err(CodecError::Corrupt("code value outside the coding interval".into()));
        }
        let symbol = cum.partition_point(|&c| u64::from(c) <= target) - 1;
        self.diff -= r * u64::from(cum[symbol]);
        self.range = r * u64::from(cum[symbol + 1] - cum[symbol]);
        while self.range < HALF {
            self.diff = (self.diff << 1) | self.next_bit();
            self.range <<= 1;
            self.shifts += 1;
        }
        Ok(symbol)
    }
}

fn encode_sequence<M: SequenceModel + ?Sized>(
    model: &M,
    x: &TokenSequence,
    with_digest: bool,
) -> (BitString, CodingStats) {
    let tokens = x.tokens();
    let mut enc = Encoder::new();
    let mut ideal = 0.0;
    let mut hasher = TableHasher::new();
    for i in 0..tokens.len() {
        let freqs = quantize(&model.distribution_for(&tokens[..i]));
        if with_digest {
            hasher.table(&freqs);
        }
        let sym = tokens[i];
        let cum: u32 = freqs[..sym].iter().sum();
        ideal -= (f64::from(freqs[sym]) / f64::from(FREQ_TOTAL)).log2();
        enc.encode(cum, freqs[sym]);
    }
    (
        enc.finish(),
        CodingStats {
            quantized_ideal_bits: ideal,
            table_digest: hasher.0,
        },
    )
}

pub fn compress<M: SequenceModel + ?Sized>(model: &M, x: &TokenSequence) -> Result<CompressedPayload, CodecError> {
    compress_with_stats(model, x).map(|(p, _)| p)
}

/// [`compress`] plus the quantized ideal length and a digest of every table.
pub fn compress_with_stats<M: SequenceModel + ?Sized>(
    model: &M,
    x: &TokenSequence,
) -> Result<(CompressedPayload, CodingStats), CodecError> {
    check_alphabet(model.alphabet(), x)?;
    if x.is_empty() {
        return Err(CodecError::EmptySequence);
    }
    let (bits, stats) = encode_sequence(model, x, true);
    Ok((
        CompressedPayload {
            bits,
            token_count: x.len() as u64,
            model_id: model.model_id(),
        },
        stats,
    ))
}

pub fn decompress<M: SequenceModel + ?Sized>(
    model: &M,
    payload: &CompressedPayload,
) -> Result<TokenSequence, CodecError> {
    decompress_with_stats(model, payload).map(|(x, _)| x)
}

/// Decodes exactly `token_count` tokens, returning the digest of the tables
/// the decoder rebuilt (it must match the encoder's).
pub fn decompress_with_stats<M: SequenceModel + ?Sized>(
    model: &M,
    payload: &CompressedPayload,
) -> Result<(TokenSequence, u64), CodecError> {
    let found = model.model_id();
    if found != payload.model_id {
        return Err(CodecError::ModelMismatch {
            expected: payload.model_id,
            found,
        });
    }
    decode_unchecked(model, &payload.bits, payload.token_count)
}

fn decode_unchecked<M: SequenceModel + ?Sized>(
    model: &M,
    bits: &BitString,
    token_count: u64,
) -> Result<(TokenSequence, u64), CodecError> {
    let alphabet = Arc::clone(model.alphabet());
    let mut hasher = TableHasher::new();
    if token_count == 0 {
        return Ok((TokenSequence::empty(alphabet), hasher.0));
    }
    let count = usize::try_from(token_count).map_err(|_| CodecError::Corrupt("token count too large".into()))?;
    let mut dec = Decoder::new(bits);
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let freqs = quantize(&model.distribution_for(&tokens));
        hasher.table(&freqs);
        let symbol = dec.decode(&cumulative(&freqs))?;
        tokens.push(symbol);
        if dec.shifts + 1 > bits.len() {
            return Err(CodecError::Truncated {
                needed: dec.shifts + 1,
                available: bits.len(),
            });
        }
    }
    if dec.shifts + 1 != bits.len() {
        return Err(CodecError::Corrupt(format!(
            "{} trailing bits after the last token",
            bits.len() - dec.shifts - 1
        )));
    }
    Ok((TokenSequence::new(alphabet, tokens)?, hasher.0))
}

/// The idealized length `2t − Σ log₂ P(x_i | x_{<i})`.
pub fn analytic_code_length<M: SequenceModel + ?Sized>(model: &M, x: &TokenSequence) -> Result<f64, CodecError> {
    let loss = sequence_log_loss(model, x)?;
    Ok(2.0 * x.len() as f64 + loss)
}

impl CompressedPayload {
    /// The program `gamma(t) ‖ gamma(seed) ‖ gamma(|e|) ‖ e`.
    pub fn to_program(&self, seed: u64) -> Result<ProgramEncoding, CodecError> {
        Ok(encode_program(self.token_count, seed, &self.bits)?)
    }

    /// `.aitc` container: magic, version, model id, then an AITP program file.
    pub fn to_container(&self, seed: u64) -> Result<Vec<u8>, CodecError> {
        let program = self.to_program(seed)?;
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.push(CONTAINER_VERSION);
        out.extend_from_slice(&self.model_id.0);
        out.extend_from_slice(&program.to_bytes());
        Ok(out)
    }

    /// Parses a `.aitc` container, returning the payload and the seed.
    pub fn from_container(bytes: &[u8]) -> Result<(CompressedPayload, u64), CodecError> {
        if bytes.len() < 5 + 32 {
            return Err(CodecError::Container("shorter than the header".into()));
        }
        if &bytes[..4] != CONTAINER_MAGIC {
            return Err(CodecError::Container("bad magic".into()));
        }
        if bytes[4] != CONTAINER_VERSION {
            return Err(CodecError::Container(format!("unsupported version {}", bytes[4])));
        }
        let mut id = [0u8; 32];
        id.copy_from_slice(&bytes[5..37]);
        let (_, program) = ProgramEncoding::from_bytes(&bytes[37..])?;
        Ok((
            CompressedPayload {
                bits: program.payload,
                token_count: program.iterations,
                model_id: ModelId(id),
            },
            program.seed,
        ))
    }
}

/// Content hash of a quantized table, handy for spot checks.
pub fn table_sha256(freqs: &[u32]) -> [u8; 32] {
    let mut h = Sha256::new();
    for f in freqs {
        h.update(f.to_be_bytes());
    }
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{train_ngram, Alphabet, FixedModel, UniformModel, PROBABILITY_FLOOR};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binary() -> Arc<Alphabet> {
        Arc::new(Alphabet::binary())
    }

    #[test]
    fn quantize_sums_to_total() {
        let d = Distribution::new(vec![0.5, 0.25, 0.125, 0.125]).unwrap();
        assert_eq!(quantize(&d), vec![1 << 23, 1 << 22, 1 << 21, 1 << 21]);
        let d = Distribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        let q = quantize(&d);
        assert_eq!(q.iter().sum::<u32>(), FREQ_TOTAL);
        assert_eq!(q[1], 16);
        let d = Distribution::uniform(3).unwrap();
        let q = quantize(&d);
        assert_eq!(q.iter().sum::<u32>(), FREQ_TOTAL);
        assert!(q.iter().all(|&f| f >= 5_592_405));
    }

    #[test]
    fn uniform_binary_length_64() {
        let m = UniformModel::new(binary());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tokens: Vec<usize> = (0..64).map(|_| rng.random_range(0..2)).collect();
        let x = TokenSequence::new(binary(), tokens).unwrap();
        let (p, stats) = compress_with_stats(&m, &x).unwrap();
        assert_eq!(stats.quantized_ideal_bits, 64.0);
        assert!((64..=128).contains(&p.bits.len()), "{}", p.bits.len());
        assert_eq!(decompress(&m, &p).unwrap(), x);
    }

    #[test]
    fn near_certain_sequence_is_tiny() {
        let m = FixedModel::new(binary(), vec![1.0, 0.0]).unwrap();
        assert_eq!(m.distribution().prob(0), 1.0 - PROBABILITY_FLOOR);
        let x = TokenSequence::new(binary(), vec![0; 1000]).unwrap();
        let p = compress(&m, &x).unwrap();
        assert!(p.bits.len() <= 20, "{}", p.bits.len());
        assert_eq!(decompress(&m, &p).unwrap(), x);
    }

    #[test]
    fn wrong_model_is_rejected() {
        let m = UniformModel::new(binary());
        let x = TokenSequence::from_text(binary(), "0110").unwrap();
        let p = compress(&m, &x).unwrap();
        let other = train_ngram(std::slice::from_ref(&x), 1, 0.5).unwrap();
        assert!(matches!(decompress(&other, &p), Err(CodecError::ModelMismatch { .. })));
    }

    #[test]
    fn zero_tokens_decode_to_empty() {
        let m = UniformModel::new(binary());
        let p = CompressedPayload {
            bits: BitString::new(),
            token_count: 0,
            model_id: m.model_id(),
        };
        assert!(decompress(&m, &p).unwrap().is_empty());
        let empty = TokenSequence::empty(binary());
        assert_eq!(compress(&m, &empty).unwrap_err(), CodecError::EmptySequence);
    }

    #[test]
    fn truncation_is_detected() {
        let m = UniformModel::new(binary());
        let x = TokenSequence::new(binary(), (0..200).map(|i| (i * 7 % 3) % 2).collect()).unwrap();
        let mut p = compress(&m, &x).unwrap();
        p.bits = p.bits.slice(0, p.bits.len() - 10);
        assert!(matches!(decompress(&m, &p), Err(CodecError::Truncated { .. })));
    }

    #[test]
    fn analytic_length_examples() {
        let m = UniformModel::new(binary());
        let x = TokenSequence::from_text(binary(), "0101").unwrap();
        assert_eq!(analytic_code_length(&m, &x).unwrap(), 12.0);

        let four = Arc::new(Alphabet::from_chars("abcd").unwrap());
        let m4 = UniformModel::new(Arc::clone(&four));
        let x = TokenSequence::from_text(four, "abcdabcdab").unwrap();
        assert_eq!(analytic_code_length(&m4, &x).unwrap(), 40.0);

        let forced = FixedModel::new(binary(), vec![1.0, 0.0]).unwrap();
        let x = TokenSequence::new(binary(), vec![0; 50]).unwrap();
        let expected = 100.0 + 50.0 * -(1.0 - PROBABILITY_FLOOR).log2();
        assert!((analytic_code_length(&forced, &x).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn container_roundtrip() {
        let m = UniformModel::new(binary());
        let x = TokenSequence::from_text(binary(), "0110100110010110").unwrap();
        let p = compress(&m, &x).unwrap();
        let bytes = p.to_container(3).unwrap();
        let (back, seed) = CompressedPayload::from_container(&bytes).unwrap();
        assert_eq!((back.clone(), seed), (p, 3));
        assert_eq!(decompress(&m, &back).unwrap(), x);
        assert!(CompressedPayload::from_container(&bytes[..20]).is_err());
    }

    #[test]
    fn carries_propagate_through_long_runs() {
        // Skewed three-symbol model: exercises carries into long runs of ones.
        let abc = Arc::new(Alphabet::from_chars("abc").unwrap());
        let m = FixedModel::new(Arc::clone(&abc), vec![0.001, 0.998, 0.001]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let tokens: Vec<usize> = (0..2000)
                .map(|_| match rng.random_range(0..1000) {
                    0 => 0,
                    1 => 2,
                    _ => 1,
                })
                .collect();
            let x = TokenSequence::new(Arc::clone(&abc), tokens).unwrap();
            let (p, stats) = compress_with_stats(&m, &x).unwrap();
            let (back, digest) = decompress_with_stats(&m, &p).unwrap();
            assert_eq!(back, x);
            assert_eq!(digest, stats.table_digest);
            assert!(p.bits.len() as f64 <= stats.quantized_ideal_bits.ceil() + 64.0);
        }
    }
}
