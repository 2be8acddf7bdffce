//! Elias gamma coding and the prefix-coded program container.
//!
//! A program is the triple `gamma(n) ‖ gamma(s) ‖ gamma(|e|) ‖ e`: an
//! iteration count, a seed and a length-prefixed payload. Every piece is
//! self-delimiting, so a concatenation of programs (or a program followed by
//! arbitrary bits) decodes without an external delimiter.
//!
//! Bits are stored most-significant-bit first. The on-disk container is
//!
//! ```text
//! "AITP" | 0x01 | total bit count (u64, big endian) | bitstream, zero-padded to a byte
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const PROGRAM_MAGIC: &[u8; 4] = b"AITP";
pub const PROGRAM_VERSION: u8 = 0x01;
const PROGRAM_HEADER_LEN: usize = 4 + 1 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeError {
    #[error("gamma code is undefined for zero")]
    Zero,
    #[error("empty input where a codeword was expected")]
    Empty,
    #[error("codeword truncated: needed {needed} bits, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("codeword of {zeros} leading zeros does not fit in 64 bits")]
    Overflow { zeros: usize },
    #[error("payload must contain at least one bit")]
    EmptyPayload,
    #[error("codeword #{first} ({first_bits}) is a prefix of codeword #{second} ({second_bits})")]
    NotPrefixFree {
        first: usize,
        first_bits: String,
        second: usize,
        second_bits: String,
    },
    #[error("invalid bit character {0:?}")]
    InvalidBitChar(char),
    #[error("bad container: {0}")]
    Container(String),
}

/// An exact-length sequence of bits.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    /// Takes the first `len` bits of `bytes`. Bits past `len` in the last byte
    /// are cleared so equality only ever looks at the logical bits.
    pub fn from_bytes(mut bytes: Vec<u8>, len: usize) -> Result<Self, CodeError> {
        if len > bytes.len() * 8 {
            return Err(CodeError::Truncated {
                needed: len,
                available: bytes.len() * 8,
            });
        }
        bytes.truncate(len.div_ceil(8));
        if !len.is_multiple_of(8) {
            let keep = 0xffu8 << (8 - len % 8);
            if let Some(last) = bytes.last_mut() {
                *last &= keep;
            }
        }
        Ok(Self { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Packed bytes, MSB first, zero-padded at the tail.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        (index < self.len).then(|| self.bytes[index / 8] & (0x80 >> (index % 8)) != 0)
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[self.len / 8] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `count` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, count: u32) {
        debug_assert!(count <= 64);
        for shift in (0..count).rev() {
            self.push((value >> shift) & 1 == 1);
        }
    }

    pub fn extend_from(&mut self, other: &BitString) {
        if self.len.is_multiple_of(8) {
            self.bytes.extend_from_slice(&other.bytes);
            self.len += other.len;
        } else {
            for bit in other.iter() {
                self.push(bit);
            }
        }
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bytes[i / 8] & (0x80 >> (i % 8)) != 0)
    }

    /// Copy of bits `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> BitString {
        assert!(start <= end && end <= self.len, "bit range out of bounds");
        let mut out = BitString::with_capacity(end - start);
        for i in start..end {
            out.push(self.bytes[i / 8] & (0x80 >> (i % 8)) != 0);
        }
        out
    }

    pub fn starts_with(&self, prefix: &BitString) -> bool {
        if prefix.len > self.len {
            return false;
        }
        let full = prefix.len / 8;
        if self.bytes[..full] != prefix.bytes[..full] {
            return false;
        }
        let rest = prefix.len % 8;
        if rest == 0 {
            return true;
        }
        let mask = 0xffu8 << (8 - rest);
        self.bytes[full] & mask == prefix.bytes[full] & mask
    }

    /// Flips the trailing run of ones to zeros and the zero before it to one,
    /// i.e. adds one at the last position. Returns false if every bit was one
    /// (the increment overflowed past the first bit).
    pub fn increment(&mut self) -> bool {
        let mut i = self.len;
        while i > 0 {
            i -= 1;
            let mask = 0x80 >> (i % 8);
            if self.bytes[i / 8] & mask != 0 {
                self.bytes[i / 8] &= !mask;
            } else {
                self.bytes[i / 8] |= mask;
                return true;
            }
        }
        false
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader { bits: self, pos: 0 }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for bit in self.iter() {
            f.write_str(if bit { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = CodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = BitString::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                other => return Err(CodeError::InvalidBitChar(other)),
            }
        }
        Ok(out)
    }
}

/// Sequential reader over a [`BitString`].
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl BitReader<'_> {
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bits.len - self.pos
    }

    pub fn read_bit(&mut self) -> Option<bool> {
        let bit = self.bits.get(self.pos)?;
        self.pos += 1;
        Some(bit)
    }

    /// Reads one gamma codeword.
    pub fn read_gamma(&mut self) -> Result<u64, CodeError> {
        let start = self.pos;
        if self.remaining() == 0 {
            return Err(CodeError::Empty);
        }
        let mut zeros = 0usize;
        loop {
            match self.read_bit() {
                Some(false) => zeros += 1,
                Some(true) => break,
                None => {
                    self.pos = start;
                    return Err(CodeError::Truncated {
                        needed: 2 * zeros + 1,
                        available: zeros,
                    });
                }
            }
        }
        if zeros > 63 {
            self.pos = start;
            return Err(CodeError::Overflow { zeros });
        }
        if self.remaining() < zeros {
            let available = self.pos - start + self.remaining();
            self.pos = start;
            return Err(CodeError::Truncated {
                needed: 2 * zeros + 1,
                available,
            });
        }
        let mut value = 1u64;
        for _ in 0..zeros {
            value = (value << 1) | u64::from(self.read_bit().unwrap_or(false));
        }
        Ok(value)
    }

    pub fn read_bits(&mut self, count: usize) -> Result<BitString, CodeError> {
        if self.remaining() < count {
            return Err(CodeError::Truncated {
                needed: count,
                available: self.remaining(),
            });
        }
        let out = self.bits.slice(self.pos, self.pos + count);
        self.pos += count;
        Ok(out)
    }
}

/// `2⌊log₂n⌋ + 1`, the gamma codeword length. `n` must be positive.
pub fn gamma_len(n: u64) -> u64 {
    debug_assert!(n >= 1);
    2 * u64::from(n.ilog2()) + 1
}

pub fn elias_gamma_encode(n: u64) -> Result<BitString, CodeError> {
    if n == 0 {
        return Err(CodeError::Zero);
    }
    let width = n.ilog2();
    let mut out = BitString::with_capacity(2 * width as usize + 1);
    out.push_bits(0, width);
    out.push_bits(n, width + 1);
    Ok(out)
}

/// Decodes the gamma codeword at the start of `bits`, returning the value and
/// the number of bits it occupied.
pub fn elias_gamma_decode(bits: &BitString) -> Result<(u64, usize), CodeError> {
    let mut reader = bits.reader();
    let n = reader.read_gamma()?;
    Ok((n, reader.position()))
}

/// `gamma(|payload|) ‖ payload`.
pub fn wrap_payload(payload: &BitString) -> Result<BitString, CodeError> {
    if payload.is_empty() {
        return Err(CodeError::EmptyPayload);
    }
    let mut out = elias_gamma_encode(payload.len() as u64)?;
    out.extend_from(payload);
    Ok(out)
}

/// Inverse of [`wrap_payload`]; returns the payload and the bits consumed.
pub fn unwrap_payload(bits: &BitString) -> Result<(BitString, usize), CodeError> {
    let mut reader = bits.reader();
    let payload = read_wrapped(&mut reader)?;
    Ok((payload, reader.position()))
}

fn read_wrapped(reader: &mut BitReader<'_>) -> Result<BitString, CodeError> {
    let len = reader.read_gamma()?;
    let len = usize::try_from(len).map_err(|_| CodeError::Overflow { zeros: 64 })?;
    reader.read_bits(len)
}

/// The prefix-coded program `(n̄, s̄, ē)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramEncoding {
    pub iteration_code: BitString,
    pub seed_code: BitString,
    pub payload_code: BitString,
}

/// Fields recovered from a serialized program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedProgram {
    pub iterations: u64,
    pub seed: u64,
    pub payload: BitString,
}

pub fn encode_program(iterations: u64, seed: u64, payload: &BitString) -> Result<ProgramEncoding, CodeError> {
    Ok(ProgramEncoding {
        iteration_code: elias_gamma_encode(iterations)?,
        seed_code: elias_gamma_encode(seed)?,
        payload_code: wrap_payload(payload)?,
    })
}

/// Decodes a program from the start of `bits`; returns it with the bits consumed.
pub fn decode_program(bits: &BitString) -> Result<(DecodedProgram, usize), CodeError> {
    let mut reader = bits.reader();
    let iterations = reader.read_gamma()?;
    let seed = reader.read_gamma()?;
    let payload = read_wrapped(&mut reader)?;
    Ok((
        DecodedProgram {
            iterations,
            seed,
            payload,
        },
        reader.position(),
    ))
}

impl ProgramEncoding {
    pub fn total_len(&self) -> usize {
        self.iteration_code.len() + self.seed_code.len() + self.payload_code.len()
    }

    pub fn serialize(&self) -> BitString {
        let mut out = BitString::with_capacity(self.total_len());
        out.extend_from(&self.iteration_code);
        out.extend_from(&self.seed_code);
        out.extend_from(&self.payload_code);
        out
    }

    /// Container bytes: magic, version, bit count, padded bitstream.
    pub fn to_bytes(&self) -> Vec<u8> {
        let bits = self.serialize();
        let mut out = Vec::with_capacity(PROGRAM_HEADER_LEN + bits.as_bytes().len());
        out.extend_from_slice(PROGRAM_MAGIC);
        out.push(PROGRAM_VERSION);
        out.extend_from_slice(&(bits.len() as u64).to_be_bytes());
        out.extend_from_slice(bits.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(ProgramEncoding, DecodedProgram), CodeError> {
        if bytes.len() < PROGRAM_HEADER_LEN {
            return Err(CodeError::Container("shorter than the header".into()));
        }
        if &bytes[..4] != PROGRAM_MAGIC {
            return Err(CodeError::Container("bad magic".into()));
        }
        if bytes[4] != PROGRAM_VERSION {
            return Err(CodeError::Container(format!("unsupported version {}", bytes[4])));
        }
        let mut count = [0u8; 8];
        count.copy_from_slice(&bytes[5..13]);
        let bit_len = usize::try_from(u64::from_be_bytes(count))
            .map_err(|_| CodeError::Container("bit count too large".into()))?;
        let body = &bytes[PROGRAM_HEADER_LEN..];
        if body.len() != bit_len.div_ceil(8) {
            return Err(CodeError::Container(format!(
                "bit count {bit_len} needs {} bytes, found {}",
                bit_len.div_ceil(8),
                body.len()
            )));
        }
        let bits = BitString::from_bytes(body.to_vec(), bit_len)?;
        if bits.as_bytes() != body {
            return Err(CodeError::Container("non-zero padding bits".into()));
        }
        let (decoded, used) = decode_program(&bits)?;
        if used != bit_len {
            return Err(CodeError::Container(format!(
                "{} trailing bits after program",
                bit_len - used
            )));
        }
        let encoding = encode_program(decoded.iterations, decoded.seed, &decoded.payload)?;
        Ok((encoding, decoded))
    }
}

/// `Σ 2^{-|c|}` over a prefix-free set. Fails with the first offending pair
/// (by input position) if one codeword prefixes another or two are equal.
pub fn kraft_sum(codewords: &[BitString]) -> Result<f64, CodeError> {
    let mut order: Vec<usize> = (0..codewords.len()).collect();
    order.sort_by(|&a, &b| codewords[a].iter().cmp(codewords[b].iter()).then(a.cmp(&b)));
    // In lexicographic order any codeword that prefixes another also prefixes
    // its immediate successor, so adjacent pairs are enough.
    let mut violation: Option<(usize, usize)> = None;
    for pair in order.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if codewords[b].starts_with(&codewords[a]) {
            let (first, second) = (a.min(b), a.max(b));
            if violation.is_none_or(|(f, s)| (first, second) < (f, s)) {
                violation = Some((first, second));
            }
        }
    }
    if let Some((first, second)) = violation {
        let (p, q) = if codewords[second].starts_with(&codewords[first]) {
            (first, second)
        } else {
            (second, first)
        };
        return Err(CodeError::NotPrefixFree {
            first: p,
            first_bits: codewords[p].to_string(),
            second: q,
            second_bits: codewords[q].to_string(),
        });
    }
    Ok(codewords.iter().map(|c| (-(c.len() as f64)).exp2()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(elias_gamma_encode(1).unwrap(), bits("1"));
        assert_eq!(elias_gamma_encode(5).unwrap(), bits("00101"));
        assert_eq!(elias_gamma_encode(10).unwrap(), bits("0001010"));
        assert_eq!(elias_gamma_encode(0), Err(CodeError::Zero));
    }

    #[test]
    fn gamma_decode_examples() {
        assert_eq!(elias_gamma_decode(&bits("1")).unwrap(), (1, 1));
        assert_eq!(elias_gamma_decode(&bits("00101111")).unwrap(), (5, 5));
        assert!(matches!(
            elias_gamma_decode(&bits("00")),
            Err(CodeError::Truncated { .. })
        ));
        assert!(matches!(
            elias_gamma_decode(&bits("0010")),
            Err(CodeError::Truncated { .. })
        ));
        assert_eq!(elias_gamma_decode(&BitString::new()), Err(CodeError::Empty));
    }

    #[test]
    fn gamma_roundtrip_and_length_law() {
        for n in 1..=1_000_000u64 {
            let code = elias_gamma_encode(n).unwrap();
            assert_eq!(code.len() as u64, 2 * u64::from(n.ilog2()) + 1);
            assert_eq!(code.len() as u64, gamma_len(n));
            assert_eq!(elias_gamma_decode(&code).unwrap(), (n, code.len()));
        }
        let big = elias_gamma_encode(u64::MAX).unwrap();
        assert_eq!(elias_gamma_decode(&big).unwrap(), (u64::MAX, 127));
    }

    #[test]
    fn gamma_rejects_overlong_zero_run() {
        let mut b = BitString::new();
        b.push_bits(0, 64);
        b.push(true);
        b.push_bits(0, 64);
        assert!(matches!(elias_gamma_decode(&b), Err(CodeError::Overflow { .. })));
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_payload(&bits("0")).unwrap(), bits("10"));
        assert_eq!(wrap_payload(&bits("010101")).unwrap().len(), 11);
        let long = BitString::from_bytes(vec![0xa5; 38], 300).unwrap();
        let wrapped = wrap_payload(&long).unwrap();
        assert_eq!(wrapped.len(), 317);
        assert_eq!(unwrap_payload(&wrapped).unwrap(), (long, 317));
        assert_eq!(wrap_payload(&BitString::new()), Err(CodeError::EmptyPayload));
    }

    #[test]
    fn program_examples() {
        let p = encode_program(2, 1, &bits("01")).unwrap();
        assert_eq!(p.serialize(), bits("010101001"));
        assert_eq!(p.total_len(), 9);
        let q = encode_program(1, 1, &bits("0")).unwrap();
        assert_eq!(q.total_len(), 4);
        assert_eq!(encode_program(0, 1, &bits("0")), Err(CodeError::Zero));
        assert_eq!(encode_program(1, 0, &bits("0")), Err(CodeError::Zero));
    }

    #[test]
    fn program_container_roundtrip() {
        let p = encode_program(1234, 7, &bits("1011001110001")).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..5], b"AITP\x01");
        assert_eq!(
            u64::from_be_bytes(bytes[5..13].try_into().unwrap()),
            p.total_len() as u64
        );
        let (back, decoded) = ProgramEncoding::from_bytes(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!((decoded.iterations, decoded.seed), (1234, 7));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ProgramEncoding::from_bytes(&bad).is_err());
        let mut padded = bytes.clone();
        *padded.last_mut().unwrap() |= 1;
        assert!(ProgramEncoding::from_bytes(&padded).is_err());
        assert!(ProgramEncoding::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn kraft_examples() {
        let set = |xs: &[&str]| xs.iter().map(|s| bits(s)).collect::<Vec<_>>();
        assert_eq!(kraft_sum(&set(&["0", "10", "11"])).unwrap(), 1.0);
        assert_eq!(kraft_sum(&set(&["1", "010", "011"])).unwrap(), 0.75);
        match kraft_sum(&set(&["0", "01"])) {
            Err(CodeError::NotPrefixFree { first, second, .. }) => assert_eq!((first, second), (0, 1)),
            other => panic!("expected prefix violation, got {other:?}"),
        }
        match kraft_sum(&set(&["110", "0", "11"])) {
            Err(CodeError::NotPrefixFree { first, second, .. }) => assert_eq!((first, second), (2, 0)),
            other => panic!("expected prefix violation, got {other:?}"),
        }
        assert!(kraft_sum(&set(&["01", "01"])).is_err());
        assert_eq!(kraft_sum(&[]).unwrap(), 0.0);
    }

    #[test]
    fn gamma_codewords_are_prefix_free() {
        let codes: Vec<BitString> = (1..=1u64 << 14).map(|n| elias_gamma_encode(n).unwrap()).collect();
        let sum = kraft_sum(&codes).unwrap();
        assert!(sum <= 1.0);
    }

    #[test]
    fn increment_carries() {
        let mut b = bits("0111");
        assert!(b.increment());
        assert_eq!(b, bits("1000"));
        let mut all = bits("11");
        assert!(!all.increment());
    }
}
