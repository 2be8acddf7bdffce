use std::sync::Arc;

use ait_core::codec::{compress_with_stats, decompress_with_stats, CompressedPayload};
use ait_core::model::{train_ngram, Alphabet, FixedModel, SequenceModel, TokenSequence, UniformModel};
use ait_core::prefix_code::{
    decode_program, elias_gamma_decode, elias_gamma_encode, encode_program, gamma_len, kraft_sum,
};
use ait_core::BitString;
use proptest::prelude::*;

fn alphabet(size: usize) -> Arc<Alphabet> {
    Arc::new(Alphabet::new((0..size as u32).map(|i| char::from_u32(0x41 + i).unwrap())).unwrap())
}

fn check_roundtrip(model: &dyn SequenceModel, x: &TokenSequence) -> Result<(), TestCaseError> {
    let (payload, stats) = compress_with_stats(model, x).unwrap();
    let (back, digest) = decompress_with_stats(model, &payload).unwrap();
    prop_assert_eq!(&back, x);
    prop_assert_eq!(digest, stats.table_digest);
    prop_assert!(payload.bits.len() as f64 - stats.quantized_ideal_bits.ceil() <= 64.0);
    let (from_file, seed) = CompressedPayload::from_container(&payload.to_container(7).unwrap()).unwrap();
    prop_assert_eq!(seed, 7);
    prop_assert_eq!(from_file, payload);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn uniform_roundtrip(size in 2usize..40, tokens in proptest::collection::vec(any::<usize>(), 1..400)) {
        let ab = alphabet(size);
        let x = TokenSequence::new(Arc::clone(&ab), tokens.iter().map(|t| t % size).collect()).unwrap();
        check_roundtrip(&UniformModel::new(ab), &x)?;
    }

    #[test]
    fn skewed_roundtrip(weights in proptest::collection::vec(0.0f64..1.0, 2..12), tokens in proptest::collection::vec(any::<usize>(), 1..400)) {
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let ab = alphabet(weights.len());
        let m = FixedModel::new(Arc::clone(&ab), weights.clone()).unwrap();
        let x = TokenSequence::new(ab, tokens.iter().map(|t| t % weights.len()).collect()).unwrap();
        check_roundtrip(&m, &x)?;
    }

    #[test]
    fn ngram_roundtrip(size in 2usize..6, order in 0usize..4, train in proptest::collection::vec(0usize..6, 1..300), tokens in proptest::collection::vec(0usize..6, 1..300)) {
        let ab = alphabet(size);
        let corpus = TokenSequence::new(Arc::clone(&ab), train.iter().map(|t| t % size).collect()).unwrap();
        let m = train_ngram(&[corpus], order, 0.5).unwrap();
        let x = TokenSequence::new(ab, tokens.iter().map(|t| t % size).collect()).unwrap();
        check_roundtrip(&m, &x)?;
    }

    #[test]
    fn gamma_roundtrip(n in 1u64..u64::MAX) {
        let code = elias_gamma_encode(n).unwrap();
        prop_assert_eq!(code.len() as u64, gamma_len(n));
        prop_assert_eq!(elias_gamma_decode(&code).unwrap(), (n, code.len()));
    }

    #[test]
    fn program_roundtrip(t in 1u64..1_000_000, s in 1u64..1_000_000, bits in proptest::collection::vec(any::<bool>(), 1..200)) {
        let mut payload = BitString::new();
        bits.iter().for_each(|&b| payload.push(b));
        let program = encode_program(t, s, &payload).unwrap();
        let (decoded, used) = decode_program(&program.serialize()).unwrap();
        prop_assert_eq!(used, program.total_len());
        prop_assert_eq!((decoded.iterations, decoded.seed, decoded.payload), (t, s, payload));
    }
}

#[test]
fn program_serializations_satisfy_kraft() {
    let mut words = Vec::new();
    for t in 1..=12u64 {
        for s in 1..=6u64 {
            let mut payload = BitString::new();
            payload.push_bits(t * 31 + s, 7);
            words.push(encode_program(t, s, &payload).unwrap().serialize());
        }
    }
    assert!(kraft_sum(&words).unwrap() <= 1.0);
}
