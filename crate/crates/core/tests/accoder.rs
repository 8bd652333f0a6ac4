use multihop_sim::accoder::{
    codelength_bound, decode, encode, quantize_pmf, Bitstream, FixedTable, FrequencyTable,
    TableSequence, TOTAL,
};
use multihop_sim::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random skewed table plus a symbol drawn from the table's own distribution.
fn random_case(rng: &mut ChaCha8Rng, q: usize, n: usize) -> (Vec<FrequencyTable>, Vec<u32>) {
    let mut tables = Vec::with_capacity(n);
    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        let sharp = rng.random_range(0.5..8.0);
        let w: Vec<f64> = (0..q).map(|_| rng.random::<f64>().powf(sharp)).collect();
        let s: f64 = w.iter().sum();
        let t = quantize_pmf(&w.iter().map(|x| x / s).collect::<Vec<_>>()).unwrap();
        let u = rng.random_range(0..TOTAL);
        symbols.push(t.cumulative().partition_point(|&c| c <= u) as u32 - 1);
        tables.push(t);
    }
    (tables, symbols)
}

#[test]
fn uniform_256_length_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols: Vec<u32> = (0..1000).map(|_| rng.random_range(0..256)).collect();
    let mut src = FixedTable(FrequencyTable::uniform(256).unwrap());
    let bs = encode(&symbols, &mut src).unwrap();
    assert!((8000..=8064).contains(&bs.bit_len()), "{}", bs.bit_len());
    assert_eq!(codelength_bound(&symbols, &mut src), 8000.0);
    assert_eq!(decode(&bs, &mut src, 1000).unwrap(), symbols);
}

#[test]
fn near_deterministic_stream_is_tiny() {
    let n = 100_000;
    let table = quantize_pmf(&[1.0, 0.0]).unwrap();
    let mut src = FixedTable(table);
    let symbols = vec![0u32; n];
    let bs = encode(&symbols, &mut src).unwrap();
    assert!(
        (bs.bit_len() as f64) <= 0.001 * n as f64 + 64.0,
        "{}",
        bs.bit_len()
    );
    let bound = codelength_bound(&symbols, &mut src);
    let analytic = n as f64 * (65536.0f64 / 65535.0).log2();
    assert!((bound - analytic).abs() < 1e-9);
    assert_eq!(decode(&bs, &mut src, n).unwrap(), symbols);
}

#[test]
fn long_skewed_stream_roundtrips_within_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (tables, symbols) = random_case(&mut rng, 37, 100_000);
    let mut src = TableSequence(tables);
    let bs = encode(&symbols, &mut src).unwrap();
    let bound = codelength_bound(&symbols, &mut src);
    let gap = bs.bit_len() as f64 - bound;
    assert!((-1.0..=64.0).contains(&gap), "gap {gap}");
    assert_eq!(decode(&bs, &mut src, symbols.len()).unwrap(), symbols);
}

#[test]
fn wrong_first_table_changes_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (tables, symbols) = random_case(&mut rng, 16, 200);
    let bs = encode(&symbols, &mut TableSequence(tables.clone())).unwrap();
    let mut wrong = tables;
    wrong[0] = quantize_pmf(&[0.9, 0.1]).unwrap();
    let decoded = decode(&bs, &mut TableSequence(wrong), symbols.len());
    assert!(decoded.map(|d| d != symbols).unwrap_or(true));
}

#[test]
fn truncated_stream_reports_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let symbols: Vec<u32> = (0..500).map(|_| rng.random_range(0..256)).collect();
    let mut src = FixedTable(FrequencyTable::uniform(256).unwrap());
    let bs = encode(&symbols, &mut src).unwrap();
    let short = Bitstream::new(bs.bytes()[..100].to_vec(), 800).unwrap();
    assert!(matches!(
        decode(&short, &mut src, symbols.len()),
        Err(Error::Truncated { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn roundtrip_and_gap(seed in any::<u64>(), q in 2usize..=1024, n in 0usize..3000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tables, symbols) = random_case(&mut rng, q, n);
        let mut src = TableSequence(tables);
        let bs = encode(&symbols, &mut src).unwrap();
        let gap = bs.bit_len() as f64 - codelength_bound(&symbols, &mut src);
        prop_assert!((-1.0..=64.0).contains(&gap), "gap {}", gap);
        prop_assert_eq!(decode(&bs, &mut src, n).unwrap(), symbols);
    }

    #[test]
    fn fuzz_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64), n in 0usize..400) {
        let mut src = FixedTable(quantize_pmf(&[0.7, 0.2, 0.05, 0.05]).unwrap());
        let bit_len = bytes.len() * 8;
        let bs = Bitstream::new(bytes, bit_len).unwrap();
        match decode(&bs, &mut src, n) {
            Ok(out) => prop_assert_eq!(out.len(), n),
            Err(Error::Truncated { .. }) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
