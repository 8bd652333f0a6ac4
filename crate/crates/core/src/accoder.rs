//! Integer range coder driven by per-symbol frequency tables.
//!
//! The coder keeps a 64-bit window (`low`, `range`) with `range` in
//! `[2^32, 2^64)` and renormalizes by 32-bit words. Carries into words that
//! were already produced are resolved with a one-word cache plus a count of
//! pending `0xFFFFFFFF` words. Words are written big-endian, bits MSB first.
//!
//! Symbols are coded in the order they are supplied; callers fix the traversal
//! (the residual link uses channel-major, then row-major order).

use crate::error::{Error, Result};

pub const TOTAL_BITS: u32 = 16;
/// Every table sums to this.
pub const TOTAL: u32 = 1 << TOTAL_BITS;

const WORD: u32 = 32;
const RANGE_FLOOR: u64 = 1 << 32;

/// Cumulative integer frequencies with total `2^16` and every symbol ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    cum: Vec<u32>,
}

impl FrequencyTable {
    pub fn from_frequencies(freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Model("empty alphabet".into()));
        }
        if freqs.contains(&0) {
            return Err(Error::Model("zero frequency".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &f in freqs {
            acc += u64::from(f);
            cum.push(acc.min(u64::from(u32::MAX)) as u32);
        }
        if acc != u64::from(TOTAL) {
            return Err(Error::Model(format!(
                "frequencies sum to {acc}, not {TOTAL}"
            )));
        }
        Ok(Self { cum })
    }

    pub fn uniform(q: usize) -> Result<Self> {
        quantize_pmf(&vec![1.0 / q as f64; q])
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn freq(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cum
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `-log2(freq / 2^16)`.
    pub fn cost_bits(&self, symbol: usize) -> f64 {
        f64::from(TOTAL_BITS) - f64::from(self.freq(symbol)).log2()
    }

    /// Symbol whose cumulative interval contains `target < 2^16`.
    fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

/// Largest-remainder apportionment of a pmf onto `2^16` with a floor of one
/// count per symbol; remainder ties go to the lower symbol index.
pub fn quantize_pmf(pmf: &[f64]) -> Result<FrequencyTable> {
    let q = pmf.len();
    if q == 0 || q > TOTAL as usize {
        return Err(Error::Model(format!(
            "alphabet of {q} symbols cannot be quantized to {TOTAL}"
        )));
    }
    if let Some(p) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::Model(format!("invalid probability {p}")));
    }
    let sum: f64 = pmf.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Model(format!("pmf sums to {sum}")));
    }
    let budget = u64::from(TOTAL) - q as u64;
    let mut freqs = Vec::with_capacity(q);
    let mut rems = Vec::with_capacity(q);
    let mut used = 0u64;
    for &p in pmf {
        let raw = p / sum * budget as f64;
        let base = (raw.floor() as u64).min(budget);
        used += base;
        freqs.push(1 + base);
        rems.push(raw - base as f64);
    }
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| rems[b].total_cmp(&rems[a]).then(a.cmp(&b)));
    if used <= budget {
        for i in 0..(budget - used) as usize {
            freqs[order[i % q]] += 1;
        }
    } else {
        // Only reachable through rounding in `raw`; trim the smallest remainders.
        let mut excess = used - budget;
        for &i in order.iter().rev().cycle() {
            if excess == 0 {
                break;
            }
            if freqs[i] > 1 {
                freqs[i] -= 1;
                excess -= 1;
            }
        }
    }
    let freqs: Vec<u32> = freqs.into_iter().map(|f| f as u32).collect();
    FrequencyTable::from_frequencies(&freqs)
}

/// Supplies the table for symbol `index`, given the symbols coded so far.
pub trait TableSource {
    fn table(&mut self, index: usize, history: &[u32]) -> &FrequencyTable;
}

/// The same table for every symbol.
#[derive(Debug, Clone)]
pub struct FixedTable(pub FrequencyTable);

impl TableSource for FixedTable {
    fn table(&mut self, _index: usize, _history: &[u32]) -> &FrequencyTable {
        &self.0
    }
}

/// A precomputed table per symbol position.
#[derive(Debug, Clone)]
pub struct TableSequence(pub Vec<FrequencyTable>);

impl TableSource for TableSequence {
    fn table(&mut self, index: usize, _history: &[u32]) -> &FrequencyTable {
        &self.0[index]
    }
}

/// Coded bytes plus the number of meaningful bits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl Bitstream {
    pub fn new(mut bytes: Vec<u8>, bit_len: usize) -> Result<Self> {
        if bit_len > 8 * bytes.len() {
            return Err(Error::Dimension(format!(
                "{bit_len} bits in {} bytes",
                bytes.len()
            )));
        }
        bytes.truncate(bit_len.div_ceil(8));
        Ok(Self { bytes, bit_len })
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self {
            bytes: crate::modem::bits_to_bytes(bits),
            bit_len: bits.len(),
        }
    }

    pub fn to_bits(&self) -> Vec<u8> {
        let mut bits = crate::modem::bytes_to_bits(&self.bytes);
        bits.truncate(self.bit_len);
        bits
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// 32 bits starting at bit `pos`, zero past the end of the buffer.
    fn word_at(&self, pos: usize) -> u32 {
        let mut w = 0u64;
        let first = pos / 8;
        for i in 0..5 {
            let b = self.bytes.get(first + i).copied().unwrap_or(0);
            w = (w << 8) | u64::from(b);
        }
        (w >> (8 - pos % 8)) as u32
    }
}

struct Encoder {
    low: u128,
    range: u64,
    cache: Option<u32>,
    pending: usize,
    words: Vec<u32>,
    shifted: usize,
}

impl Encoder {
    fn new() -> Self {
        Self {
            low: 0,
            range: u64::MAX,
            cache: None,
            pending: 0,
            words: Vec::new(),
            shifted: 0,
        }
    }

    fn encode(&mut self, cum: u32, freq: u32) {
        let r = self.range >> TOTAL_BITS;
        self.low += u128::from(r) * u128::from(cum);
        self.range = r * u64::from(freq);
        while self.range < RANGE_FLOOR {
            self.shift_low();
            self.range <<= WORD;
        }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> 64) as u32;
        let top = (self.low >> WORD) as u32;
        if top != u32::MAX || carry != 0 {
            match self.cache {
                Some(c) => self.words.push(c.wrapping_add(carry)),
                None => debug_assert_eq!(carry, 0),
            }
            for _ in 0..self.pending {
                self.words.push(u32::MAX.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = Some(top);
        } else {
            self.pending += 1;
        }
        self.low = (self.low & 0xFFFF_FFFF) << WORD;
        self.shifted += 1;
    }

    /// Emits the shortest value inside the final interval.
    fn finish(mut self) -> Bitstream {
        let log_range = 63 - self.range.leading_zeros();
        let kept = 64 - log_range as usize;
        let granule = 1u128 << log_range;
        self.low = self.low.div_ceil(granule) * granule;
        let bit_len = WORD as usize * self.shifted + kept;
        self.shift_low();
        self.shift_low();
        if let Some(c) = self.cache {
            self.words.push(c);
        }
        self.words
            .extend(std::iter::repeat_n(u32::MAX, self.pending));
        let bytes = self.words.iter().flat_map(|w| w.to_be_bytes()).collect();
        Bitstream::new(bytes, bit_len).expect("flush keeps bit_len within the buffer")
    }
}

pub fn encode<S: TableSource + ?Sized>(symbols: &[u32], source: &mut S) -> Result<Bitstream> {
    let mut enc = Encoder::new();
    for (t, &s) in symbols.iter().enumerate() {
        let table = source.table(t, &symbols[..t]);
        let s = s as usize;
        if s >= table.len() {
            return Err(Error::Dimension(format!(
                "symbol {s} at position {t} outside alphabet of {}",
                table.len()
            )));
        }
        enc.encode(table.cum[s], table.freq(s));
    }
    Ok(enc.finish())
}

/// Inverse of [`encode`]. Invalid streams decode to some symbol sequence
/// rather than panicking; running out of input is a [`Error::Truncated`].
pub fn decode<S: TableSource + ?Sized>(
    stream: &Bitstream,
    source: &mut S,
    count: usize,
) -> Result<Vec<u32>> {
    let mut out: Vec<u32> = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    let limit = stream.bit_len + WORD as usize;
    let mut pos = 0usize;
    let read = |pos: &mut usize, decoded: usize| -> Result<u64> {
        if *pos >= limit {
            return Err(Error::Truncated {
                decoded,
                expected: count,
            });
        }
        let w = stream.word_at(*pos);
        *pos += WORD as usize;
        Ok(u64::from(w))
    };
    let mut code = (read(&mut pos, 0)? << WORD) | read(&mut pos, 0)?;
    let mut range = u64::MAX;
    for t in 0..count {
        let table = source.table(t, &out);
        let r = range >> TOTAL_BITS;
        let target = (code / r).min(u64::from(TOTAL - 1)) as u32;
        let s = table.find(target);
        code -= r * u64::from(table.cum[s]);
        range = r * u64::from(table.freq(s));
        if code >= range {
            code = range - 1;
        }
        out.push(s as u32);
        while range < RANGE_FLOOR {
            code = (code << WORD) | read(&mut pos, t + 1)?;
            range <<= WORD;
        }
    }
    Ok(out)
}

/// Ideal code length `Σ -log2(freq_t(s_t) / 2^16)` in bits.
pub fn codelength_bound<S: TableSource + ?Sized>(symbols: &[u32], source: &mut S) -> f64 {
    symbols
        .iter()
        .enumerate()
        .map(|(t, &s)| source.table(t, &symbols[..t]).cost_bits(s as usize))
        .sum()
}
