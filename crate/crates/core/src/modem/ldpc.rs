//! Binary LDPC codes: alist I/O, systematic encoding derived by GF(2)
//! elimination, and flooding belief-propagation decoding.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Message magnitudes are clipped here to keep `tanh`/`atanh` finite.
const LLR_CLIP: f64 = 40.0;
const TANH_CLIP: f64 = 1.0 - 1e-15;

/// Check-node update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BpRule {
    #[default]
    SumProduct,
    MinSum,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    pub info: Vec<u8>,
    pub codeword: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct LdpcCode {
    n: usize,
    /// Variable indices of each check row.
    checks: Vec<Vec<usize>>,
    /// Edge ids (into the check-major edge list) for each variable.
    var_edges: Vec<Vec<usize>>,
    edge_var: Vec<usize>,
    check_start: Vec<usize>,
    info_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    /// `parity_rows[j]` selects the info bits whose XOR is parity bit `j`.
    parity_rows: Vec<Vec<u64>>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl LdpcCode {
    /// Builds a code from the variable lists of each parity check.
    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>) -> Result<Self> {
        let m = checks.len();
        if m == 0 || m >= n {
            return Err(Error::CodeConstruction(format!(
                "need 0 < M < N, got M={m}, N={n}"
            )));
        }
        let w = words(n);
        let mut dense: Vec<Vec<u64>> = vec![vec![0; w]; m];
        for (j, row) in checks.iter().enumerate() {
            for &v in row {
                if v >= n {
                    return Err(Error::CodeConstruction(format!(
                        "check {j} references variable {v} >= {n}"
                    )));
                }
                if dense[j][v / 64] >> (v % 64) & 1 == 1 {
                    return Err(Error::CodeConstruction(format!(
                        "check {j} lists variable {v} twice"
                    )));
                }
                dense[j][v / 64] |= 1 << (v % 64);
            }
        }

        // Reduced row echelon form; pivots are searched from the last column
        // backwards so parity bits gather at the end of the codeword.
        let mut pivots = Vec::with_capacity(m);
        let mut row = 0;
        for col in (0..n).rev() {
            if row == m {
                break;
            }
            let Some(p) = (row..m).find(|&r| dense[r][col / 64] >> (col % 64) & 1 == 1) else {
                continue;
            };
            dense.swap(row, p);
            let pivot_row = dense[row].clone();
            for (r, other) in dense.iter_mut().enumerate() {
                if r != row && other[col / 64] >> (col % 64) & 1 == 1 {
                    other.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(col);
            row += 1;
        }
        if pivots.len() < m {
            return Err(Error::CodeConstruction(format!(
                "parity-check matrix has rank {} < {m}",
                pivots.len()
            )));
        }

        let mut is_pivot = vec![false; n];
        pivots.iter().for_each(|&c| is_pivot[c] = true);
        let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info_positions.len();
        let parity_rows = dense
            .iter()
            .map(|r| {
                let mut sel = vec![0u64; words(k)];
                for (i, &c) in info_positions.iter().enumerate() {
                    if r[c / 64] >> (c % 64) & 1 == 1 {
                        sel[i / 64] |= 1 << (i % 64);
                    }
                }
                sel
            })
            .collect();

        let mut edge_var = Vec::new();
        let mut check_start = Vec::with_capacity(m + 1);
        let mut var_edges = vec![Vec::new(); n];
        for row in &checks {
            check_start.push(edge_var.len());
            for &v in row {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
        }
        check_start.push(edge_var.len());

        Ok(Self {
            n,
            checks,
            var_edges,
            edge_var,
            check_start,
            info_positions,
            parity_positions: pivots,
            parity_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.checks.len()
    }

    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    /// `H·cᵀ` over GF(2).
    pub fn syndrome(&self, codeword: &[u8]) -> Vec<u8> {
        self.checks
            .iter()
            .map(|row| row.iter().fold(0u8, |acc, &v| acc ^ (codeword[v] & 1)))
            .collect()
    }

    pub fn is_codeword(&self, codeword: &[u8]) -> bool {
        codeword.len() == self.n && self.syndrome(codeword).iter().all(|&s| s == 0)
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        let k = self.k();
        if info.len() != k {
            return Err(Error::Dimension(format!(
                "{} info bits for a code with K={k}",
                info.len()
            )));
        }
        let mut packed = vec![0u64; words(k)];
        for (i, &b) in info.iter().enumerate() {
            packed[i / 64] |= u64::from(b & 1) << (i % 64);
        }
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in self.info_positions.iter().zip(info) {
            cw[pos] = b & 1;
        }
        for (&pos, sel) in self.parity_positions.iter().zip(&self.parity_rows) {
            let ones: u32 = sel
                .iter()
                .zip(&packed)
                .map(|(a, b)| (a & b).count_ones())
                .sum();
            cw[pos] = (ones & 1) as u8;
        }
        Ok(cw)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    /// Sum-product decoding; positive LLR means bit 0.
    pub fn decode(&self, llrs: &[f64], max_iters: usize) -> Result<DecodeOutput> {
        self.decode_with(llrs, max_iters, BpRule::SumProduct)
    }

    /// Flooding BP. Stops as soon as the hard decision has no zero-valued
    /// posterior and a zero syndrome.
    pub fn decode_with(
        &self,
        llrs: &[f64],
        max_iters: usize,
        rule: BpRule,
    ) -> Result<DecodeOutput> {
        if llrs.len() != self.n {
            return Err(Error::Dimension(format!(
                "{} LLRs for a code with N={}",
                llrs.len(),
                self.n
            )));
        }
        let channel: Vec<f64> = llrs
            .iter()
            .map(|&l| {
                if l.is_nan() {
                    0.0
                } else {
                    l.clamp(-LLR_CLIP, LLR_CLIP)
                }
            })
            .collect();
        let mut posterior = channel.clone();
        let mut hard = vec![0u8; self.n];
        if self.hard_decide(&posterior, &mut hard) && max_iters == 0 {
            return Ok(self.output(hard, true, 0));
        }

        let n_edges = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&v| channel[v]).collect();
        let mut c2v = vec![0.0; n_edges];
        let mut scratch = Vec::new();

        for iter in 1..=max_iters {
            for j in 0..self.m() {
                let (s, t) = (self.check_start[j], self.check_start[j + 1]);
                match rule {
                    BpRule::SumProduct => {
                        check_update_tanh(&v2c[s..t], &mut c2v[s..t], &mut scratch)
                    }
                    BpRule::MinSum => check_update_min(&v2c[s..t], &mut c2v[s..t]),
                }
            }
            for v in 0..self.n {
                let edges = &self.var_edges[v];
                let total = channel[v] + edges.iter().map(|&e| c2v[e]).sum::<f64>();
                posterior[v] = total;
                for &e in edges {
                    v2c[e] = (total - c2v[e]).clamp(-LLR_CLIP, LLR_CLIP);
                }
            }
            if self.hard_decide(&posterior, &mut hard) {
                return Ok(self.output(hard, true, iter));
            }
        }
        Ok(self.output(hard, false, max_iters))
    }

    /// Fills `hard`; true when there is no erasure and the syndrome is zero.
    fn hard_decide(&self, posterior: &[f64], hard: &mut [u8]) -> bool {
        let mut erased = false;
        for (h, &p) in hard.iter_mut().zip(posterior) {
            erased |= p == 0.0;
            *h = u8::from(p < 0.0);
        }
        !erased
            && self
                .checks
                .iter()
                .all(|row| row.iter().fold(0u8, |acc, &v| acc ^ hard[v]) == 0)
    }

    fn output(&self, codeword: Vec<u8>, converged: bool, iterations: usize) -> DecodeOutput {
        DecodeOutput {
            info: self.extract_info(&codeword),
            codeword,
            converged,
            iterations,
        }
    }

    pub fn load_alist(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_alist(&text)
    }

    /// Parses MacKay's alist layout. Zero entries in the index lists are
    /// treated as padding.
    pub fn parse_alist(text: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text);
        let n = tokens.next_usize("N")?;
        let m = tokens.next_usize("M")?;
        let max_col = tokens.next_usize("max column weight")?;
        let max_row = tokens.next_usize("max row weight")?;
        let col_w: Vec<usize> = (0..n)
            .map(|_| tokens.next_usize("column weight"))
            .collect::<Result<_>>()?;
        let row_w: Vec<usize> = (0..m)
            .map(|_| tokens.next_usize("row weight"))
            .collect::<Result<_>>()?;
        if let Some(&w) = col_w.iter().find(|&&w| w > max_col) {
            return Err(tokens.error(format!("column weight {w} exceeds max {max_col}")));
        }
        if let Some(&w) = row_w.iter().find(|&&w| w > max_row) {
            return Err(tokens.error(format!("row weight {w} exceeds max {max_row}")));
        }
        if col_w.iter().sum::<usize>() != row_w.iter().sum::<usize>() {
            return Err(tokens.error("column and row weights disagree on edge count".into()));
        }
        let mut cols = Vec::with_capacity(n);
        for &w in &col_w {
            cols.push(tokens.index_list(w, m)?);
        }
        let mut rows = Vec::with_capacity(m);
        for &w in &row_w {
            rows.push(tokens.index_list(w, n)?);
        }
        let mut from_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (v, list) in cols.iter().enumerate() {
            for &c in list {
                from_cols[c].push(v);
            }
        }
        for (j, (a, b)) in from_cols.iter_mut().zip(&rows).enumerate() {
            let mut b = b.clone();
            a.sort_unstable();
            b.sort_unstable();
            if *a != b {
                return Err(Error::Parse {
                    offset: tokens.pos,
                    message: format!("row {} disagrees with the column lists", j + 1),
                });
            }
        }
        Self::from_checks(n, rows)
    }

    pub fn to_alist(&self) -> String {
        let m = self.m();
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (j, row) in self.checks.iter().enumerate() {
            for &v in row {
                cols[v].push(j);
            }
        }
        let max_col = cols.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.checks.iter().map(Vec::len).max().unwrap_or(0);
        let mut s = String::new();
        let join = |xs: &mut dyn Iterator<Item = usize>| {
            xs.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "{} {}", self.n, m);
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut cols.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut self.checks.iter().map(Vec::len)));
        for list in &cols {
            let mut it = list
                .iter()
                .map(|c| c + 1)
                .chain(std::iter::repeat(0))
                .take(max_col);
            let _ = writeln!(s, "{}", join(&mut it));
        }
        for row in &self.checks {
            let mut it = row
                .iter()
                .map(|v| v + 1)
                .chain(std::iter::repeat(0))
                .take(max_row);
            let _ = writeln!(s, "{}", join(&mut it));
        }
        s
    }

    /// Random `(col_w, row_w)`-regular code without 4-cycles where the
    /// greedy construction finds one, retried until `H` has full rank.
    pub fn construct_regular(n: usize, col_w: usize, row_w: usize, seed: u64) -> Result<Self> {
        if col_w == 0 || row_w <= col_w || !(n * col_w).is_multiple_of(row_w) {
            return Err(Error::CodeConstruction(format!(
                "no ({col_w},{row_w})-regular code of length {n}"
            )));
        }
        let m = n * col_w / row_w;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for attempt in 0..2000 {
            let strict = attempt < 1500;
            if let Some(rows) = try_regular(n, m, col_w, row_w, strict, &mut rng) {
                if let Ok(code) = Self::from_checks(n, rows) {
                    return Ok(code);
                }
            }
        }
        Err(Error::CodeConstruction(format!(
            "no full-rank ({col_w},{row_w}) code of length {n} found"
        )))
    }
}

fn try_regular(
    n: usize,
    m: usize,
    col_w: usize,
    row_w: usize,
    strict: bool,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<usize>>> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut blocked = vec![false; m];
    for &v in &order {
        blocked.iter_mut().for_each(|b| *b = false);
        let mut chosen: Vec<usize> = Vec::with_capacity(col_w);
        for _ in 0..col_w {
            let pick = (0..m)
                .filter(|&c| rows[c].len() < row_w && !chosen.contains(&c) && !blocked[c])
                .map(|c| (rows[c].len(), rng.random::<u32>(), c))
                .min()?;
            let c = pick.2;
            chosen.push(c);
            if strict {
                for &u in &rows[c] {
                    for &c2 in &cols[u] {
                        blocked[c2] = true;
                    }
                }
            }
        }
        for &c in &chosen {
            rows[c].push(v);
            cols[v].push(c);
        }
    }
    for r in &mut rows {
        r.sort_unstable();
    }
    Some(rows)
}

fn check_update_tanh(incoming: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    let d = incoming.len();
    scratch.clear();
    scratch.extend(incoming.iter().map(|&l| (0.5 * l).tanh()));
    // prefix products in `out`, then sweep back with a suffix product
    let mut acc = 1.0;
    for i in 0..d {
        out[i] = acc;
        acc *= scratch[i];
    }
    let mut suffix = 1.0;
    for i in (0..d).rev() {
        let p = (out[i] * suffix).clamp(-TANH_CLIP, TANH_CLIP);
        out[i] = 2.0 * p.atanh();
        suffix *= scratch[i];
    }
}

fn check_update_min(incoming: &[f64], out: &mut [f64]) {
    let mut sign = 1.0;
    let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, usize::MAX);
    for (i, &l) in incoming.iter().enumerate() {
        if l < 0.0 {
            sign = -sign;
        }
        let a = l.abs();
        if a < min1 {
            min2 = min1;
            min1 = a;
            arg = i;
        } else if a < min2 {
            min2 = a;
        }
    }
    for (i, (o, &l)) in out.iter_mut().zip(incoming).enumerate() {
        let s = if l < 0.0 { -sign } else { sign };
        *o = s * if i == arg { min2 } else { min1 };
    }
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn error(&self, message: String) -> Error {
        Error::Parse {
            offset: self.pos,
            message,
        }
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                message: format!("unexpected end of file, expected {what}"),
            });
        }
        self.text[start..self.pos]
            .parse()
            .map_err(|_| Error::Parse {
                offset: start,
                message: format!("invalid {what} '{}'", &self.text[start..self.pos]),
            })
    }

    /// Reads `count` one-based indices below `bound`, skipping zero padding.
    fn index_list(&mut self, count: usize, bound: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let x = self.next_usize("index")?;
            if x == 0 {
                continue;
            }
            if x > bound {
                return Err(self.error(format!("index {x} exceeds {bound}")));
            }
            if out.contains(&(x - 1)) {
                return Err(self.error(format!("duplicate index {x}")));
            }
            out.push(x - 1);
        }
        // trailing padding
        loop {
            let save = self.pos;
            match self.next_usize("padding") {
                Ok(0) => continue,
                _ => {
                    self.pos = save;
                    break;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LdpcCode {
        let checks = (0..4).map(|i| vec![i, i + 4]).collect();
        LdpcCode::from_checks(8, checks).unwrap()
    }

    #[test]
    fn toy_code_duplicates_info() {
        let code = toy();
        assert_eq!(code.k(), 4);
        assert_eq!(code.rate(), 0.5);
        for word in 0..16u8 {
            let info: Vec<u8> = (0..4).map(|i| (word >> i) & 1).collect();
            let cw = code.encode(&info).unwrap();
            assert_eq!(&cw[..4], &cw[4..]);
            assert_eq!(code.extract_info(&cw), info);
            assert!(code.is_codeword(&cw));
        }
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let checks = vec![vec![0, 1], vec![1, 2], vec![0, 2]];
        assert!(matches!(
            LdpcCode::from_checks(4, checks),
            Err(Error::CodeConstruction(_))
        ));
    }

    #[test]
    fn alist_roundtrip_and_padding() {
        let code = LdpcCode::construct_regular(24, 3, 6, 5).unwrap();
        let text = code.to_alist();
        let back = LdpcCode::parse_alist(&text).unwrap();
        assert_eq!(back.checks(), code.checks());
        // unpadded variant
        let toy_alist =
            "8 4\n1 2\n1 1 1 1 1 1 1 1\n2 2 2 2\n1\n2\n3\n4\n1\n2\n3\n4\n1 5\n2 6\n3 7\n4 8\n";
        assert_eq!(LdpcCode::parse_alist(toy_alist).unwrap().k(), 4);
    }

    #[test]
    fn inconsistent_alist_is_a_parse_error() {
        // declared column weights sum to 7 but rows to 8
        let bad = "8 4\n1 2\n1 1 1 1 1 1 1 0\n2 2 2 2\n";
        assert!(matches!(
            LdpcCode::parse_alist(bad),
            Err(Error::Parse { .. })
        ));
        // column lists disagree with row lists
        let bad = "4 2\n1 2\n1 1 1 1\n2 2\n1\n1\n2\n2\n1 3\n2 4\n";
        assert!(matches!(
            LdpcCode::parse_alist(bad),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            LdpcCode::parse_alist("8"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn decoder_edge_cases() {
        let code = LdpcCode::construct_regular(48, 3, 6, 1).unwrap();
        let zero = code.decode(&vec![0.0; 48], 10).unwrap();
        assert!(!zero.converged);
        assert_eq!(zero.iterations, 10);
        let info: Vec<u8> = (0..code.k()).map(|i| (i % 3 == 0) as u8).collect();
        let cw = code.encode(&info).unwrap();
        let llr: Vec<f64> = cw
            .iter()
            .map(|&b| if b == 0 { 20.0 } else { -20.0 })
            .collect();
        let out = code.decode(&llr, 50).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.info, info);
        assert!(code.decode(&llr[1..], 5).is_err());
    }

    #[test]
    fn min_sum_matches_reference() {
        let mut out = [0.0; 3];
        check_update_min(&[1.0, -2.0, 3.0], &mut out);
        assert_eq!(out, [-2.0, 1.0, -1.0]);
    }
}
