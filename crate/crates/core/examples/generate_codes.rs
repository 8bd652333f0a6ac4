//! Regenerates the bundled alist parity-check matrices.
//!
//! `cargo run --example generate_codes -- crates/core/codes`

use std::collections::HashSet;

use multihop_sim::modem::LdpcCode;

fn has_four_cycle(code: &LdpcCode) -> bool {
    let mut seen = HashSet::new();
    for row in code.checks() {
        for (i, &a) in row.iter().enumerate() {
            for &b in &row[i + 1..] {
                if !seen.insert((a, b)) {
                    return true;
                }
            }
        }
    }
    false
}

/// True when BP recovers the all-zero word from every double bit error.
fn corrects_double_errors(code: &LdpcCode) -> bool {
    let n = code.n();
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            let mut llr = vec![4.0; n];
            llr[i] = -4.0;
            llr[j] = -4.0;
            let out = code.decode(&llr, 50).expect("length matches");
            out.converged && out.codeword.iter().all(|&b| b == 0)
        })
    })
}

fn main() -> multihop_sim::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "codes".into());
    let specs = [
        ("r12_n96", 96, 3, 6, 1),
        ("r12_n1024", 1024, 3, 6, 2),
        ("r23_n96", 96, 3, 9, 3),
        ("r23_n1032", 1032, 3, 9, 4),
    ];
    for (name, n, dv, dc, seed) in specs {
        let mut seed = seed;
        let code = loop {
            let code = LdpcCode::construct_regular(n, dv, dc, seed)?;
            // short codes back the exhaustive double-error check
            if n > 100 || corrects_double_errors(&code) {
                break code;
            }
            seed += 100;
        };
        let path = format!("{dir}/{name}.alist");
        std::fs::write(&path, code.to_alist())
            .map_err(|e| multihop_sim::Error::Config(format!("cannot write {path}: {e}")))?;
        println!(
            "{path}: seed={seed} N={} K={} rate={:.4} four-cycles={}",
            code.n(),
            code.k(),
            code.rate(),
            has_four_cycle(&code)
        );
    }
    Ok(())
}
