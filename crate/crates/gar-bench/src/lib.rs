//! Synthetic workloads shared by the benchmarks.

use gar_core::{parse_catalog, Catalog};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A catalog of `labels` three-step patterns over `symbols` base symbols.
pub fn synthetic_catalog(symbols: usize, labels: usize) -> Catalog {
    let mut text = String::from("@window 3\n");
    for l in 0..labels {
        let a = l % symbols;
        let b = (l * 7 + 1) % symbols;
        let c = (l * 13 + 2) % symbols;
        text.push_str(&format!("sym{a} - sym{b} - sym{c} -> label{l}\n"));
    }
    parse_catalog(&text).expect("synthetic catalog parses")
}

/// A stream of `len` tokens drawn from the catalog's base symbols, seeded
/// for reproducible benchmarks. Roughly one window in ten matches a pattern.
pub fn synthetic_stream(catalog: &Catalog, len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(len);
    let entries = &catalog.entries;
    let mut i = 0;
    while i < len {
        if rng.random::<f64>() < 0.1 {
            let entry = &entries[rng.random_range(0..entries.len())];
            for sym in &entry.pattern {
                tokens.push(sym.clone());
            }
            i += entry.pattern.len();
        } else {
            let code = rng.random_range(1..catalog.vocab.len());
            tokens.push(catalog.vocab.name(code).unwrap().to_string());
            i += 1;
        }
    }
    tokens.truncate(len);
    tokens
}
