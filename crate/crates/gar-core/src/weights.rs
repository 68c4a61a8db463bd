//! Pair correlation weights over ontology patterns.
//!
//! Every pattern of length `L` distributes unit weight over its `L - 1`
//! adjacent ordered pairs, so each occurrence carries a base weight
//! `x = 1 / (L - 1)`. A pair seen `y` times across the catalog accumulates
//!
//! ```text
//! weight(1) = x
//! weight(y) = weight(y-1) + (1 - weight(y-1)) / 2
//! ```
//!
//! which has the closed form `1 - (1 - x) / 2^(y-1)`: each extra occurrence
//! halves the remaining gap to 1.

use std::collections::BTreeMap;

use crate::error::{GarError, Result};
use crate::ontology::Catalog;

/// Cumulative correlation weight of a pair with base weight `x` seen `y`
/// times. Strictly increasing in `y` (for `x < 1`) and bounded above by 1.
pub fn correlation_weight(x: f64, y: u32) -> Result<f64> {
    if x.is_nan() || x <= 0.0 || x > 1.0 {
        return Err(GarError::Domain(format!(
            "base weight {x} outside (0, 1]"
        )));
    }
    if y == 0 {
        return Err(GarError::Domain("occurrence count must be at least 1".into()));
    }
    Ok(1.0 - (1.0 - x) * 0.5f64.powi((y - 1) as i32))
}

/// Occurrence counts and cumulative weights for every adjacent ordered pair
/// in a catalog. Immutable after construction.
#[derive(Clone, Debug)]
pub struct PairWeightTable {
    base: f64,
    counts: BTreeMap<(usize, usize), u32>,
    cumulative: BTreeMap<(usize, usize), f64>,
}

impl PairWeightTable {
    /// The per-occurrence base weight `x = 1 / (L - 1)`.
    pub fn base(&self) -> f64 {
        self.base
    }

    /// Times the ordered pair occurred across all patterns; 0 when absent.
    pub fn count(&self, a: usize, b: usize) -> u32 {
        self.counts.get(&(a, b)).copied().unwrap_or(0)
    }

    /// Cumulative weight of the ordered pair; 0 when the pair never occurs.
    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.cumulative.get(&(a, b)).copied().unwrap_or(0.0)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(usize, usize), &f64)> {
        self.cumulative.iter()
    }
}

/// Counts adjacent ordered pairs across all catalog entries and assigns each
/// its cumulative weight.
pub fn build_pair_weights(catalog: &Catalog) -> Result<PairWeightTable> {
    let len = catalog.window;
    if len < 2 {
        return Err(GarError::Domain(
            "pair weights need patterns of length at least 2".into(),
        ));
    }
    let base = 1.0 / (len - 1) as f64;
    let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for entry in &catalog.entries {
        for pair in entry.pattern.windows(2) {
            let a = catalog
                .vocab
                .lookup(&pair[0])
                .expect("pattern symbols resolve in the catalog vocabulary");
            let b = catalog
                .vocab
                .lookup(&pair[1])
                .expect("pattern symbols resolve in the catalog vocabulary");
            *counts.entry((a, b)).or_insert(0) += 1;
        }
    }
    let mut cumulative = BTreeMap::new();
    for (&pair, &count) in &counts {
        cumulative.insert(pair, correlation_weight(base, count)?);
    }
    Ok(PairWeightTable {
        base,
        counts,
        cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_catalog;

    /// The paper-shaped recursion, kept as an independent oracle.
    fn recursive_weight(x: f64, y: u32) -> f64 {
        let mut w = x;
        for _ in 1..y {
            w += (1.0 - w) / 2.0;
        }
        w
    }

    #[test]
    fn first_occurrence_returns_base() {
        assert_eq!(correlation_weight(0.5, 1).unwrap(), 0.5);
    }

    #[test]
    fn second_occurrence_halves_the_gap() {
        // 0.5 -> 0.5 + (1 - 0.5)/2 = 0.75, then 0.875, 0.9375.
        assert!((correlation_weight(0.5, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!((correlation_weight(0.5, 4).unwrap() - 0.9375).abs() < 1e-15);
    }

    #[test]
    fn closed_form_matches_recursion() {
        for xi in 1..=9 {
            let x = xi as f64 / 10.0;
            for y in 1..=20 {
                let closed = correlation_weight(x, y).unwrap();
                let recursive = recursive_weight(x, y);
                assert!(
                    (closed - recursive).abs() < 1e-12,
                    "x={x} y={y}: {closed} vs {recursive}"
                );
            }
        }
    }

    #[test]
    fn strictly_increasing_and_below_one() {
        for xi in 1..=9 {
            let x = xi as f64 / 10.0;
            let mut prev = 0.0;
            for y in 1..=64 {
                let w = correlation_weight(x, y).unwrap();
                // Strict growth holds until the gap to 1 drops below f64
                // resolution; past that the weight saturates at 1.
                if y <= 48 {
                    assert!(w > prev, "x={x} y={y}");
                    assert!(w < 1.0, "x={x} y={y}");
                } else {
                    assert!(w >= prev, "x={x} y={y}");
                    assert!(w <= 1.0, "x={x} y={y}");
                }
                prev = w;
            }
            // The limit is 1: by y = 64 the gap is below 1e-15.
            assert!(1.0 - prev < 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(correlation_weight(0.5, 0).is_err());
        assert!(correlation_weight(0.0, 1).is_err());
        assert!(correlation_weight(1.5, 1).is_err());
        assert!(correlation_weight(1.0, 3).is_ok());
    }

    #[test]
    fn single_entry_pairs_get_base_weight() {
        let catalog = parse_catalog("e1 - e3 - e5 -> Ontology-1\n").unwrap();
        let table = build_pair_weights(&catalog).unwrap();
        let e1 = catalog.vocab.lookup("e1").unwrap();
        let e3 = catalog.vocab.lookup("e3").unwrap();
        let e5 = catalog.vocab.lookup("e5").unwrap();
        assert_eq!(table.base(), 0.5);
        assert_eq!(table.weight(e1, e3), 0.5);
        assert_eq!(table.weight(e3, e5), 0.5);
        // Base weights of one entry's pairs always sum to 1.
        assert!((table.base() * (catalog.window - 1) as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn repeated_pair_accumulates() {
        let catalog = parse_catalog("e1 - e3 - e5 -> A\ne1 - e3 - e7 -> B\n").unwrap();
        let table = build_pair_weights(&catalog).unwrap();
        let e1 = catalog.vocab.lookup("e1").unwrap();
        let e3 = catalog.vocab.lookup("e3").unwrap();
        assert_eq!(table.count(e1, e3), 2);
        assert!((table.weight(e1, e3) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn absent_pair_reads_zero() {
        let catalog = parse_catalog("e1 - e3 - e5 -> A\n").unwrap();
        let table = build_pair_weights(&catalog).unwrap();
        let e1 = catalog.vocab.lookup("e1").unwrap();
        let e5 = catalog.vocab.lookup("e5").unwrap();
        assert_eq!(table.count(e1, e5), 0);
        assert_eq!(table.weight(e1, e5), 0.0);
    }

    #[test]
    fn length_one_patterns_rejected() {
        let catalog = parse_catalog("solo -> A\n").unwrap();
        assert!(build_pair_weights(&catalog).is_err());
    }
}
