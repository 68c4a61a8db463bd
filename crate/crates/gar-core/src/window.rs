//! Segmentation of encoded streams into scoring windows, plus the stream
//! filters that run before segmentation.
//!
//! Three grouping policies are supported for a stream of `n` codes and a
//! window width `w`:
//!
//! * fixed: the whole stream as one window (requires `n == w`);
//! * flooring: `floor(n / w)` disjoint windows from the front, leaving
//!   `n mod w` trailing codes unconsumed;
//! * sliding: `n - w + 1` overlapping windows with stride 1.

use std::collections::BTreeSet;

use crate::error::{GarError, Result};
use crate::event::ObservationEvent;
use crate::weights::PairWeightTable;

/// Which grouping policy to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowCase {
    Fixed,
    Flooring,
    Sliding,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowingPolicy {
    pub case: WindowCase,
    pub width: usize,
}

/// Whether the correlation rule touched a window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationAction {
    /// All pairs were at or above the threshold.
    None,
    /// At least one weak pair was re-anchored onto a better successor.
    Repaired,
    /// A weak pair had no better successor; the window was kept as-is.
    NoAlternative,
}

/// A scoring window over the input slice. `positions` index into the slice
/// the window was generated from; `span` is `(first, last)` of those
/// positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub codes: Vec<usize>,
    pub positions: Vec<usize>,
    pub span: (usize, usize),
    pub correlation: CorrelationAction,
}

impl Window {
    fn contiguous(codes: &[usize], start: usize, width: usize) -> Window {
        Window {
            codes: codes[start..start + width].to_vec(),
            positions: (start..start + width).collect(),
            span: (start, start + width - 1),
            correlation: CorrelationAction::None,
        }
    }
}

/// Splits `codes` into windows under the given policy.
pub fn generate_windows(codes: &[usize], policy: &WindowingPolicy) -> Result<Vec<Window>> {
    let n = codes.len();
    let w = policy.width;
    if w == 0 {
        return Err(GarError::Domain("window width must be at least 1".into()));
    }
    if n == 0 {
        return Err(GarError::Domain("cannot window an empty stream".into()));
    }
    match policy.case {
        WindowCase::Fixed => {
            if n != w {
                return Err(GarError::Domain(format!(
                    "fixed windowing requires stream length {n} to equal width {w}"
                )));
            }
            Ok(vec![Window::contiguous(codes, 0, n)])
        }
        WindowCase::Flooring => {
            if w > n {
                return Err(GarError::Domain(format!(
                    "width {w} exceeds stream length {n}"
                )));
            }
            Ok((0..n / w)
                .map(|k| Window::contiguous(codes, k * w, w))
                .collect())
        }
        WindowCase::Sliding => {
            if w > n {
                return Err(GarError::Domain(format!(
                    "width {w} exceeds stream length {n}"
                )));
            }
            Ok((0..=n - w)
                .map(|start| Window::contiguous(codes, start, w))
                .collect())
        }
    }
}

/// Order-preserving removal of events below the confidence floor.
pub fn filter_confidence(
    events: &[ObservationEvent],
    floor: f64,
) -> Result<Vec<ObservationEvent>> {
    if !(0.0..=1.0).contains(&floor) {
        return Err(GarError::Domain(format!(
            "confidence floor {floor} outside [0, 1]"
        )));
    }
    Ok(events
        .iter()
        .filter(|e| e.confidence >= floor)
        .cloned()
        .collect())
}

/// Removes trivial codes, then collapses immediate repeats of the same code
/// so only distinct consecutive events remain.
pub fn filter_trivial(codes: &[usize], trivial: &BTreeSet<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(codes.len());
    for &code in codes {
        if trivial.contains(&code) {
            continue;
        }
        if out.last() == Some(&code) {
            continue;
        }
        out.push(code);
    }
    out
}

/// Sliding windows with weak-pair repair.
///
/// Each stride-1 window is scanned left to right. When an adjacent pair
/// falls below the threshold, the succeeding events of the stream are
/// searched for the partner with the maximum cumulative weight; if one beats
/// the current pair, the rest of the window is re-anchored at it (keeping
/// length `w`). Windows whose weak pairs have no better successor are kept
/// and flagged.
pub fn correlation_select(
    codes: &[usize],
    table: &PairWeightTable,
    threshold: f64,
    w: usize,
) -> Result<Vec<Window>> {
    if threshold.is_nan() || threshold <= 0.0 || threshold > 1.0 {
        return Err(GarError::Domain(format!(
            "correlation threshold {threshold} outside (0, 1]"
        )));
    }
    let n = codes.len();
    if w < 2 {
        return Err(GarError::Domain(
            "correlation selection needs windows of at least 2 events".into(),
        ));
    }
    if w > n {
        return Err(GarError::Domain(format!(
            "width {w} exceeds stream length {n}"
        )));
    }

    let mut windows = Vec::with_capacity(n - w + 1);
    for start in 0..=n - w {
        let mut positions: Vec<usize> = (start..start + w).collect();
        let mut action = CorrelationAction::None;
        let mut i = 0;
        while i + 1 < w {
            let a = codes[positions[i]];
            let b = codes[positions[i + 1]];
            let current = table.weight(a, b);
            if current >= threshold {
                i += 1;
                continue;
            }
            // Find the succeeding event with the maximum cumulative weight.
            let mut best: Option<(f64, usize)> = None;
            let need = w - (i + 1);
            #[allow(clippy::needless_range_loop)]
            for p in positions[i + 1] + 1..n {
                if p + need > n {
                    break; // not enough room to refill the window
                }
                let weight = table.weight(a, codes[p]);
                if weight > current && best.is_none_or(|(bw, _)| weight > bw) {
                    best = Some((weight, p));
                }
            }
            match best {
                Some((_, p)) => {
                    for (k, pos) in positions[i + 1..].iter_mut().enumerate() {
                        *pos = p + k;
                    }
                    action = CorrelationAction::Repaired;
                }
                None => {
                    if action == CorrelationAction::None {
                        action = CorrelationAction::NoAlternative;
                    }
                }
            }
            i += 1;
        }
        windows.push(Window {
            codes: positions.iter().map(|&p| codes[p]).collect(),
            span: (positions[0], positions[w - 1]),
            positions,
            correlation: action,
        });
    }
    Ok(windows)
}

/// A frequency-disparity rule: when one of two symbols occurs at least
/// `min_margin` times more often than the other, the corresponding label is
/// reported with the margin.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyRule {
    pub symbol_a: usize,
    pub symbol_b: usize,
    pub label_a: String,
    pub label_b: String,
    pub min_margin: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyFinding {
    pub label: String,
    pub margin: u32,
}

/// Applies every rule to the occurrence counts of the stream. Rules whose
/// symbols tie (or differ by less than the margin) report nothing.
pub fn frequency_disparity(codes: &[usize], rules: &[FrequencyRule]) -> Vec<FrequencyFinding> {
    let mut findings = Vec::new();
    for rule in rules {
        let count_a = codes.iter().filter(|&&c| c == rule.symbol_a).count() as i64;
        let count_b = codes.iter().filter(|&&c| c == rule.symbol_b).count() as i64;
        let margin = (count_a - count_b).unsigned_abs() as u32;
        if margin >= rule.min_margin {
            let label = if count_a > count_b {
                rule.label_a.clone()
            } else {
                rule.label_b.clone()
            };
            findings.push(FrequencyFinding { label, margin });
        }
    }
    findings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_catalog;
    use crate::weights::build_pair_weights;

    fn sliding(w: usize) -> WindowingPolicy {
        WindowingPolicy {
            case: WindowCase::Sliding,
            width: w,
        }
    }

    #[test]
    fn paper_instance_eleven_three() {
        let codes: Vec<usize> = (0..11).collect();
        let slide = generate_windows(&codes, &sliding(3)).unwrap();
        assert_eq!(slide.len(), 9);
        let floor = generate_windows(
            &codes,
            &WindowingPolicy {
                case: WindowCase::Flooring,
                width: 3,
            },
        )
        .unwrap();
        assert_eq!(floor.len(), 3);
        assert_eq!(floor[0].span, (0, 2));
        assert_eq!(floor[2].span, (6, 8));
        // Indices 9 and 10 stay unconsumed.
        assert!(floor.iter().all(|w| w.span.1 <= 8));
    }

    #[test]
    fn fixed_case_requires_equal_length() {
        let codes = vec![1, 2, 3];
        let ok = generate_windows(
            &codes,
            &WindowingPolicy {
                case: WindowCase::Fixed,
                width: 3,
            },
        )
        .unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].span, (0, 2));
        let err = generate_windows(
            &codes,
            &WindowingPolicy {
                case: WindowCase::Fixed,
                width: 2,
            },
        );
        assert!(err.is_err());
    }

    #[test]
    fn oversized_width_rejected() {
        let codes = vec![1, 2];
        assert!(generate_windows(&codes, &sliding(3)).is_err());
    }

    #[test]
    fn sliding_spans_advance_by_one() {
        let codes: Vec<usize> = (0..6).collect();
        let windows = generate_windows(&codes, &sliding(2)).unwrap();
        for (k, win) in windows.iter().enumerate() {
            assert_eq!(win.span.0, k);
        }
    }

    fn event(token: &str, confidence: f64) -> ObservationEvent {
        ObservationEvent {
            token: token.into(),
            entity_ids: vec![],
            object_ids: vec![],
            timestamp: 0,
            confidence,
        }
    }

    #[test]
    fn confidence_filter_cases() {
        let events = vec![event("a", 0.9), event("b", 0.4), event("c", 0.95)];
        assert_eq!(filter_confidence(&events, 0.0).unwrap().len(), 3);
        let kept = filter_confidence(&events, 0.5).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].token, "a");
        assert_eq!(kept[1].token, "c");
        let strict = filter_confidence(&events, 1.0).unwrap();
        assert!(strict.is_empty());
        assert!(filter_confidence(&events, 1.5).is_err());
    }

    #[test]
    fn trivial_filter_collapses_repeats() {
        let trivial = BTreeSet::new();
        assert_eq!(filter_trivial(&[5, 5, 5, 7], &trivial), vec![5, 7]);
        let mut with_t = BTreeSet::new();
        with_t.insert(9);
        assert_eq!(filter_trivial(&[5, 9, 7], &with_t), vec![5, 7]);
        assert_eq!(filter_trivial(&[], &trivial), Vec::<usize>::new());
        // Removal can expose a new repeat, which also collapses.
        assert_eq!(filter_trivial(&[5, 9, 5], &with_t), vec![5]);
    }

    #[test]
    fn correlation_select_prefers_max_weight_successor() {
        // Catalog realizing weight(e1,e2) = 0 and weight(e1,e3) = 0.5.
        let catalog = parse_catalog("e1 - e3 - e5 -> A\ne2 - e4 - e6 -> B\n").unwrap();
        let table = build_pair_weights(&catalog).unwrap();
        let e1 = catalog.vocab.lookup("e1").unwrap();
        let e2 = catalog.vocab.lookup("e2").unwrap();
        let e3 = catalog.vocab.lookup("e3").unwrap();
        let stream = vec![e1, e2, e3];
        let windows = correlation_select(&stream, &table, 0.5, 2).unwrap();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].codes, vec![e1, e3]);
        assert_eq!(windows[0].positions, vec![0, 2]);
        assert_eq!(windows[0].correlation, CorrelationAction::Repaired);
        // (e2, e3) is weak too, but nothing follows: kept and flagged.
        assert_eq!(windows[1].codes, vec![e2, e3]);
        assert_eq!(windows[1].correlation, CorrelationAction::NoAlternative);
    }

    #[test]
    fn correlation_select_noop_when_all_pairs_strong() {
        let catalog = parse_catalog("e1 - e2 - e3 -> A\n").unwrap();
        let table = build_pair_weights(&catalog).unwrap();
        let stream: Vec<usize> = ["e1", "e2", "e3"]
            .iter()
            .map(|s| catalog.vocab.lookup(s).unwrap())
            .collect();
        let selected = correlation_select(&stream, &table, 0.5, 3).unwrap();
        let plain = generate_windows(&stream, &sliding(3)).unwrap();
        assert_eq!(selected, plain);
    }

    #[test]
    fn correlation_select_single_full_window_unchanged() {
        let catalog = parse_catalog("e1 - e3 - e5 -> A\n").unwrap();
        let table = build_pair_weights(&catalog).unwrap();
        let e1 = catalog.vocab.lookup("e1").unwrap();
        let e5 = catalog.vocab.lookup("e5").unwrap();
        // Pair (e1, e5) is weak, but w == n leaves no succeeding event.
        let windows = correlation_select(&[e1, e5], &table, 0.5, 2).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].codes, vec![e1, e5]);
        assert_eq!(windows[0].correlation, CorrelationAction::NoAlternative);
    }

    #[test]
    fn frequency_disparity_reports_dominant_label() {
        let rules = vec![FrequencyRule {
            symbol_a: 1,
            symbol_b: 2,
            label_a: "Loading".into(),
            label_b: "Unloading".into(),
            min_margin: 2,
        }];
        // Five removals vs one placement.
        let stream = vec![1, 1, 2, 1, 1, 1];
        let findings = frequency_disparity(&stream, &rules);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].label, "Loading");
        assert_eq!(findings[0].margin, 4);
    }

    #[test]
    fn frequency_disparity_silent_on_ties_and_empty() {
        let rules = vec![FrequencyRule {
            symbol_a: 1,
            symbol_b: 2,
            label_a: "Loading".into(),
            label_b: "Unloading".into(),
            min_margin: 1,
        }];
        assert!(frequency_disparity(&[1, 2, 2, 1], &rules).is_empty());
        assert!(frequency_disparity(&[], &rules).is_empty());
    }

    #[test]
    fn frequency_disparity_is_symmetric() {
        let forward = vec![FrequencyRule {
            symbol_a: 1,
            symbol_b: 2,
            label_a: "Loading".into(),
            label_b: "Unloading".into(),
            min_margin: 2,
        }];
        let swapped = vec![FrequencyRule {
            symbol_a: 2,
            symbol_b: 1,
            label_a: "Unloading".into(),
            label_b: "Loading".into(),
            min_margin: 2,
        }];
        let stream = vec![2, 2, 2, 1];
        assert_eq!(
            frequency_disparity(&stream, &forward),
            frequency_disparity(&stream, &swapped)
        );
    }
}
