//! Deterministic count-based model construction from a catalog, and the
//! text serialization of the resulting bank.
//!
//! Two architectures are built side by side:
//!
//! * one left-to-right model per label, with one stage per pattern position
//!   (used for maximum-likelihood scoring of windows);
//! * a single model whose hidden states are the labels themselves (used for
//!   direct label decoding).
//!
//! Emission probabilities use add-alpha smoothing:
//! `(count + alpha) / (total + alpha * M)`.

use std::collections::HashMap;

use crate::error::{GarError, Result};
use crate::event::Vocabulary;
use crate::hmm::HmmModel;
use crate::ontology::Catalog;

/// Default self-loop bias of the label-state model.
pub const DEFAULT_SELF_LOOP: f64 = 0.6;

/// Default emission smoothing.
pub const DEFAULT_ALPHA: f64 = 0.1;

/// The trained models for one catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBank {
    /// One left-to-right model per label, in first-seen catalog order.
    per_class: Vec<(String, HmmModel)>,
    /// One hidden state per label.
    label_state: HmmModel,
    alpha: f64,
    self_loop: f64,
}

impl ModelBank {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.per_class.iter().map(|(label, _)| label.as_str())
    }

    pub fn model_for(&self, label: &str) -> Option<&HmmModel> {
        self.per_class
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, m)| m)
    }

    pub fn per_class(&self) -> &[(String, HmmModel)] {
        &self.per_class
    }

    pub fn label_state(&self) -> &HmmModel {
        &self.label_state
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn self_loop(&self) -> f64 {
        self.self_loop
    }

    pub fn replace_model(&mut self, label: &str, model: HmmModel) -> Result<()> {
        match self.per_class.iter_mut().find(|(l, _)| l == label) {
            Some((_, slot)) => {
                *slot = model;
                Ok(())
            }
            None => Err(GarError::Domain(format!("unknown label `{label}`"))),
        }
    }

    pub fn replace_label_state(&mut self, model: HmmModel) {
        self.label_state = model;
    }
}

/// Builds the bank for a catalog with smoothing `alpha` and label-state
/// self-loop bias `self_loop`.
pub fn build_model_bank(catalog: &Catalog, alpha: f64, self_loop: f64) -> Result<ModelBank> {
    if catalog.entries.is_empty() {
        return Err(GarError::Validation("empty catalog".into()));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(GarError::Domain(format!("alpha {alpha} must be positive")));
    }
    if self_loop.is_nan() || self_loop <= 0.0 || self_loop >= 1.0 {
        return Err(GarError::Domain(format!(
            "self-loop bias {self_loop} outside (0, 1)"
        )));
    }

    let m = catalog.vocab.len();
    let stages = catalog.window;

    // Group patterns by label, preserving first-seen label order.
    let mut order: Vec<String> = Vec::new();
    let mut patterns: HashMap<&str, Vec<&[String]>> = HashMap::new();
    for entry in &catalog.entries {
        if !patterns.contains_key(entry.label.as_str()) {
            order.push(entry.label.clone());
        }
        patterns
            .entry(entry.label.as_str())
            .or_default()
            .push(&entry.pattern);
    }

    let mut per_class = Vec::with_capacity(order.len());
    for label in &order {
        let pats = &patterns[label.as_str()];
        let total = pats.len() as f64;
        let mut b = vec![0.0; stages * m];
        for stage in 0..stages {
            let mut counts = vec![0u32; m];
            for pat in pats {
                let code = catalog
                    .vocab
                    .lookup(&pat[stage])
                    .expect("pattern symbols resolve in the catalog vocabulary");
                counts[code] += 1;
            }
            for k in 0..m {
                b[stage * m + k] = (counts[k] as f64 + alpha) / (total + alpha * m as f64);
            }
        }
        let mut a = vec![0.0; stages * stages];
        for i in 0..stages {
            let next = if i + 1 < stages { i + 1 } else { i };
            a[i * stages + next] = 1.0;
        }
        let mut pi = vec![0.0; stages];
        pi[0] = 1.0;
        let state_labels = (0..stages).map(|i| format!("stage{i}")).collect();
        per_class.push((
            label.clone(),
            HmmModel::new(stages, m, a, b, pi, state_labels)?,
        ));
    }

    // Label-state model: emissions pooled over each label's patterns.
    let n = order.len();
    let mut b = vec![0.0; n * m];
    for (row, label) in order.iter().enumerate() {
        let pats = &patterns[label.as_str()];
        let mut counts = vec![0u32; m];
        let mut total = 0u32;
        for pat in pats {
            for sym in pat.iter() {
                let code = catalog
                    .vocab
                    .lookup(sym)
                    .expect("pattern symbols resolve in the catalog vocabulary");
                counts[code] += 1;
                total += 1;
            }
        }
        for k in 0..m {
            b[row * m + k] = (counts[k] as f64 + alpha) / (total as f64 + alpha * m as f64);
        }
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        if n == 1 {
            a[0] = 1.0;
        } else {
            for j in 0..n {
                a[i * n + j] = if i == j {
                    self_loop
                } else {
                    (1.0 - self_loop) / (n - 1) as f64
                };
            }
        }
    }
    let pi = vec![1.0 / n as f64; n];
    let label_state = HmmModel::new(n, m, a, b, pi, order.clone())?;

    Ok(ModelBank {
        per_class,
        label_state,
        alpha,
        self_loop,
    })
}

/// Forward log-likelihood of the window under every per-class model, in
/// label order.
pub fn score_all(bank: &ModelBank, codes: &[usize]) -> Result<Vec<(String, f64)>> {
    let mut scores = Vec::with_capacity(bank.per_class.len());
    for (label, model) in &bank.per_class {
        scores.push((label.clone(), model.forward_log_likelihood(codes)?));
    }
    Ok(scores)
}

/// The best-scoring label. Ties break toward the lexicographically smaller
/// label so the choice never depends on catalog order.
pub fn best_label(scores: &[(String, f64)]) -> Option<(&str, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (label, score) in scores {
        match best {
            None => best = Some((label, *score)),
            Some((bl, bs)) => {
                if *score > bs || (*score == bs && label.as_str() < bl) {
                    best = Some((label, *score));
                }
            }
        }
    }
    best
}

/// The highest log score any length-`len` window can reach under the model:
/// the best state path where every state emits its most likely symbol. Used
/// to normalize scores into confidences.
#[allow(clippy::needless_range_loop)]
pub fn best_possible_log_score(model: &HmmModel, len: usize) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let n = model.n_states();
    let max_emit: Vec<f64> = (0..n)
        .map(|i| {
            (0..model.vocab_size())
                .map(|k| model.emission(i, k))
                .fold(f64::NEG_INFINITY, f64::max)
                .ln()
        })
        .collect();
    let mut v: Vec<f64> = (0..n).map(|i| model.initial(i).ln() + max_emit[i]).collect();
    for _ in 1..len {
        let mut next = vec![f64::NEG_INFINITY; n];
        for j in 0..n {
            for i in 0..n {
                let cand = v[i] + model.transition(i, j).ln();
                if cand > next[j] {
                    next[j] = cand;
                }
            }
            next[j] += max_emit[j];
        }
        v = next;
    }
    v.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// Serialization: a line-oriented matrix format. Floats are written with 17
// significant digits so parsing restores them bit-exactly.
// ---------------------------------------------------------------------------

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_model(out: &mut String, model: &HmmModel) {
    out.push_str(&format!("states {}\n", model.n_states()));
    for label in model.state_labels() {
        out.push_str(label);
        out.push('\n');
    }
    for row in 0..model.n_states() {
        let cells: Vec<String> = (0..model.n_states())
            .map(|j| fmt_f64(model.transition(row, j)))
            .collect();
        out.push_str(&format!("A {}\n", cells.join(" ")));
    }
    for row in 0..model.n_states() {
        let cells: Vec<String> = (0..model.vocab_size())
            .map(|k| fmt_f64(model.emission(row, k)))
            .collect();
        out.push_str(&format!("B {}\n", cells.join(" ")));
    }
    let cells: Vec<String> = (0..model.n_states())
        .map(|i| fmt_f64(model.initial(i)))
        .collect();
    out.push_str(&format!("pi {}\n", cells.join(" ")));
}

/// Serializes a bank together with the vocabulary it was trained against.
pub fn serialize_bank(bank: &ModelBank, vocab: &Vocabulary) -> String {
    let mut out = String::new();
    out.push_str(&format!("alpha {}\n", fmt_f64(bank.alpha)));
    out.push_str(&format!("self_loop {}\n", fmt_f64(bank.self_loop)));
    out.push_str(&format!("vocab {}\n", vocab.len()));
    for name in vocab.names() {
        out.push_str(name);
        out.push('\n');
    }
    out.push_str(&format!("classes {}\n", bank.per_class.len()));
    for (label, model) in &bank.per_class {
        out.push_str(&format!("class {label}\n"));
        write_model(&mut out, model);
    }
    out.push_str("label_state\n");
    write_model(&mut out, bank.label_state());
    out
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    lineno: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        LineReader {
            lines: text.lines(),
            lineno: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.lineno += 1;
        self.lines
            .next()
            .ok_or_else(|| GarError::parse(self.lineno, "unexpected end of bank data"))
    }

    fn expect_field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .map(str::trim)
            .ok_or_else(|| GarError::parse(self.lineno, format!("expected `{key} ...`, got `{line}`")))
    }

    fn err(&self, msg: impl Into<String>) -> GarError {
        GarError::parse(self.lineno, msg)
    }
}

fn parse_f64(reader: &LineReader, text: &str) -> Result<f64> {
    text.parse()
        .map_err(|_| reader.err(format!("invalid float `{text}`")))
}

fn parse_row(reader: &LineReader, line: &str, key: &str, expect: usize) -> Result<Vec<f64>> {
    let body = line
        .strip_prefix(key)
        .ok_or_else(|| reader.err(format!("expected `{key} ...`, got `{line}`")))?;
    let cells: Vec<f64> = body
        .split_whitespace()
        .map(|c| parse_f64(reader, c))
        .collect::<Result<_>>()?;
    if cells.len() != expect {
        return Err(reader.err(format!("expected {expect} values, got {}", cells.len())));
    }
    Ok(cells)
}

fn read_model(reader: &mut LineReader, m: usize) -> Result<HmmModel> {
    let n: usize = reader
        .expect_field("states")?
        .parse()
        .map_err(|_| reader.err("invalid state count"))?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(reader.next()?.to_string());
    }
    let mut a = Vec::with_capacity(n * n);
    for _ in 0..n {
        let line = reader.next()?;
        a.extend(parse_row(reader, line, "A", n)?);
    }
    let mut b = Vec::with_capacity(n * m);
    for _ in 0..n {
        let line = reader.next()?;
        b.extend(parse_row(reader, line, "B", m)?);
    }
    let line = reader.next()?;
    let pi = parse_row(reader, line, "pi", n)?;
    HmmModel::new(n, m, a, b, pi, labels)
}

/// Parses a bank block produced by [`serialize_bank`].
pub fn parse_bank(text: &str) -> Result<(ModelBank, Vocabulary)> {
    let mut reader = LineReader::new(text);
    let alpha_text = reader.expect_field("alpha")?;
    let alpha = parse_f64(&reader, alpha_text)?;
    let self_loop_text = reader.expect_field("self_loop")?;
    let self_loop = parse_f64(&reader, self_loop_text)?;
    let vocab_len: usize = reader
        .expect_field("vocab")?
        .parse()
        .map_err(|_| reader.err("invalid vocab size"))?;
    let mut vocab = Vocabulary::new();
    for i in 0..vocab_len {
        let name = reader.next()?;
        if i == 0 {
            if name != crate::event::OOV_NAME {
                return Err(reader.err("bank vocabulary must start with the OOV symbol"));
            }
            continue;
        }
        vocab.intern(name)?;
    }
    vocab.finalize();

    let class_count: usize = reader
        .expect_field("classes")?
        .parse()
        .map_err(|_| reader.err("invalid class count"))?;
    let mut per_class = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let label = reader.expect_field("class")?.to_string();
        let model = read_model(&mut reader, vocab.len())?;
        per_class.push((label, model));
    }
    let marker = reader.next()?;
    if marker != "label_state" {
        return Err(reader.err(format!("expected `label_state`, got `{marker}`")));
    }
    let label_state = read_model(&mut reader, vocab.len())?;
    Ok((
        ModelBank {
            per_class,
            label_state,
            alpha,
            self_loop,
        },
        vocab,
    ))
}
