//! The ontology catalog: authored observation patterns mapped to activity
//! labels, parsed from a small line-oriented rule language.
//!
//! Rule files are UTF-8 with `#` comments. Each rule is
//!
//! ```text
//! sym1 - sym2 - sym3 -> Label @tag1 @tag2
//! ```
//!
//! Pattern symbols are separated by hyphens; when at least one hyphen is
//! surrounded by whitespace only the spaced hyphens separate symbols, so
//! tokens such as `Entity-1_carrying_object` and labels such as `Loading-1`
//! keep their internal hyphens. Optional headers appear before the first
//! rule:
//!
//! ```text
//! @window 3            # pattern length (inferred from the first rule if absent)
//! @match stripped      # match events on their generic action name (default: exact)
//! @layer 1             # abstraction layer the labels belong to (default: 0)
//! ```
//!
//! Labels are registered into the catalog vocabulary alongside the pattern
//! symbols, so a recognized label can itself appear as an observation in a
//! later pass or layer.

use std::collections::{BTreeSet, HashSet};

use crate::error::{GarError, Result};
use crate::event::Vocabulary;

/// How a catalog matches incoming event tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    /// Match the annotated token as written (`H2_O1_Object_carrying`).
    Exact,
    /// Match the generic action with ID segments stripped (`Object_carrying`).
    Stripped,
}

/// One authored pattern: an ordered observation sequence and its label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OntologyEntry {
    pub pattern: Vec<String>,
    pub label: String,
    pub context_tags: BTreeSet<String>,
    pub layer: usize,
}

/// A parsed rule file: entries of uniform pattern length plus the vocabulary
/// they induce. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Catalog {
    pub entries: Vec<OntologyEntry>,
    pub vocab: Vocabulary,
    /// Pattern length shared by every entry; doubles as the window size.
    pub window: usize,
    pub match_mode: MatchMode,
    pub layer: usize,
}

impl Catalog {
    /// Labels in first-seen order.
    pub fn labels(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut labels = Vec::new();
        for entry in &self.entries {
            if seen.insert(entry.label.as_str()) {
                labels.push(entry.label.as_str());
            }
        }
        labels
    }

    /// Distinct context tags across all entries, sorted.
    pub fn context_tags(&self) -> BTreeSet<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.context_tags.iter().map(String::as_str))
            .collect()
    }

    /// Entries participating in the given tag context: entries carrying the
    /// tag plus untagged (context-neutral) entries.
    pub fn entries_for_tag(&self, tag: &str) -> Vec<&OntologyEntry> {
        self.entries
            .iter()
            .filter(|e| e.context_tags.is_empty() || e.context_tags.contains(tag))
            .collect()
    }
}

/// Parses a rule file into a catalog with a fresh vocabulary.
pub fn parse_catalog(text: &str) -> Result<Catalog> {
    parse_catalog_with_vocab(text, None)
}

/// Parses a rule file, optionally seeding symbol registration order from a
/// base vocabulary so codes stay stable across catalog edits.
pub fn parse_catalog_with_vocab(text: &str, base: Option<&Vocabulary>) -> Result<Catalog> {
    let mut vocab = Vocabulary::new();
    if let Some(base) = base {
        for name in base.names().iter().skip(1) {
            vocab.intern(name)?;
        }
    }

    let mut entries: Vec<OntologyEntry> = Vec::new();
    let mut seen_patterns: HashSet<Vec<String>> = HashSet::new();
    let mut window: Option<usize> = None;
    let mut match_mode = MatchMode::Exact;
    let mut layer = 0usize;
    let mut saw_rule = false;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('@') {
            if saw_rule {
                return Err(GarError::parse(
                    lineno,
                    "headers must precede the first rule",
                ));
            }
            parse_header(rest, lineno, &mut window, &mut match_mode, &mut layer)?;
            continue;
        }

        let (pattern, label, tags) = parse_rule(line, lineno)?;
        match window {
            None => window = Some(pattern.len()),
            Some(w) if w != pattern.len() => {
                return Err(GarError::parse(
                    lineno,
                    format!(
                        "rule `{line}` has {} symbols but the catalog window is {w}",
                        pattern.len()
                    ),
                ));
            }
            Some(_) => {}
        }
        if !seen_patterns.insert(pattern.clone()) {
            return Err(GarError::parse(
                lineno,
                format!("duplicate pattern in rule `{line}`"),
            ));
        }
        for sym in &pattern {
            vocab.intern(sym)?;
        }
        vocab.intern(&label)?;
        entries.push(OntologyEntry {
            pattern,
            label,
            context_tags: tags,
            layer,
        });
        saw_rule = true;
    }

    if entries.is_empty() {
        return Err(GarError::Validation("empty catalog: no rules found".into()));
    }
    vocab.finalize();
    Ok(Catalog {
        entries,
        vocab,
        window: window.expect("window set by first rule"),
        match_mode,
        layer,
    })
}

fn parse_header(
    rest: &str,
    lineno: usize,
    window: &mut Option<usize>,
    match_mode: &mut MatchMode,
    layer: &mut usize,
) -> Result<()> {
    let mut parts = rest.split_whitespace();
    let key = parts.next().unwrap_or("");
    let value = parts.next();
    if parts.next().is_some() {
        return Err(GarError::parse(lineno, format!("malformed header `@{rest}`")));
    }
    match (key, value) {
        ("window", Some(v)) => {
            let w: usize = v
                .parse()
                .map_err(|_| GarError::parse(lineno, format!("invalid window `{v}`")))?;
            if w == 0 {
                return Err(GarError::parse(lineno, "window must be at least 1"));
            }
            *window = Some(w);
        }
        ("match", Some("exact")) => *match_mode = MatchMode::Exact,
        ("match", Some("stripped")) => *match_mode = MatchMode::Stripped,
        ("match", Some(v)) => {
            return Err(GarError::parse(
                lineno,
                format!("unknown match mode `{v}` (expected exact|stripped)"),
            ))
        }
        ("layer", Some(v)) => {
            *layer = v
                .parse()
                .map_err(|_| GarError::parse(lineno, format!("invalid layer `{v}`")))?;
        }
        _ => {
            return Err(GarError::parse(lineno, format!("unknown header `@{rest}`")));
        }
    }
    Ok(())
}

fn parse_rule(line: &str, lineno: usize) -> Result<(Vec<String>, String, BTreeSet<String>)> {
    let (lhs, rhs) = line
        .split_once("->")
        .ok_or_else(|| GarError::parse(lineno, format!("rule `{line}` is missing `->`")))?;

    let pattern = split_pattern(lhs.trim());
    if pattern.is_empty() || pattern.iter().any(String::is_empty) {
        return Err(GarError::parse(
            lineno,
            format!("rule `{line}` has an empty pattern symbol"),
        ));
    }

    let mut rhs_parts = rhs.split_whitespace();
    let label = rhs_parts
        .next()
        .ok_or_else(|| GarError::parse(lineno, format!("rule `{line}` is missing a label")))?
        .to_string();
    if label.starts_with('@') {
        return Err(GarError::parse(
            lineno,
            format!("rule `{line}` is missing a label before its tags"),
        ));
    }
    let mut tags = BTreeSet::new();
    for part in rhs_parts {
        let tag = part.strip_prefix('@').ok_or_else(|| {
            GarError::parse(lineno, format!("unexpected trailing token `{part}`"))
        })?;
        if tag.is_empty() {
            return Err(GarError::parse(lineno, "empty tag"));
        }
        tags.insert(tag.to_string());
    }
    Ok((pattern, label, tags))
}

/// Spaced hyphens win; otherwise every hyphen separates.
fn split_pattern(lhs: &str) -> Vec<String> {
    let spaced = lhs.as_bytes().windows(3).any(|w| {
        w[1] == b'-' && (w[0] as char).is_whitespace() && (w[2] as char).is_whitespace()
    });
    if spaced {
        lhs.split(" - ")
            .map(|s| s.trim().to_string())
            .collect()
    } else {
        lhs.split('-').map(|s| s.trim().to_string()).collect()
    }
}

/// Renders a catalog in canonical form; parsing the output yields an equal
/// catalog.
pub fn render_catalog(catalog: &Catalog) -> String {
    let mut out = String::new();
    out.push_str(&format!("@window {}\n", catalog.window));
    if catalog.match_mode == MatchMode::Stripped {
        out.push_str("@match stripped\n");
    }
    if catalog.layer != 0 {
        out.push_str(&format!("@layer {}\n", catalog.layer));
    }
    for entry in &catalog.entries {
        out.push_str(&entry.pattern.join(" - "));
        out.push_str(" -> ");
        out.push_str(&entry.label);
        for tag in &entry.context_tags {
            out.push_str(&format!(" @{tag}"));
        }
        out.push('\n');
    }
    out
}
