//! Observation vocabulary, event records, and the integer encoding shared by
//! every other module.
//!
//! Events arrive as underscore-joined tokens, optionally annotated with entity
//! and object identifiers (`H2_O1_Object_carrying`). The vocabulary assigns a
//! dense integer code to each registered token and reserves code 0 for
//! out-of-vocabulary tokens, so streams with vocabulary drift stay processable.

use std::collections::HashMap;

use regex::Regex;

use crate::error::{GarError, Result};

/// Name of the reserved out-of-vocabulary symbol.
pub const OOV_NAME: &str = "__oov__";

/// Code of the reserved out-of-vocabulary symbol.
pub const OOV_INDEX: usize = 0;

/// A registered observation token together with its dense code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationSymbol {
    pub name: String,
    pub index: usize,
}

/// An ordered, append-only symbol table. Code 0 is always the OOV symbol.
///
/// Once finalized the table is immutable and shareable across threads.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
    finalized: bool,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut vocab = Vocabulary {
            names: Vec::new(),
            index: HashMap::new(),
            finalized: false,
        };
        vocab.names.push(OOV_NAME.to_string());
        vocab.index.insert(OOV_NAME.to_string(), OOV_INDEX);
        vocab
    }

    /// Registers `name`, returning its code. Registering an existing name is
    /// idempotent. Names must be single whitespace-free tokens.
    pub fn intern(&mut self, name: &str) -> Result<usize> {
        if self.finalized {
            return Err(GarError::Validation(format!(
                "vocabulary is finalized; cannot register `{name}`"
            )));
        }
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(GarError::Validation(format!(
                "symbol name `{name}` must be a nonempty whitespace-free token"
            )));
        }
        if name == OOV_NAME {
            return Err(GarError::Validation(format!(
                "`{OOV_NAME}` is reserved for out-of-vocabulary tokens"
            )));
        }
        if let Some(&code) = self.index.get(name) {
            return Ok(code);
        }
        let code = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), code);
        Ok(code)
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    /// Number of symbols including the OOV reservation.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the OOV symbol is always present
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, code: usize) -> Option<&str> {
        self.names.get(code).map(String::as_str)
    }

    pub fn symbol(&self, code: usize) -> Option<ObservationSymbol> {
        self.names.get(code).map(|name| ObservationSymbol {
            name: name.clone(),
            index: code,
        })
    }

    /// Total encoding: unregistered names map to [`OOV_INDEX`].
    pub fn code_of(&self, name: &str) -> usize {
        self.lookup(name).unwrap_or(OOV_INDEX)
    }

    /// Registered names in code order (including the OOV entry at index 0).
    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Parses a vocabulary listing: one symbol per line, `#` comments and
    /// blank lines ignored.
    pub fn parse(text: &str) -> Result<Vocabulary> {
        let mut vocab = Vocabulary::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            vocab.intern(line).map_err(|e| match e {
                GarError::Validation(msg) => GarError::parse(lineno + 1, msg),
                other => other,
            })?;
        }
        Ok(vocab)
    }

    /// Stable fingerprint of the symbol table (FNV-1a over names in code
    /// order). Used to check that a persisted model bank and a freshly loaded
    /// catalog agree on the encoding.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for name in &self.names {
            for byte in name.as_bytes() {
                hash ^= u64::from(*byte);
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
            hash ^= u64::from(b'\n');
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }
}

/// One annotated atomic action from the observation stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationEvent {
    /// The full annotated token, e.g. `H2_O1_Object_carrying`.
    pub token: String,
    /// Entity identifiers referenced by the token, in token order.
    pub entity_ids: Vec<String>,
    /// Object identifiers referenced by the token, in token order.
    pub object_ids: Vec<String>,
    /// Monotonic tick; synthesized from stream position when absent.
    pub timestamp: u64,
    /// Detection confidence in [0, 1].
    pub confidence: f64,
}

/// A token with its identifier annotations separated out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StrippedToken {
    /// The generic action name with ID segments removed.
    pub action: String,
    pub entity_ids: Vec<String>,
    pub object_ids: Vec<String>,
}

/// Recognizes entity/object identifier segments inside underscore-joined
/// tokens. The defaults follow the `H<k>` / `O<k>` convention (plus the
/// `Entity-<k>` placeholder style seen in authored ontologies).
#[derive(Clone, Debug)]
pub struct IdGrammar {
    entity: Regex,
    object: Regex,
}

impl Default for IdGrammar {
    fn default() -> Self {
        IdGrammar::new(r"^(?:H\d+|Entity-\d+)$", r"^O\d+$").expect("default grammar is valid")
    }
}

impl IdGrammar {
    pub fn new(entity_pattern: &str, object_pattern: &str) -> Result<IdGrammar> {
        let entity = Regex::new(entity_pattern)
            .map_err(|e| GarError::Config(format!("invalid entity id pattern: {e}")))?;
        let object = Regex::new(object_pattern)
            .map_err(|e| GarError::Config(format!("invalid object id pattern: {e}")))?;
        Ok(IdGrammar { entity, object })
    }

    fn is_id(&self, segment: &str) -> bool {
        self.entity.is_match(segment) || self.object.is_match(segment)
    }

    /// Splits a token into its generic action and the ID segments that prefix
    /// or suffix it. `H3_O2_Giving_H2` becomes action `Giving` with entities
    /// `[H3, H2]` and objects `[O2]`. Tokens without recognizable ID segments,
    /// and tokens made of nothing but IDs, pass through unchanged.
    pub fn strip(&self, token: &str) -> StrippedToken {
        let segments: Vec<&str> = token.split('_').collect();
        let mut lo = 0;
        while lo < segments.len() && self.is_id(segments[lo]) {
            lo += 1;
        }
        let mut hi = segments.len();
        while hi > lo && self.is_id(segments[hi - 1]) {
            hi -= 1;
        }
        if lo == hi {
            // Nothing left for an action name; keep the token as-is.
            return StrippedToken {
                action: token.to_string(),
                entity_ids: Vec::new(),
                object_ids: Vec::new(),
            };
        }
        let mut entity_ids = Vec::new();
        let mut object_ids = Vec::new();
        for seg in segments[..lo].iter().chain(segments[hi..].iter()) {
            if self.entity.is_match(seg) {
                entity_ids.push((*seg).to_string());
            } else {
                object_ids.push((*seg).to_string());
            }
        }
        StrippedToken {
            action: segments[lo..hi].join("_"),
            entity_ids,
            object_ids,
        }
    }
}

/// Returns the generic action symbol of an event under the given grammar.
pub fn strip_ids(event: &ObservationEvent, grammar: &IdGrammar) -> String {
    grammar.strip(&event.token).action
}

/// Maps each event to its symbol code; unregistered tokens map to OOV.
pub fn encode(events: &[ObservationEvent], vocab: &Vocabulary) -> Vec<usize> {
    events.iter().map(|e| vocab.code_of(&e.token)).collect()
}

fn validate_confidence(value: f64, line: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&value) {
        return Err(GarError::Validation(format!(
            "line {line}: confidence {value} outside [0, 1]"
        )));
    }
    Ok(value)
}

fn make_event(token: &str, timestamp: u64, confidence: f64, grammar: &IdGrammar) -> ObservationEvent {
    let stripped = grammar.strip(token);
    ObservationEvent {
        token: token.to_string(),
        entity_ids: stripped.entity_ids,
        object_ids: stripped.object_ids,
        timestamp,
        confidence,
    }
}

/// Parses an event stream.
///
/// Two formats are accepted:
/// * compact: a bracketed, comma-separated token array (`[A,B,C]`), with
///   ordinal timestamps and confidence 1.0;
/// * line records: `timestamp<TAB>token<TAB>confidence`, where timestamp and
///   confidence are optional (`token`, or `timestamp<TAB>token`). Omitted
///   timestamps default to the event's ordinal position, omitted confidences
///   to 1.0. `#` comment lines and blank lines are skipped.
pub fn parse_event_stream(text: &str, grammar: &IdGrammar) -> Result<Vec<ObservationEvent>> {
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return parse_compact(trimmed, grammar);
    }
    let mut events: Vec<ObservationEvent> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let (timestamp, token, confidence) = match fields.as_slice() {
            [token] => (events.len() as u64, *token, 1.0),
            [ts, token] => (parse_timestamp(ts, lineno)?, *token, 1.0),
            [ts, token, conf] => {
                let conf: f64 = conf.parse().map_err(|_| {
                    GarError::parse(lineno, format!("invalid confidence `{conf}`"))
                })?;
                (
                    parse_timestamp(ts, lineno)?,
                    *token,
                    validate_confidence(conf, lineno)?,
                )
            }
            _ => {
                return Err(GarError::parse(
                    lineno,
                    format!("expected 1-3 tab-separated fields, found {}", fields.len()),
                ))
            }
        };
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(GarError::parse(
                lineno,
                format!("token `{token}` must be a single whitespace-free word"),
            ));
        }
        if let Some(last) = events.last() {
            if timestamp < last.timestamp {
                return Err(GarError::Validation(format!(
                    "line {lineno}: timestamp {timestamp} decreases below {}",
                    last.timestamp
                )));
            }
        }
        events.push(make_event(token, timestamp, confidence, grammar));
    }
    Ok(events)
}

fn parse_timestamp(text: &str, lineno: usize) -> Result<u64> {
    text.parse()
        .map_err(|_| GarError::parse(lineno, format!("invalid timestamp `{text}`")))
}

fn parse_compact(text: &str, grammar: &IdGrammar) -> Result<Vec<ObservationEvent>> {
    let inner = text
        .strip_prefix('[')
        .and_then(|rest| rest.strip_suffix(']'))
        .ok_or_else(|| GarError::parse(1, "compact stream must be wrapped in [ ]"))?;
    let mut events = Vec::new();
    for piece in inner.split(',') {
        let token = piece.trim();
        if token.is_empty() {
            continue;
        }
        if token.chars().any(char::is_whitespace) {
            return Err(GarError::parse(
                1,
                format!("token `{token}` must be a single whitespace-free word"),
            ));
        }
        let ordinal = events.len() as u64;
        events.push(make_event(token, ordinal, 1.0, grammar));
    }
    Ok(events)
}

/// Renders events in the canonical line format; `parse_event_stream` returns
/// an equal stream when fed the result.
pub fn serialize_event_stream(events: &[ObservationEvent]) -> String {
    let mut out = String::new();
    for event in events {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            event.timestamp, event.token, event.confidence
        ));
    }
    out
}
