//! Recognition pipelines: the three architectures that compose windowing and
//! model scoring into activity conclusions.
//!
//! * Concatenated: every window is scored independently and the per-window
//!   labels are collected.
//! * Cascaded: a recognized window is replaced in the stream by its label
//!   code and scanning resumes at the substitution point, so recognized
//!   activities become observations for later recognition. With nothing
//!   recognized the stream passes through unchanged.
//! * Hybrid: the stream is partitioned by context (entity or catalog tag)
//!   and each context is recognized independently.
//!
//! A window's best label is accepted only when its log-likelihood reaches
//! the acceptance floor; by default that is the score a uniform-emission
//! model of the same length would achieve, so noise windows fall below it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::bank::{best_label, build_model_bank, score_all, ModelBank};
use crate::error::{GarError, Result};
use crate::event::{IdGrammar, ObservationEvent};
use crate::ontology::{Catalog, MatchMode};
use crate::weights::{build_pair_weights, PairWeightTable};
use crate::window::{
    correlation_select, frequency_disparity, generate_windows, CorrelationAction,
    FrequencyFinding, FrequencyRule, Window, WindowCase, WindowingPolicy,
};

/// Top-level composition style.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Concatenated,
    Cascaded,
    Hybrid,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let short = match self {
            Architecture::Concatenated => "N",
            Architecture::Cascaded => "C",
            Architecture::Hybrid => "H",
        };
        f.write_str(short)
    }
}

/// How the acceptance floor is derived for a window of length `len` over a
/// vocabulary of `m` symbols.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FloorSpec {
    /// The log score of a uniform-emission model: `-len * ln(m)`.
    Uniform,
    /// An absolute log-likelihood; `f64::INFINITY` accepts nothing.
    Fixed(f64),
}

impl FloorSpec {
    pub fn value(&self, m: usize, len: usize) -> f64 {
        match self {
            FloorSpec::Uniform => -(len as f64) * (m as f64).ln(),
            FloorSpec::Fixed(v) => *v,
        }
    }
}

/// Name-based filter configuration; resolved against each layer's
/// vocabulary when the layer is built.
#[derive(Clone, Debug, Default)]
pub struct FilterSettings {
    pub confidence_floor: f64,
    pub trivial_symbols: BTreeSet<String>,
    /// Collapse immediate repeats of the same code (on by default).
    pub collapse_repeats: Option<bool>,
    pub correlation_enabled: bool,
    /// Defaults to the pair table's base weight.
    pub correlation_threshold: Option<f64>,
    pub frequency_rules: Vec<FrequencyRuleSpec>,
}

#[derive(Clone, Debug)]
pub struct FrequencyRuleSpec {
    pub symbol_a: String,
    pub symbol_b: String,
    pub label_a: String,
    pub label_b: String,
    pub min_margin: u32,
}

/// Per-layer processing knobs.
#[derive(Clone, Debug)]
pub struct LayerSettings {
    /// Architecture used for this layer inside a stack (hybrid runs only;
    /// plain runs force every layer to the top-level architecture).
    pub arch: Architecture,
    pub case: WindowCase,
    pub floor: FloorSpec,
    pub max_passes: usize,
    pub filters: FilterSettings,
}

impl Default for LayerSettings {
    fn default() -> Self {
        LayerSettings {
            arch: Architecture::Cascaded,
            case: WindowCase::Sliding,
            floor: FloorSpec::Uniform,
            max_passes: 8,
            filters: FilterSettings::default(),
        }
    }
}

/// One recognition layer: a catalog, its trained bank, and resolved filters.
#[derive(Clone, Debug)]
pub struct Layer {
    pub catalog: Catalog,
    pub bank: ModelBank,
    pub settings: LayerSettings,
    frequency_rules: Vec<FrequencyRule>,
    pair_weights: Option<PairWeightTable>,
}

impl Layer {
    pub fn new(catalog: Catalog, bank: ModelBank, settings: LayerSettings) -> Result<Layer> {
        if settings.max_passes < 1 {
            return Err(GarError::Config("max_passes must be at least 1".into()));
        }
        // Unresolvable rule symbols get a code past the vocabulary so their
        // count is zero rather than the OOV count.
        let absent = catalog.vocab.len();
        let frequency_rules = settings
            .filters
            .frequency_rules
            .iter()
            .map(|rule| FrequencyRule {
                symbol_a: catalog.vocab.lookup(&rule.symbol_a).unwrap_or(absent),
                symbol_b: catalog.vocab.lookup(&rule.symbol_b).unwrap_or(absent),
                label_a: rule.label_a.clone(),
                label_b: rule.label_b.clone(),
                min_margin: rule.min_margin,
            })
            .collect();
        let pair_weights = if settings.filters.correlation_enabled {
            if settings.case != WindowCase::Sliding {
                return Err(GarError::Config(
                    "correlation selection applies to sliding windows only".into(),
                ));
            }
            Some(build_pair_weights(&catalog)?)
        } else {
            None
        };
        Ok(Layer {
            catalog,
            bank,
            settings,
            frequency_rules,
            pair_weights,
        })
    }

    /// Convenience constructor training the bank from the catalog.
    pub fn train(catalog: Catalog, alpha: f64, self_loop: f64, settings: LayerSettings) -> Result<Layer> {
        let bank = build_model_bank(&catalog, alpha, self_loop)?;
        Layer::new(catalog, bank, settings)
    }

    fn collapse_repeats(&self) -> bool {
        self.settings.filters.collapse_repeats.unwrap_or(true)
    }

    /// The observation name this layer matches for an incoming item name.
    fn match_name(&self, name: &str, grammar: &IdGrammar) -> String {
        match self.catalog.match_mode {
            MatchMode::Exact => name.to_string(),
            MatchMode::Stripped => grammar.strip(name).action,
        }
    }
}

/// An ordered stack of layers. Layer `k` consumes layer `k-1`'s substituted
/// stream, so every label a layer can emit must resolve in the next layer's
/// vocabulary.
#[derive(Clone, Debug)]
pub struct LayerStack {
    pub layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<LayerStack> {
        if layers.is_empty() {
            return Err(GarError::Config("a layer stack needs at least one layer".into()));
        }
        for k in 1..layers.len() {
            for label in layers[k - 1].catalog.labels() {
                if layers[k].catalog.vocab.lookup(label).is_none() {
                    return Err(GarError::Config(format!(
                        "layer {k} vocabulary is missing label `{label}` emitted by layer {}",
                        k - 1
                    )));
                }
            }
        }
        Ok(LayerStack { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// One element of a working stream: an observation name with its code in the
/// active layer's vocabulary, the original span it covers, and the original
/// event indices that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamItem {
    pub name: String,
    pub code: usize,
    pub span: (usize, usize),
    pub sources: Vec<usize>,
}

/// A recognized activity.
#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionResult {
    pub label: String,
    pub log_likelihood: f64,
    /// First and last original event index the recognition covers.
    pub span: (usize, usize),
    /// The original event indices actually consumed, ascending.
    pub sources: Vec<usize>,
    /// Number of working-stream items the window consumed.
    pub consumed: usize,
    pub layer: usize,
    pub architecture: Architecture,
    pub context: Option<String>,
    pub provenance: Vec<String>,
}

/// Structured trace of one layer run, consumed by the explain command and by
/// tests.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceEvent {
    ConfidenceRemoved {
        index: usize,
        token: String,
        confidence: f64,
    },
    TrivialRemoved {
        index: usize,
        name: String,
    },
    RepeatCollapsed {
        index: usize,
        name: String,
    },
    UnconsumedSuffix {
        count: usize,
    },
    StreamState {
        pass: usize,
        names: Vec<String>,
    },
    WindowScored {
        pass: usize,
        span: (usize, usize),
        names: Vec<String>,
        scores: Vec<(String, f64)>,
        floor: f64,
        accepted: Option<String>,
        correlation: CorrelationAction,
    },
    Substituted {
        pass: usize,
        label: String,
        span: (usize, usize),
        before_len: usize,
        after_len: usize,
    },
    Frequency {
        label: String,
        margin: u32,
    },
}

/// Everything one layer produced.
#[derive(Clone, Debug)]
pub struct LayerOutcome {
    pub layer: usize,
    pub results: Vec<RecognitionResult>,
    pub final_items: Vec<StreamItem>,
    pub frequency_findings: Vec<FrequencyFinding>,
    pub fused: Option<RecognitionResult>,
    pub trace: Vec<TraceEvent>,
}

/// The full outcome for one context (or the whole stream).
#[derive(Clone, Debug)]
pub struct StackOutcome {
    pub context: Option<String>,
    pub per_layer: Vec<LayerOutcome>,
}

impl StackOutcome {
    pub fn results(&self) -> impl Iterator<Item = &RecognitionResult> {
        self.per_layer.iter().flat_map(|l| l.results.iter())
    }
}

/// Identifies which layer, architecture, and context a run executes in; the
/// produced results are stamped with it.
pub struct RunScope<'a> {
    pub layer_idx: usize,
    pub architecture: Architecture,
    pub context: Option<&'a str>,
    /// When set, only these labels may be recognized (tag contexts).
    pub allowed: Option<&'a BTreeSet<String>>,
}

fn union_sources(items: &[StreamItem]) -> Vec<usize> {
    let mut sources: Vec<usize> = items.iter().flat_map(|i| i.sources.iter().copied()).collect();
    sources.sort_unstable();
    sources.dedup();
    sources
}

type ScoredWindow = (Vec<(String, f64)>, Option<(String, f64)>);

fn scored_best(
    layer: &Layer,
    codes: &[usize],
    allowed: Option<&BTreeSet<String>>,
) -> Result<ScoredWindow> {
    let mut scores = score_all(&layer.bank, codes)?;
    if let Some(allowed) = allowed {
        scores.retain(|(label, _)| allowed.contains(label));
    }
    let best = best_label(&scores).map(|(l, s)| (l.to_string(), s));
    Ok((scores, best))
}

/// Concatenated recognition of one prepared stream: windows are scored
/// independently and accepted labels are returned in span order. An empty
/// result is not an error.
pub fn run_nhmm(
    items: &[StreamItem],
    layer: &Layer,
    scope: &RunScope,
    trace: &mut Vec<TraceEvent>,
) -> Result<Vec<RecognitionResult>> {
    let w = layer.catalog.window;
    let n = items.len();
    let codes: Vec<usize> = items.iter().map(|i| i.code).collect();
    let m = layer.catalog.vocab.len();

    let windows: Vec<Window> = if n == 0 || (n < w && layer.settings.case != WindowCase::Fixed) {
        Vec::new()
    } else if let Some(table) = &layer.pair_weights {
        let threshold = layer
            .settings
            .filters
            .correlation_threshold
            .unwrap_or_else(|| table.base());
        correlation_select(&codes, table, threshold, w)?
    } else {
        generate_windows(
            &codes,
            &WindowingPolicy {
                case: layer.settings.case,
                width: w,
            },
        )?
    };

    if layer.settings.case == WindowCase::Flooring && !n.is_multiple_of(w) {
        trace.push(TraceEvent::UnconsumedSuffix { count: n % w });
    }

    let mut results = Vec::new();
    for window in &windows {
        let (scores, best) = scored_best(layer, &window.codes, scope.allowed)?;
        let floor = layer.settings.floor.value(m, window.codes.len());
        let accepted = best
            .as_ref()
            .filter(|(_, score)| *score >= floor)
            .map(|(label, _)| label.clone());
        trace.push(TraceEvent::WindowScored {
            pass: 1,
            span: window.span,
            names: window
                .positions
                .iter()
                .map(|&p| items[p].name.clone())
                .collect(),
            scores: scores.clone(),
            floor,
            accepted: accepted.clone(),
            correlation: window.correlation,
        });
        if let Some(label) = accepted {
            let (_, score) = best.expect("accepted implies a best label");
            let window_items: Vec<StreamItem> = window
                .positions
                .iter()
                .map(|&p| items[p].clone())
                .collect();
            let mut provenance = vec!["window".to_string()];
            match window.correlation {
                CorrelationAction::Repaired => provenance.push("correlation-repaired".into()),
                CorrelationAction::NoAlternative => provenance.push("correlation-kept".into()),
                CorrelationAction::None => {}
            }
            results.push(RecognitionResult {
                label,
                log_likelihood: score,
                span: (
                    window_items.first().map(|i| i.span.0).unwrap_or(0),
                    window_items.last().map(|i| i.span.1).unwrap_or(0),
                ),
                sources: union_sources(&window_items),
                consumed: window_items.len(),
                layer: scope.layer_idx,
                architecture: scope.architecture,
                context: scope.context.map(str::to_string),
                provenance,
            });
        }
    }
    Ok(results)
}

/// Cascaded recognition: scans left to right with stride 1; a recognized
/// window is replaced by its label code, scanning resumes at the
/// substitution point, and whole passes repeat until a pass makes no
/// substitution or `max_passes` is reached. Returns the final stream and the
/// accepted results. A stream with nothing recognized passes through intact.
pub fn run_chmm(
    items: Vec<StreamItem>,
    layer: &Layer,
    scope: &RunScope,
    trace: &mut Vec<TraceEvent>,
) -> Result<(Vec<StreamItem>, Vec<RecognitionResult>)> {
    let w = layer.catalog.window;
    if w < 2 {
        return Err(GarError::Config(
            "cascaded substitution needs a window of at least 2 events".into(),
        ));
    }
    let m = layer.catalog.vocab.len();
    let floor = layer.settings.floor.value(m, w);
    let mut items = items;
    let mut results = Vec::new();

    for pass in 1..=layer.settings.max_passes {
        trace.push(TraceEvent::StreamState {
            pass,
            names: items.iter().map(|i| i.name.clone()).collect(),
        });
        let mut substituted = false;
        let mut p = 0;
        while p + w <= items.len() {
            let codes: Vec<usize> = items[p..p + w].iter().map(|i| i.code).collect();
            let (scores, best) = scored_best(layer, &codes, scope.allowed)?;
            let accepted = best
                .as_ref()
                .filter(|(_, score)| *score >= floor)
                .map(|(label, _)| label.clone());
            trace.push(TraceEvent::WindowScored {
                pass,
                span: (p, p + w - 1),
                names: items[p..p + w].iter().map(|i| i.name.clone()).collect(),
                scores,
                floor,
                accepted: accepted.clone(),
                correlation: CorrelationAction::None,
            });
            match accepted {
                Some(label) => {
                    let (_, score) = best.expect("accepted implies a best label");
                    let consumed: Vec<StreamItem> = items[p..p + w].to_vec();
                    let span = (consumed[0].span.0, consumed[w - 1].span.1);
                    let sources = union_sources(&consumed);
                    let before_len = items.len();
                    let replacement = StreamItem {
                        code: layer.catalog.vocab.code_of(&label),
                        name: label.clone(),
                        span,
                        sources: sources.clone(),
                    };
                    items.splice(p..p + w, std::iter::once(replacement));
                    trace.push(TraceEvent::Substituted {
                        pass,
                        label: label.clone(),
                        span,
                        before_len,
                        after_len: items.len(),
                    });
                    trace.push(TraceEvent::StreamState {
                        pass,
                        names: items.iter().map(|i| i.name.clone()).collect(),
                    });
                    results.push(RecognitionResult {
                        label,
                        log_likelihood: score,
                        span,
                        sources,
                        consumed: w,
                        layer: scope.layer_idx,
                        architecture: scope.architecture,
                        context: scope.context.map(str::to_string),
                        provenance: vec![format!("pass{pass}"), "substituted".to_string()],
                    });
                    substituted = true;
                    // Scan resumes at the substitution point.
                }
                None => p += 1,
            }
        }
        if !substituted {
            break;
        }
    }
    Ok((items, results))
}

/// Maximum-likelihood fusion: the highest-scoring result wins; ties break by
/// earliest span start, then lexicographic label.
pub fn ml_fuse(results: &[RecognitionResult]) -> Result<RecognitionResult> {
    let mut best: Option<&RecognitionResult> = None;
    for result in results {
        best = Some(match best {
            None => result,
            Some(current) => {
                let better = result.log_likelihood > current.log_likelihood
                    || (result.log_likelihood == current.log_likelihood
                        && (result.span.0 < current.span.0
                            || (result.span.0 == current.span.0 && result.label < current.label)));
                if better {
                    result
                } else {
                    current
                }
            }
        });
    }
    best.cloned()
        .ok_or_else(|| GarError::Domain("cannot fuse an empty result set".into()))
}

// ---------------------------------------------------------------------------
// Context partitioning
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextMode {
    PerEntity,
    ByTag,
}

/// A partition of the stream into named contexts. Each context holds the
/// original event indices assigned to it, in stream order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextPartition {
    pub contexts: Vec<(String, Vec<usize>)>,
}

/// Per-entity contexts: each event joins the context of every entity it
/// references; events with no entity IDs fan out to all entities already
/// active at their timestamp.
pub fn partition_per_entity(events: &[ObservationEvent]) -> Result<ContextPartition> {
    let mut first_seen: BTreeMap<&str, u64> = BTreeMap::new();
    for event in events {
        for id in &event.entity_ids {
            first_seen.entry(id.as_str()).or_insert(event.timestamp);
        }
    }
    if first_seen.is_empty() {
        return Err(GarError::Validation(
            "no entity identifiers found in the stream; use tag-based contexts instead".into(),
        ));
    }
    let mut contexts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (index, event) in events.iter().enumerate() {
        if event.entity_ids.is_empty() {
            for (&entity, &since) in &first_seen {
                if since <= event.timestamp {
                    contexts.entry(entity).or_default().push(index);
                }
            }
        } else {
            let mut seen = BTreeSet::new();
            for id in &event.entity_ids {
                if seen.insert(id.as_str()) {
                    contexts.entry(id.as_str()).or_default().push(index);
                }
            }
        }
    }
    Ok(ContextPartition {
        contexts: contexts
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    })
}

/// Tag contexts: each catalog tag becomes a context holding the events whose
/// matched name occurs in a pattern of an entry carrying that tag (untagged
/// entries are context-neutral and contribute to every tag).
pub fn partition_by_tag(
    events: &[ObservationEvent],
    catalog: &Catalog,
    grammar: &IdGrammar,
) -> Result<ContextPartition> {
    let tags = catalog.context_tags();
    if tags.is_empty() {
        return Err(GarError::Config(
            "catalog declares no context tags; use per-entity contexts instead".into(),
        ));
    }
    let mut contexts = Vec::new();
    for tag in tags {
        let symbols: BTreeSet<&str> = catalog
            .entries_for_tag(tag)
            .iter()
            .flat_map(|e| e.pattern.iter().map(String::as_str))
            .collect();
        let mut indices = Vec::new();
        for (index, event) in events.iter().enumerate() {
            let name = match catalog.match_mode {
                MatchMode::Exact => event.token.clone(),
                MatchMode::Stripped => grammar.strip(&event.token).action,
            };
            if symbols.contains(name.as_str()) {
                indices.push(index);
            }
        }
        contexts.push((tag.to_string(), indices));
    }
    Ok(ContextPartition { contexts })
}

/// Dispatches on the context mode. `ByTag` needs the layer-1 catalog.
pub fn partition_contexts(
    events: &[ObservationEvent],
    mode: ContextMode,
    catalog: Option<&Catalog>,
    grammar: &IdGrammar,
) -> Result<ContextPartition> {
    match mode {
        ContextMode::PerEntity => partition_per_entity(events),
        ContextMode::ByTag => {
            let catalog = catalog.ok_or_else(|| {
                GarError::Config("tag-based partitioning needs the first layer's catalog".into())
            })?;
            partition_by_tag(events, catalog, grammar)
        }
    }
}

// ---------------------------------------------------------------------------
// Layer-stack execution
// ---------------------------------------------------------------------------

/// Builds the working stream for a layer from raw events (layer 0).
fn ingest_events(
    events: &[ObservationEvent],
    selected: &[usize],
    layer: &Layer,
    grammar: &IdGrammar,
    trace: &mut Vec<TraceEvent>,
) -> Vec<StreamItem> {
    let mut kept: Vec<usize> = Vec::with_capacity(selected.len());
    for &index in selected {
        let event = &events[index];
        if event.confidence < layer.settings.filters.confidence_floor {
            trace.push(TraceEvent::ConfidenceRemoved {
                index,
                token: event.token.clone(),
                confidence: event.confidence,
            });
        } else {
            kept.push(index);
        }
    }
    let items: Vec<StreamItem> = kept
        .into_iter()
        .map(|index| {
            let name = layer.match_name(&events[index].token, grammar);
            StreamItem {
                code: layer.catalog.vocab.code_of(&name),
                name,
                span: (index, index),
                sources: vec![index],
            }
        })
        .collect();
    apply_trivial(items, layer, trace)
}

/// Re-encodes the previous layer's stream into this layer's vocabulary.
fn reencode(items: Vec<StreamItem>, layer: &Layer, grammar: &IdGrammar) -> Vec<StreamItem> {
    items
        .into_iter()
        .map(|item| {
            let name = layer.match_name(&item.name, grammar);
            StreamItem {
                code: layer.catalog.vocab.code_of(&name),
                name,
                span: item.span,
                sources: item.sources,
            }
        })
        .collect()
}

/// Trivial removal and repeat collapsing over the working stream. Items are
/// compared by name, not code, so distinct unknown tokens sharing the OOV
/// code survive.
fn apply_trivial(items: Vec<StreamItem>, layer: &Layer, trace: &mut Vec<TraceEvent>) -> Vec<StreamItem> {
    let collapse = layer.collapse_repeats();
    let trivial = &layer.settings.filters.trivial_symbols;
    let mut out: Vec<StreamItem> = Vec::with_capacity(items.len());
    for item in items {
        if trivial.contains(&item.name) {
            trace.push(TraceEvent::TrivialRemoved {
                index: item.span.0,
                name: item.name,
            });
            continue;
        }
        if collapse && out.last().map(|prev| prev.name.as_str()) == Some(item.name.as_str()) {
            trace.push(TraceEvent::RepeatCollapsed {
                index: item.span.0,
                name: item.name,
            });
            continue;
        }
        out.push(item);
    }
    out
}

/// Runs a prepared stream through every layer of the stack. Layer `k`
/// consumes layer `k-1`'s substituted stream. `arch_override` forces every
/// layer to one architecture (plain N/C runs); hybrid runs leave it unset
/// and use each layer's configured architecture.
#[allow(clippy::too_many_arguments)]
pub fn run_layer_stack(
    events: &[ObservationEvent],
    selected: &[usize],
    stack: &LayerStack,
    grammar: &IdGrammar,
    top: Architecture,
    arch_override: Option<Architecture>,
    context: Option<&str>,
    allowed_tag: Option<&str>,
) -> Result<StackOutcome> {
    let mut per_layer = Vec::with_capacity(stack.depth());
    let mut items: Vec<StreamItem> = Vec::new();

    for (layer_idx, layer) in stack.layers.iter().enumerate() {
        let mut trace = Vec::new();
        items = if layer_idx == 0 {
            ingest_events(events, selected, layer, grammar, &mut trace)
        } else {
            apply_trivial(reencode(items, layer, grammar), layer, &mut trace)
        };

        let codes: Vec<usize> = items.iter().map(|i| i.code).collect();
        let frequency_findings = frequency_disparity(&codes, &layer.frequency_rules);
        for finding in &frequency_findings {
            trace.push(TraceEvent::Frequency {
                label: finding.label.clone(),
                margin: finding.margin,
            });
        }

        let allowed: Option<BTreeSet<String>> = allowed_tag.map(|tag| {
            layer
                .catalog
                .entries_for_tag(tag)
                .iter()
                .map(|e| e.label.clone())
                .collect()
        });
        let scope = RunScope {
            layer_idx,
            architecture: top,
            context,
            allowed: allowed.as_ref(),
        };
        let arch = arch_override.unwrap_or(layer.settings.arch);
        let results = match arch {
            Architecture::Concatenated => run_nhmm(&items, layer, &scope, &mut trace)?,
            Architecture::Cascaded | Architecture::Hybrid => {
                let (next, results) = run_chmm(items, layer, &scope, &mut trace)?;
                items = next;
                results
            }
        };
        let fused = ml_fuse(&results).ok();
        per_layer.push(LayerOutcome {
            layer: layer_idx,
            results,
            final_items: items.clone(),
            frequency_findings,
            fused,
            trace,
        });
    }

    Ok(StackOutcome {
        context: context.map(str::to_string),
        per_layer,
    })
}

/// Hybrid recognition: partitions the stream into contexts and runs the
/// stack on each context independently. Contexts come back in key order.
pub fn run_hhmm(
    events: &[ObservationEvent],
    stack: &LayerStack,
    mode: ContextMode,
    grammar: &IdGrammar,
) -> Result<Vec<StackOutcome>> {
    let first_catalog = stack.layers.first().map(|l| &l.catalog);
    let partition = partition_contexts(events, mode, first_catalog, grammar)?;
    let mut outcomes = Vec::with_capacity(partition.contexts.len());
    for (key, indices) in &partition.contexts {
        let allowed_tag = match mode {
            ContextMode::ByTag => Some(key.as_str()),
            ContextMode::PerEntity => None,
        };
        outcomes.push(run_layer_stack(
            events,
            indices,
            stack,
            grammar,
            Architecture::Hybrid,
            None,
            Some(key),
            allowed_tag,
        )?);
    }
    Ok(outcomes)
}

/// Runs the whole pipeline for a top-level architecture choice.
pub fn run(
    events: &[ObservationEvent],
    stack: &LayerStack,
    architecture: Architecture,
    context_mode: ContextMode,
    grammar: &IdGrammar,
) -> Result<Vec<StackOutcome>> {
    match architecture {
        Architecture::Hybrid => run_hhmm(events, stack, context_mode, grammar),
        plain => {
            let selected: Vec<usize> = (0..events.len()).collect();
            Ok(vec![run_layer_stack(
                events,
                &selected,
                stack,
                grammar,
                plain,
                Some(plain),
                None,
                None,
            )?])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{DEFAULT_ALPHA, DEFAULT_SELF_LOOP};
    use crate::event::parse_event_stream;
    use crate::ontology::parse_catalog;

    const CASCADE_RULES: &str = "\
Towards_cabinet - opens_cabinet - object_picked -> Object_taken_cabinet
Object_taken_cabinet - Object_Carrying - Walking -> Unloading
";

    /// The 33-observation recording of the box-exchange scenario.
    const SCENARIO_STREAM: &str = "[H1_Walking,H1_O1_Object_carrying,H2_Walking,H2_O1_Object_carrying,H3_Standing,H3_O2_Object_carrying,Group_Merging,H1_Standing,H1_O1_Object_carrying,H2_Standing,H2_O1_Object_carrying,H3_Standing,H3_O2_Object_carrying,H2_H3_Handshaking,H3_O2_Giving_H2,H2_O2_Receiving,H1_Standing,H1_O1_Object_carrying,H2_O2_carrying,H1_O1_Giving,H3_O1_Receiving,H2_Standing,H2_O2_Object_carrying,H3_O1_carrying,Group_Separating,H1_Walking,H2_Walking,H2_O2_Object_carrying,H3_Walking,H3_O1_Object_carrying,H1_Left,H2_Left,H3_left]";

    fn settings() -> LayerSettings {
        LayerSettings::default()
    }

    fn layer_from(rules: &str, settings: LayerSettings) -> Layer {
        let catalog = parse_catalog(rules).unwrap();
        Layer::train(catalog, DEFAULT_ALPHA, DEFAULT_SELF_LOOP, settings).unwrap()
    }

    fn items_from(layer: &Layer, tokens: &[&str]) -> Vec<StreamItem> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, name)| StreamItem {
                name: (*name).to_string(),
                code: layer.catalog.vocab.code_of(name),
                span: (i, i),
                sources: vec![i],
            })
            .collect()
    }

    fn scope(arch: Architecture) -> RunScope<'static> {
        RunScope {
            layer_idx: 0,
            architecture: arch,
            context: None,
            allowed: None,
        }
    }

    #[test]
    fn nhmm_recognizes_training_pattern_as_fixed_window() {
        let mut s = settings();
        s.case = WindowCase::Fixed;
        let layer = layer_from("a - b - c -> X\n", s);
        let items = items_from(&layer, &["a", "b", "c"]);
        let mut trace = Vec::new();
        let results = run_nhmm(&items, &layer, &scope(Architecture::Concatenated), &mut trace).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].label, "X");
        assert_eq!(results[0].span, (0, 2));
    }

    #[test]
    fn nhmm_finds_social_interaction_window_in_longer_stream() {
        let layer = layer_from(
            "Group_Merging - Group_United - Group_Shaking_hands -> Social_interaction\n",
            settings(),
        );
        let items = items_from(
            &layer,
            &[
                "Walking",
                "Group_Merging",
                "Group_United",
                "Group_Shaking_hands",
                "Walking",
            ],
        );
        let mut trace = Vec::new();
        let results = run_nhmm(&items, &layer, &scope(Architecture::Concatenated), &mut trace).unwrap();
        assert!(results.iter().any(|r| r.label == "Social_interaction"));
        let hit = results
            .iter()
            .find(|r| r.label == "Social_interaction")
            .unwrap();
        assert_eq!(hit.span, (1, 3));
    }

    #[test]
    fn nhmm_rejects_pure_oov_stream() {
        let layer = layer_from("a - b - c -> X\n", settings());
        let items = items_from(&layer, &["mystery1", "mystery2", "mystery3", "mystery4"]);
        let mut trace = Vec::new();
        let results = run_nhmm(&items, &layer, &scope(Architecture::Concatenated), &mut trace).unwrap();
        assert!(results.is_empty());
    }

    #[test]
    fn chmm_reproduces_the_cabinet_cascade() {
        let layer = layer_from(CASCADE_RULES, settings());
        let items = items_from(
            &layer,
            &[
                "Towards_cabinet",
                "opens_cabinet",
                "object_picked",
                "Object_Carrying",
                "Walking",
            ],
        );
        let mut trace = Vec::new();
        let (final_items, results) =
            run_chmm(items, &layer, &scope(Architecture::Cascaded), &mut trace).unwrap();

        // Stream shrinks 5 -> 3 -> 1, two events at a time.
        let lengths: Vec<(usize, usize)> = trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Substituted {
                    before_len,
                    after_len,
                    ..
                } => Some((*before_len, *after_len)),
                _ => None,
            })
            .collect();
        assert_eq!(lengths, vec![(5, 3), (3, 1)]);

        assert_eq!(results.len(), 2);
        assert_eq!(results[0].label, "Object_taken_cabinet");
        assert_eq!(results[0].span, (0, 2));
        assert_eq!(results[1].label, "Unloading");
        assert_eq!(results[1].span, (0, 4));
        assert_eq!(final_items.len(), 1);
        assert_eq!(final_items[0].name, "Unloading");
        assert_eq!(final_items[0].sources, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn chmm_passes_through_unrecognizable_streams() {
        let layer = layer_from("a - b - c -> X\n", settings());
        let items = items_from(&layer, &["p", "q", "r", "s"]);
        let mut trace = Vec::new();
        let (final_items, results) =
            run_chmm(items.clone(), &layer, &scope(Architecture::Cascaded), &mut trace).unwrap();
        assert!(results.is_empty());
        assert_eq!(final_items, items);
    }

    #[test]
    fn chmm_unreachable_floor_is_identity() {
        let mut s = settings();
        s.floor = FloorSpec::Fixed(f64::INFINITY);
        let layer = layer_from("a - b - c -> X\n", s);
        let items = items_from(&layer, &["a", "b", "c", "a", "b", "c"]);
        let mut trace = Vec::new();
        let (final_items, results) =
            run_chmm(items.clone(), &layer, &scope(Architecture::Cascaded), &mut trace).unwrap();
        assert!(results.is_empty());
        assert_eq!(final_items, items);
    }

    #[test]
    fn chmm_rejects_width_one_catalogs() {
        let layer = layer_from("a -> X\n", settings());
        let items = items_from(&layer, &["a"]);
        let mut trace = Vec::new();
        let err = run_chmm(items, &layer, &scope(Architecture::Cascaded), &mut trace);
        assert!(err.is_err());
    }

    fn scenario_events() -> Vec<ObservationEvent> {
        parse_event_stream(SCENARIO_STREAM, &IdGrammar::default()).unwrap()
    }

    #[test]
    fn per_entity_partition_matches_recorded_context_table() {
        let events = scenario_events();
        assert_eq!(events.len(), 33);
        let partition = partition_per_entity(&events).unwrap();
        assert_eq!(partition.contexts.len(), 3);

        let tokens = |key: &str| -> Vec<String> {
            partition
                .contexts
                .iter()
                .find(|(k, _)| k == key)
                .unwrap()
                .1
                .iter()
                .map(|&i| events[i].token.clone())
                .collect()
        };

        let h1: Vec<String> = tokens("H1");
        assert_eq!(
            h1,
            vec![
                "H1_Walking",
                "H1_O1_Object_carrying",
                "Group_Merging",
                "H1_Standing",
                "H1_O1_Object_carrying",
                "H1_Standing",
                "H1_O1_Object_carrying",
                "H1_O1_Giving",
                "Group_Separating",
                "H1_Walking",
                "H1_Left",
            ]
        );

        let h2: Vec<String> = tokens("H2");
        assert_eq!(
            h2,
            vec![
                "H2_Walking",
                "H2_O1_Object_carrying",
                "Group_Merging",
                "H2_Standing",
                "H2_O1_Object_carrying",
                "H2_H3_Handshaking",
                "H3_O2_Giving_H2",
                "H2_O2_Receiving",
                "H2_O2_carrying",
                "H2_Standing",
                "H2_O2_Object_carrying",
                "Group_Separating",
                "H2_Walking",
                "H2_O2_Object_carrying",
                "H2_Left",
            ]
        );

        let h3: Vec<String> = tokens("H3");
        assert_eq!(
            h3,
            vec![
                "H3_Standing",
                "H3_O2_Object_carrying",
                "Group_Merging",
                "H3_Standing",
                "H3_O2_Object_carrying",
                "H2_H3_Handshaking",
                "H3_O2_Giving_H2",
                "H3_O1_Receiving",
                "H3_O1_carrying",
                "Group_Separating",
                "H3_Walking",
                "H3_O1_Object_carrying",
                "H3_left",
            ]
        );
    }

    #[test]
    fn multi_entity_events_fan_out_to_every_participant() {
        let events = scenario_events();
        let partition = partition_per_entity(&events).unwrap();
        for key in ["H2", "H3"] {
            let indices = &partition
                .contexts
                .iter()
                .find(|(k, _)| k == key)
                .unwrap()
                .1;
            let tokens: Vec<&str> = indices.iter().map(|&i| events[i].token.as_str()).collect();
            assert!(tokens.contains(&"H2_H3_Handshaking"), "{key}");
            assert!(tokens.contains(&"H3_O2_Giving_H2"), "{key}");
        }
    }

    #[test]
    fn partition_preserves_order_and_indices() {
        let events = scenario_events();
        let partition = partition_per_entity(&events).unwrap();
        for (_, indices) in &partition.contexts {
            for pair in indices.windows(2) {
                assert!(pair[0] < pair[1]);
            }
            for &i in indices {
                assert!(i < events.len());
            }
        }
    }

    #[test]
    fn single_entity_stream_is_one_full_context() {
        let events =
            parse_event_stream("[H1_Walking,H1_Standing,H1_O1_Object_carrying]", &IdGrammar::default())
                .unwrap();
        let partition = partition_per_entity(&events).unwrap();
        assert_eq!(partition.contexts.len(), 1);
        assert_eq!(partition.contexts[0].0, "H1");
        assert_eq!(partition.contexts[0].1, vec![0, 1, 2]);
    }

    #[test]
    fn partition_without_ids_advises_tags() {
        let events = parse_event_stream("[Walking,Standing]", &IdGrammar::default()).unwrap();
        let err = partition_per_entity(&events).unwrap_err();
        assert!(err.to_string().contains("tag-based"));
    }

    #[test]
    fn idless_events_join_only_entities_already_active() {
        let events = parse_event_stream("[H1_Walking,Group_Merging,H2_Walking]", &IdGrammar::default())
            .unwrap();
        let partition = partition_per_entity(&events).unwrap();
        let h1 = &partition.contexts[0];
        let h2 = &partition.contexts[1];
        assert_eq!(h1.1, vec![0, 1]);
        // H2 first appears after the merge event, so it does not inherit it.
        assert_eq!(h2.1, vec![2]);
    }

    #[test]
    fn tag_contexts_route_and_restrict_labels() {
        let rules = "\
@match stripped
Standing - Object_carrying - Handshaking -> Greeting @indoor
Car_stops - Door_opens - Drive_away -> Pickup @HVI
";
        let layer = layer_from(rules, settings());
        let stack = LayerStack::new(vec![layer]).unwrap();
        let grammar = IdGrammar::default();
        let events = parse_event_stream(
            "[H1_Standing,H1_O1_Object_carrying,H1_H2_Handshaking,Car_stops,Door_opens,Drive_away]",
            &grammar,
        )
        .unwrap();
        let outcomes = run_hhmm(&events, &stack, ContextMode::ByTag, &grammar).unwrap();
        assert_eq!(outcomes.len(), 2);
        let hvi = outcomes.iter().find(|o| o.context.as_deref() == Some("HVI")).unwrap();
        let indoor = outcomes
            .iter()
            .find(|o| o.context.as_deref() == Some("indoor"))
            .unwrap();
        let indoor_labels: Vec<&str> = indoor.results().map(|r| r.label.as_str()).collect();
        assert_eq!(indoor_labels, vec!["Greeting"]);
        let hvi_labels: Vec<&str> = hvi.results().map(|r| r.label.as_str()).collect();
        assert_eq!(hvi_labels, vec!["Pickup"]);
        // No HVI label ever shows up in the indoor context.
        assert!(indoor.results().all(|r| r.label != "Pickup"));
    }

    #[test]
    fn empty_context_yields_empty_results() {
        let layer = layer_from("a - b - c -> X\n", settings());
        let stack = LayerStack::new(vec![layer]).unwrap();
        let grammar = IdGrammar::default();
        let events = parse_event_stream("[H1_a]", &grammar).unwrap();
        let outcome = run_layer_stack(
            &events,
            &[],
            &stack,
            &grammar,
            Architecture::Cascaded,
            Some(Architecture::Cascaded),
            Some("empty"),
            None,
        )
        .unwrap();
        assert_eq!(outcome.results().count(), 0);
    }

    #[test]
    fn ml_fuse_selects_max_and_breaks_ties() {
        let make = |label: &str, ll: f64, start: usize| RecognitionResult {
            label: label.into(),
            log_likelihood: ll,
            span: (start, start + 2),
            sources: vec![start],
            consumed: 3,
            layer: 0,
            architecture: Architecture::Concatenated,
            context: None,
            provenance: vec![],
        };
        let single = vec![make("A", -1.0, 0)];
        assert_eq!(ml_fuse(&single).unwrap().label, "A");

        let two = vec![make("A", -2.5, 0), make("B", -1.0, 4)];
        assert_eq!(ml_fuse(&two).unwrap().label, "B");

        // Same score: earlier span wins; same span: lexicographic label.
        let tied = vec![make("B", -1.0, 2), make("A", -1.0, 2), make("C", -1.0, 0)];
        assert_eq!(ml_fuse(&tied).unwrap().label, "C");

        // A uniform shift never changes the winner.
        let shifted: Vec<RecognitionResult> = two
            .iter()
            .cloned()
            .map(|mut r| {
                r.log_likelihood += 11.0;
                r
            })
            .collect();
        assert_eq!(ml_fuse(&shifted).unwrap().label, "B");

        assert!(ml_fuse(&[]).is_err());
    }

    #[test]
    fn layer_stack_depth_two_cascades_between_layers() {
        let layer1 = layer_from(
            "Towards_cabinet - opens_cabinet - object_picked -> Object_taken_cabinet\n",
            settings(),
        );
        let layer2 = layer_from(
            "@layer 1\nObject_taken_cabinet - Object_Carrying - Walking -> Unloading\n",
            settings(),
        );
        let stack = LayerStack::new(vec![layer1, layer2]).unwrap();
        let grammar = IdGrammar::default();
        let events = parse_event_stream(
            "[Towards_cabinet,opens_cabinet,object_picked,Object_Carrying,Walking]",
            &grammar,
        )
        .unwrap();
        let outcomes = run(&events, &stack, Architecture::Cascaded, ContextMode::PerEntity, &grammar)
            .unwrap();
        let layer2_labels: Vec<&str> = outcomes[0].per_layer[1]
            .results
            .iter()
            .map(|r| r.label.as_str())
            .collect();
        assert_eq!(layer2_labels, vec!["Unloading"]);
        assert_eq!(outcomes[0].per_layer[1].results[0].layer, 1);
        assert_eq!(outcomes[0].per_layer[1].results[0].span, (0, 4));
    }

    #[test]
    fn layer_stack_rejects_missing_label_chain() {
        let layer1 = layer_from("a - b - c -> X\n", settings());
        let layer2 = layer_from("p - q - r -> Z\n", settings());
        let err = LayerStack::new(vec![layer1, layer2]).unwrap_err();
        assert!(matches!(err, GarError::Config(_)));
        assert!(err.to_string().contains('X'));
    }

    #[test]
    fn depth_one_stack_equals_plain_cascade() {
        let layer = layer_from(CASCADE_RULES, settings());
        let grammar = IdGrammar::default();
        let events = parse_event_stream(
            "[Towards_cabinet,opens_cabinet,object_picked,Object_Carrying,Walking]",
            &grammar,
        )
        .unwrap();

        let items = items_from(&layer, &[
            "Towards_cabinet",
            "opens_cabinet",
            "object_picked",
            "Object_Carrying",
            "Walking",
        ]);
        let mut trace = Vec::new();
        let (_, direct) =
            run_chmm(items, &layer, &scope(Architecture::Cascaded), &mut trace).unwrap();

        let stack = LayerStack::new(vec![layer]).unwrap();
        let outcomes = run(&events, &stack, Architecture::Cascaded, ContextMode::PerEntity, &grammar)
            .unwrap();
        let stacked: Vec<&RecognitionResult> = outcomes[0].results().collect();
        assert_eq!(stacked.len(), direct.len());
        for (a, b) in stacked.iter().zip(direct.iter()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.span, b.span);
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let grammar = IdGrammar::default();
        let events = scenario_events();
        let rules = "\
@match stripped
Standing - Object_carrying - Handshaking -> Social_Interaction
Giving - Receiving - carrying -> Object_exchange-1
";
        let build = || {
            let mut s = settings();
            s.floor = FloorSpec::Fixed(-3.0);
            LayerStack::new(vec![layer_from(rules, s)]).unwrap()
        };
        let a = run(&events, &build(), Architecture::Hybrid, ContextMode::PerEntity, &grammar)
            .unwrap();
        let b = run(&events, &build(), Architecture::Hybrid, ContextMode::PerEntity, &grammar)
            .unwrap();
        let flatten = |outcomes: &[StackOutcome]| -> Vec<RecognitionResult> {
            outcomes
                .iter()
                .flat_map(|o| o.results().cloned().collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(flatten(&a), flatten(&b));
        assert!(!flatten(&a).is_empty());
    }

    #[test]
    fn confidence_filter_is_traced_and_applied() {
        let mut s = settings();
        s.filters.confidence_floor = 0.5;
        let layer = layer_from("a - b - c -> X\n", s);
        let stack = LayerStack::new(vec![layer]).unwrap();
        let grammar = IdGrammar::default();
        let events =
            parse_event_stream("0\ta\t1.0\n1\tnoise\t0.2\n2\tb\t0.9\n3\tc\t0.8\n", &grammar)
                .unwrap();
        let selected: Vec<usize> = (0..events.len()).collect();
        let outcome = run_layer_stack(
            &events,
            &selected,
            &stack,
            &grammar,
            Architecture::Cascaded,
            Some(Architecture::Cascaded),
            None,
            None,
        )
        .unwrap();
        let removed: Vec<usize> = outcome.per_layer[0]
            .trace
            .iter()
            .filter_map(|e| match e {
                TraceEvent::ConfidenceRemoved { index, .. } => Some(*index),
                _ => None,
            })
            .collect();
        assert_eq!(removed, vec![1]);
        // With the noise gone the pattern matches.
        assert_eq!(outcome.per_layer[0].results[0].label, "X");
        assert_eq!(outcome.per_layer[0].results[0].sources, vec![0, 2, 3]);
    }
}
