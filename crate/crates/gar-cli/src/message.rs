//! Semantic messages: the JSON the recognizer emits, one object per line.
//!
//! Schema (field order is fixed):
//!
//! ```json
//! {
//!   "activity": "Unloading",
//!   "participants": ["H1", "H3"],
//!   "objects": ["O1"],
//!   "span": [14, 23],
//!   "confidence": 1.0,
//!   "log_likelihood": -1.64,
//!   "layer": 0,
//!   "architecture": "H",
//!   "context": "H3",
//!   "provenance": ["pass1", "substituted"]
//! }
//! ```
//!
//! `participants` and `objects` are the sorted unions of the entity/object
//! IDs of the events the recognition consumed. `span` is the first and last
//! original event index covered. `confidence` is
//! `exp(log_likelihood - best_possible)` clamped to (0, 1], where
//! `best_possible` is the highest score the recognized label's model can
//! assign to any window of the same length; an exact pattern match scores
//! confidence 1. The transform is strictly monotone in the log-likelihood,
//! so ranking by confidence equals ranking by likelihood.

use std::collections::BTreeSet;

use serde::Serialize;

use gar_core::{best_possible_log_score, ModelBank, ObservationEvent, RecognitionResult};

#[derive(Clone, Debug, Serialize)]
pub struct SemanticMessage {
    pub activity: String,
    pub participants: Vec<String>,
    pub objects: Vec<String>,
    pub span: [usize; 2],
    pub confidence: f64,
    pub log_likelihood: f64,
    pub layer: usize,
    pub architecture: String,
    pub context: Option<String>,
    pub provenance: Vec<String>,
}

/// Builds the message for one recognition. `banks` holds one bank per layer.
pub fn message_for(
    result: &RecognitionResult,
    events: &[ObservationEvent],
    banks: &[&ModelBank],
) -> SemanticMessage {
    let mut participants: BTreeSet<String> = BTreeSet::new();
    let mut objects: BTreeSet<String> = BTreeSet::new();
    for &index in &result.sources {
        let event = &events[index];
        participants.extend(event.entity_ids.iter().cloned());
        objects.extend(event.object_ids.iter().cloned());
    }
    let confidence = banks
        .get(result.layer)
        .and_then(|bank| bank.model_for(&result.label))
        .map(|model| {
            let best = best_possible_log_score(model, result.consumed);
            (result.log_likelihood - best).exp().min(1.0)
        })
        .unwrap_or(1.0);
    SemanticMessage {
        activity: result.label.clone(),
        participants: participants.into_iter().collect(),
        objects: objects.into_iter().collect(),
        span: [result.span.0, result.span.1],
        confidence,
        log_likelihood: result.log_likelihood,
        layer: result.layer,
        architecture: result.architecture.to_string(),
        context: result.context.clone(),
        provenance: result.provenance.clone(),
    }
}

/// Span order: start, end, layer, context, activity. Total, so output is
/// reproducible byte for byte.
pub fn sort_messages(messages: &mut [SemanticMessage]) {
    messages.sort_by(|a, b| {
        (a.span, a.layer, &a.context, &a.activity).cmp(&(b.span, b.layer, &b.context, &b.activity))
    });
}

pub fn render_table(messages: &[SemanticMessage]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<11} {:<28} {:>10} {:<5} {:<4} {:<8} {:<16} {}\n",
        "SPAN", "ACTIVITY", "CONF", "LAYER", "ARCH", "CONTEXT", "PARTICIPANTS", "OBJECTS"
    ));
    for m in messages {
        out.push_str(&format!(
            "{:<11} {:<28} {:>10.6} {:<5} {:<4} {:<8} {:<16} {}\n",
            format!("{}..{}", m.span[0], m.span[1]),
            m.activity,
            m.confidence,
            m.layer,
            m.architecture,
            m.context.as_deref().unwrap_or("-"),
            m.participants.join(","),
            m.objects.join(","),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use gar_core::{
        build_model_bank, parse_catalog, parse_event_stream, Architecture, IdGrammar,
    };

    #[test]
    fn exact_match_confidence_is_one_and_ids_union() {
        let catalog = parse_catalog("Giving - Receiving - carrying -> Exchange\n").unwrap();
        let bank = build_model_bank(&catalog, 0.1, 0.6).unwrap();
        let events = parse_event_stream(
            "[H3_O2_Giving_H2,H3_O1_Receiving,H3_O1_carrying]",
            &IdGrammar::default(),
        )
        .unwrap();
        let codes: Vec<usize> = ["Giving", "Receiving", "carrying"]
            .iter()
            .map(|s| catalog.vocab.lookup(s).unwrap())
            .collect();
        let ll = bank
            .model_for("Exchange")
            .unwrap()
            .forward_log_likelihood(&codes)
            .unwrap();
        let result = RecognitionResult {
            label: "Exchange".into(),
            log_likelihood: ll,
            span: (0, 2),
            sources: vec![0, 1, 2],
            consumed: 3,
            layer: 0,
            architecture: Architecture::Hybrid,
            context: Some("H3".into()),
            provenance: vec![],
        };
        let message = message_for(&result, &events, &[&bank]);
        assert!((message.confidence - 1.0).abs() < 1e-12);
        assert_eq!(message.participants, vec!["H2", "H3"]);
        assert_eq!(message.objects, vec!["O1", "O2"]);
    }

    #[test]
    fn messages_sort_by_span_then_rest() {
        let mk = |start: usize, end: usize, label: &str| SemanticMessage {
            activity: label.into(),
            participants: vec![],
            objects: vec![],
            span: [start, end],
            confidence: 1.0,
            log_likelihood: -1.0,
            layer: 0,
            architecture: "C".into(),
            context: None,
            provenance: vec![],
        };
        let mut messages = vec![mk(4, 6, "B"), mk(0, 2, "Z"), mk(4, 6, "A")];
        sort_messages(&mut messages);
        let order: Vec<&str> = messages.iter().map(|m| m.activity.as_str()).collect();
        assert_eq!(order, vec!["Z", "A", "B"]);
    }
}
