//! Human-readable recognition traces: every filter action, every window with
//! its per-label scores, every substitution, and the per-context fusion
//! picks.

use std::fmt::Write as _;

use gar_core::{CorrelationAction, StackOutcome, TraceEvent};

pub fn render(outcomes: &[StackOutcome]) -> String {
    let mut out = String::new();
    for outcome in outcomes {
        match &outcome.context {
            Some(key) => writeln!(out, "== context {key}").unwrap(),
            None => writeln!(out, "== stream").unwrap(),
        }
        for layer in &outcome.per_layer {
            writeln!(out, "-- layer {}", layer.layer).unwrap();
            for event in &layer.trace {
                render_event(&mut out, event);
            }
            match layer.results.len() {
                0 => writeln!(out, "   recognized: nothing").unwrap(),
                n => writeln!(out, "   recognized: {n} result(s)").unwrap(),
            }
            if let Some(fused) = &layer.fused {
                writeln!(
                    out,
                    "   ml-fused pick: {} ({:.4}) span {}..{}",
                    fused.label, fused.log_likelihood, fused.span.0, fused.span.1
                )
                .unwrap();
            }
        }
    }
    out
}

fn render_event(out: &mut String, event: &TraceEvent) {
    match event {
        TraceEvent::ConfidenceRemoved {
            index,
            token,
            confidence,
        } => {
            writeln!(
                out,
                "   filter: removed event {index} `{token}` (confidence {confidence})"
            )
            .unwrap();
        }
        TraceEvent::TrivialRemoved { index, name } => {
            writeln!(out, "   filter: removed trivial event {index} `{name}`").unwrap();
        }
        TraceEvent::RepeatCollapsed { index, name } => {
            writeln!(out, "   filter: collapsed repeated event {index} `{name}`").unwrap();
        }
        TraceEvent::UnconsumedSuffix { count } => {
            writeln!(out, "   note: {count} unconsumed trailing event(s)").unwrap();
        }
        TraceEvent::StreamState { pass, names } => {
            writeln!(
                out,
                "   stream (pass {pass}, {} items): {}",
                names.len(),
                names.join(" ")
            )
            .unwrap();
        }
        TraceEvent::WindowScored {
            pass,
            span,
            names,
            scores,
            floor,
            accepted,
            correlation,
        } => {
            let repair = match correlation {
                CorrelationAction::None => "",
                CorrelationAction::Repaired => " [correlation-repaired]",
                CorrelationAction::NoAlternative => " [correlation-kept]",
            };
            writeln!(
                out,
                "   window {}..{} (pass {pass}){repair}: {}",
                span.0,
                span.1,
                names.join(" ")
            )
            .unwrap();
            let mut ranked: Vec<&(String, f64)> = scores.iter().collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (label, score) in ranked {
                let marker = if accepted.as_deref() == Some(label) {
                    "  << accepted"
                } else {
                    ""
                };
                writeln!(out, "      {label:<28} {score:>12.4}{marker}").unwrap();
            }
            if accepted.is_none() {
                writeln!(out, "      (floor {floor:.4}, nothing accepted)").unwrap();
            }
        }
        TraceEvent::Substituted {
            pass,
            label,
            span,
            before_len,
            after_len,
        } => {
            writeln!(
                out,
                "   substitute `{label}` over {}..{} (pass {pass}): stream {before_len} -> {after_len}",
                span.0, span.1
            )
            .unwrap();
        }
        TraceEvent::Frequency { label, margin } => {
            writeln!(out, "   frequency: {label} (margin {margin})").unwrap();
        }
    }
}
