//! Recognition of activities and group activities in annotated
//! observation-event streams.
//!
//! Streams of atomic observations (`H1_Walking`, `H2_O1_Object_carrying`,
//! ...) are matched against authored ontology patterns — ordered observation
//! sequences mapped to activity labels — by discrete hidden Markov models
//! trained deterministically from those patterns. Three composition
//! architectures are provided:
//!
//! * concatenated: every window of the stream is scored independently;
//! * cascaded: recognized labels are substituted back into the stream and
//!   become observations for later recognition;
//! * hybrid: the stream is partitioned into contexts (per entity, or by
//!   catalog tag) and each context is recognized independently.
//!
//! The crate also carries the supporting machinery: the ontology rule
//! language, sliding/flooring/fixed windowing, confidence and trivial-event
//! filters, pair correlation weighting, and maximum-likelihood fusion of
//! competing results.

pub mod bank;
pub mod error;
pub mod event;
pub mod hmm;
pub mod ontology;
pub mod pipeline;
pub mod weights;
pub mod window;

pub use bank::{
    best_label, best_possible_log_score, build_model_bank, parse_bank, score_all, serialize_bank,
    ModelBank, DEFAULT_ALPHA, DEFAULT_SELF_LOOP,
};
pub use error::{GarError, Result};
pub use event::{
    encode, parse_event_stream, serialize_event_stream, strip_ids, IdGrammar, ObservationEvent,
    ObservationSymbol, StrippedToken, Vocabulary, OOV_INDEX, OOV_NAME,
};
pub use hmm::{baum_welch, BaumWelchOutcome, HmmModel};
pub use ontology::{parse_catalog, parse_catalog_with_vocab, render_catalog, Catalog, MatchMode, OntologyEntry};
pub use pipeline::{
    ml_fuse, partition_by_tag, partition_contexts, partition_per_entity, run, run_chmm, run_hhmm,
    run_layer_stack, run_nhmm, Architecture, ContextMode, ContextPartition, FilterSettings,
    FloorSpec, FrequencyRuleSpec, Layer, LayerOutcome, LayerSettings, LayerStack,
    RecognitionResult, RunScope, StackOutcome, StreamItem, TraceEvent,
};
pub use weights::{build_pair_weights, correlation_weight, PairWeightTable};
pub use window::{
    correlation_select, filter_confidence, filter_trivial, frequency_disparity, generate_windows,
    CorrelationAction, FrequencyFinding, FrequencyRule, Window, WindowCase, WindowingPolicy,
};
