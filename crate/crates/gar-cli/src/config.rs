//! The declarative run configuration.
//!
//! A config is a single TOML file. Paths inside it resolve relative to the
//! file's own directory. The full schema:
//!
//! ```toml
//! architecture = "C"          # "N" concatenated | "C" cascaded | "H" hybrid
//! context = "per_entity"      # hybrid only: "per_entity" | "by_tag"
//! output = "json"             # "json" | "table"
//! alpha = 0.1                 # emission smoothing used at training time
//! self_loop = 0.6             # label-state model self-loop bias
//! acceptance_floor = -3.0     # absolute log-likelihood; omit for the
//!                             # uniform-emission default; `inf` accepts nothing
//! max_passes = 8              # cascaded substitution pass limit
//! vocabulary = "base.vocab"   # optional base vocabulary listing
//!
//! [windowing]
//! case = "sliding"            # "fixed" | "flooring" | "sliding"
//!
//! [filters]
//! confidence_floor = 0.0
//! trivial_symbols = []
//! collapse_repeats = true
//! correlation = false         # repair weak windows via pair weights
//! correlation_threshold = 0.5 # defaults to the pair base weight
//!
//! [grammar]
//! entity_pattern = '^(?:H\d+|Entity-\d+)$'
//! object_pattern = '^O\d+$'
//!
//! [refine]                    # optional Baum-Welch refinement after training
//! max_iter = 5
//! tol = 1e-6
//!
//! [[frequency_rules]]
//! symbol_a = "Object_Removed"
//! symbol_b = "Object_Placed"
//! label_a = "Loading"
//! label_b = "Unloading"
//! min_margin = 2
//!
//! [[layers]]
//! catalog = "table1.ont"
//! arch = "C"                  # per-layer architecture inside hybrid runs
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use gar_core::{
    Architecture, Catalog, ContextMode, FilterSettings, FloorSpec, FrequencyRuleSpec, IdGrammar,
    LayerSettings, Vocabulary, WindowCase,
};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    architecture: Option<String>,
    context: Option<String>,
    output: Option<String>,
    alpha: Option<f64>,
    self_loop: Option<f64>,
    acceptance_floor: Option<f64>,
    max_passes: Option<usize>,
    vocabulary: Option<String>,
    windowing: Option<WindowingSection>,
    filters: Option<FiltersSection>,
    grammar: Option<GrammarSection>,
    refine: Option<RefineSection>,
    frequency_rules: Option<Vec<FrequencyRuleSection>>,
    layers: Vec<LayerSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WindowingSection {
    case: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FiltersSection {
    confidence_floor: Option<f64>,
    trivial_symbols: Option<Vec<String>>,
    collapse_repeats: Option<bool>,
    correlation: Option<bool>,
    correlation_threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarSection {
    entity_pattern: Option<String>,
    object_pattern: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrequencyRuleSection {
    symbol_a: String,
    symbol_b: String,
    label_a: String,
    label_b: String,
    min_margin: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSection {
    catalog: String,
    arch: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Table,
}

/// A fully resolved run configuration.
pub struct RunConfig {
    pub architecture: Architecture,
    pub context_mode: ContextMode,
    pub output: OutputFormat,
    pub alpha: f64,
    pub self_loop: f64,
    pub grammar: IdGrammar,
    pub refine: Option<RefineSection>,
    pub catalog_paths: Vec<PathBuf>,
    pub layer_settings: Vec<LayerSettings>,
    pub vocabulary_path: Option<PathBuf>,
}

fn parse_architecture(text: &str) -> Result<Architecture, CliError> {
    match text {
        "N" => Ok(Architecture::Concatenated),
        "C" => Ok(Architecture::Cascaded),
        "H" => Ok(Architecture::Hybrid),
        other => Err(CliError::config(format!(
            "unknown architecture `{other}` (expected N, C, or H)"
        ))),
    }
}

fn parse_case(text: &str) -> Result<WindowCase, CliError> {
    match text {
        "fixed" => Ok(WindowCase::Fixed),
        "flooring" => Ok(WindowCase::Flooring),
        "sliding" => Ok(WindowCase::Sliding),
        other => Err(CliError::config(format!(
            "unknown windowing case `{other}` (expected fixed, flooring, or sliding)"
        ))),
    }
}

impl RunConfig {
    /// Loads and validates a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let file: ConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        RunConfig::resolve(file, base)
    }

    /// The configuration used when `train` runs without a config file.
    pub fn defaults_with_catalogs(catalogs: Vec<PathBuf>) -> RunConfig {
        let n = catalogs.len();
        RunConfig {
            architecture: Architecture::Cascaded,
            context_mode: ContextMode::PerEntity,
            output: OutputFormat::Json,
            alpha: gar_core::DEFAULT_ALPHA,
            self_loop: gar_core::DEFAULT_SELF_LOOP,
            grammar: IdGrammar::default(),
            refine: None,
            catalog_paths: catalogs,
            layer_settings: (0..n).map(|_| LayerSettings::default()).collect(),
            vocabulary_path: None,
        }
    }

    fn resolve(file: ConfigFile, base: &Path) -> Result<RunConfig, CliError> {
        if file.layers.is_empty() {
            return Err(CliError::config("config declares no layers"));
        }
        let architecture = parse_architecture(file.architecture.as_deref().unwrap_or("C"))?;
        let context_mode = match file.context.as_deref() {
            None | Some("per_entity") => ContextMode::PerEntity,
            Some("by_tag") => ContextMode::ByTag,
            Some(other) => {
                return Err(CliError::config(format!(
                    "unknown context mode `{other}` (expected per_entity or by_tag)"
                )))
            }
        };
        let output = match file.output.as_deref() {
            None | Some("json") => OutputFormat::Json,
            Some("table") => OutputFormat::Table,
            Some(other) => {
                return Err(CliError::config(format!(
                    "unknown output format `{other}` (expected json or table)"
                )))
            }
        };
        let alpha = file.alpha.unwrap_or(gar_core::DEFAULT_ALPHA);
        let self_loop = file.self_loop.unwrap_or(gar_core::DEFAULT_SELF_LOOP);
        if let Some(refine) = &file.refine {
            if refine.max_iter < 1 || refine.tol.is_nan() || refine.tol <= 0.0 {
                return Err(CliError::config(
                    "refine needs max_iter >= 1 and a positive tol",
                ));
            }
        }

        let grammar = match &file.grammar {
            None => IdGrammar::default(),
            Some(section) => IdGrammar::new(
                section
                    .entity_pattern
                    .as_deref()
                    .unwrap_or(r"^(?:H\d+|Entity-\d+)$"),
                section.object_pattern.as_deref().unwrap_or(r"^O\d+$"),
            )
            .map_err(|e| CliError::config(e.to_string()))?,
        };

        let case = match &file.windowing {
            Some(section) => parse_case(section.case.as_deref().unwrap_or("sliding"))?,
            None => WindowCase::Sliding,
        };
        let floor = match file.acceptance_floor {
            Some(v) => FloorSpec::Fixed(v),
            None => FloorSpec::Uniform,
        };
        let filters = {
            let section = file.filters.as_ref();
            FilterSettings {
                confidence_floor: section.and_then(|s| s.confidence_floor).unwrap_or(0.0),
                trivial_symbols: section
                    .and_then(|s| s.trivial_symbols.clone())
                    .unwrap_or_default()
                    .into_iter()
                    .collect(),
                collapse_repeats: section.and_then(|s| s.collapse_repeats),
                correlation_enabled: section.and_then(|s| s.correlation).unwrap_or(false),
                correlation_threshold: section.and_then(|s| s.correlation_threshold),
                frequency_rules: file
                    .frequency_rules
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|r| FrequencyRuleSpec {
                        symbol_a: r.symbol_a.clone(),
                        symbol_b: r.symbol_b.clone(),
                        label_a: r.label_a.clone(),
                        label_b: r.label_b.clone(),
                        min_margin: r.min_margin,
                    })
                    .collect(),
            }
        };

        let mut catalog_paths = Vec::with_capacity(file.layers.len());
        let mut layer_settings = Vec::with_capacity(file.layers.len());
        for layer in &file.layers {
            catalog_paths.push(base.join(&layer.catalog));
            let arch = match &layer.arch {
                Some(text) => {
                    let arch = parse_architecture(text)?;
                    if arch == Architecture::Hybrid {
                        return Err(CliError::config(
                            "per-layer architecture must be N or C",
                        ));
                    }
                    arch
                }
                None => Architecture::Cascaded,
            };
            layer_settings.push(LayerSettings {
                arch,
                case,
                floor,
                max_passes: file.max_passes.unwrap_or(8),
                filters: filters.clone(),
            });
        }

        Ok(RunConfig {
            architecture,
            context_mode,
            output,
            alpha,
            self_loop,
            grammar,
            refine: file.refine,
            catalog_paths,
            layer_settings,
            vocabulary_path: file.vocabulary.map(|v| base.join(v)),
        })
    }

    /// Parses the base vocabulary, when one is configured.
    pub fn load_base_vocabulary(&self) -> Result<Option<Vocabulary>, CliError> {
        match &self.vocabulary_path {
            None => Ok(None),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::config(format!("cannot read vocabulary {}: {e}", path.display()))
                })?;
                Vocabulary::parse(&text)
                    .map(Some)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
            }
        }
    }

    /// Parses every layer catalog in order.
    pub fn load_catalogs(&self) -> Result<Vec<Catalog>, CliError> {
        let base = self.load_base_vocabulary()?;
        let mut catalogs = Vec::with_capacity(self.catalog_paths.len());
        for path in &self.catalog_paths {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read catalog {}: {e}", path.display()))
            })?;
            let catalog = gar_core::parse_catalog_with_vocab(&text, base.as_ref())
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            catalogs.push(catalog);
        }
        Ok(catalogs)
    }
}
