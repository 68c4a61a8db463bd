//! `gar` — trains activity-recognition model banks from ontology catalogs
//! and replays annotated event streams through the recognition pipelines.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gar_cli::bankfile::BankFile;
use gar_cli::config::{OutputFormat, RunConfig};
use gar_cli::message::{message_for, render_table, sort_messages, SemanticMessage};
use gar_cli::{explain, CliError};
use gar_core::{
    baum_welch, build_model_bank, parse_event_stream, run, Layer, LayerStack, ModelBank,
    StackOutcome,
};

#[derive(Parser)]
#[command(
    name = "gar",
    about = "Activity and group-activity recognition over annotated event streams",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model bank from one or more ontology catalogs (one per layer).
    Train {
        /// Catalog file; repeat for multi-layer stacks (order = layer order).
        #[arg(long = "catalog", required = true)]
        catalogs: Vec<PathBuf>,
        /// Where to write the bank.
        #[arg(long)]
        out: PathBuf,
        /// Optional config supplying alpha, self_loop, vocabulary, refine.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay an event stream and emit semantic messages.
    Recognize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay an event stream and print the full recognition trace.
    Explain {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            catalogs,
            out,
            config,
        } => cmd_train(&catalogs, &out, config.as_deref()),
        Command::Recognize {
            events,
            bank,
            config,
        } => cmd_recognize(&events, &bank, &config),
        Command::Explain {
            events,
            bank,
            config,
        } => cmd_explain(&events, &bank, &config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("gar: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn load_config_with_catalogs(
    config_path: Option<&Path>,
    catalogs: &[PathBuf],
) -> Result<RunConfig, CliError> {
    let mut config = match config_path {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::defaults_with_catalogs(catalogs.to_vec()),
    };
    // Command-line catalogs define the layers; the config contributes
    // hyperparameters only.
    config.catalog_paths = catalogs.to_vec();
    let template = config.layer_settings.first().cloned().unwrap_or_default();
    config.layer_settings = catalogs.iter().map(|_| template.clone()).collect();
    Ok(config)
}

/// Deterministic training: parse catalogs, build banks, optionally refine
/// with Baum-Welch on the catalog patterns, persist.
fn cmd_train(catalogs: &[PathBuf], out: &Path, config_path: Option<&Path>) -> Result<(), CliError> {
    let config = load_config_with_catalogs(config_path, catalogs)?;
    let parsed = config.load_catalogs()?;
    let mut banks = Vec::with_capacity(parsed.len());
    for catalog in &parsed {
        let mut bank = build_model_bank(catalog, config.alpha, config.self_loop)
            .map_err(CliError::from_core)?;
        if let Some(refine) = &config.refine {
            refine_bank(&mut bank, catalog, refine.max_iter, refine.tol)?;
        }
        banks.push(bank);
    }

    // Validate layer chaining before persisting anything.
    let mut layers = Vec::with_capacity(parsed.len());
    for ((catalog, bank), settings) in parsed
        .iter()
        .zip(banks.iter())
        .zip(config.layer_settings.iter())
    {
        layers.push(
            Layer::new(catalog.clone(), bank.clone(), settings.clone())
                .map_err(CliError::from_core)?,
        );
    }
    LayerStack::new(layers).map_err(CliError::from_core)?;

    let file = BankFile {
        layers: parsed
            .into_iter()
            .zip(banks)
            .map(|(catalog, bank)| (bank, catalog.vocab))
            .collect(),
    };
    file.write(out)?;
    for (index, (bank, _)) in file.layers.iter().enumerate() {
        let labels: Vec<&str> = bank.labels().collect();
        println!(
            "layer {index}: {} label(s): {}",
            labels.len(),
            labels.join(", ")
        );
    }
    println!("bank written to {}", out.display());
    Ok(())
}

fn refine_bank(
    bank: &mut ModelBank,
    catalog: &gar_core::Catalog,
    max_iter: usize,
    tol: f64,
) -> Result<(), CliError> {
    let encode_pattern = |pattern: &[String]| -> Vec<usize> {
        pattern.iter().map(|s| catalog.vocab.code_of(s)).collect()
    };
    let labels: Vec<String> = bank.labels().map(str::to_string).collect();
    for label in &labels {
        let sequences: Vec<Vec<usize>> = catalog
            .entries
            .iter()
            .filter(|e| &e.label == label)
            .map(|e| encode_pattern(&e.pattern))
            .collect();
        let model = bank.model_for(label).expect("label exists").clone();
        let outcome = baum_welch(&model, &sequences, max_iter, tol).map_err(CliError::from_core)?;
        bank.replace_model(label, outcome.model)
            .map_err(CliError::from_core)?;
    }
    let all: Vec<Vec<usize>> = catalog
        .entries
        .iter()
        .map(|e| encode_pattern(&e.pattern))
        .collect();
    let outcome =
        baum_welch(bank.label_state(), &all, max_iter, tol).map_err(CliError::from_core)?;
    bank.replace_label_state(outcome.model);
    Ok(())
}

struct LoadedRun {
    config: RunConfig,
    stack: LayerStack,
    banks: Vec<ModelBank>,
    events: Vec<gar_core::ObservationEvent>,
}

fn load_run(
    events_path: &Path,
    bank_path: &Path,
    config_path: &Path,
) -> Result<LoadedRun, CliError> {
    let config = RunConfig::load(config_path)?;
    let catalogs = config.load_catalogs()?;
    let bank_file = BankFile::read(bank_path)?;
    if bank_file.layers.len() != catalogs.len() {
        return Err(CliError::input(format!(
            "bank holds {} layer(s) but the config declares {}",
            bank_file.layers.len(),
            catalogs.len()
        )));
    }
    for (index, ((_, bank_vocab), catalog)) in
        bank_file.layers.iter().zip(catalogs.iter()).enumerate()
    {
        if bank_vocab.fingerprint() != catalog.vocab.fingerprint() {
            return Err(CliError::input(format!(
                "vocabulary fingerprint mismatch at layer {index}: the bank was trained \
                 against a different catalog ({:016x} vs {:016x}); retrain with `gar train`",
                bank_vocab.fingerprint(),
                catalog.vocab.fingerprint()
            )));
        }
    }

    let banks: Vec<ModelBank> = bank_file.layers.iter().map(|(b, _)| b.clone()).collect();
    let mut layers = Vec::with_capacity(catalogs.len());
    for ((catalog, bank), settings) in catalogs
        .into_iter()
        .zip(banks.iter().cloned())
        .zip(config.layer_settings.iter().cloned())
    {
        layers.push(Layer::new(catalog, bank, settings).map_err(CliError::from_core)?);
    }
    let stack = LayerStack::new(layers).map_err(CliError::from_core)?;

    let text = fs::read_to_string(events_path).map_err(|e| {
        CliError::input(format!("cannot read events {}: {e}", events_path.display()))
    })?;
    let events = parse_event_stream(&text, &config.grammar)
        .map_err(|e| CliError::input(format!("{}: {e}", events_path.display())))?;

    Ok(LoadedRun {
        config,
        stack,
        banks,
        events,
    })
}

fn run_pipeline(loaded: &LoadedRun) -> Result<Vec<StackOutcome>, CliError> {
    run(
        &loaded.events,
        &loaded.stack,
        loaded.config.architecture,
        loaded.config.context_mode,
        &loaded.config.grammar,
    )
    .map_err(CliError::from_core)
}

fn collect_messages(loaded: &LoadedRun, outcomes: &[StackOutcome]) -> Vec<SemanticMessage> {
    let banks: Vec<&ModelBank> = loaded.banks.iter().collect();
    let mut messages: Vec<SemanticMessage> = outcomes
        .iter()
        .flat_map(|outcome| outcome.results())
        .map(|result| message_for(result, &loaded.events, &banks))
        .collect();
    sort_messages(&mut messages);
    messages
}

fn cmd_recognize(events: &Path, bank: &Path, config: &Path) -> Result<(), CliError> {
    let loaded = load_run(events, bank, config)?;
    if loaded.events.is_empty() {
        return Ok(()); // nothing to recognize, not an error
    }
    let outcomes = run_pipeline(&loaded)?;
    let messages = collect_messages(&loaded, &outcomes);
    match loaded.config.output {
        OutputFormat::Json => {
            for message in &messages {
                let line =
                    serde_json::to_string(message).expect("semantic messages always serialize");
                println!("{line}");
            }
        }
        OutputFormat::Table => {
            print!("{}", render_table(&messages));
        }
    }
    Ok(())
}

fn cmd_explain(events: &Path, bank: &Path, config: &Path) -> Result<(), CliError> {
    let loaded = load_run(events, bank, config)?;
    if loaded.events.is_empty() {
        println!("empty event stream");
        return Ok(());
    }
    let outcomes = run_pipeline(&loaded)?;
    print!("{}", explain::render(&outcomes));
    Ok(())
}
