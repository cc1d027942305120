//! Command-line harness for the parcall runtime.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use parcall::codec::{
    decode_streams, encode_call, normalize_schema, HeadStream, HeadStreamSet, TerminationReason,
};
use parcall::decompose::{decompose_parallel_calls, NamedCall, RawTool};
use parcall::harness::config::{RunConfig, SEED_ENV_VAR};
use parcall::harness::dataset::{load_dataset, save_entries};
use parcall::harness::eval::run_eval;
use parcall::harness::report::{
    emit_efficiency_csv, emit_report_csv, emit_report_json, load_report,
};
use parcall::metrics::efficiency_sweep;
use parcall::tokens::{ByteTokenizer, Head, SpecialToken, TokenClass};
use parcall::{CostModel, FunctionCall, ToolSchema};

#[derive(Parser)]
#[command(
    name = "parcall",
    version,
    about = "Parallel multi-head function-call decoding: codec, simulator, and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a call JSON file into per-head stream text.
    Encode {
        /// JSON file with one tool definition or an array of them.
        #[arg(long)]
        tools: PathBuf,
        /// JSON file with {"name", "arguments", "content"?}.
        #[arg(long)]
        call: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode stream text back into call JSON.
    Decode {
        #[arg(long)]
        tools: PathBuf,
        /// Stream text file as produced by `encode`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split samples with parallel calls into single-call entries.
    Decompose {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shuffle call order and history prefixes (seeded).
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        shuffle_history: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full evaluation: baseline vs parallel per entry.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Report destination; falls back to the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Evaluate decode efficiency across batch sizes.
    SweepBatch {
        /// Config supplying the cost model; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4, 8, 16, 32, 64, 128])]
        batches: Vec<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the evaluation with draft-and-verify speculation enabled.
    SpecRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: ReportFormat,
    },
    /// Re-render a saved JSON report.
    Report {
        #[arg(long, value_name = "IN")]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: ReportFormat,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_tools(path: &Path) -> Result<Vec<ToolSchema>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: Vec<RawTool> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)?
    } else {
        vec![serde_json::from_str(&text)?]
    };
    raw.iter()
        .map(|t| normalize_schema(&t.to_schema()).map_err(Into::into))
        .collect()
}

fn schema_for<'a>(tools: &'a [ToolSchema], name: &str) -> Result<&'a ToolSchema> {
    tools
        .iter()
        .find(|t| t.function_name == name)
        .ok_or_else(|| anyhow!("no tool named {name} in the tools file"))
}

#[derive(serde::Deserialize)]
struct CallInput {
    #[serde(flatten)]
    call: NamedCall,
    #[serde(default)]
    content: Option<String>,
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Renders a stream set as one line per active head: the head's open
/// tag followed by the stream's surface text (terminator included).
fn render_streams(streams: &HeadStreamSet, tokenizer: &ByteTokenizer) -> String {
    let mut out = String::new();
    for (head, stream) in streams.iter() {
        if stream.is_empty() {
            continue;
        }
        out.push_str(head.open_token().surface());
        out.push_str(&tokenizer.detokenize(&stream.tokens));
        out.push('\n');
    }
    out
}

fn parse_streams(text: &str, tokenizer: &ByteTokenizer) -> Result<HeadStreamSet> {
    let table = tokenizer.table();
    let mut streams = HeadStreamSet::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let head = Head::all()
            .into_iter()
            .find(|h| line.starts_with(h.open_token().surface()))
            .ok_or_else(|| anyhow!("line {}: no head open tag", idx + 1))?;
        let body = &line[head.open_token().surface().len()..];
        let tokens = tokenizer.tokenize(body);
        let termination = match tokens.last().map(|&t| table.classify(t)) {
            Some(TokenClass::Special(kind)) if kind == head.close_token() => {
                TerminationReason::CloseTag
            }
            Some(TokenClass::Special(SpecialToken::Null)) => TerminationReason::NullToken,
            _ => TerminationReason::EndOfSequence,
        };
        streams.set(head, HeadStream { tokens, termination });
    }
    Ok(streams)
}

fn cmd_encode(tools: &Path, call: &Path, out: Option<&Path>) -> Result<()> {
    let tools = load_tools(tools)?;
    let input: CallInput = serde_json::from_str(
        &fs::read_to_string(call).with_context(|| format!("reading {}", call.display()))?,
    )?;
    let schema = schema_for(&tools, &input.call.name)?;
    let mut call = FunctionCall::from_named(&input.call.name, &input.call.canonical_args(), schema)?;
    call.content = input.content;
    let tokenizer = ByteTokenizer::new();
    let streams = encode_call(&call, schema, &tokenizer)?;
    write_or_print(&render_streams(&streams, &tokenizer), out)
}

fn cmd_decode(tools: &Path, input: &Path, out: Option<&Path>) -> Result<()> {
    let tools = load_tools(tools)?;
    let text =
        fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let tokenizer = ByteTokenizer::new();
    let streams = parse_streams(&text, &tokenizer)?;
    // The schema is only needed to name the arguments, so decode first.
    let placeholder = normalize_schema(&ToolSchema::new("", vec![]))?;
    let decoded = decode_streams(&streams, &placeholder, &tokenizer)?;
    let schema = schema_for(&tools, &decoded.call.name)?;

    let mut doc = serde_json::Map::new();
    doc.insert("name".into(), decoded.call.name.clone().into());
    let mut args = serde_json::Map::new();
    for (k, v) in decoded.call.to_named(schema) {
        args.insert(k, v.into());
    }
    doc.insert("arguments".into(), args.into());
    if let Some(content) = &decoded.call.content {
        doc.insert("content".into(), content.clone().into());
    }
    if !decoded.diagnostics.is_empty() {
        doc.insert(
            "diagnostics".into(),
            serde_json::to_value(&decoded.diagnostics)?,
        );
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    write_or_print(&text, out)
}

fn cmd_decompose(dataset: &Path, seed: u64, shuffle: bool, out: &Path) -> Result<()> {
    let seed = match std::env::var(SEED_ENV_VAR) {
        Ok(value) => value
            .parse()
            .map_err(|_| anyhow!("{SEED_ENV_VAR} must be an integer"))?,
        Err(_) => seed,
    };
    let samples = load_dataset(dataset)?;
    let mut entries = Vec::new();
    for sample in &samples {
        entries.extend(decompose_parallel_calls(sample, seed, shuffle)?);
    }
    save_entries(&entries, out)?;
    eprintln!(
        "decomposed {} samples into {} entries -> {}",
        samples.len(),
        entries.len(),
        out.display()
    );
    Ok(())
}

fn emit_report(
    report: &parcall::EvalReport,
    out: Option<PathBuf>,
    config_out: Option<PathBuf>,
    format: ReportFormat,
) -> Result<()> {
    let path = out
        .or(config_out)
        .ok_or_else(|| anyhow!("no output path: pass --out or set `out` in the config"))?;
    match format {
        ReportFormat::Json => emit_report_json(report, &path)?,
        ReportFormat::Csv => emit_report_csv(report, &path)?,
    }
    eprintln!(
        "entries {} | overall {:.3} function {:.3} group {:.3} | P50 speedup {:.2}x -> {}",
        report.entries.len(),
        report.accuracy.overall,
        report.accuracy.function,
        report.accuracy.group,
        report.speedup.p50,
        path.display()
    );
    Ok(())
}

fn cmd_run(config: &Path, dataset: &Path, out: Option<PathBuf>, format: ReportFormat) -> Result<()> {
    let config = RunConfig::load(config)?;
    let samples = load_dataset(dataset)?;
    let report = run_eval(&config, &samples)?;
    emit_report(&report, out, config.out.clone(), format)
}

fn cmd_spec_run(
    config: &Path,
    dataset: &Path,
    out: Option<PathBuf>,
    format: ReportFormat,
) -> Result<()> {
    let config = RunConfig::load(config)?;
    if config.draft_backend.is_none() || config.speculation_depth.is_none() {
        bail!("spec-run needs both `draft_backend` and `speculation_depth` in the config");
    }
    let samples = load_dataset(dataset)?;
    let report = run_eval(&config, &samples)?;
    if let Some(spec) = &report.speculative {
        eprintln!(
            "speculative: accept rate {:.3}, forward reduction {:.2}x",
            spec.accept_rate, spec.forward_reduction
        );
    }
    emit_report(&report, out, config.out.clone(), format)
}

fn cmd_sweep_batch(config: Option<&Path>, batches: &[usize], out: Option<&Path>) -> Result<()> {
    let cost = match config {
        Some(path) => RunConfig::load(path)?.cost,
        None => CostModel::default(),
    };
    let report = efficiency_sweep(&cost, batches)?;
    match out {
        Some(path) => {
            emit_efficiency_csv(&report, path)?;
            eprintln!("wrote {} batch rows -> {}", report.rows.len(), path.display());
        }
        None => {
            let mut text = String::from("batch,per_token_time,efficiency,overhead\n");
            for row in &report.rows {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    row.batch, row.per_token_time, row.efficiency, row.overhead
                ));
            }
            print!("{text}");
        }
    }
    Ok(())
}

fn cmd_report(input: &Path, format: ReportFormat, out: &Path) -> Result<()> {
    let report = load_report(input)?;
    match format {
        ReportFormat::Json => emit_report_json(&report, out)?,
        ReportFormat::Csv => emit_report_csv(&report, out)?,
    }
    eprintln!("re-rendered {} -> {}", input.display(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode { tools, call, out } => cmd_encode(&tools, &call, out.as_deref()),
        Command::Decode { tools, input, out } => cmd_decode(&tools, &input, out.as_deref()),
        Command::Decompose {
            dataset,
            seed,
            shuffle_history,
            out,
        } => cmd_decompose(&dataset, seed, shuffle_history, &out),
        Command::Run {
            config,
            dataset,
            out,
            format,
        } => cmd_run(&config, &dataset, out, format),
        Command::SweepBatch {
            config,
            batches,
            out,
        } => cmd_sweep_batch(config.as_deref(), &batches, out.as_deref()),
        Command::SpecRun {
            config,
            dataset,
            out,
            format,
        } => cmd_spec_run(&config, &dataset, out, format),
        Command::Report { input, format, out } => cmd_report(&input, format, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes, not usage errors.
            if err.use_stderr() {
                eprint!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
