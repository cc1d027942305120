//! Evaluation driver: prompt construction, backend assembly, per-entry
//! baseline/parallel/speculative runs, and report aggregation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::backend::{
    build_ngram_backend, build_scripted_backend, Backend, CostModel, ScriptEntry, ScriptedBackend,
};
use crate::codec::{
    baseline_json_render, decode_streams, encode_call, CompressionSample, FunctionCall,
};
use crate::decompose::{
    aggregate_accuracy, decompose_parallel_calls, format_history, score_prediction, EvalEntry,
    NamedCall, ParallelGroup, RawSample, ScoreRecord,
};
use crate::harness::config::{BackendSpec, RunConfig};
use crate::harness::report::{EntryRecord, EvalReport};
use crate::harness::HarnessError;
use crate::metrics::{
    compression_report, latency_baseline, latency_parallel, percentile_stats, LatencyModel,
};
use crate::parallel::par_map;
use crate::scheduler::{generate_parallel, generate_sequential_baseline, StopConfig};
use crate::speculative::{speculate_parallel, SpecConfig, SpecTrace};
use crate::tokens::{ByteTokenizer, Head, TokenId};

/// Requests discarded before wall-clock measurement begins.
const WALL_CLOCK_WARMUP: usize = 5;

/// Canonical prompt for the toy backends: environment, tool schemas as
/// one-line JSON, formatted history, then the user query, separated by
/// blank lines.
pub fn build_prompt(entry: &EvalEntry) -> String {
    let mut parts: Vec<String> = Vec::new();
    if !entry.environment.is_empty() {
        parts.push(entry.environment.clone());
    }
    let tools: Vec<String> = entry
        .tools
        .iter()
        .map(|t| serde_json::to_string(t).expect("schema serialization cannot fail"))
        .collect();
    parts.push(format!("Tools:\n{}", tools.join("\n")));
    if !entry.history.is_empty() {
        parts.push(format!("History:\n{}", format_history(&entry.history)));
    }
    parts.push(format!("User: {}", entry.query));
    parts.join("\n\n")
}

/// Decomposes every sample with the configured seed and shuffling.
pub fn decompose_dataset(
    samples: &[RawSample],
    config: &RunConfig,
) -> Result<Vec<EvalEntry>, HarnessError> {
    let mut entries = Vec::new();
    for sample in samples {
        entries.extend(decompose_parallel_calls(
            sample,
            config.shuffle_seed,
            config.shuffle_history,
        )?);
    }
    Ok(entries)
}

/// Builds a replay script that makes every prediction match the ground
/// truth: per entry, the baseline key replays the canonical JSON (plus
/// EOS) and each head key replays that head's encoded stream.
pub fn build_oracle_backend(
    entries: &[EvalEntry],
    heads: &[Head],
    tokenizer: &ByteTokenizer,
) -> Result<ScriptedBackend, HarnessError> {
    let table = tokenizer.table();
    let mut seen: HashMap<(Vec<TokenId>, Option<TokenId>), Vec<TokenId>> = HashMap::new();
    let mut script = Vec::new();
    for entry in entries {
        let schema = entry.ground_truth_schema().ok_or_else(|| {
            HarnessError::Config(format!("entry {} lacks a schema for its ground truth", entry.id))
        })?;
        let prompt = tokenizer.tokenize(&build_prompt(entry));

        let mut baseline = tokenizer.tokenize(&baseline_json_render(&entry.ground_truth, schema));
        baseline.push(table.eos_id());
        let streams = encode_call(&entry.ground_truth, schema, tokenizer)?;

        let mut pending: Vec<(Option<TokenId>, Vec<TokenId>)> = vec![(None, baseline)];
        for &head in heads {
            pending.push((
                Some(table.id_of(head.open_token())),
                streams.get(head).tokens.clone(),
            ));
        }
        for (head_token, target) in pending {
            let key = (prompt.clone(), head_token);
            match seen.get(&key) {
                Some(existing) if *existing == target => continue,
                Some(_) => {
                    return Err(HarnessError::Config(format!(
                        "entry {} shares a prompt with a conflicting entry; oracle scripts need distinct prompts",
                        entry.id
                    )))
                }
                None => {
                    seen.insert(key.clone(), target.clone());
                    script.push(ScriptEntry {
                        prefix: key.0,
                        head: key.1,
                        target,
                    });
                }
            }
        }
    }
    Ok(build_scripted_backend(script)?)
}

/// Script file schema for the `scripted` backend kind: a JSON array of
/// `{"prefix": text, "head": head-name or null, "target": text}`.
#[derive(serde::Serialize, serde::Deserialize)]
struct ScriptFileEntry {
    prefix: String,
    #[serde(default)]
    head: Option<String>,
    target: String,
}

fn load_script_file(path: &Path, tokenizer: &ByteTokenizer) -> Result<Vec<ScriptEntry>, HarnessError> {
    let entries: Vec<ScriptFileEntry> = serde_json::from_str(&fs::read_to_string(path)?)?;
    let table = tokenizer.table();
    entries
        .into_iter()
        .map(|e| {
            let head = match e.head {
                Some(name) => Some(
                    Head::parse(&name)
                        .map(|h| table.id_of(h.open_token()))
                        .ok_or_else(|| HarnessError::Config(format!("unknown head {name:?}")))?,
                ),
                None => None,
            };
            Ok(ScriptEntry {
                prefix: tokenizer.tokenize(&e.prefix),
                head,
                target: tokenizer.tokenize(&e.target),
            })
        })
        .collect()
}

/// Instantiates the configured backend. The oracle kind needs the
/// decomposed entries to script itself.
pub fn build_backend(
    spec: &BackendSpec,
    entries: &[EvalEntry],
    heads: &[Head],
    tokenizer: &ByteTokenizer,
) -> Result<Box<dyn Backend>, HarnessError> {
    match spec {
        BackendSpec::Ngram {
            corpus,
            order,
            alpha,
            seed,
        } => {
            let text = fs::read_to_string(corpus)?;
            Ok(Box::new(build_ngram_backend(&text, *order, *alpha, *seed)?))
        }
        BackendSpec::Scripted { script } => {
            let entries = load_script_file(script, tokenizer)?;
            Ok(Box::new(build_scripted_backend(entries)?))
        }
        BackendSpec::Oracle => Ok(Box::new(build_oracle_backend(entries, heads, tokenizer)?)),
    }
}

struct EvalContext<'a> {
    backend: &'a dyn Backend,
    draft: Option<&'a dyn Backend>,
    tokenizer: ByteTokenizer,
    heads: Vec<Head>,
    stop_parallel: StopConfig,
    stop_baseline: StopConfig,
    cost: CostModel,
    speculation_depth: Option<usize>,
    overhead_factor: f64,
    /// Wall-clock fields stay unset in simulated mode so reports are
    /// byte-identical across runs.
    record_wall: bool,
}

fn parse_baseline_output(text: &str) -> Option<NamedCall> {
    serde_json::from_str::<NamedCall>(text).ok()
}

fn evaluate_entry(ctx: &EvalContext, entry: &EvalEntry) -> Result<EntryRecord, HarnessError> {
    let schema = entry.ground_truth_schema().ok_or_else(|| {
        HarnessError::Config(format!("entry {} lacks a schema for its ground truth", entry.id))
    })?;
    let prompt = ctx.tokenizer.tokenize(&build_prompt(entry));

    let (baseline_tokens_raw, baseline_trace) =
        generate_sequential_baseline(ctx.backend, &prompt, &ctx.stop_baseline, &ctx.cost)?;
    let baseline_text = ctx.tokenizer.detokenize(&baseline_tokens_raw);
    let baseline_correct = parse_baseline_output(&baseline_text)
        .and_then(|call| {
            let tool = entry.tools.iter().find(|t| t.function_name == call.name)?;
            FunctionCall::from_named(&call.name, &call.canonical_args(), tool).ok()
        })
        .map(|call| score_prediction(&entry.id, &call, &entry.ground_truth).overall_correct)
        .unwrap_or(false);

    let (streams, parallel_trace) = generate_parallel(
        ctx.backend,
        &prompt,
        &ctx.tokenizer,
        &ctx.heads,
        &ctx.stop_parallel,
        &ctx.cost,
    )?;

    let speculative = match (ctx.draft, ctx.speculation_depth) {
        (Some(draft), Some(depth)) => {
            let spec_config = SpecConfig::new(depth, ctx.stop_parallel.clone())
                .map_err(HarnessError::Speculative)?;
            let (spec_streams, traces) = speculate_parallel(
                draft,
                ctx.backend,
                &prompt,
                &ctx.tokenizer,
                &ctx.heads,
                &spec_config,
                &ctx.cost,
            )?;
            debug_assert_eq!(spec_streams, streams);
            Some(SpecTrace::aggregate(traces.iter().map(|(_, t)| t)))
        }
        _ => None,
    };

    let (score, decode_error) = match decode_streams(&streams, schema, &ctx.tokenizer) {
        Ok(decoded) => (
            score_prediction(&entry.id, &decoded.call, &entry.ground_truth),
            None,
        ),
        Err(err) => (
            ScoreRecord {
                entry_id: entry.id.clone(),
                function_correct: false,
                overall_correct: false,
            },
            Some(err.to_string()),
        ),
    };

    // Compression is measured on the both-correct subset: the baseline
    // payload (stop token excluded) against the longest head stream.
    let both_correct = baseline_correct && score.overall_correct;
    let baseline_payload = if baseline_trace.total_tokens > 0
        && baseline_tokens_raw.last() == Some(&ctx.tokenizer.table().eos_id())
    {
        baseline_trace.total_tokens - 1
    } else {
        baseline_trace.total_tokens
    };
    let bottleneck = streams.bottleneck_tokens();
    let compression = (both_correct && bottleneck > 0).then(|| CompressionSample {
        baseline_tokens: baseline_payload,
        bottleneck_tokens: bottleneck,
        ratio: baseline_payload as f64 / bottleneck as f64,
    });

    let model = LatencyModel::new(parallel_trace.prefill_time, ctx.cost.step_time(1))
        .with_overhead(ctx.overhead_factor);
    let speedup_formula = latency_baseline(&model, baseline_trace.total_tokens)
        / latency_parallel(&model, &parallel_trace.tokens_per_head)?;

    Ok(EntryRecord {
        id: entry.id.clone(),
        group: entry.parallel_group.clone(),
        function_correct: score.function_correct,
        overall_correct: score.overall_correct,
        baseline_correct,
        n_baseline: baseline_trace.total_tokens,
        n_parallel_total: parallel_trace.total_tokens,
        n_bottleneck: parallel_trace.max_tokens_per_head(),
        forward_passes: parallel_trace.forward_passes,
        t_baseline: baseline_trace.total_time,
        t_parallel: parallel_trace.total_time,
        t_parallel_fixed_batch: parallel_trace.prefill_time + parallel_trace.decode_time_fixed_batch,
        speedup: baseline_trace.total_time / parallel_trace.total_time,
        speedup_formula,
        baseline_tokens: compression.map(|c| c.baseline_tokens),
        bottleneck_tokens: compression.map(|c| c.bottleneck_tokens),
        compression_ratio: compression.map(|c| c.ratio),
        wall_ms_baseline: ctx.record_wall.then_some(baseline_trace.wall_time * 1e3),
        wall_ms_parallel: ctx.record_wall.then_some(parallel_trace.wall_time * 1e3),
        speculative,
        decode_error,
    })
}

fn context_for<'a>(
    config: &RunConfig,
    backend: &'a dyn Backend,
    draft: Option<&'a dyn Backend>,
) -> Result<EvalContext<'a>, HarnessError> {
    let tokenizer = ByteTokenizer::new();
    let table = tokenizer.table();
    let mut cost = config.cost;
    cost.parallel_overhead = config.overhead_factor;
    Ok(EvalContext {
        backend,
        draft,
        tokenizer,
        heads: config.head_set()?,
        stop_parallel: StopConfig::dual(table, config.max_tokens_per_head),
        stop_baseline: StopConfig::dual(table, config.max_baseline_tokens),
        cost,
        speculation_depth: config.speculation_depth,
        overhead_factor: config.overhead_factor,
        record_wall: config.wall_clock,
    })
}

/// Evaluates one decomposed entry against a prebuilt backend. The batch
/// drivers and the throughput benchmarks funnel through this.
pub fn evaluate_one(
    config: &RunConfig,
    backend: &dyn Backend,
    draft: Option<&dyn Backend>,
    entry: &EvalEntry,
) -> Result<EntryRecord, HarnessError> {
    let ctx = context_for(config, backend, draft)?;
    evaluate_entry(&ctx, entry).map_err(|e| HarnessError::for_entry(&entry.id, e))
}

/// Runs the full evaluation: decompose, generate (baseline, parallel,
/// optionally speculative) per entry, score, and aggregate. Simulated
/// mode evaluates entries in parallel; wall-clock mode runs serially
/// with a warmup pass.
pub fn run_eval(config: &RunConfig, samples: &[RawSample]) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let tokenizer = ByteTokenizer::new();
    let heads = config.head_set()?;
    let entries = decompose_dataset(samples, config)?;
    if entries.is_empty() {
        return Err(HarnessError::Config("dataset produced no entries".into()));
    }

    let backend = build_backend(&config.backend, &entries, &heads, &tokenizer)?;
    let draft = config
        .draft_backend
        .as_ref()
        .map(|spec| build_backend(spec, &entries, &heads, &tokenizer))
        .transpose()?;
    if draft.is_some() && config.speculation_depth.is_none() {
        return Err(HarnessError::Config(
            "draft_backend requires speculation_depth".into(),
        ));
    }

    let ctx = context_for(config, backend.as_ref(), draft.as_deref())?;

    let mut records: Vec<EntryRecord> = if config.wall_clock {
        // Serial execution with discarded warmup requests keeps the
        // wall-clock numbers free of batching and cold-start effects.
        for entry in entries.iter().take(WALL_CLOCK_WARMUP) {
            let _ = evaluate_entry(&ctx, entry);
        }
        let mut out = Vec::with_capacity(entries.len());
        for entry in &entries {
            out.push(evaluate_entry(&ctx, entry).map_err(|e| HarnessError::for_entry(&entry.id, e))?);
        }
        out
    } else {
        let results = par_map(&entries, |entry| {
            evaluate_entry(&ctx, entry).map_err(|e| HarnessError::for_entry(&entry.id, e))
        });
        let mut out = Vec::with_capacity(results.len());
        for result in results {
            out.push(result?);
        }
        out
    };
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let scored: Vec<(ScoreRecord, Option<ParallelGroup>)> = records
        .iter()
        .map(|r| {
            (
                ScoreRecord {
                    entry_id: r.id.clone(),
                    function_correct: r.function_correct,
                    overall_correct: r.overall_correct,
                },
                r.group.clone(),
            )
        })
        .collect();
    let accuracy = aggregate_accuracy(&scored)?;

    let wall = config.wall_clock;
    let baseline_times: Vec<f64> = records
        .iter()
        .map(|r| if wall { r.wall_ms_baseline.unwrap_or(0.0) } else { r.t_baseline })
        .collect();
    let parallel_times: Vec<f64> = records
        .iter()
        .map(|r| if wall { r.wall_ms_parallel.unwrap_or(0.0) } else { r.t_parallel })
        .collect();
    let speedups: Vec<f64> = records.iter().map(|r| r.speedup).collect();

    let compression_samples: Vec<CompressionSample> = records
        .iter()
        .filter_map(|r| {
            Some(CompressionSample {
                baseline_tokens: r.baseline_tokens?,
                bottleneck_tokens: r.bottleneck_tokens?,
                ratio: r.compression_ratio?,
            })
        })
        .collect();
    let compression = if compression_samples.is_empty() {
        None
    } else {
        Some(compression_report(&compression_samples)?)
    };
    let spec_traces: Vec<SpecTrace> = records.iter().filter_map(|r| r.speculative).collect();
    let speculative = if spec_traces.is_empty() {
        None
    } else {
        Some(SpecTrace::aggregate(&spec_traces))
    };

    Ok(EvalReport {
        mode: if wall { "wallclock" } else { "simulated" }.into(),
        shuffle_seed: config.shuffle_seed,
        overhead_factor: config.overhead_factor,
        accuracy,
        latency_baseline: percentile_stats(&baseline_times)?,
        latency_parallel: percentile_stats(&parallel_times)?,
        speedup: percentile_stats(&speedups)?,
        compression,
        efficiency: None,
        speculative,
        entries: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::parse_dataset;

    const FIXTURE: &str = include_str!("../../fixtures/mobile_mini.jsonl");

    fn fixture_samples() -> Vec<RawSample> {
        parse_dataset(FIXTURE).unwrap()
    }

    fn quiet_config() -> RunConfig {
        let mut config = RunConfig::oracle_default();
        config.overhead_factor = 1.0;
        config
    }

    #[test]
    fn oracle_run_is_fully_correct() {
        let samples = fixture_samples();
        let report = run_eval(&quiet_config(), &samples).unwrap();
        assert_eq!(report.accuracy.overall, 1.0);
        assert_eq!(report.accuracy.function, 1.0);
        assert_eq!(report.accuracy.group, 1.0);
        assert!(report.entries.iter().all(|e| e.baseline_correct));
        // 24 samples, 6 parallel ones contributing extra entries.
        let expected_entries: usize = samples.iter().map(|s| s.calls.len()).sum();
        assert_eq!(report.entries.len(), expected_entries);
        assert_eq!(report.accuracy.groups, 24);
        report.verify_self_consistency().unwrap();
    }

    #[test]
    fn oracle_run_matches_latency_formula_per_entry() {
        let report = run_eval(&quiet_config(), &fixture_samples()).unwrap();
        for entry in &report.entries {
            assert!(
                (entry.speedup - entry.speedup_formula).abs() <= 1e-9 * entry.speedup.abs(),
                "entry {}: measured {} formula {}",
                entry.id,
                entry.speedup,
                entry.speedup_formula
            );
            assert_eq!(entry.forward_passes, entry.n_bottleneck);
        }
    }

    #[test]
    fn overhead_factor_scales_parallel_decode_term() {
        let samples = fixture_samples();
        let plain = run_eval(&quiet_config(), &samples).unwrap();
        let mut config = quiet_config();
        config.overhead_factor = 1.082;
        let raised = run_eval(&config, &samples).unwrap();
        for (a, b) in plain.entries.iter().zip(raised.entries.iter()) {
            let decode_plain = a.t_parallel - prefill_of(a);
            let decode_raised = b.t_parallel - prefill_of(b);
            assert!(
                (decode_raised - 1.082 * decode_plain).abs() < 1e-9,
                "{}: {} vs {}",
                a.id,
                decode_raised,
                1.082 * decode_plain
            );
        }
    }

    fn prefill_of(record: &EntryRecord) -> f64 {
        // With the default cost model, prefill = t_baseline - N * t_mem.
        record.t_baseline - record.n_baseline as f64
    }

    #[test]
    fn simulated_reports_are_byte_identical() {
        let samples = fixture_samples();
        let config = quiet_config();
        let a = run_eval(&config, &samples).unwrap();
        let b = run_eval(&config, &samples).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn ngram_backend_runs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("corpus.txt");
        std::fs::write(&corpus_path, include_str!("../../fixtures/corpus_tools.txt")).unwrap();
        let mut config = quiet_config();
        config.backend = BackendSpec::Ngram {
            corpus: corpus_path,
            order: 3,
            alpha: 0.1,
            seed: 0,
        };
        config.max_tokens_per_head = 16;
        config.max_baseline_tokens = 48;
        let samples: Vec<RawSample> = fixture_samples().into_iter().take(4).collect();
        let a = run_eval(&config, &samples).unwrap();
        let b = run_eval(&config, &samples).unwrap();
        assert_eq!(a, b);
        a.verify_self_consistency().unwrap();
        // An n-gram toy can't produce correct calls, and compression is
        // only measured on the both-correct subset.
        assert_eq!(a.accuracy.overall, 0.0);
        assert!(a.compression.is_none());
        assert!(a.entries.iter().all(|e| e.compression_ratio.is_none()));
    }

    #[test]
    fn speculative_run_aggregates_per_head_traces() {
        let mut config = quiet_config();
        config.draft_backend = Some(BackendSpec::Oracle);
        config.speculation_depth = Some(4);
        let samples: Vec<RawSample> = fixture_samples().into_iter().take(6).collect();
        let report = run_eval(&config, &samples).unwrap();
        let aggregate = report.speculative.expect("speculative aggregate present");
        assert_eq!(aggregate.accept_rate, 1.0);
        assert!(aggregate.forward_reduction >= 1.0);
        assert_eq!(report.accuracy.overall, 1.0);
    }

    #[test]
    fn prompt_is_stable_and_contains_all_sections() {
        let samples = fixture_samples();
        let config = quiet_config();
        let entries = decompose_dataset(&samples, &config).unwrap();
        let with_history = entries
            .iter()
            .find(|e| !e.history.is_empty())
            .expect("fixture has history entries");
        let prompt = build_prompt(with_history);
        assert!(prompt.contains("Tools:\n"));
        assert!(prompt.contains("History:\n-> "));
        assert!(prompt.contains(&format!("User: {}", with_history.query)));
        assert_eq!(prompt, build_prompt(with_history));
    }

    #[test]
    fn wall_clock_mode_reports_wall_latency() {
        let mut config = quiet_config();
        config.wall_clock = true;
        let samples: Vec<RawSample> = fixture_samples().into_iter().take(6).collect();
        let report = run_eval(&config, &samples).unwrap();
        assert_eq!(report.mode, "wallclock");
        assert!(report.entries.iter().all(|e| e.wall_ms_parallel.is_some()));
        report.verify_self_consistency().unwrap();
    }
}
