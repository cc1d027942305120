//! Decomposition of parallel tool invocations into single-call entries,
//! plus the accuracy scoring rules.
//!
//! A sample with K simultaneous calls becomes K evaluation entries. The
//! processing order of the calls is a seeded shuffle, entry i targets
//! the i-th call in that order, and its history is a (re-shuffled)
//! permutation of the preceding calls. A parallel invocation only
//! counts as correct when every one of its K entries is correct.

use std::collections::HashMap;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::fnv1a;
use crate::codec::{normalize_schema, CodecError, FunctionCall, ToolSchema};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecomposeError {
    #[error("invalid call in sample {sample}: {reason}")]
    InvalidCall { sample: String, reason: String },
    #[error("parallel group {group} has {found} scored entries but declares size {declared}")]
    MissingGroupMember {
        group: String,
        found: usize,
        declared: usize,
    },
}

/// A function call as datasets carry it: a name plus named argument
/// values in their written order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCall {
    pub name: String,
    #[serde(default, with = "args_object")]
    pub arguments: Vec<(String, Value)>,
}

impl NamedCall {
    pub fn new(name: &str, arguments: &[(&str, &str)]) -> Self {
        NamedCall {
            name: name.to_string(),
            arguments: arguments
                .iter()
                .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
                .collect(),
        }
    }

    /// Argument values as canonical strings: string values stay bare,
    /// anything typed becomes its compact JSON text.
    pub fn canonical_args(&self) -> Vec<(String, String)> {
        self.arguments
            .iter()
            .map(|(k, v)| (k.clone(), canonical_value_text(v)))
            .collect()
    }
}

/// Canonical text of one argument value.
pub fn canonical_value_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

mod args_object {
    use super::*;
    use serde::ser::SerializeMap;
    use serde::Deserializer;

    pub fn serialize<S: serde::Serializer>(
        args: &[(String, Value)],
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(args.len()))?;
        for (k, v) in args {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Vec<(String, Value)>, D::Error> {
        let map = serde_json::Map::deserialize(deserializer)?;
        Ok(map.into_iter().collect())
    }
}

/// One raw dataset record before decomposition. Unknown fields are
/// carried along so a load/store cycle loses nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub environment: String,
    pub tools: Vec<RawTool>,
    pub calls: Vec<NamedCall>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<NamedCall>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, Value>,
}

/// Tool definition as written in datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTool {
    pub name: String,
    #[serde(default)]
    pub parameters: Vec<crate::codec::ParamSpec>,
}

impl RawTool {
    pub fn to_schema(&self) -> ToolSchema {
        ToolSchema::new(&self.name, self.parameters.clone())
    }
}

/// Membership of an entry in a decomposed parallel invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelGroup {
    pub id: String,
    /// 1-based position within the group.
    pub index: usize,
    pub size: usize,
}

/// One single-call evaluation entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub environment: String,
    pub tools: Vec<ToolSchema>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<NamedCall>,
    pub ground_truth: FunctionCall,
    /// The ground truth as written in the source sample.
    pub ground_truth_named: NamedCall,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel_group: Option<ParallelGroup>,
}

impl EvalEntry {
    /// Schema of the ground-truth call.
    pub fn ground_truth_schema(&self) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.function_name == self.ground_truth.name)
    }

    /// The environment, formatted history, and user query concatenated
    /// into one prompt-ready string.
    pub fn composed_query(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        if !self.environment.is_empty() {
            parts.push(self.environment.clone());
        }
        if !self.history.is_empty() {
            parts.push(format_history(&self.history));
        }
        parts.push(self.query.clone());
        parts.join("\n")
    }
}

/// Renders prior calls one per line as `-> name(key=value, ...)`, with
/// values in their JSON form.
pub fn format_history(calls: &[NamedCall]) -> String {
    calls
        .iter()
        .map(|call| {
            let args = call
                .arguments
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("-> {}({})", call.name, args)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn sample_rng(sample_id: &str, seed: u64) -> ChaCha8Rng {
    let stream = fnv1a(sample_id.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(stream)
}

fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for j in (1..items.len()).rev() {
        let k = (rng.next_u64() % (j as u64 + 1)) as usize;
        items.swap(j, k);
    }
}

fn resolve_call(
    sample_id: &str,
    call: &NamedCall,
    schemas: &[ToolSchema],
) -> Result<FunctionCall, DecomposeError> {
    let schema = schemas
        .iter()
        .find(|s| s.function_name == call.name)
        .ok_or_else(|| DecomposeError::InvalidCall {
            sample: sample_id.to_string(),
            reason: format!("call targets unknown tool {}", call.name),
        })?;
    FunctionCall::from_named(&call.name, &call.canonical_args(), schema).map_err(|e| {
        DecomposeError::InvalidCall {
            sample: sample_id.to_string(),
            reason: e.to_string(),
        }
    })
}

fn normalized_schemas(sample: &RawSample) -> Result<Vec<ToolSchema>, DecomposeError> {
    sample
        .tools
        .iter()
        .map(|t| {
            normalize_schema(&t.to_schema()).map_err(|e: CodecError| DecomposeError::InvalidCall {
                sample: sample.id.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Splits one sample with K simultaneous calls into K entries.
///
/// With `shuffle` set, both the processing order of the calls and each
/// entry's history permutation come from a Fisher-Yates shuffle seeded
/// per sample ID; identical `(sample, seed)` inputs decompose
/// identically. Without it, calls keep their written order.
pub fn decompose_parallel_calls(
    sample: &RawSample,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<EvalEntry>, DecomposeError> {
    if sample.calls.is_empty() {
        return Err(DecomposeError::InvalidCall {
            sample: sample.id.clone(),
            reason: "sample has no calls".into(),
        });
    }
    if sample.tools.is_empty() {
        return Err(DecomposeError::InvalidCall {
            sample: sample.id.clone(),
            reason: "sample has no tools".into(),
        });
    }
    let schemas = normalized_schemas(sample)?;
    for call in &sample.calls {
        resolve_call(&sample.id, call, &schemas)?;
    }

    let k = sample.calls.len();
    let mut rng = sample_rng(&sample.id, seed);
    let mut order: Vec<usize> = (0..k).collect();
    if shuffle {
        fisher_yates(&mut order, &mut rng);
    }

    let mut entries = Vec::with_capacity(k);
    for i in 1..=k {
        let target = &sample.calls[order[i - 1]];
        let mut prefix: Vec<NamedCall> =
            order[..i - 1].iter().map(|&j| sample.calls[j].clone()).collect();
        if shuffle {
            fisher_yates(&mut prefix, &mut rng);
        }
        let mut history = sample.history.clone();
        history.extend(prefix);
        let ground_truth = resolve_call(&sample.id, target, &schemas)?;
        entries.push(EvalEntry {
            id: format!("{}#{}", sample.id, i),
            query: sample.query.clone(),
            environment: sample.environment.clone(),
            tools: schemas.clone(),
            history,
            ground_truth,
            ground_truth_named: target.clone(),
            parallel_group: (k >= 2).then(|| ParallelGroup {
                id: sample.id.clone(),
                index: i,
                size: k,
            }),
        });
    }
    Ok(entries)
}

/// Per-entry correctness verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub entry_id: String,
    pub function_correct: bool,
    pub overall_correct: bool,
}

/// Scores a prediction against the ground truth: the function name must
/// match exactly, and full correctness additionally requires all six
/// slots to match (null against null, values as canonical strings).
pub fn score_prediction(entry_id: &str, pred: &FunctionCall, gt: &FunctionCall) -> ScoreRecord {
    let function_correct = pred.name == gt.name;
    let overall_correct = function_correct && pred.args == gt.args;
    ScoreRecord {
        entry_id: entry_id.to_string(),
        function_correct,
        overall_correct,
    }
}

/// Aggregate accuracies over scored entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub entries: usize,
    pub groups: usize,
    pub overall: f64,
    pub function: f64,
    /// Fraction of invocations fully correct; a parallel group counts
    /// only when every member entry is overall-correct.
    pub group: f64,
}

/// Folds per-entry scores into overall, function, and group accuracy.
/// Ungrouped entries count as their own singleton invocation.
pub fn aggregate_accuracy(
    scored: &[(ScoreRecord, Option<ParallelGroup>)],
) -> Result<AccuracySummary, DecomposeError> {
    let entries = scored.len();
    if entries == 0 {
        return Ok(AccuracySummary {
            entries: 0,
            groups: 0,
            overall: 0.0,
            function: 0.0,
            group: 0.0,
        });
    }
    let overall_hits = scored.iter().filter(|(r, _)| r.overall_correct).count();
    let function_hits = scored.iter().filter(|(r, _)| r.function_correct).count();

    // group id -> (declared size, members seen, members correct)
    let mut groups: HashMap<&str, (usize, usize, usize)> = HashMap::new();
    let mut singles: Vec<bool> = Vec::new();
    for (record, group) in scored {
        match group {
            Some(g) => {
                let slot = groups.entry(g.id.as_str()).or_insert((g.size, 0, 0));
                slot.0 = slot.0.max(g.size);
                slot.1 += 1;
                if record.overall_correct {
                    slot.2 += 1;
                }
            }
            None => singles.push(record.overall_correct),
        }
    }
    for (id, (declared, found, _)) in &groups {
        if found != declared {
            return Err(DecomposeError::MissingGroupMember {
                group: (*id).to_string(),
                found: *found,
                declared: *declared,
            });
        }
    }
    let group_total = groups.len() + singles.len();
    let group_hits = groups.values().filter(|(size, _, correct)| correct == size).count()
        + singles.iter().filter(|&&c| c).count();

    Ok(AccuracySummary {
        entries,
        groups: group_total,
        overall: overall_hits as f64 / entries as f64,
        function: function_hits as f64 / entries as f64,
        group: group_hits as f64 / group_total as f64,
    })
}
