//! Seeded synthetic schemas and calls for property tests, fixtures, and
//! benchmarks. Everything here is a pure function of its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{normalize_schema, FunctionCall, ParamSpec, ToolSchema};

/// Characters usable in argument values: printable ASCII without `<`
/// (so reserved markers stay whole) and without the overflow delimiter.
const VALUE_ALPHABET: &[u8] =
    b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-.:,/";

const NAME_STEMS: &[&str] = &[
    "get", "set", "list", "find", "update", "create", "delete", "toggle", "send", "play",
];
const NAME_NOUNS: &[&str] = &[
    "weather", "alarm", "timer", "message", "route", "volume", "brightness", "event", "photo",
    "playlist", "contact", "profile",
];

/// Bounds for one random call: slot count and value length.
#[derive(Debug, Clone, Copy)]
pub struct CallShape {
    pub min_args: usize,
    pub max_args: usize,
    pub min_value_len: usize,
    pub max_value_len: usize,
}

impl Default for CallShape {
    fn default() -> Self {
        CallShape {
            min_args: 0,
            max_args: 6,
            min_value_len: 0,
            max_value_len: 32,
        }
    }
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_value(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| VALUE_ALPHABET[rng.gen_range(0..VALUE_ALPHABET.len())] as char)
        .collect()
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}_{}",
        NAME_STEMS[rng.gen_range(0..NAME_STEMS.len())],
        NAME_NOUNS[rng.gen_range(0..NAME_NOUNS.len())]
    )
}

/// A normalized schema with `arity` parameters, a random mix of
/// required and optional.
pub fn random_schema(rng: &mut ChaCha8Rng, arity: usize) -> ToolSchema {
    let name = random_name(rng);
    let params: Vec<ParamSpec> = (0..arity)
        .map(|i| {
            let pname = format!("p{i}");
            if rng.gen_bool(0.7) {
                ParamSpec::required(&pname, "string")
            } else {
                ParamSpec::optional(&pname, "string")
            }
        })
        .collect();
    normalize_schema(&ToolSchema::new(&name, params)).expect("generated names are unique")
}

/// A schema-conformant call with values drawn from the shape's bounds.
/// Every declared parameter receives a value, so the slot pattern is
/// exactly the schema's arity.
pub fn random_call(rng: &mut ChaCha8Rng, schema: &ToolSchema, shape: &CallShape) -> FunctionCall {
    let args: Vec<(String, String)> = schema
        .all_params()
        .map(|p| {
            let len = rng.gen_range(shape.min_value_len..=shape.max_value_len);
            (p.name.clone(), random_value(rng, len))
        })
        .collect();
    FunctionCall::from_named(&schema.function_name, &args, schema)
        .expect("generated args conform to the schema")
}

/// Seeded set of (schema, call) pairs with arities spread uniformly
/// over the shape's range.
pub fn random_call_set(seed: u64, count: usize, shape: &CallShape) -> Vec<(ToolSchema, FunctionCall)> {
    let mut rng = rng_for(seed);
    (0..count)
        .map(|_| {
            let arity = rng.gen_range(shape.min_args..=shape.max_args);
            let schema = random_schema(&mut rng, arity);
            let call = random_call(&mut rng, &schema, shape);
            (schema, call)
        })
        .collect()
}

const PARAM_NAMES: &[&str] = &[
    "query", "location", "date", "unit", "level", "mode", "title", "contact", "body", "duration",
    "genre", "room", "state", "app", "camera", "destination", "label", "time", "format", "limit",
];

/// One row of the bundled compression fixture: the call, its schema,
/// and the precomputed token counts the analyzer must reproduce.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CompressionFixtureRow {
    pub schema: ToolSchema,
    pub call: FunctionCall,
    pub baseline_tokens: usize,
    pub bottleneck_tokens: usize,
    pub cr: f64,
}

/// A call shaped like real tool traffic: a handful of named parameters,
/// one of which carries a longer free-text value.
pub fn realistic_schema_and_call(rng: &mut ChaCha8Rng) -> (ToolSchema, FunctionCall) {
    let name = random_name(rng);
    let arity = *[1, 2, 2, 3, 3, 3, 4, 4, 5, 6]
        .get(rng.gen_range(0..10))
        .unwrap();
    let mut pool: Vec<&str> = PARAM_NAMES.to_vec();
    let params: Vec<ParamSpec> = (0..arity)
        .map(|_| {
            let pick = rng.gen_range(0..pool.len());
            let pname = pool.swap_remove(pick);
            if rng.gen_bool(0.8) {
                ParamSpec::required(pname, "string")
            } else {
                ParamSpec::optional(pname, "string")
            }
        })
        .collect();
    let schema = normalize_schema(&ToolSchema::new(&name, params)).expect("pool names are unique");
    let long_slot = rng.gen_range(0..arity);
    let args: Vec<(String, String)> = schema
        .all_params()
        .enumerate()
        .map(|(i, p)| {
            let len = if i == long_slot {
                rng.gen_range(16..=32)
            } else {
                rng.gen_range(3..=9)
            };
            (p.name.clone(), random_value(rng, len))
        })
        .collect();
    let call = FunctionCall::from_named(&schema.function_name, &args, &schema)
        .expect("generated args conform to the schema");
    (schema, call)
}

/// Deterministic fixture rows with analyzer-computed token counts.
pub fn compression_fixture_rows(seed: u64, count: usize) -> Vec<CompressionFixtureRow> {
    use crate::codec::measure_compression;
    use crate::tokens::ByteTokenizer;
    let tokenizer = ByteTokenizer::new();
    let mut rng = rng_for(seed);
    (0..count)
        .map(|_| {
            let (schema, call) = realistic_schema_and_call(&mut rng);
            let sample = measure_compression(&call, &schema, &tokenizer)
                .expect("generated calls encode cleanly");
            CompressionFixtureRow {
                schema,
                call,
                baseline_tokens: sample.baseline_tokens,
                bottleneck_tokens: sample.bottleneck_tokens,
                cr: sample.ratio,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seed_deterministic() {
        let shape = CallShape::default();
        let a = random_call_set(42, 20, &shape);
        let b = random_call_set(42, 20, &shape);
        assert_eq!(a, b);
        let c = random_call_set(43, 20, &shape);
        assert_ne!(a, c);
    }

    #[test]
    fn values_avoid_reserved_characters() {
        let shape = CallShape {
            min_value_len: 8,
            max_value_len: 32,
            ..CallShape::default()
        };
        for (_, call) in random_call_set(7, 50, &shape) {
            for slot in &call.args {
                if let Some(value) = slot.value() {
                    assert!(!value.contains('<'));
                    assert!(!value.contains('\u{1f}'));
                }
            }
        }
    }

    #[test]
    fn arity_matches_schema() {
        let shape = CallShape::default();
        for (schema, call) in random_call_set(9, 50, &shape) {
            assert_eq!(call.arity(), schema.params.len());
        }
    }
}
