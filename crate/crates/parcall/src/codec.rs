//! Conversion between JSON-style function calls and the compressed
//! per-head representation.
//!
//! A call is split across up to eight streams: an optional content
//! stream, one stream for the function name, and six positional
//! argument streams. Unused argument slots hold the single null
//! placeholder so their heads terminate immediately. Schemas are
//! normalized to at most six parameters; anything beyond that is folded
//! into the sixth slot as a delimited list.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{ByteTokenizer, Head, SpecialToken, TokenClass, TokenId, MAX_ARG_HEADS};

/// Separator for overflow values folded into the sixth argument slot.
/// The unit-separator byte cannot occur in printable argument values.
pub const OVERFLOW_DELIMITER: char = '\u{1f}';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("duplicate parameter name: {0}")]
    DuplicateParamName(String),
    #[error("call does not conform to schema: {0}")]
    SchemaMismatch(String),
    #[error("malformed stream on head {head}: {reason}")]
    MalformedStream { head: String, reason: String },
    #[error("function head is empty")]
    MissingFunctionName,
}

/// One declared parameter of a tool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default)]
    pub required: bool,
    #[serde(rename = "type", default = "default_type_tag")]
    pub type_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

fn default_type_tag() -> String {
    "string".to_string()
}

impl ParamSpec {
    pub fn required(name: &str, type_tag: &str) -> Self {
        ParamSpec {
            name: name.to_string(),
            required: true,
            type_tag: type_tag.to_string(),
            description: None,
        }
    }

    pub fn optional(name: &str, type_tag: &str) -> Self {
        ParamSpec {
            required: false,
            ..ParamSpec::required(name, type_tag)
        }
    }
}

/// A tool definition with normalized parameter order.
///
/// `params` holds at most six entries: required parameters in their
/// original order, then optional parameters alphabetically. Parameters
/// displaced past slot six live in `overflow` and share the sixth head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub function_name: String,
    pub params: Vec<ParamSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overflow: Vec<ParamSpec>,
}

impl ToolSchema {
    /// Builds an unnormalized schema; call [`normalize_schema`] before use.
    pub fn new(function_name: &str, params: Vec<ParamSpec>) -> Self {
        ToolSchema {
            function_name: function_name.to_string(),
            params,
            overflow: Vec::new(),
        }
    }

    /// All parameters in slot order: `params` then `overflow`.
    pub fn all_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().chain(self.overflow.iter())
    }

    fn position_of(&self, name: &str) -> Option<usize> {
        self.all_params().position(|p| p.name == name)
    }
}

/// Orders parameters (required first in original order, optional
/// alphabetical) and folds parameters beyond slot six into overflow.
pub fn normalize_schema(raw: &ToolSchema) -> Result<ToolSchema, CodecError> {
    let mut seen = std::collections::HashSet::new();
    for p in raw.all_params() {
        if p.name.is_empty() {
            return Err(CodecError::SchemaMismatch("empty parameter name".into()));
        }
        if !seen.insert(p.name.as_str()) {
            return Err(CodecError::DuplicateParamName(p.name.clone()));
        }
    }
    let mut ordered: Vec<ParamSpec> = raw.all_params().filter(|p| p.required).cloned().collect();
    let mut optional: Vec<ParamSpec> = raw.all_params().filter(|p| !p.required).cloned().collect();
    optional.sort_by(|a, b| a.name.cmp(&b.name));
    ordered.extend(optional);

    let overflow = if ordered.len() > MAX_ARG_HEADS as usize {
        ordered.split_off(MAX_ARG_HEADS as usize)
    } else {
        Vec::new()
    };
    Ok(ToolSchema {
        function_name: raw.function_name.clone(),
        params: ordered,
        overflow,
    })
}

/// Content of one positional argument slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgSlot {
    Value(String),
    Null,
}

impl ArgSlot {
    pub fn is_null(&self) -> bool {
        matches!(self, ArgSlot::Null)
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            ArgSlot::Value(v) => Some(v),
            ArgSlot::Null => None,
        }
    }
}

/// A normalized call: function name, exactly six argument slots, and an
/// optional natural-language response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionCall {
    pub name: String,
    pub args: [ArgSlot; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl FunctionCall {
    /// A call with every slot null.
    pub fn bare(name: &str) -> Self {
        FunctionCall {
            name: name.to_string(),
            args: std::array::from_fn(|_| ArgSlot::Null),
            content: None,
        }
    }

    /// Resolves named arguments into slots against a normalized schema.
    ///
    /// Values for overflow parameters are joined into slot six with
    /// [`OVERFLOW_DELIMITER`]; missing values in the overflow region
    /// become empty segments (trailing ones are dropped).
    pub fn from_named(
        name: &str,
        args: &[(String, String)],
        schema: &ToolSchema,
    ) -> Result<Self, CodecError> {
        if name != schema.function_name {
            return Err(CodecError::SchemaMismatch(format!(
                "call names {name} but schema defines {}",
                schema.function_name
            )));
        }
        let mut by_position: Vec<Option<&str>> =
            vec![None; schema.params.len() + schema.overflow.len()];
        for (arg_name, value) in args {
            match schema.position_of(arg_name) {
                Some(pos) => {
                    if by_position[pos].is_some() {
                        return Err(CodecError::SchemaMismatch(format!(
                            "argument {arg_name} given twice"
                        )));
                    }
                    by_position[pos] = Some(value);
                }
                None => {
                    return Err(CodecError::SchemaMismatch(format!(
                        "unknown argument {arg_name} for {name}"
                    )))
                }
            }
        }
        let mut slots: [ArgSlot; 6] = std::array::from_fn(|_| ArgSlot::Null);
        let direct = schema.params.len().min(5);
        for (k, slot) in slots.iter_mut().enumerate().take(direct) {
            if let Some(v) = by_position[k] {
                *slot = ArgSlot::Value(v.to_string());
            }
        }
        if schema.params.len() >= 6 {
            let mut segments: Vec<Option<&str>> = vec![by_position[5]];
            segments.extend(by_position[6..].iter().copied());
            while segments.len() > 1 && segments.last() == Some(&None) {
                segments.pop();
            }
            if segments.iter().any(|s| s.is_some()) {
                let joined: Vec<&str> = segments.iter().map(|s| s.unwrap_or("")).collect();
                slots[5] = ArgSlot::Value(joined.join(&OVERFLOW_DELIMITER.to_string()));
            }
        }
        Ok(FunctionCall {
            name: name.to_string(),
            args: slots,
            content: None,
        })
    }

    pub fn with_content(mut self, content: &str) -> Self {
        self.content = Some(content.to_string());
        self
    }

    /// Recovers named arguments in schema slot order, splitting the
    /// sixth slot back into overflow values when the schema has any.
    pub fn to_named(&self, schema: &ToolSchema) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let direct = if schema.overflow.is_empty() {
            schema.params.len()
        } else {
            5
        };
        for (k, param) in schema.params.iter().enumerate().take(direct) {
            if let ArgSlot::Value(v) = &self.args[k] {
                out.push((param.name.clone(), v.clone()));
            }
        }
        if !schema.overflow.is_empty() && schema.params.len() >= 6 {
            if let ArgSlot::Value(joined) = &self.args[5] {
                let segments: Vec<&str> = joined.split(OVERFLOW_DELIMITER).collect();
                let names: Vec<&ParamSpec> =
                    std::iter::once(&schema.params[5]).chain(&schema.overflow).collect();
                for (i, segment) in segments.iter().enumerate().take(names.len()) {
                    let keep = !segment.is_empty() || (i == 0 && segments.len() == 1);
                    if keep {
                        out.push((names[i].name.clone(), segment.to_string()));
                    }
                }
            }
        }
        out
    }

    /// Number of non-null argument slots.
    pub fn arity(&self) -> usize {
        self.args.iter().filter(|a| !a.is_null()).count()
    }
}

/// Why a head stream stopped producing tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    CloseTag,
    NullToken,
    MaxTokens,
    EndOfSequence,
}

/// One head's emitted tokens, terminator included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadStream {
    pub tokens: Vec<TokenId>,
    pub termination: TerminationReason,
}

impl Default for HeadStream {
    fn default() -> Self {
        HeadStream {
            tokens: Vec::new(),
            termination: TerminationReason::EndOfSequence,
        }
    }
}

impl HeadStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The eight per-head streams of one generation pass. Heads that never
/// ran stay empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadStreamSet {
    streams: [HeadStream; 8],
}

impl HeadStreamSet {
    pub fn get(&self, head: Head) -> &HeadStream {
        &self.streams[head.index()]
    }

    pub fn set(&mut self, head: Head, stream: HeadStream) {
        self.streams[head.index()] = stream;
    }

    pub fn iter(&self) -> impl Iterator<Item = (Head, &HeadStream)> {
        Head::all().into_iter().map(move |h| (h, self.get(h)))
    }

    /// Token count of the longest function-call head (function and
    /// argument heads; the content head is excluded from compression
    /// accounting).
    pub fn bottleneck_tokens(&self) -> usize {
        Head::function_call_heads()
            .into_iter()
            .map(|h| self.get(h).len())
            .max()
            .unwrap_or(0)
    }

    /// Per-head token counts in [`Head::all`] order.
    pub fn token_counts(&self) -> [usize; 8] {
        std::array::from_fn(|i| self.streams[i].len())
    }
}

/// Encodes a schema-conformant call into per-head streams.
pub fn encode_call(
    call: &FunctionCall,
    schema: &ToolSchema,
    tokenizer: &ByteTokenizer,
) -> Result<HeadStreamSet, CodecError> {
    if call.name != schema.function_name {
        return Err(CodecError::SchemaMismatch(format!(
            "call names {} but schema defines {}",
            call.name, schema.function_name
        )));
    }
    for k in schema.params.len()..6 {
        if !call.args[k].is_null() {
            return Err(CodecError::SchemaMismatch(format!(
                "slot {} has a value but the schema has only {} parameters",
                k + 1,
                schema.params.len()
            )));
        }
    }
    let table = tokenizer.table();
    let mut set = HeadStreamSet::default();

    let mut function = tokenizer.tokenize(&call.name);
    function.push(table.id_of(SpecialToken::FunctionClose));
    set.set(
        Head::Function,
        HeadStream {
            tokens: function,
            termination: TerminationReason::CloseTag,
        },
    );

    for k in 1..=MAX_ARG_HEADS {
        let stream = match &call.args[k as usize - 1] {
            ArgSlot::Value(v) => {
                let mut tokens = tokenizer.tokenize(v);
                tokens.push(table.id_of(SpecialToken::ArgClose(k)));
                HeadStream {
                    tokens,
                    termination: TerminationReason::CloseTag,
                }
            }
            ArgSlot::Null => HeadStream {
                tokens: vec![table.id_of(SpecialToken::Null)],
                termination: TerminationReason::NullToken,
            },
        };
        set.set(Head::Arg(k), stream);
    }

    if let Some(content) = &call.content {
        let mut tokens = tokenizer.tokenize(content);
        tokens.push(table.id_of(SpecialToken::ContentClose));
        set.set(
            Head::Content,
            HeadStream {
                tokens,
                termination: TerminationReason::CloseTag,
            },
        );
    }
    Ok(set)
}

/// Non-fatal observations made while decoding a stream set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeDiagnostic {
    /// Head hit its token budget before any terminator.
    Truncated(String),
    /// Head ended at end-of-sequence without its close tag.
    MissingCloseTag(String),
}

/// Result of [`decode_streams`]: the parsed call plus any diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedCall {
    pub call: FunctionCall,
    pub diagnostics: Vec<DecodeDiagnostic>,
}

/// Payload of one head after stripping its terminator. `None` means the
/// head was inactive (empty or null-terminated).
fn parse_head(
    head: Head,
    stream: &HeadStream,
    tokenizer: &ByteTokenizer,
    diagnostics: &mut Vec<DecodeDiagnostic>,
) -> Result<Option<String>, CodecError> {
    if stream.is_empty() {
        return Ok(None);
    }
    let table = tokenizer.table();
    let malformed = |reason: String| CodecError::MalformedStream {
        head: head.name(),
        reason,
    };
    let mut payload: Vec<TokenId> = Vec::with_capacity(stream.len());
    for (i, &token) in stream.tokens.iter().enumerate() {
        let last = i + 1 == stream.len();
        match table.classify(token) {
            TokenClass::Special(kind) if kind == head.close_token() => {
                if !last {
                    return Err(malformed("tokens after close tag".into()));
                }
                return Ok(Some(tokenizer.detokenize(&payload)));
            }
            TokenClass::Special(SpecialToken::Null) => {
                if !payload.is_empty() {
                    return Err(malformed("value tokens before null placeholder".into()));
                }
                if !last {
                    return Err(malformed("tokens after null placeholder".into()));
                }
                return Ok(None);
            }
            TokenClass::Special(kind) => {
                return Err(malformed(format!(
                    "foreign special token {} in stream",
                    kind.surface()
                )));
            }
            TokenClass::Ordinary if token == table.eos_id() => {
                if !last {
                    return Err(malformed("tokens after end of sequence".into()));
                }
                if payload.is_empty() {
                    return Ok(None);
                }
                diagnostics.push(DecodeDiagnostic::MissingCloseTag(head.name()));
                return Ok(Some(tokenizer.detokenize(&payload)));
            }
            TokenClass::Ordinary => payload.push(token),
        }
    }
    // Ran out of tokens without a terminator: budget-limited stream.
    diagnostics.push(DecodeDiagnostic::Truncated(head.name()));
    Ok(Some(tokenizer.detokenize(&payload)))
}

/// Reassembles a call from per-head streams. Inverse of [`encode_call`]
/// on well-formed input; budget-truncated heads parse best-effort with a
/// diagnostic.
pub fn decode_streams(
    streams: &HeadStreamSet,
    _schema: &ToolSchema,
    tokenizer: &ByteTokenizer,
) -> Result<DecodedCall, CodecError> {
    let mut diagnostics = Vec::new();
    let name = parse_head(Head::Function, streams.get(Head::Function), tokenizer, &mut diagnostics)?
        .filter(|n| !n.is_empty())
        .ok_or(CodecError::MissingFunctionName)?;
    let mut args: [ArgSlot; 6] = std::array::from_fn(|_| ArgSlot::Null);
    for k in 1..=MAX_ARG_HEADS {
        let head = Head::Arg(k);
        if let Some(value) = parse_head(head, streams.get(head), tokenizer, &mut diagnostics)? {
            args[k as usize - 1] = ArgSlot::Value(value);
        }
    }
    let content = parse_head(Head::Content, streams.get(Head::Content), tokenizer, &mut diagnostics)?;
    Ok(DecodedCall {
        call: FunctionCall {
            name,
            args,
            content,
        },
        diagnostics,
    })
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// Renders the uncompressed reference output: canonical single-line JSON
/// with schema-ordered keys and no whitespace. All argument values are
/// rendered as JSON strings of their canonical text.
pub fn baseline_json_render(call: &FunctionCall, schema: &ToolSchema) -> String {
    let mut out = String::from("{\"name\":");
    out.push_str(&json_string(&call.name));
    out.push_str(",\"arguments\":{");
    let mut first = true;
    for (name, value) in call.to_named(schema) {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&json_string(&name));
        out.push(':');
        out.push_str(&json_string(&value));
    }
    out.push_str("}}");
    out
}

/// Token counts behind one compression-ratio sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionSample {
    pub baseline_tokens: usize,
    pub bottleneck_tokens: usize,
    pub ratio: f64,
}

/// Measures baseline-JSON versus bottleneck-head token counts for one call.
pub fn measure_compression(
    call: &FunctionCall,
    schema: &ToolSchema,
    tokenizer: &ByteTokenizer,
) -> Result<CompressionSample, CodecError> {
    let baseline_tokens = tokenizer.tokenize(&baseline_json_render(call, schema)).len();
    let streams = encode_call(call, schema, tokenizer)?;
    let bottleneck_tokens = streams.bottleneck_tokens();
    Ok(CompressionSample {
        baseline_tokens,
        bottleneck_tokens,
        ratio: baseline_tokens as f64 / bottleneck_tokens as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::build_token_table;

    fn weather_schema() -> ToolSchema {
        normalize_schema(&ToolSchema::new(
            "get_weather",
            vec![
                ParamSpec::required("location", "string"),
                ParamSpec::required("date", "string"),
                ParamSpec::required("unit", "string"),
            ],
        ))
        .unwrap()
    }

    fn weather_call() -> FunctionCall {
        FunctionCall::from_named(
            "get_weather",
            &[
                ("location".into(), "Beijing".into()),
                ("date".into(), "2024-12-24".into()),
                ("unit".into(), "celsius".into()),
            ],
            &weather_schema(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_orders_required_then_optional_alphabetical() {
        let raw = ToolSchema::new(
            "f",
            vec![
                ParamSpec::required("r2", "string"),
                ParamSpec::required("r1", "string"),
                ParamSpec::optional("b", "string"),
                ParamSpec::optional("a", "string"),
            ],
        );
        let schema = normalize_schema(&raw).unwrap();
        let names: Vec<&str> = schema.params.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["r2", "r1", "a", "b"]);
        assert!(schema.overflow.is_empty());
    }

    #[test]
    fn normalize_empty_schema() {
        let schema = normalize_schema(&ToolSchema::new("f", vec![])).unwrap();
        assert!(schema.params.is_empty());
        assert!(schema.overflow.is_empty());
    }

    #[test]
    fn normalize_eight_required_params_overflows_two() {
        let raw = ToolSchema::new(
            "f",
            (1..=8).map(|i| ParamSpec::required(&format!("p{i}"), "string")).collect(),
        );
        let schema = normalize_schema(&raw).unwrap();
        assert_eq!(schema.params.len(), 6);
        assert_eq!(schema.overflow.len(), 2);
        assert_eq!(schema.overflow[0].name, "p7");
        assert_eq!(schema.overflow[1].name, "p8");
    }

    #[test]
    fn normalize_rejects_duplicate_names() {
        let raw = ToolSchema::new(
            "f",
            vec![ParamSpec::required("x", "string"), ParamSpec::optional("x", "string")],
        );
        assert_eq!(
            normalize_schema(&raw),
            Err(CodecError::DuplicateParamName("x".into()))
        );
    }

    #[test]
    fn normalize_is_idempotent() {
        let raw = ToolSchema::new(
            "f",
            vec![
                ParamSpec::optional("z", "string"),
                ParamSpec::required("q", "integer"),
                ParamSpec::optional("m", "string"),
            ],
        );
        let once = normalize_schema(&raw).unwrap();
        let twice = normalize_schema(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn encode_reference_example() {
        let tok = ByteTokenizer::new();
        let table = build_token_table(256);
        let call = weather_call().with_content("I'll check the weather for you.");
        let streams = encode_call(&call, &weather_schema(), &tok).unwrap();

        let function = streams.get(Head::Function);
        assert_eq!(tok.detokenize(&function.tokens), "get_weather</function>");
        assert_eq!(function.termination, TerminationReason::CloseTag);

        assert_eq!(tok.detokenize(&streams.get(Head::Arg(1)).tokens), "Beijing</arg1>");
        assert_eq!(tok.detokenize(&streams.get(Head::Arg(2)).tokens), "2024-12-24</arg2>");
        assert_eq!(tok.detokenize(&streams.get(Head::Arg(3)).tokens), "celsius</arg3>");
        for k in 4..=6 {
            let stream = streams.get(Head::Arg(k));
            assert_eq!(stream.tokens, vec![table.id_of(SpecialToken::Null)]);
            assert_eq!(stream.termination, TerminationReason::NullToken);
        }
        assert_eq!(
            tok.detokenize(&streams.get(Head::Content).tokens),
            "I'll check the weather for you.</content>"
        );
    }

    #[test]
    fn encode_zero_arg_call_is_all_null() {
        let tok = ByteTokenizer::new();
        let schema = normalize_schema(&ToolSchema::new("f", vec![])).unwrap();
        let streams = encode_call(&FunctionCall::bare("f"), &schema, &tok).unwrap();
        for k in 1..=6 {
            assert_eq!(streams.get(Head::Arg(k)).termination, TerminationReason::NullToken);
            assert_eq!(streams.get(Head::Arg(k)).len(), 1);
        }
    }

    #[test]
    fn decode_reference_example() {
        let tok = ByteTokenizer::new();
        let schema = weather_schema();
        let call = weather_call();
        let streams = encode_call(&call, &schema, &tok).unwrap();
        let decoded = decode_streams(&streams, &schema, &tok).unwrap();
        assert_eq!(decoded.call, call);
        assert!(decoded.diagnostics.is_empty());
        assert_eq!(decoded.call.args[3], ArgSlot::Null);
    }

    #[test]
    fn decode_all_null_yields_zero_args() {
        let tok = ByteTokenizer::new();
        let schema = normalize_schema(&ToolSchema::new("f", vec![])).unwrap();
        let streams = encode_call(&FunctionCall::bare("f"), &schema, &tok).unwrap();
        let decoded = decode_streams(&streams, &schema, &tok).unwrap();
        assert_eq!(decoded.call.name, "f");
        assert_eq!(decoded.call.arity(), 0);
    }

    #[test]
    fn decode_rejects_empty_function_head() {
        let tok = ByteTokenizer::new();
        let schema = weather_schema();
        let streams = HeadStreamSet::default();
        assert_eq!(
            decode_streams(&streams, &schema, &tok),
            Err(CodecError::MissingFunctionName)
        );
    }

    #[test]
    fn decode_rejects_foreign_close_tag() {
        let tok = ByteTokenizer::new();
        let table = *tok.table();
        let schema = weather_schema();
        let mut streams = HeadStreamSet::default();
        streams.set(
            Head::Function,
            HeadStream {
                tokens: vec![b'f' as TokenId, table.id_of(SpecialToken::ArgClose(2))],
                termination: TerminationReason::CloseTag,
            },
        );
        match decode_streams(&streams, &schema, &tok) {
            Err(CodecError::MalformedStream { head, .. }) => assert_eq!(head, "function"),
            other => panic!("expected MalformedStream, got {other:?}"),
        }
    }

    #[test]
    fn decode_truncated_head_is_best_effort() {
        let tok = ByteTokenizer::new();
        let schema = weather_schema();
        let mut streams = encode_call(&weather_call(), &schema, &tok).unwrap();
        // Drop the close tag and mark the head budget-limited.
        let mut arg1 = streams.get(Head::Arg(1)).clone();
        arg1.tokens.pop();
        arg1.termination = TerminationReason::MaxTokens;
        streams.set(Head::Arg(1), arg1);
        let decoded = decode_streams(&streams, &schema, &tok).unwrap();
        assert_eq!(decoded.call.args[0], ArgSlot::Value("Beijing".into()));
        assert_eq!(decoded.diagnostics, vec![DecodeDiagnostic::Truncated("arg1".into())]);
    }

    #[test]
    fn decode_eos_terminated_head_records_missing_close() {
        let tok = ByteTokenizer::new();
        let table = *tok.table();
        let schema = weather_schema();
        let mut streams = encode_call(&weather_call(), &schema, &tok).unwrap();
        let mut arg1 = streams.get(Head::Arg(1)).clone();
        arg1.tokens.pop();
        arg1.tokens.push(table.eos_id());
        arg1.termination = TerminationReason::EndOfSequence;
        streams.set(Head::Arg(1), arg1);
        let decoded = decode_streams(&streams, &schema, &tok).unwrap();
        assert_eq!(decoded.call.args[0], ArgSlot::Value("Beijing".into()));
        assert_eq!(
            decoded.diagnostics,
            vec![DecodeDiagnostic::MissingCloseTag("arg1".into())]
        );
    }

    #[test]
    fn overflow_values_share_slot_six() {
        let tok = ByteTokenizer::new();
        let raw = ToolSchema::new(
            "f",
            (1..=7).map(|i| ParamSpec::required(&format!("p{i}"), "string")).collect(),
        );
        let schema = normalize_schema(&raw).unwrap();
        let args: Vec<(String, String)> =
            (1..=7).map(|i| (format!("p{i}"), format!("v{i}"))).collect();
        let call = FunctionCall::from_named("f", &args, &schema).unwrap();
        assert_eq!(call.args[5], ArgSlot::Value("v6\u{1f}v7".into()));

        let streams = encode_call(&call, &schema, &tok).unwrap();
        let decoded = decode_streams(&streams, &schema, &tok).unwrap();
        assert_eq!(decoded.call, call);
        assert_eq!(decoded.call.to_named(&schema), args);
    }

    #[test]
    fn overflow_with_missing_middle_value() {
        let schema = normalize_schema(&ToolSchema::new(
            "f",
            (1..=8).map(|i| ParamSpec::required(&format!("p{i}"), "string")).collect(),
        ))
        .unwrap();
        // p6 and p8 given, p7 omitted: empty middle segment.
        let args = vec![
            ("p6".to_string(), "v6".to_string()),
            ("p8".to_string(), "v8".to_string()),
        ];
        let call = FunctionCall::from_named("f", &args, &schema).unwrap();
        assert_eq!(call.args[5], ArgSlot::Value("v6\u{1f}\u{1f}v8".into()));
        assert_eq!(call.to_named(&schema), args);
    }

    #[test]
    fn named_round_trip_preserves_empty_value_in_slot_six() {
        let schema = normalize_schema(&ToolSchema::new(
            "f",
            (1..=7).map(|i| ParamSpec::required(&format!("p{i}"), "string")).collect(),
        ))
        .unwrap();
        let args = vec![("p6".to_string(), String::new())];
        let call = FunctionCall::from_named("f", &args, &schema).unwrap();
        assert_eq!(call.args[5], ArgSlot::Value(String::new()));
        assert_eq!(call.to_named(&schema), args);
    }

    #[test]
    fn baseline_json_reference_string() {
        let schema = weather_schema();
        assert_eq!(
            baseline_json_render(&weather_call(), &schema),
            r#"{"name":"get_weather","arguments":{"location":"Beijing","date":"2024-12-24","unit":"celsius"}}"#
        );
        let empty_schema = normalize_schema(&ToolSchema::new("f", vec![])).unwrap();
        assert_eq!(
            baseline_json_render(&FunctionCall::bare("f"), &empty_schema),
            r#"{"name":"f","arguments":{}}"#
        );
    }

    #[test]
    fn null_slots_are_omitted_from_baseline_json() {
        let schema = weather_schema();
        let call = FunctionCall::from_named(
            "get_weather",
            &[("location".into(), "Paris".into())],
            &schema,
        )
        .unwrap();
        assert_eq!(
            baseline_json_render(&call, &schema),
            r#"{"name":"get_weather","arguments":{"location":"Paris"}}"#
        );
    }

    #[test]
    fn compression_sample_for_reference_call() {
        let tok = ByteTokenizer::new();
        let schema = weather_schema();
        let sample = measure_compression(&weather_call(), &schema, &tok).unwrap();
        // Baseline string is 94 bytes; bottleneck is "get_weather" + close.
        assert_eq!(sample.baseline_tokens, 94);
        assert_eq!(sample.bottleneck_tokens, 12);
        assert!(sample.ratio > 1.0);
    }

    #[test]
    fn bottleneck_never_exceeds_baseline() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let tok = ByteTokenizer::new();
        for _ in 0..1000 {
            let arity = rng.gen_range(0..=6usize);
            let schema = normalize_schema(&ToolSchema::new(
                "fn_x",
                (0..arity).map(|i| ParamSpec::required(&format!("p{i}"), "string")).collect(),
            ))
            .unwrap();
            let args: Vec<(String, String)> = (0..arity)
                .map(|i| {
                    let len = rng.gen_range(0..=32);
                    let v: String = (0..len)
                        .map(|_| {
                            let c = rng.gen_range(0x21u8..0x7f) as char;
                            if c == '<' {
                                '_'
                            } else {
                                c
                            }
                        })
                        .collect();
                    (format!("p{i}"), v)
                })
                .collect();
            let call = FunctionCall::from_named("fn_x", &args, &schema).unwrap();
            let sample = measure_compression(&call, &schema, &tok).unwrap();
            assert!(
                sample.bottleneck_tokens <= sample.baseline_tokens,
                "bottleneck {} > baseline {}",
                sample.bottleneck_tokens,
                sample.baseline_tokens
            );
        }
    }

    #[test]
    fn round_trip_exhaustive_over_arities() {
        let tok = ByteTokenizer::new();
        for arity in 0..=6usize {
            let schema = normalize_schema(&ToolSchema::new(
                "probe",
                (0..arity).map(|i| ParamSpec::required(&format!("p{i}"), "string")).collect(),
            ))
            .unwrap();
            let args: Vec<(String, String)> =
                (0..arity).map(|i| (format!("p{i}"), format!("value-{i}"))).collect();
            let call = FunctionCall::from_named("probe", &args, &schema).unwrap();
            let streams = encode_call(&call, &schema, &tok).unwrap();
            let decoded = decode_streams(&streams, &schema, &tok).unwrap();
            assert_eq!(decoded.call, call, "arity {arity}");
        }
    }

    #[test]
    fn null_exclusivity_in_encoded_streams() {
        let tok = ByteTokenizer::new();
        let table = *tok.table();
        let schema = weather_schema();
        let call = FunctionCall::from_named(
            "get_weather",
            &[("location".into(), "Oslo".into()), ("unit".into(), "kelvin".into())],
            &schema,
        )
        .unwrap();
        let streams = encode_call(&call, &schema, &tok).unwrap();
        let null_id = table.id_of(SpecialToken::Null);
        for k in 1..=6u8 {
            let has_null = streams.get(Head::Arg(k)).tokens.contains(&null_id);
            assert_eq!(has_null, call.args[k as usize - 1].is_null(), "slot {k}");
        }
    }
}
