//! Lockstep multi-head generation over a shared prompt prefix.
//!
//! One prefill feeds every head: each head forks the base session with
//! its mode-selector token appended, then all active heads advance one
//! greedy token per batched step. A head leaves the batch the step it
//! emits a stop token ID or exhausts its budget, so the number of
//! batched steps equals the longest head's token count exactly.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{cache_footprint, decode_step, fork, prefill, Backend, BackendError, CostModel};
use crate::codec::{HeadStream, HeadStreamSet, TerminationReason};
use crate::tokens::{ByteTokenizer, Head, SpecialToken, TokenClass, TokenId, TokenTable};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("head list must be nonempty")]
    NoHeads,
    #[error("prompt must be nonempty")]
    EmptyPrompt,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Stop rules for one generation run: string-based and token-ID-based
/// stopping plus a per-head token budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopConfig {
    pub stop_strings: Vec<String>,
    pub stop_token_ids: Vec<TokenId>,
    pub max_tokens_per_head: usize,
}

impl StopConfig {
    /// The dual configuration: every structural terminator is listed
    /// both as a surface string and as its token ID, plus the bare EOS
    /// ID, so stopping triggers without the one-step string-match delay.
    pub fn dual(table: &TokenTable, max_tokens_per_head: usize) -> StopConfig {
        let stop_kinds = [
            SpecialToken::Null,
            SpecialToken::ContentClose,
            SpecialToken::FunctionClose,
            SpecialToken::ArgClose(1),
            SpecialToken::ArgClose(2),
            SpecialToken::ArgClose(3),
            SpecialToken::ArgClose(4),
            SpecialToken::ArgClose(5),
            SpecialToken::ArgClose(6),
        ];
        let stop_strings = stop_kinds.iter().map(|k| k.surface().to_string()).collect();
        let mut stop_token_ids: Vec<TokenId> = stop_kinds.iter().map(|&k| table.id_of(k)).collect();
        stop_token_ids.push(table.eos_id());
        StopConfig {
            stop_strings,
            stop_token_ids,
            max_tokens_per_head,
        }
    }

    /// Checks the dual invariant: each stop string's final token ID is
    /// also listed in `stop_token_ids`.
    pub fn validate(&self, tokenizer: &ByteTokenizer) -> Result<(), String> {
        if self.max_tokens_per_head < 1 {
            return Err("max_tokens_per_head must be at least 1".into());
        }
        for s in &self.stop_strings {
            let tokens = tokenizer.tokenize(s);
            match tokens.last() {
                Some(last) if self.stop_token_ids.contains(last) => {}
                _ => return Err(format!("stop string {s:?} has no matching stop token ID")),
            }
        }
        Ok(())
    }
}

/// Outcome of checking one freshly emitted token against the stop rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationDecision {
    Continue,
    /// Token-ID match: stop with this token included.
    StopNow(TerminationReason),
    /// String match only: stop after one more step.
    StopDelayed(TerminationReason),
}

fn reason_for_token(table: &TokenTable, token: TokenId) -> TerminationReason {
    match table.classify(token) {
        TokenClass::Special(SpecialToken::Null) => TerminationReason::NullToken,
        TokenClass::Special(kind) if kind.is_close_tag() => TerminationReason::CloseTag,
        _ => TerminationReason::EndOfSequence,
    }
}

/// Applies the dual stop rules to one new token. Token-ID matches stop
/// immediately; a match found only by string comparison stops one step
/// later, mirroring the detokenize-then-scan delay of string matching.
/// `stream_text_tail` must already include the new token's text.
pub fn stop_check(
    stop: &StopConfig,
    table: &TokenTable,
    new_token: TokenId,
    stream_text_tail: &str,
) -> TerminationDecision {
    if stop.stop_token_ids.contains(&new_token) {
        return TerminationDecision::StopNow(reason_for_token(table, new_token));
    }
    for s in &stop.stop_strings {
        if stream_text_tail.ends_with(s.as_str()) {
            let tokenizer = ByteTokenizer::new();
            let reason = tokenizer
                .tokenize(s)
                .last()
                .map(|&t| reason_for_token(table, t))
                .unwrap_or(TerminationReason::EndOfSequence);
            return TerminationDecision::StopDelayed(reason);
        }
    }
    TerminationDecision::Continue
}

const TAIL_KEEP_BYTES: usize = 64;

/// Streaming wrapper around [`stop_check`] that tracks the text tail,
/// the token budget, and the one-step delay of string matches.
#[derive(Debug, Clone)]
pub struct StopTracker {
    stop: StopConfig,
    tokenizer: ByteTokenizer,
    tail: String,
    emitted: usize,
    pending: Option<TerminationReason>,
}

impl StopTracker {
    pub fn new(stop: &StopConfig, tokenizer: &ByteTokenizer) -> Self {
        StopTracker {
            stop: stop.clone(),
            tokenizer: *tokenizer,
            tail: String::new(),
            emitted: 0,
            pending: None,
        }
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Records one emitted token. Returns the termination reason when
    /// generation must stop with this token included.
    pub fn observe(&mut self, token: TokenId) -> Option<TerminationReason> {
        self.emitted += 1;
        if let Some(reason) = self.pending.take() {
            return Some(reason);
        }
        self.tail.push_str(&self.tokenizer.detokenize(&[token]));
        if self.tail.len() > TAIL_KEEP_BYTES {
            let cut = self.tail.len() - TAIL_KEEP_BYTES;
            let cut = (cut..self.tail.len()).find(|&i| self.tail.is_char_boundary(i)).unwrap();
            self.tail.drain(..cut);
        }
        match stop_check(&self.stop, self.tokenizer.table(), token, &self.tail) {
            TerminationDecision::StopNow(reason) => Some(reason),
            TerminationDecision::StopDelayed(reason) => {
                if self.emitted >= self.stop.max_tokens_per_head {
                    return Some(TerminationReason::MaxTokens);
                }
                self.pending = Some(reason);
                None
            }
            TerminationDecision::Continue => {
                (self.emitted >= self.stop.max_tokens_per_head).then_some(TerminationReason::MaxTokens)
            }
        }
    }
}

/// Accounting for one generation run, in simulated time units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    /// Number of decoding streams (1 for sequential runs).
    pub heads: usize,
    /// Tokens emitted per head, in the run's head order.
    pub tokens_per_head: Vec<usize>,
    /// Total emitted tokens across heads.
    pub total_tokens: usize,
    /// Batched decode steps taken; equals the longest head for parallel
    /// runs and `total_tokens` for sequential runs.
    pub forward_passes: usize,
    pub prefill_time: f64,
    pub decode_time: f64,
    pub total_time: f64,
    /// Overhead multiplier applied to `decode_time`.
    pub overhead_factor: f64,
    /// Pessimistic decode time with the batch held at full head count.
    pub decode_time_fixed_batch: f64,
    /// Cache footprint after the run: shared prefix counted once plus
    /// each head's own tokens.
    pub cached_tokens: usize,
    /// Wall-clock seconds spent in the run (informational).
    pub wall_time: f64,
}

impl DecodeTrace {
    pub fn max_tokens_per_head(&self) -> usize {
        self.tokens_per_head.iter().copied().max().unwrap_or(0)
    }
}

struct HeadRun {
    head: Head,
    session: crate::backend::Session,
    tracker: StopTracker,
    tokens: Vec<TokenId>,
    termination: Option<TerminationReason>,
}

/// Generates all requested heads over one shared prefill.
///
/// Returns the per-head streams (stop tokens included) and the run
/// trace. Decode cost sums `step_time(B)` over steps with `B` the
/// count of still-active heads, scaled by the cost model's parallel
/// overhead factor.
pub fn generate_parallel(
    backend: &dyn Backend,
    prompt: &[TokenId],
    tokenizer: &ByteTokenizer,
    heads: &[Head],
    stop: &StopConfig,
    cost: &CostModel,
) -> Result<(HeadStreamSet, DecodeTrace), SchedulerError> {
    if heads.is_empty() {
        return Err(SchedulerError::NoHeads);
    }
    if prompt.is_empty() {
        return Err(SchedulerError::EmptyPrompt);
    }
    let started = Instant::now();
    let table = tokenizer.table();
    let mut ordered: Vec<Head> = Vec::new();
    for &head in heads {
        if !ordered.contains(&head) {
            ordered.push(head);
        }
    }

    let (base, prefill_time) = prefill(backend, prompt, cost)?;
    let mut runs: Vec<HeadRun> = ordered
        .iter()
        .map(|&head| HeadRun {
            head,
            session: fork(&base, table.id_of(head.open_token())),
            tracker: StopTracker::new(stop, tokenizer),
            tokens: Vec::new(),
            termination: None,
        })
        .collect();

    let mut raw_decode_time = 0.0;
    let mut steps = 0usize;
    loop {
        let mut active: Vec<&mut HeadRun> = runs
            .iter_mut()
            .filter(|r| r.termination.is_none())
            .collect();
        if active.is_empty() {
            break;
        }
        steps += 1;
        let output = {
            let mut sessions: Vec<&mut crate::backend::Session> =
                active.iter_mut().map(|r| &mut r.session).collect();
            decode_step(backend, &mut sessions, cost)?
        };
        raw_decode_time += output.step_cost;
        for (run, &token) in active.iter_mut().zip(output.next_tokens.iter()) {
            run.tokens.push(token);
            run.termination = run.tracker.observe(token);
        }
    }

    let overhead = cost.parallel_overhead;
    let decode_time = overhead * raw_decode_time;
    let fixed_batch = ordered.len();
    let decode_time_fixed_batch = overhead * steps as f64 * cost.step_time(fixed_batch);
    let cached_tokens = {
        let sessions: Vec<crate::backend::Session> =
            runs.iter().map(|r| r.session.clone()).collect();
        cache_footprint(base.len(), &sessions)
    };

    let mut streams = HeadStreamSet::default();
    let mut tokens_per_head = Vec::with_capacity(runs.len());
    for run in &runs {
        tokens_per_head.push(run.tokens.len());
        streams.set(
            run.head,
            HeadStream {
                tokens: run.tokens.clone(),
                termination: run.termination.unwrap_or(TerminationReason::MaxTokens),
            },
        );
    }
    let total_tokens = tokens_per_head.iter().sum();
    let trace = DecodeTrace {
        heads: ordered.len(),
        tokens_per_head,
        total_tokens,
        forward_passes: steps,
        prefill_time,
        decode_time,
        total_time: prefill_time + decode_time,
        overhead_factor: overhead,
        decode_time_fixed_batch,
        cached_tokens,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((streams, trace))
}

/// Single-stream greedy decoding: the conventional baseline this runtime
/// is compared against. The first step always runs, so at least one
/// token is emitted.
pub fn generate_sequential_baseline(
    backend: &dyn Backend,
    prompt: &[TokenId],
    stop: &StopConfig,
    cost: &CostModel,
) -> Result<(Vec<TokenId>, DecodeTrace), SchedulerError> {
    if prompt.is_empty() {
        return Err(SchedulerError::EmptyPrompt);
    }
    let started = Instant::now();
    let tokenizer = ByteTokenizer::new();
    let (mut session, prefill_time) = prefill(backend, prompt, cost)?;
    let mut tracker = StopTracker::new(stop, &tokenizer);
    let mut tokens = Vec::new();
    let mut decode_time = 0.0;
    loop {
        let output = decode_step(backend, &mut [&mut session], cost)?;
        decode_time += output.step_cost;
        let token = output.next_tokens[0];
        tokens.push(token);
        if tracker.observe(token).is_some() {
            break;
        }
    }
    let n = tokens.len();
    let trace = DecodeTrace {
        heads: 1,
        tokens_per_head: vec![n],
        total_tokens: n,
        forward_passes: n,
        prefill_time,
        decode_time,
        total_time: prefill_time + decode_time,
        overhead_factor: 1.0,
        decode_time_fixed_batch: decode_time,
        cached_tokens: session.len(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((tokens, trace))
}
