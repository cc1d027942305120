//! Draft-and-verify speculation layered over any two backends.
//!
//! A cheap draft backend proposes a block of tokens; the target backend
//! verifies the whole block in one batched forward pass and keeps the
//! longest prefix that matches its own greedy choice. On the first
//! mismatch the target's token is emitted instead; on full acceptance
//! the verification pass also yields a bonus token. The emitted stream
//! is therefore token-identical to target-only greedy decoding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, CostModel};
use crate::codec::{HeadStream, HeadStreamSet, TerminationReason};
use crate::scheduler::{StopConfig, StopTracker};
use crate::tokens::{ByteTokenizer, Head, TokenId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpeculativeError {
    #[error("prompt must be nonempty")]
    EmptyPrompt,
    #[error("speculation depth must be at least 1")]
    BadDepth,
    #[error("draft and target backends use different vocabularies")]
    VocabMismatch,
}

/// Speculation parameters: tokens drafted per step plus stop rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecConfig {
    pub depth: usize,
    pub stop: StopConfig,
}

impl SpecConfig {
    pub fn new(depth: usize, stop: StopConfig) -> Result<Self, SpeculativeError> {
        if depth < 1 {
            return Err(SpeculativeError::BadDepth);
        }
        Ok(SpecConfig { depth, stop })
    }
}

/// Forward-pass and acceptance accounting for one speculative run.
///
/// Draft passes are tracked separately and excluded from
/// `forward_reduction`, which compares vanilla target passes (one per
/// emitted token) against batched verification passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecTrace {
    pub drafted: usize,
    pub accepted: usize,
    /// Emitted tokens that replaced a rejected draft token.
    pub corrections: usize,
    /// Emitted tokens gained from fully accepted blocks.
    pub bonus_tokens: usize,
    pub target_forward_passes: usize,
    pub draft_forward_passes: usize,
    /// Final stream length; what target-only decoding would have cost.
    pub vanilla_forward_passes: usize,
    pub accept_rate: f64,
    pub forward_reduction: f64,
}

impl SpecTrace {
    fn from_counts(
        drafted: usize,
        accepted: usize,
        corrections: usize,
        bonus_tokens: usize,
        target_forward_passes: usize,
        draft_forward_passes: usize,
        vanilla_forward_passes: usize,
    ) -> SpecTrace {
        SpecTrace {
            drafted,
            accepted,
            corrections,
            bonus_tokens,
            target_forward_passes,
            draft_forward_passes,
            vanilla_forward_passes,
            accept_rate: if drafted == 0 {
                0.0
            } else {
                accepted as f64 / drafted as f64
            },
            forward_reduction: if target_forward_passes == 0 {
                0.0
            } else {
                vanilla_forward_passes as f64 / target_forward_passes as f64
            },
        }
    }

    /// Sums several runs into one run-level trace with recomputed rates.
    pub fn aggregate<'a>(traces: impl IntoIterator<Item = &'a SpecTrace>) -> SpecTrace {
        let mut total = (0, 0, 0, 0, 0, 0, 0);
        for t in traces {
            total.0 += t.drafted;
            total.1 += t.accepted;
            total.2 += t.corrections;
            total.3 += t.bonus_tokens;
            total.4 += t.target_forward_passes;
            total.5 += t.draft_forward_passes;
            total.6 += t.vanilla_forward_passes;
        }
        SpecTrace::from_counts(total.0, total.1, total.2, total.3, total.4, total.5, total.6)
    }
}

pub(crate) struct SpecOutcome {
    pub tokens: Vec<TokenId>,
    pub termination: TerminationReason,
    pub trace: SpecTrace,
}

pub(crate) fn speculate_internal(
    draft: &dyn Backend,
    target: &dyn Backend,
    prompt: &[TokenId],
    config: &SpecConfig,
    _cost: &CostModel,
) -> Result<SpecOutcome, SpeculativeError> {
    if prompt.is_empty() {
        return Err(SpeculativeError::EmptyPrompt);
    }
    if draft.vocab_size() != target.vocab_size() {
        return Err(SpeculativeError::VocabMismatch);
    }
    let tokenizer = ByteTokenizer::new();
    let mut tracker = StopTracker::new(&config.stop, &tokenizer);
    let mut context: Vec<TokenId> = prompt.to_vec();
    let mut emitted: Vec<TokenId> = Vec::new();
    let (mut drafted, mut accepted, mut corrections, mut bonus_tokens) = (0, 0, 0, 0);
    let (mut target_passes, mut draft_passes) = (0, 0);
    let mut finished: Option<TerminationReason> = None;

    while finished.is_none() {
        // Draft a block with the same stop semantics the target will
        // apply, so a perfect draft never over-drafts past a stop.
        let budget = config.stop.max_tokens_per_head - emitted.len();
        let block_cap = config.depth.min(budget);
        let mut draft_tracker = tracker.clone();
        let mut block = Vec::with_capacity(block_cap);
        let mut draft_context = context.clone();
        for _ in 0..block_cap {
            let token = draft.greedy_next(&draft_context);
            draft_context.push(token);
            block.push(token);
            if draft_tracker.observe(token).is_some() {
                break;
            }
        }
        drafted += block.len();
        draft_passes += block.len();

        // One batched verification pass scores the whole block.
        target_passes += 1;
        let mut fully_accepted = true;
        for &draft_token in &block {
            let target_token = target.greedy_next(&context);
            context.push(target_token);
            emitted.push(target_token);
            finished = tracker.observe(target_token);
            if target_token == draft_token {
                accepted += 1;
                if finished.is_some() {
                    fully_accepted = false;
                    break;
                }
            } else {
                corrections += 1;
                fully_accepted = false;
                break;
            }
        }
        if finished.is_none() && fully_accepted {
            let bonus = target.greedy_next(&context);
            context.push(bonus);
            emitted.push(bonus);
            bonus_tokens += 1;
            finished = tracker.observe(bonus);
        }
    }

    let trace = SpecTrace::from_counts(
        drafted,
        accepted,
        corrections,
        bonus_tokens,
        target_passes,
        draft_passes,
        emitted.len(),
    );
    Ok(SpecOutcome {
        tokens: emitted,
        termination: finished.unwrap_or(TerminationReason::MaxTokens),
        trace,
    })
}

/// Speculative single-stream generation. Output is token-identical to
/// target-only greedy decoding under the same stop rules.
pub fn speculate_generate(
    draft: &dyn Backend,
    target: &dyn Backend,
    prompt: &[TokenId],
    config: &SpecConfig,
    cost: &CostModel,
) -> Result<(Vec<TokenId>, SpecTrace), SpeculativeError> {
    let outcome = speculate_internal(draft, target, prompt, config, cost)?;
    Ok((outcome.tokens, outcome.trace))
}

/// Runs speculation independently per head over the shared prompt.
/// The streams equal what [`crate::scheduler::generate_parallel`] would
/// produce on the target backend alone.
pub fn speculate_parallel(
    draft: &dyn Backend,
    target: &dyn Backend,
    prompt: &[TokenId],
    tokenizer: &ByteTokenizer,
    heads: &[Head],
    config: &SpecConfig,
    cost: &CostModel,
) -> Result<(HeadStreamSet, Vec<(Head, SpecTrace)>), SpeculativeError> {
    if heads.is_empty() {
        return Err(SpeculativeError::EmptyPrompt);
    }
    let table = tokenizer.table();
    let mut streams = HeadStreamSet::default();
    let mut traces = Vec::with_capacity(heads.len());
    for &head in heads {
        let mut head_prompt = prompt.to_vec();
        head_prompt.push(table.id_of(head.open_token()));
        let outcome = speculate_internal(draft, target, &head_prompt, config, cost)?;
        streams.set(
            head,
            HeadStream {
                tokens: outcome.tokens,
                termination: outcome.termination,
            },
        );
        traces.push((head, outcome.trace));
    }
    Ok((streams, traces))
}
