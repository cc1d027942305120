//! Deterministic toy language-model backends with prefill/fork/step
//! semantics and a roofline cost model.
//!
//! A [`Session`] tracks a token prefix whose attention state is
//! conceptually cached: forking a session extends the prefix by one
//! token without re-charging prefill. Decode steps advance a whole
//! batch of sessions in lockstep and cost `max(t_mem, B * t_compute)`
//! simulated time, the simplest model that is flat while memory-bound
//! and linear once compute-bound.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{ByteTokenizer, TokenId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("prompt must be nonempty")]
    EmptyPrompt,
    #[error("n-gram order must be at least 1")]
    BadOrder,
    #[error("smoothing constant must be positive")]
    BadAlpha,
    #[error("corpus must be nonempty")]
    EmptyCorpus,
    #[error("duplicate script key (prefix length {prefix_len}, head {head:?})")]
    DuplicateScriptKey { prefix_len: usize, head: Option<TokenId> },
    #[error("session does not belong to this backend")]
    ForeignSession,
    #[error("draft and target backends use different vocabularies")]
    VocabMismatch,
}

/// Simulated-time constants of the roofline decode model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Prefill cost per prompt token (contributes T_p).
    pub t_prefill_per_token: f64,
    /// Memory-bound floor of one decode step.
    pub t_mem: f64,
    /// Compute cost per sequence per decode step.
    pub t_compute_per_seq: f64,
    /// Multiplier on parallel-run decode time (sequential runs ignore it).
    #[serde(default = "default_parallel_overhead")]
    pub parallel_overhead: f64,
}

fn default_parallel_overhead() -> f64 {
    1.0
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            t_prefill_per_token: 0.1,
            t_mem: 1.0,
            t_compute_per_seq: 0.05,
            parallel_overhead: 1.0,
        }
    }
}

impl CostModel {
    /// Cost of one batched decode step at batch size `batch`.
    pub fn step_time(&self, batch: usize) -> f64 {
        self.t_mem.max(batch as f64 * self.t_compute_per_seq)
    }

    /// Largest batch size still on the memory-bound plateau.
    pub fn knee(&self) -> f64 {
        self.t_mem / self.t_compute_per_seq
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.t_prefill_per_token <= 0.0 || self.t_mem <= 0.0 || self.t_compute_per_seq <= 0.0 {
            return Err("cost model constants must be positive".into());
        }
        if self.parallel_overhead < 1.0 {
            return Err("parallel_overhead must be at least 1.0".into());
        }
        Ok(())
    }
}

/// A greedy next-token predictor over the extended vocabulary.
///
/// Backends are pure functions of their construction inputs and the
/// given prefix, so they are freely shareable across threads.
pub trait Backend: Send + Sync {
    /// Identity used to reject sessions created by other backends.
    fn instance_id(&self) -> u64;
    fn vocab_size(&self) -> u32;
    fn eos_id(&self) -> TokenId;
    /// Greedy continuation (argmax, ties to the lowest token ID).
    fn greedy_next(&self, context: &[TokenId]) -> TokenId;
}

static NEXT_BACKEND_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_backend_id() -> u64 {
    NEXT_BACKEND_ID.fetch_add(1, Ordering::Relaxed)
}

/// A token prefix with cached attention state.
///
/// `shared_len` marks how many leading tokens are charged to a prefill
/// (or to the parent session after a fork); only tokens past that point
/// count as this session's own cache footprint.
#[derive(Debug, Clone)]
pub struct Session {
    backend_id: u64,
    tokens: Vec<TokenId>,
    shared_len: usize,
}

impl Session {
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens cached by this session beyond the shared prefix.
    pub fn own_cached_tokens(&self) -> usize {
        self.tokens.len() - self.shared_len
    }

    fn push(&mut self, token: TokenId) {
        self.tokens.push(token);
    }
}

/// Processes a prompt once, returning the session and its prefill time
/// `T_p = len * t_prefill_per_token`.
pub fn prefill(
    backend: &dyn Backend,
    tokens: &[TokenId],
    cost: &CostModel,
) -> Result<(Session, f64), BackendError> {
    if tokens.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    let session = Session {
        backend_id: backend.instance_id(),
        tokens: tokens.to_vec(),
        shared_len: tokens.len(),
    };
    Ok((session, tokens.len() as f64 * cost.t_prefill_per_token))
}

/// Extends a session's prefix by one token without re-charging prefill.
/// The parent is untouched; the new session shares the parent's cached
/// prefix and owns only the appended token.
pub fn fork(session: &Session, token: TokenId) -> Session {
    let mut child = Session {
        backend_id: session.backend_id,
        tokens: session.tokens.clone(),
        shared_len: session.tokens.len(),
    };
    child.push(token);
    child
}

/// Total cached tokens across a prefill and its forks: the shared prefix
/// counted once plus each session's own tokens.
pub fn cache_footprint(shared_prefix_len: usize, sessions: &[Session]) -> usize {
    shared_prefix_len + sessions.iter().map(Session::own_cached_tokens).sum::<usize>()
}

/// Result of one lockstep decode step over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Greedy token appended to each session, in batch order.
    pub next_tokens: Vec<TokenId>,
    /// Simulated cost of the batched step.
    pub step_cost: f64,
}

/// Advances every session in the batch by one greedy token.
pub fn decode_step(
    backend: &dyn Backend,
    sessions: &mut [&mut Session],
    cost: &CostModel,
) -> Result<StepOutput, BackendError> {
    if sessions.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    if sessions.iter().any(|s| s.backend_id != backend.instance_id()) {
        return Err(BackendError::ForeignSession);
    }
    let mut next_tokens = Vec::with_capacity(sessions.len());
    for session in sessions.iter_mut() {
        let token = backend.greedy_next(session.tokens());
        session.push(token);
        next_tokens.push(token);
    }
    Ok(StepOutput {
        step_cost: cost.step_time(next_tokens.len()),
        next_tokens,
    })
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Add-alpha smoothed n-gram model over the full extended vocabulary.
#[derive(Debug)]
pub struct NGramBackend {
    id: u64,
    order: usize,
    alpha: f64,
    seed: u64,
    corpus_fingerprint: u64,
    vocab_size: u32,
    eos_id: TokenId,
    /// context (order-1 tokens) -> (total count, per-token counts)
    counts: HashMap<Vec<TokenId>, (u64, HashMap<TokenId, u64>)>,
}

/// Builds an n-gram backend from a byte corpus. The corpus is tokenized
/// with the byte-level reference tokenizer, so special markers embedded
/// in it become single tokens.
pub fn build_ngram_backend(
    corpus: &str,
    order: usize,
    alpha: f64,
    seed: u64,
) -> Result<NGramBackend, BackendError> {
    if order < 1 {
        return Err(BackendError::BadOrder);
    }
    if alpha <= 0.0 {
        return Err(BackendError::BadAlpha);
    }
    if corpus.is_empty() {
        return Err(BackendError::EmptyCorpus);
    }
    let tokenizer = ByteTokenizer::new();
    let table = *tokenizer.table();
    let tokens = tokenizer.tokenize(corpus);
    let mut counts: HashMap<Vec<TokenId>, (u64, HashMap<TokenId, u64>)> = HashMap::new();
    let ctx_len = order - 1;
    for i in ctx_len..tokens.len() {
        let ctx = tokens[i - ctx_len..i].to_vec();
        let entry = counts.entry(ctx).or_default();
        entry.0 += 1;
        *entry.1.entry(tokens[i]).or_default() += 1;
    }
    Ok(NGramBackend {
        id: fresh_backend_id(),
        order,
        alpha,
        seed,
        corpus_fingerprint: fnv1a(corpus.as_bytes()),
        vocab_size: table.vocab_size(),
        eos_id: table.eos_id(),
        counts,
    })
}

impl NGramBackend {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn corpus_fingerprint(&self) -> u64 {
        self.corpus_fingerprint
    }

    fn context_of<'a>(&self, prefix: &'a [TokenId]) -> &'a [TokenId] {
        let ctx_len = self.order - 1;
        if prefix.len() >= ctx_len {
            &prefix[prefix.len() - ctx_len..]
        } else {
            prefix
        }
    }

    /// Smoothed next-token distribution; sums to 1 over the vocabulary.
    pub fn next_distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let vocab = self.vocab_size as usize;
        let mut probs = vec![0.0; vocab];
        let ctx = self.context_of(prefix);
        let (total, ctx_counts) = match self.counts.get(ctx) {
            Some((total, counts)) => (*total, Some(counts)),
            None => (0, None),
        };
        let denom = total as f64 + self.alpha * vocab as f64;
        for (token, p) in probs.iter_mut().enumerate() {
            let count = ctx_counts
                .and_then(|c| c.get(&(token as TokenId)))
                .copied()
                .unwrap_or(0);
            *p = (count as f64 + self.alpha) / denom;
        }
        probs
    }
}

impl Backend for NGramBackend {
    fn instance_id(&self) -> u64 {
        self.id
    }

    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    fn greedy_next(&self, context: &[TokenId]) -> TokenId {
        // Smoothing is monotone, so argmax over raw counts suffices;
        // an unseen context degenerates to the lowest token ID.
        let ctx = self.context_of(context);
        match self.counts.get(ctx) {
            Some((_, counts)) => {
                let mut best: Option<(TokenId, u64)> = None;
                for (&token, &count) in counts {
                    best = match best {
                        Some((bt, bc)) if count > bc || (count == bc && token < bt) => {
                            Some((token, count))
                        }
                        None => Some((token, count)),
                        keep => keep,
                    };
                }
                best.map(|(t, _)| t).unwrap_or(0)
            }
            None => 0,
        }
    }
}

/// One replay rule: after `prefix` (plus `head` when set), emit `target`
/// token by token, then end-of-sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub prefix: Vec<TokenId>,
    pub head: Option<TokenId>,
    pub target: Vec<TokenId>,
}

impl ScriptEntry {
    fn key(&self) -> Vec<TokenId> {
        let mut key = self.prefix.clone();
        key.extend(self.head);
        key
    }
}

/// Deterministic replay backend keyed on exact prefixes. Used as the
/// oracle that makes scheduler and harness outputs exactly predictable.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: u64,
    vocab_size: u32,
    eos_id: TokenId,
    /// key length -> key -> target, longest key wins at lookup.
    by_len: HashMap<usize, HashMap<Vec<TokenId>, Vec<TokenId>>>,
    key_lens: Vec<usize>,
}

/// Builds a replay backend; keys (prefix, head) must be unique.
pub fn build_scripted_backend(script: Vec<ScriptEntry>) -> Result<ScriptedBackend, BackendError> {
    let table = *ByteTokenizer::new().table();
    let mut by_len: HashMap<usize, HashMap<Vec<TokenId>, Vec<TokenId>>> = HashMap::new();
    for entry in script {
        let key = entry.key();
        let slot = by_len.entry(key.len()).or_default();
        if slot.contains_key(&key) {
            return Err(BackendError::DuplicateScriptKey {
                prefix_len: entry.prefix.len(),
                head: entry.head,
            });
        }
        slot.insert(key, entry.target);
    }
    let mut key_lens: Vec<usize> = by_len.keys().copied().collect();
    key_lens.sort_unstable_by(|a, b| b.cmp(a));
    Ok(ScriptedBackend {
        id: fresh_backend_id(),
        vocab_size: table.vocab_size(),
        eos_id: table.eos_id(),
        by_len,
        key_lens,
    })
}

impl Backend for ScriptedBackend {
    fn instance_id(&self) -> u64 {
        self.id
    }

    fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    fn greedy_next(&self, context: &[TokenId]) -> TokenId {
        for &key_len in &self.key_lens {
            if key_len > context.len() {
                continue;
            }
            let Some(target) = self.by_len[&key_len].get(&context[..key_len]) else {
                continue;
            };
            let emitted = &context[key_len..];
            if emitted.len() <= target.len() && target.starts_with(emitted) {
                return target.get(emitted.len()).copied().unwrap_or(self.eos_id);
            }
        }
        self.eos_id
    }
}
