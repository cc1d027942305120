//! Special-token vocabulary and the byte-level reference tokenizer.
//!
//! Seventeen reserved tokens are appended to a base vocabulary in a fixed
//! group order: content open/close, function open/close, six open/close
//! argument pairs, and the null placeholder. Every other module works on
//! the concrete token IDs this module hands out.

use serde::{Deserialize, Serialize};

/// Token identifier within the extended vocabulary.
pub type TokenId = u32;

/// Number of reserved special tokens appended to the base vocabulary.
pub const SPECIAL_TOKEN_COUNT: u32 = 17;

/// Number of positional argument heads.
pub const MAX_ARG_HEADS: u8 = 6;

/// One of the 17 reserved structural tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpecialToken {
    ContentOpen,
    ContentClose,
    FunctionOpen,
    FunctionClose,
    /// `<argK>` for K in 1..=6.
    ArgOpen(u8),
    /// `</argK>` for K in 1..=6.
    ArgClose(u8),
    /// `<|null|>` placeholder marking an unused argument slot.
    Null,
}

impl SpecialToken {
    /// All 17 kinds in vocabulary order: content pair, function pair,
    /// the six argument open/close pairs, then the null placeholder.
    pub fn all() -> [SpecialToken; SPECIAL_TOKEN_COUNT as usize] {
        [
            SpecialToken::ContentOpen,
            SpecialToken::ContentClose,
            SpecialToken::FunctionOpen,
            SpecialToken::FunctionClose,
            SpecialToken::ArgOpen(1),
            SpecialToken::ArgClose(1),
            SpecialToken::ArgOpen(2),
            SpecialToken::ArgClose(2),
            SpecialToken::ArgOpen(3),
            SpecialToken::ArgClose(3),
            SpecialToken::ArgOpen(4),
            SpecialToken::ArgClose(4),
            SpecialToken::ArgOpen(5),
            SpecialToken::ArgClose(5),
            SpecialToken::ArgOpen(6),
            SpecialToken::ArgClose(6),
            SpecialToken::Null,
        ]
    }

    /// Offset of this kind inside the 17-token block.
    pub fn offset(self) -> u32 {
        match self {
            SpecialToken::ContentOpen => 0,
            SpecialToken::ContentClose => 1,
            SpecialToken::FunctionOpen => 2,
            SpecialToken::FunctionClose => 3,
            SpecialToken::ArgOpen(k) => {
                debug_assert!((1..=MAX_ARG_HEADS).contains(&k));
                4 + 2 * (u32::from(k) - 1)
            }
            SpecialToken::ArgClose(k) => {
                debug_assert!((1..=MAX_ARG_HEADS).contains(&k));
                5 + 2 * (u32::from(k) - 1)
            }
            SpecialToken::Null => 16,
        }
    }

    /// Canonical surface string, e.g. `<arg1>` or `<|null|>`.
    pub fn surface(self) -> &'static str {
        match self {
            SpecialToken::ContentOpen => "<content>",
            SpecialToken::ContentClose => "</content>",
            SpecialToken::FunctionOpen => "<function>",
            SpecialToken::FunctionClose => "</function>",
            SpecialToken::ArgOpen(1) => "<arg1>",
            SpecialToken::ArgOpen(2) => "<arg2>",
            SpecialToken::ArgOpen(3) => "<arg3>",
            SpecialToken::ArgOpen(4) => "<arg4>",
            SpecialToken::ArgOpen(5) => "<arg5>",
            SpecialToken::ArgOpen(6) => "<arg6>",
            SpecialToken::ArgClose(1) => "</arg1>",
            SpecialToken::ArgClose(2) => "</arg2>",
            SpecialToken::ArgClose(3) => "</arg3>",
            SpecialToken::ArgClose(4) => "</arg4>",
            SpecialToken::ArgClose(5) => "</arg5>",
            SpecialToken::ArgClose(6) => "</arg6>",
            SpecialToken::Null => "<|null|>",
            SpecialToken::ArgOpen(k) | SpecialToken::ArgClose(k) => {
                panic!("argument head index {k} out of range 1..=6")
            }
        }
    }

    /// True for close tags (`</content>`, `</function>`, `</argK>`).
    pub fn is_close_tag(self) -> bool {
        matches!(
            self,
            SpecialToken::ContentClose | SpecialToken::FunctionClose | SpecialToken::ArgClose(_)
        )
    }
}

/// Classification of a token ID against a [`TokenTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    /// A token from the base vocabulary (or anything outside the special range).
    Ordinary,
    /// One of the 17 reserved tokens.
    Special(SpecialToken),
}

/// Placement of the 17 special tokens above a base vocabulary.
///
/// IDs are `base_vocab_size ..= base_vocab_size + 16` in the order of
/// [`SpecialToken::all`]. The end-of-sequence marker sits one past the
/// special block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTable {
    base_vocab_size: u32,
}

/// Builds the token table for a given base vocabulary size.
pub fn build_token_table(base_vocab_size: u32) -> TokenTable {
    assert!(base_vocab_size >= 1, "base vocabulary must be nonempty");
    TokenTable { base_vocab_size }
}

impl TokenTable {
    pub fn base_vocab_size(&self) -> u32 {
        self.base_vocab_size
    }

    /// Token ID assigned to a special kind.
    pub fn id_of(&self, kind: SpecialToken) -> TokenId {
        self.base_vocab_size + kind.offset()
    }

    /// Canonical surface string of a special kind.
    pub fn text_of(&self, kind: SpecialToken) -> &'static str {
        kind.surface()
    }

    /// Inverse of [`TokenTable::id_of`] on the special range; `Ordinary` elsewhere.
    pub fn classify(&self, token_id: TokenId) -> TokenClass {
        if token_id < self.base_vocab_size
            || token_id >= self.base_vocab_size + SPECIAL_TOKEN_COUNT
        {
            return TokenClass::Ordinary;
        }
        let offset = token_id - self.base_vocab_size;
        TokenClass::Special(SpecialToken::all()[offset as usize])
    }

    /// Distinguished end-of-sequence marker, one past the special block.
    pub fn eos_id(&self) -> TokenId {
        self.base_vocab_size + SPECIAL_TOKEN_COUNT
    }

    /// Full vocabulary size: base tokens, specials, and the EOS marker.
    pub fn vocab_size(&self) -> u32 {
        self.base_vocab_size + SPECIAL_TOKEN_COUNT + 1
    }
}

/// Classifies a token ID against a table. Free-function form of
/// [`TokenTable::classify`].
pub fn classify_token(table: &TokenTable, token_id: TokenId) -> TokenClass {
    table.classify(token_id)
}

/// Byte-level reference tokenizer over a 256-entry base vocabulary.
///
/// Ordinary text encodes to its byte values; special surface strings
/// encode to their single reserved ID via greedy longest match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByteTokenizer {
    table: TokenTable,
}

impl Default for ByteTokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl ByteTokenizer {
    pub fn new() -> Self {
        ByteTokenizer {
            table: build_token_table(256),
        }
    }

    pub fn table(&self) -> &TokenTable {
        &self.table
    }

    /// Encodes text to token IDs. Special surface strings become their
    /// reserved ID (longest match wins); everything else is raw bytes.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut out = Vec::with_capacity(bytes.len());
        let mut pos = 0;
        while pos < bytes.len() {
            // Specials all start with '<'; skip the scan otherwise.
            let special = if bytes[pos] == b'<' {
                SpecialToken::all()
                    .into_iter()
                    .filter(|kind| bytes[pos..].starts_with(kind.surface().as_bytes()))
                    .max_by_key(|kind| kind.surface().len())
            } else {
                None
            };
            match special {
                Some(kind) => {
                    out.push(self.table.id_of(kind));
                    pos += kind.surface().len();
                }
                None => {
                    out.push(TokenId::from(bytes[pos]));
                    pos += 1;
                }
            }
        }
        out
    }

    /// Decodes token IDs back to text. Bytes map to themselves, specials
    /// to their surface strings; the EOS marker and out-of-range IDs
    /// contribute nothing.
    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        let mut bytes = Vec::with_capacity(tokens.len());
        for &token in tokens {
            if token < 256 {
                bytes.push(token as u8);
            } else if let TokenClass::Special(kind) = self.table.classify(token) {
                bytes.extend_from_slice(kind.surface().as_bytes());
            }
        }
        String::from_utf8(bytes)
            .unwrap_or_else(|err| String::from_utf8_lossy(err.as_bytes()).into_owned())
    }
}

/// Free-function form of [`ByteTokenizer::tokenize`].
pub fn tokenize(tokenizer: &ByteTokenizer, text: &str) -> Vec<TokenId> {
    tokenizer.tokenize(text)
}

/// Free-function form of [`ByteTokenizer::detokenize`].
pub fn detokenize(tokenizer: &ByteTokenizer, tokens: &[TokenId]) -> String {
    tokenizer.detokenize(tokens)
}

/// One of the up-to-eight parallel decoding streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    Content,
    Function,
    /// Positional argument head, 1..=6.
    Arg(u8),
}

/// Total number of heads (content + function + six argument heads).
pub const HEAD_COUNT: usize = 8;

impl Head {
    /// All eight heads in stream order.
    pub fn all() -> [Head; HEAD_COUNT] {
        [
            Head::Content,
            Head::Function,
            Head::Arg(1),
            Head::Arg(2),
            Head::Arg(3),
            Head::Arg(4),
            Head::Arg(5),
            Head::Arg(6),
        ]
    }

    /// Default head set for function calling: function plus the six
    /// argument heads (content head excluded).
    pub fn function_call_heads() -> [Head; 7] {
        [
            Head::Function,
            Head::Arg(1),
            Head::Arg(2),
            Head::Arg(3),
            Head::Arg(4),
            Head::Arg(5),
            Head::Arg(6),
        ]
    }

    /// Dense index into per-head arrays.
    pub fn index(self) -> usize {
        match self {
            Head::Content => 0,
            Head::Function => 1,
            Head::Arg(k) => {
                debug_assert!((1..=MAX_ARG_HEADS).contains(&k));
                1 + k as usize
            }
        }
    }

    /// The special token that selects this head's output mode.
    pub fn open_token(self) -> SpecialToken {
        match self {
            Head::Content => SpecialToken::ContentOpen,
            Head::Function => SpecialToken::FunctionOpen,
            Head::Arg(k) => SpecialToken::ArgOpen(k),
        }
    }

    /// The close tag that terminates this head's stream.
    pub fn close_token(self) -> SpecialToken {
        match self {
            Head::Content => SpecialToken::ContentClose,
            Head::Function => SpecialToken::FunctionClose,
            Head::Arg(k) => SpecialToken::ArgClose(k),
        }
    }

    /// Parses the lowercase head name used in configs ("content",
    /// "function", "arg1".."arg6").
    pub fn parse(name: &str) -> Option<Head> {
        match name {
            "content" => Some(Head::Content),
            "function" => Some(Head::Function),
            _ => {
                let k = name.strip_prefix("arg")?.parse::<u8>().ok()?;
                (1..=MAX_ARG_HEADS).contains(&k).then_some(Head::Arg(k))
            }
        }
    }

    pub fn name(self) -> String {
        match self {
            Head::Content => "content".to_string(),
            Head::Function => "function".to_string(),
            Head::Arg(k) => format!("arg{k}"),
        }
    }
}
