//! Hashing tokenizer: whitespace split, NFC normalization, optional
//! lowercasing, then FNV-1a 64-bit hashing into a fixed bucket space.
//!
//! No vocabulary is learned or stored; any Unicode text in any language maps
//! deterministically into `[0, hash_buckets)`.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Tokenizer settings. Travels with model checkpoints so that query and
/// document ids stay consistent across processes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Bucket count for the hashing trick (the vocabulary size).
    pub hash_buckets: usize,
    /// Lowercase tokens before hashing.
    pub lowercase: bool,
    /// Maximum sequence length for queries.
    pub max_query_tokens: usize,
    /// Maximum sequence length for documents.
    pub max_doc_tokens: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            hash_buckets: 65_536,
            lowercase: true,
            max_query_tokens: 256,
            max_doc_tokens: 512,
        }
    }
}

impl TokenizerConfig {
    /// Panics if the configuration violates its invariants
    /// (`hash_buckets >= 2`, positive max lengths).
    pub fn validate(&self) {
        assert!(self.hash_buckets >= 2, "hash_buckets must be >= 2");
        assert!(self.max_query_tokens >= 1, "max_query_tokens must be >= 1");
        assert!(self.max_doc_tokens >= 1, "max_doc_tokens must be >= 1");
    }
}

/// FNV-1a 64-bit hash over a byte string.
fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Map text to a sequence of token ids in `[0, cfg.hash_buckets)`.
///
/// Tokens are whitespace-split, NFC-normalized, lowercased (when configured),
/// hashed with FNV-1a 64 and reduced modulo the bucket count. The sequence is
/// truncated to `max_query_tokens` or `max_doc_tokens` depending on
/// `is_query`. Empty or whitespace-only input yields an empty sequence; this
/// function never fails.
pub fn tokenize(text: &str, cfg: &TokenizerConfig, is_query: bool) -> Vec<usize> {
    let max_len = if is_query {
        cfg.max_query_tokens
    } else {
        cfg.max_doc_tokens
    };
    let normalized: String = text.nfc().collect();
    let mut ids = Vec::new();
    for token in normalized.split_whitespace() {
        if ids.len() == max_len {
            break;
        }
        let id = if cfg.lowercase {
            let lowered = token.to_lowercase();
            fnv1a_64(lowered.as_bytes())
        } else {
            fnv1a_64(token.as_bytes())
        };
        ids.push((id % cfg.hash_buckets as u64) as usize);
    }
    ids
}
