//! The shared tokenizer.
//!
//! One rule is used everywhere a "word" is needed (chunk windows, ROUGE-1
//! overlap, hash embeddings): lowercase, and split on every maximal run of
//! non-alphanumeric characters.

use alloc::string::String;
use alloc::vec::Vec;

/// Lowercased alphanumeric tokens of `text`, in order. Never yields an empty token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            // Some lowercase mappings expand into combining marks; keep only
            // the alphanumeric part so re-tokenizing the output is a no-op.
            current.extend(ch.to_lowercase().filter(|c| c.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
