//! Whitespace tokenizer with a character fallback, fitted on the corpus.
//!
//! Frequent words become single tokens. Any other word is spelled out as
//! `##c` character tokens, so two spellings that differ by one edit still
//! share most of their pieces. A block of learnable prompt tokens `[P0]..`
//! is reserved after the base vocabulary.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Token emitted between the units of a text sequence.
pub const UNIT_SEPARATOR: &str = ",";
const CHAR_PREFIX: &str = "##";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    n_prompts: usize,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    tokens: Vec<String>,
    n_prompts: usize,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Tokenizer::from_tokens(r.tokens, r.n_prompts)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr {
            tokens: t.tokens,
            n_prompts: t.n_prompts,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TokenizerBuilder {
    min_count: usize,
    max_words: usize,
    n_prompts: usize,
    forced: Vec<String>,
}

impl Default for TokenizerBuilder {
    fn default() -> Self {
        Self {
            min_count: 2,
            max_words: 30_000,
            n_prompts: 8,
            forced: [
                UNIT_SEPARATOR,
                "Yes",
                "No",
                "?",
                ".",
                "I",
                "know",
                "think",
                "that",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl TokenizerBuilder {
    pub fn min_count(mut self, n: usize) -> Self {
        self.min_count = n.max(1);
        self
    }

    pub fn max_words(mut self, n: usize) -> Self {
        self.max_words = n;
        self
    }

    pub fn prompts(mut self, n: usize) -> Self {
        self.n_prompts = n;
        self
    }

    /// Words that always get their own token (label words, template text).
    pub fn force<S: Into<String>>(mut self, words: impl IntoIterator<Item = S>) -> Self {
        self.forced.extend(words.into_iter().map(Into::into));
        self
    }

    /// Builds the vocabulary from whitespace-separated words of `texts`.
    pub fn fit<'a>(self, texts: impl IntoIterator<Item = &'a str>) -> Tokenizer {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut chars = BTreeSet::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
                chars.extend(w.chars());
            }
        }

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut taken: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for w in &self.forced {
            if taken.insert(w.clone()) {
                tokens.push(w.clone());
            }
            chars.extend(w.chars());
        }

        let mut frequent: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= self.min_count)
            .collect();
        frequent.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (w, _) in frequent.into_iter().take(self.max_words) {
            if taken.insert(w.to_string()) {
                tokens.push(w.to_string());
            }
        }
        for c in chars {
            let t = format!("{CHAR_PREFIX}{c}");
            if taken.insert(t.clone()) {
                tokens.push(t);
            }
        }
        for i in 0..self.n_prompts {
            tokens.push(format!("[P{i}]"));
        }
        Tokenizer::from_tokens(tokens, self.n_prompts)
    }
}

impl Tokenizer {
    pub fn builder() -> TokenizerBuilder {
        TokenizerBuilder::default()
    }

    fn from_tokens(tokens: Vec<String>, n_prompts: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            n_prompts,
        }
    }

    /// Total vocabulary size including the prompt block.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn prompt_id(&self, i: usize) -> Option<u32> {
        (i < self.n_prompts).then(|| (self.tokens.len() - self.n_prompts + i) as u32)
    }

    /// Id of a whole-word token, if the word has one.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(id) = self.id(word) {
            out.push(id);
            return;
        }
        let mut buf = String::with_capacity(CHAR_PREFIX.len() + 4);
        for c in word.chars() {
            buf.clear();
            buf.push_str(CHAR_PREFIX);
            buf.push(c);
            out.push(self.id(&buf).unwrap_or(UNK));
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in text.split_whitespace() {
            self.tokenize_word(w, &mut out);
        }
        out
    }

    /// Tokens of `units` joined by [`UNIT_SEPARATOR`], optionally followed by
    /// `[SEP]`. Also returns how many leading tokens belong to `units[0]`.
    pub fn encode_units(&self, units: &[String], terminated: bool) -> (Vec<u32>, usize) {
        let comma = self.id(UNIT_SEPARATOR).unwrap_or(UNK);
        let mut out = Vec::new();
        let mut head_len = 0;
        for (i, u) in units.iter().enumerate() {
            if i > 0 {
                out.push(comma);
            }
            for w in u.split_whitespace() {
                self.tokenize_word(w, &mut out);
            }
            if i == 0 {
                head_len = out.len();
            }
        }
        if terminated {
            out.push(SEP);
        }
        (out, head_len)
    }

    /// Short content hash of the vocabulary, recorded in checkpoints.
    pub fn vocab_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.update(self.n_prompts.to_le_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fitted() -> Tokenizer {
        Tokenizer::builder().fit(["rolling stones rolling", "stones 1962", "zeta"])
    }

    #[test]
    fn specials_have_fixed_ids() {
        let t = fitted();
        assert_eq!(t.id("[CLS]"), Some(CLS));
        assert_eq!(t.id("[SEP]"), Some(SEP));
        assert_eq!(t.id("[MASK]"), Some(MASK));
        assert!(t.id("Yes").is_some() && t.id("No").is_some());
    }

    #[test]
    fn rare_words_fall_back_to_characters() {
        let t = fitted();
        assert_eq!(t.tokenize("rolling").len(), 1);
        assert_eq!(t.tokenize("zeta").len(), 4);
        assert_eq!(t.tokenize("zeta"), t.tokenize("z e t a"));
        // never-seen character
        assert_eq!(t.tokenize("Q"), vec![UNK]);
    }

    #[test]
    fn prompts_sit_after_base_vocab() {
        let t = fitted();
        let first = t.prompt_id(0).unwrap();
        assert_eq!(t.token(first), Some("[P0]"));
        assert_eq!(t.prompt_id(7).unwrap() as usize, t.vocab_size() - 1);
        assert_eq!(t.prompt_id(8), None);
    }

    #[test]
    fn units_are_comma_separated() {
        let t = fitted();
        let units = vec!["rolling stones".to_string(), "1962".to_string()];
        let (toks, head) = t.encode_units(&units, true);
        assert_eq!(head, 2);
        assert_eq!(toks.len(), 2 + 1 + 4 + 1);
        assert_eq!(*toks.last().unwrap(), SEP);
    }

    #[test]
    fn serde_round_trip_keeps_hash() {
        let t = fitted();
        let json = serde_json::to_string(&t).unwrap();
        let back: Tokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(back.vocab_hash(), t.vocab_hash());
        assert_eq!(back.tokenize("rolling zeta"), t.tokenize("rolling zeta"));
    }
}
