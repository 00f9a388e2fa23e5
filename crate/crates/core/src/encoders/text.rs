use super::{Modality, TokenSequence};
use crate::numerics::Matrix;
use crate::rng::{fnv1a, stream};
use std::collections::HashMap;

pub const PAD_TOKEN: &str = "<pad>";

/// Lowercased whitespace tokens with surrounding ASCII punctuation removed.
/// Tokens made only of punctuation are kept as-is.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            let lower = w.to_lowercase();
            let trimmed = lower.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() {
                lower
            } else {
                trimmed.to_string()
            }
        })
        .collect()
}

/// Weight of the word-specific component in a lexicon embedding.
const LEXICON_WORD_WEIGHT: f64 = 0.2;

/// Words that open a negated scope ("less rock", "drop the piano").
pub const NEGATION_CUES: [&str; 12] = [
    "less", "not", "no", "without", "drop", "lose", "too", "swap", "over", "than", "instead", "fewer",
];

/// Words that close a negated scope.
pub const AFFIRMATION_CUES: [&str; 8] = [",", "more", "for", "but", "give", "need", "maybe", "still"];

/// Frozen token table keyed by token string, with a light notion of
/// negation.
///
/// Words in the lexicon are tied to a latent factor: their embedding is a
/// frozen map of that factor plus a smaller word-specific vector, so words
/// naming the same factor land close together. Inside a negated scope the
/// factor part flips sign, the way a pretrained sentence encoder separates
/// "more rock" from "less rock". Every other word gets an independent
/// random vector.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    d_in: usize,
    seed: u64,
    max_tokens: usize,
    cls: Vec<f64>,
    lexicon: HashMap<String, Vec<f64>>,
}

impl TextEncoder {
    /// `max_tokens` counts the cls row.
    pub fn new(d_in: usize, max_tokens: usize, seed: u64) -> Self {
        let mut rng = stream(seed, "cls", Modality::Text.code() as u64);
        let cls = Matrix::randn(1, d_in, 1.0, &mut rng).into_vec();
        Self {
            d_in,
            seed,
            max_tokens: max_tokens.max(2),
            cls,
            lexicon: HashMap::new(),
        }
    }

    /// Ties each `(word, factor)` entry to row `factor` of a frozen
    /// `latent_dim × d_in` map. Factors outside `latent_dim` are ignored.
    pub fn with_lexicon<'a>(mut self, latent_dim: usize, entries: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut rng = stream(self.seed, "text-lexicon-map", 0);
        let map = Matrix::randn(latent_dim, self.d_in, 1.0, &mut rng);
        for (word, factor) in entries {
            if factor < latent_dim {
                self.lexicon.insert(word.to_lowercase(), map.row(factor).to_vec());
            }
        }
        self
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// Embedding of `token` outside any negated scope.
    pub fn embed_token(&self, token: &str) -> Vec<f64> {
        self.embed_in_scope(token, false)
    }

    pub fn embed_in_scope(&self, token: &str, negated: bool) -> Vec<f64> {
        let mut rng = stream(self.seed, "text-token", fnv1a(token.as_bytes()));
        let own = Matrix::randn(1, self.d_in, 1.0, &mut rng).into_vec();
        match self.lexicon.get(token) {
            Some(factor) => {
                let sign = if negated { -1.0 } else { 1.0 };
                factor
                    .iter()
                    .zip(&own)
                    .map(|(f, w)| sign * f + LEXICON_WORD_WEIGHT * w)
                    .collect()
            }
            None => own,
        }
    }

    /// `[cls; tokens…]`, truncated to `max_tokens` rows. An empty prompt
    /// becomes `[cls; <pad>]`. Returns the sequence and whether it was
    /// low-information (empty).
    pub fn encode(&self, text: &str) -> (TokenSequence, bool) {
        let mut toks = tokenize(text);
        let empty = toks.is_empty();
        if empty {
            toks.push(PAD_TOKEN.to_string());
        }
        toks.truncate(self.max_tokens - 1);
        let mut m = Matrix::zeros(toks.len() + 1, self.d_in);
        m.row_mut(0).copy_from_slice(&self.cls);
        let mut negated = false;
        for (i, t) in toks.iter().enumerate() {
            if NEGATION_CUES.contains(&t.as_str()) {
                negated = true;
            } else if AFFIRMATION_CUES.contains(&t.as_str()) {
                negated = false;
            }
            m.row_mut(i + 1).copy_from_slice(&self.embed_in_scope(t, negated));
        }
        (TokenSequence::new(Modality::Text, m), empty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_lowercases_and_strips() {
        assert_eq!(
            tokenize("Make it MORE upbeat, please!  -- ok"),
            vec!["make", "it", "more", "upbeat", "please", "--", "ok"]
        );
    }

    #[test]
    fn same_token_same_embedding() {
        let enc = TextEncoder::new(8, 24, 3);
        let (a, _) = enc.encode("Rock rock");
        assert_eq!(a.tokens.row(1), a.tokens.row(2));
        assert_eq!(a.tokens.rows(), 3);
    }

    #[test]
    fn empty_prompt_is_padded_and_flagged() {
        let enc = TextEncoder::new(8, 24, 3);
        let (s, empty) = enc.encode("   ");
        assert!(empty);
        assert_eq!(s.tokens.rows(), 2);
        assert_eq!(s.tokens.row(1), enc.embed_token(PAD_TOKEN).as_slice());
    }

    #[test]
    fn lexicon_words_share_their_factor() {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let cos = |a: &[f64], b: &[f64]| dot(a, b) / (dot(a, a) * dot(b, b)).sqrt();
        let enc = TextEncoder::new(64, 24, 3).with_lexicon(4, [("Rock", 1), ("drums", 1), ("jazz", 2), ("x", 9)]);
        let rock = enc.embed_token("rock");
        assert!(cos(&rock, &enc.embed_token("drums")) > 0.6);
        assert!(cos(&rock, &enc.embed_token("jazz")).abs() < 0.4);
        assert_eq!(enc.embed_token("x"), TextEncoder::new(64, 24, 3).embed_token("x"));
        assert_eq!(
            enc.embed_token("hello"),
            TextEncoder::new(64, 24, 3).embed_token("hello")
        );
    }

    #[test]
    fn negation_flips_the_factor_part() {
        let enc = TextEncoder::new(16, 24, 3).with_lexicon(4, [("rock", 1)]);
        let (s, _) = enc.encode("more rock , less rock and rock , rock");
        let plus = enc.embed_in_scope("rock", false);
        let minus = enc.embed_in_scope("rock", true);
        assert_eq!(s.tokens.row(2), plus.as_slice());
        assert_eq!(s.tokens.row(5), minus.as_slice());
        assert_eq!(s.tokens.row(7), minus.as_slice());
        assert_eq!(s.tokens.row(9), plus.as_slice());
        let own = TextEncoder::new(16, 24, 3).embed_token("rock");
        for ((p, m), o) in plus.iter().zip(&minus).zip(&own) {
            assert!((p + m - 2.0 * LEXICON_WORD_WEIGHT * o).abs() < 1e-12);
        }
    }

    #[test]
    fn truncates_to_limit() {
        let enc = TextEncoder::new(4, 5, 3);
        let (s, _) = enc.encode("a b c d e f g h");
        assert_eq!(s.tokens.rows(), 5);
    }
}
