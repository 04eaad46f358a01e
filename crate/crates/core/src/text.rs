//! Word tokenization and rule-based lemmatization.
//!
//! Tokens are lowercased. Runs of alphanumerics form words; `.` and `,`
//! between digits and `'` / `-` between alphanumerics stay inside a word.
//! Any other non-space character is a token on its own.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub lemmas: Vec<String>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn joins_word(prev: char, c: char, next: Option<char>) -> bool {
    let Some(next) = next else { return false };
    match c {
        '.' | ',' => prev.is_ascii_digit() && next.is_ascii_digit(),
        '\'' | '-' => prev.is_alphanumeric() && next.is_alphanumeric(),
        _ => false,
    }
}

/// Splits text into lowercase word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() && joins_word(chars[i - 1], c, chars.get(i + 1).copied()) {
            cur.push(c);
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !c.is_whitespace() {
                out.push(c.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Removes one letter of a trailing doubled consonant ("stopp" -> "stop"),
/// leaving ll/ss/zz alone.
fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    if b.len() >= 2 {
        let (x, y) = (b[b.len() - 2], b[b.len() - 1]);
        if x == y && x.is_ascii_alphabetic() && !is_vowel(x) && !matches!(x, b'l' | b's' | b'z') {
            return stem[..stem.len() - 1].to_string();
        }
    }
    stem.to_string()
}

/// Suffix-stripping lemmatizer for lowercase word tokens.
///
/// Rules, first match wins:
/// - `ies` -> `y` (length ≥ 5)
/// - `ing` / `ed` dropped when at least three letters remain, then a doubled
///   final consonant is reduced
/// - `es` dropped after `s`, `x`, `z`, `ch`, `sh` (length ≥ 4)
/// - `s` dropped (length ≥ 4, not after `s`, `u`, `i`)
pub fn lemmatize(token: &str) -> String {
    if !token.bytes().all(|b| b.is_ascii_lowercase()) {
        return token.to_string();
    }
    let n = token.len();
    if n >= 5 && token.ends_with("ies") {
        return format!("{}y", &token[..n - 3]);
    }
    for suffix in ["ing", "ed"] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.len() >= 3 && stem.bytes().any(is_vowel) {
                return undouble(stem);
            }
        }
    }
    if n >= 4 && token.ends_with("es") {
        let stem = &token[..n - 2];
        if stem.ends_with(['s', 'x', 'z']) || stem.ends_with("ch") || stem.ends_with("sh") {
            return stem.to_string();
        }
    }
    if n >= 4 && token.ends_with('s') && !token[..n - 1].ends_with(['s', 'u', 'i']) {
        return token[..n - 1].to_string();
    }
    token.to_string()
}

pub fn tokenize_lemmatize(text: &str) -> TokenizedText {
    let tokens = tokenize(text);
    let lemmas = tokens.iter().map(|t| lemmatize(t)).collect();
    TokenizedText { tokens, lemmas }
}

/// Lemma string of a whole header or cell, tokens joined by single spaces.
pub fn lemma_key(text: &str) -> String {
    tokenize_lemmatize(text).lemmas.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim_tokens_and_lemmas() {
        let t = tokenize_lemmatize("Thane Baker was ranked");
        assert_eq!(t.tokens, ["thane", "baker", "was", "ranked"]);
        assert_eq!(t.lemmas[3], "rank");
        assert_eq!(t.lemmas[2], "was");
    }

    #[test]
    fn empty_and_fixpoint() {
        assert_eq!(tokenize_lemmatize(""), TokenizedText::default());
        let t = tokenize_lemmatize("athlete");
        assert_eq!(t.tokens, ["athlete"]);
        assert_eq!(t.lemmas, ["athlete"]);
    }

    #[test]
    fn punctuation_and_numbers() {
        assert_eq!(
            tokenize("Both Thane Baker and Nate Cartmell were ranked last."),
            ["both", "thane", "baker", "and", "nate", "cartmell", "were", "ranked", "last", "."]
        );
        assert_eq!(tokenize("a 1,234.5 (o'brien) 17-year"), ["a", "1,234.5", "(", "o'brien", ")", "17-year"]);
        assert_eq!(tokenize("x ; y"), ["x", ";", "y"]);
    }

    #[test]
    fn suffix_rules() {
        for (word, lemma) in [
            ("countries", "country"),
            ("ranks", "rank"),
            ("athletes", "athlete"),
            ("matches", "match"),
            ("boxes", "box"),
            ("ranking", "rank"),
            ("running", "run"),
            ("stopped", "stop"),
            ("falling", "fall"),
            ("this", "this"),
            ("class", "class"),
            ("bus", "bus"),
            ("is", "is"),
            ("red", "red"),
            ("sing", "sing"),
            ("1998", "1998"),
        ] {
            assert_eq!(lemmatize(word), lemma, "{word}");
        }
    }
}
