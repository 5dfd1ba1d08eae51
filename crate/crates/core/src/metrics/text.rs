//! Token normalization, quote extraction and the rationale metrics.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::ScifactInstance;
use crate::scalar::Scalar;

const QUOTE_CHARS: [char; 3] = ['\'', '\u{2018}', '\u{2019}'];

/// Lowercased alphanumeric runs. Punctuation, quotes and whitespace separate
/// tokens and are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// One quoted piece of a rationale. `source_span` is a character range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteFragment {
    pub text: String,
    pub source_span: Range<usize>,
}

impl QuoteFragment {
    pub fn tokens(&self) -> Vec<String> {
        self.text.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
    }
}

fn is_quote(c: char) -> bool {
    QUOTE_CHARS.contains(&c)
}

fn opens(chars: &[char], i: usize) -> bool {
    let prev_ok = i == 0 || !chars[i - 1].is_alphanumeric();
    let next_ok = chars.get(i + 1).is_some_and(|c| !c.is_whitespace());
    is_quote(chars[i]) && prev_ok && next_ok
}

fn closes(chars: &[char], i: usize) -> bool {
    let next_ok = chars.get(i + 1).is_none_or(|c| !c.is_alphanumeric());
    let prev_ok = i > 0 && !chars[i - 1].is_whitespace();
    is_quote(chars[i]) && prev_ok && next_ok
}

/// Character ranges of the single-quoted regions of `text`, quotes excluded.
/// A region that never closes yields nothing.
pub fn quoted_regions(text: &str) -> Vec<Range<usize>> {
    let chars: Vec<char> = text.chars().collect();
    let mut regions = Vec::new();
    let mut open: Option<usize> = None;
    for i in 0..chars.len() {
        match open {
            None if opens(&chars, i) => open = Some(i),
            Some(start) if i > start + 1 && closes(&chars, i) => {
                regions.push(start + 1..i);
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        log::warn!("unbalanced quote at character {start}; region ignored");
    }
    regions
}

/// Splits each quoted region at "..." and "…" into normalized fragments.
pub fn extract_quotes(rationale: &str) -> Vec<QuoteFragment> {
    let chars: Vec<char> = rationale.chars().collect();
    let mut out = Vec::new();
    for region in quoted_regions(rationale) {
        let mut piece_start = region.start;
        let mut i = region.start;
        let mut pieces = Vec::new();
        while i < region.end {
            let ellipsis_len = if chars[i] == '\u{2026}' {
                1
            } else if i + 3 <= region.end && chars[i..i + 3] == ['.', '.', '.'] {
                // absorb longer runs of dots
                let mut n = 3;
                while i + n < region.end && chars[i + n] == '.' {
                    n += 1;
                }
                n
            } else {
                0
            };
            if ellipsis_len > 0 {
                pieces.push(piece_start..i);
                i += ellipsis_len;
                piece_start = i;
            } else {
                i += 1;
            }
        }
        pieces.push(piece_start..region.end);
        for span in pieces {
            let raw: String = chars[span.clone()].iter().collect();
            let text = normalize(&raw);
            if !text.is_empty() {
                out.push(QuoteFragment {
                    text,
                    source_span: span,
                });
            }
        }
    }
    out
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= haystack.len()
        && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Whether some fragment of at least `min_tokens` tokens occurs contiguously
/// in `sentence`.
pub fn partially_quoted(sentence: &str, fragments: &[QuoteFragment], min_tokens: usize) -> bool {
    let sentence_tokens = tokenize(sentence);
    fragments.iter().any(|f| {
        let t = f.tokens();
        t.len() >= min_tokens && contains_run(&sentence_tokens, &t)
    })
}

/// Fraction of gold evidence sets whose every sentence is partially quoted.
/// `None` when the instance has no evidence sets.
pub fn rationales_recall<S: Scalar>(
    instance: &ScifactInstance,
    rationale: &str,
    min_tokens: usize,
) -> Option<S> {
    let total = instance.gold_evidence_sets.len();
    if total == 0 {
        return None;
    }
    let fragments = extract_quotes(rationale);
    let quoted: Vec<bool> = instance
        .abstract_sentences
        .iter()
        .map(|s| partially_quoted(s, &fragments, min_tokens))
        .collect();
    let recovered = instance
        .gold_evidence_sets
        .iter()
        .filter(|set| set.iter().all(|&ix| quoted.get(ix).copied().unwrap_or(false)))
        .count();
    Some(S::from_ratio(recovered as u64, total as u64))
}

/// Per-token flags: token `i` of `rationale` lies inside a run of at least
/// `min_run` tokens that also occurs contiguously in `source`.
pub fn grounded_mask(rationale: &[String], source: &[String], min_run: usize) -> Vec<bool> {
    let n = rationale.len();
    let m = source.len();
    let mut mask = vec![false; n];
    if n == 0 || m == 0 || min_run == 0 {
        return mask;
    }
    // next[j] holds the common-prefix length of rationale[i+1..] and source[j..]
    let mut next = vec![0usize; m + 1];
    let mut cur = vec![0usize; m + 1];
    let mut longest = vec![0usize; n];
    for i in (0..n).rev() {
        let mut best = 0;
        for j in (0..m).rev() {
            cur[j] = if rationale[i] == source[j] { next[j + 1] + 1 } else { 0 };
            best = best.max(cur[j]);
        }
        longest[i] = best;
        std::mem::swap(&mut cur, &mut next);
    }
    for (i, &len) in longest.iter().enumerate() {
        if len >= min_run {
            for flag in &mut mask[i..i + len] {
                *flag = true;
            }
        }
    }
    mask
}

/// Fraction of rationale tokens inside a run of at least `min_run` tokens
/// shared with the abstract. The abstract is one concatenated token stream.
/// Zero for an empty rationale.
pub fn grounding_ratio<S: Scalar>(
    rationale: &str,
    abstract_sentences: &[String],
    min_run: usize,
) -> S {
    let tokens = tokenize(rationale);
    if tokens.is_empty() {
        return S::zero();
    }
    let source: Vec<String> = abstract_sentences.iter().flat_map(|s| tokenize(s)).collect();
    let grounded = grounded_mask(&tokens, &source, min_run)
        .into_iter()
        .filter(|&g| g)
        .count();
    S::from_ratio(grounded as u64, tokens.len() as u64)
}
