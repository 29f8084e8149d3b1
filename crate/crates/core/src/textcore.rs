//! Word tokenization, page segmentation and middle-drop truncation.
//!
//! A token is a maximal run of alphanumeric characters, lowercased. Every
//! budget in the engine (page size, memo and header budgets, prompt context
//! budgets) is counted in these tokens.

use std::ops::Range;

/// Marker inserted where [`truncate_middle`] drops text. It contains no
/// alphanumeric characters and therefore counts as zero tokens.
pub const ELLIPSIS: &str = "...";

/// Tokens of a text together with the character length of the source.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub source_len: usize,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Byte span of one token in its source text plus the normalized token.
struct Span {
    range: Range<usize>,
    token: String,
}

fn spans(text: &str) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut push = |range: Range<usize>| {
        // Lowercasing can yield combining marks (e.g. 'İ'); keep only the
        // alphanumeric part so re-tokenizing a token is the identity.
        let token: String = text[range.clone()]
            .chars()
            .flat_map(char::to_lowercase)
            .filter(|c| c.is_alphanumeric())
            .collect();
        if !token.is_empty() {
            out.push(Span { range, token });
        }
    };
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s..text.len());
    }
    out
}

pub fn tokenize(text: &str) -> TokenizedText {
    TokenizedText {
        tokens: spans(text).into_iter().map(|s| s.token).collect(),
        source_len: text.chars().count(),
    }
}

pub fn count_tokens(text: &str) -> usize {
    spans(text).len()
}

/// Splits `text` into consecutive chunks of exactly `page_size` tokens (the
/// last chunk may be shorter).
///
/// Chunks are slices of the original text: each one starts at its first
/// token and the separators after its last token stay with it, so the
/// concatenation of the chunks reproduces the input from its first token on.
/// Text without tokens yields no chunks.
pub fn segment_into_pages(text: &str, page_size: usize) -> Vec<String> {
    assert!(page_size >= 1, "page_size must be at least 1");
    let spans = spans(text);
    if spans.is_empty() {
        return Vec::new();
    }
    let starts: Vec<usize> = spans
        .chunks(page_size)
        .map(|chunk| chunk[0].range.start)
        .collect();
    starts
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = starts.get(i + 1).copied().unwrap_or(text.len());
            text[start..end].to_string()
        })
        .collect()
}

/// Keeps the first `⌈budget/2⌉` and last `⌊budget/2⌋` tokens of `text`,
/// joined by [`ELLIPSIS`]. Texts within budget are returned unchanged.
///
/// Head and tail are slices of the original text, so punctuation and casing
/// inside them survive.
pub fn truncate_middle(text: &str, budget: usize) -> String {
    let spans = spans(text);
    if spans.len() <= budget {
        return text.to_string();
    }
    let head = budget.div_ceil(2);
    let tail = budget / 2;
    let mut out = String::new();
    if head > 0 {
        out.push_str(&text[..spans[head - 1].range.end]);
        out.push(' ');
    }
    out.push_str(ELLIPSIS);
    if tail > 0 {
        out.push(' ');
        out.push_str(&text[spans[spans.len() - tail].range.start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (1..=n)
            .map(|i| format!("t{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello, World!").tokens, ["hello", "world"]);
        assert!(tokenize("").tokens.is_empty());
        assert_eq!(tokenize("a1 b2  c3").tokens, ["a1", "b2", "c3"]);
        assert_eq!(tokenize("Hello, World!").source_len, 13);
    }

    #[test]
    fn tokenize_unicode() {
        assert_eq!(
            tokenize("Ünïcode—dash naïve").tokens,
            ["ünïcode", "dash", "naïve"]
        );
        assert_eq!(tokenize("İstanbul").tokens, ["istanbul"]);
    }

    #[test]
    fn segment_examples() {
        let counts = |text: &str, size| {
            segment_into_pages(text, size)
                .iter()
                .map(|c| count_tokens(c))
                .collect::<Vec<_>>()
        };
        assert_eq!(counts(&words(5000), 2048), [2048, 2048, 904]);
        assert_eq!(counts(&words(10), 2048), [10]);
        assert_eq!(counts(&words(4096), 2048), [2048, 2048]);
        assert!(segment_into_pages("", 2048).is_empty());
        assert!(segment_into_pages(" ,;! ", 4).is_empty());
    }

    #[test]
    fn segment_is_lossless() {
        let text = "Alice: hi!  Bob: hello, Alice. How's Rex?";
        let chunks = segment_into_pages(text, 2);
        assert_eq!(chunks.concat(), text);
        assert_eq!(chunks[0], "Alice: hi!  ");
    }

    #[test]
    fn truncate_examples() {
        let text = words(100);
        assert_eq!(truncate_middle(&text, 100), text);

        let out = truncate_middle(&words(10), 4);
        assert_eq!(out, "t1 t2 ... t9 t10");
        assert_eq!(tokenize(&out).tokens, ["t1", "t2", "t9", "t10"]);

        let out = truncate_middle(&words(11), 5);
        assert_eq!(out, "t1 t2 t3 ... t10 t11");
    }

    #[test]
    fn truncate_degenerate_budgets() {
        assert_eq!(truncate_middle("a b c", 1), "a ...");
        assert_eq!(truncate_middle("a b c", 0), "...");
    }
}
