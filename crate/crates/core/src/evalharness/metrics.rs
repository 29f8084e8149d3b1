//! Answer normalization, token-F1 and BLEU-1.

use std::collections::HashMap;

/// Lowercases, deletes punctuation, drops the articles a/an/the and
/// collapses whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn answer_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn bag(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Size of the multiset intersection of `a` and `b`.
fn overlap(a: &[String], b: &[String]) -> usize {
    let bb = bag(b);
    bag(a)
        .into_iter()
        .map(|(t, n)| n.min(bb.get(t).copied().unwrap_or(0)))
        .sum()
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let common = overlap(pred, gold);
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Bag-of-tokens F1 against each gold; the best one counts.
pub fn token_f1(prediction: &str, golds: &[impl AsRef<str>]) -> f64 {
    let pred = answer_tokens(prediction);
    golds
        .iter()
        .map(|g| f1_single(&pred, &answer_tokens(g.as_ref())))
        .fold(0.0, f64::max)
}

fn bleu1_single(pred: &[String], gold: &[String], brevity_penalty: bool) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let c = pred.len() as f64;
    let precision = overlap(pred, gold) as f64 / c;
    if !brevity_penalty {
        return precision;
    }
    let r = gold.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    precision * bp
}

/// Clipped unigram precision times the brevity penalty
/// `exp(1 - r/c)` (1 when the prediction is longer than the reference).
/// Scored against each gold separately; the best one counts.
pub fn bleu1(prediction: &str, golds: &[impl AsRef<str>], brevity_penalty: bool) -> f64 {
    let pred = answer_tokens(prediction);
    golds
        .iter()
        .map(|g| bleu1_single(&pred, &answer_tokens(g.as_ref()), brevity_penalty))
        .fold(0.0, f64::max)
}

pub fn exact_match(prediction: &str, golds: &[impl AsRef<str>]) -> bool {
    let pred = normalize_answer(prediction);
    golds.iter().any(|g| normalize_answer(g.as_ref()) == pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("The  Apple, an ORANGE!"), "apple orange");
        assert_eq!(normalize_answer("don't"), "dont");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("apple pie", &["apple pie"]), 1.0);
        assert!((token_f1("red apple pie", &["apple pie"]) - 0.8).abs() < 1e-12);
        assert_eq!(token_f1("banana", &["apple pie"]), 0.0);
        assert_eq!(token_f1("the", &["a"]), 1.0);
        assert_eq!(token_f1("", &["apple"]), 0.0);
        assert_eq!(token_f1("x", &["apple", "x"]), 1.0);
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu1("apple pie", &["apple pie"], true), 1.0);
        assert!((bleu1("apple pie", &["apple pie good"], true) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((bleu1("x x x x", &["x"], true) - 0.25).abs() < 1e-12);
        assert_eq!(bleu1("", &["x"], true), 0.0);
        assert_eq!(bleu1("apple pie", &["apple pie good"], false), 1.0);
    }

    #[test]
    fn exact_match_normalizes() {
        assert!(exact_match("The Eiffel Tower.", &["eiffel tower"]));
        assert!(!exact_match("tower", &["eiffel tower"]));
    }
}
