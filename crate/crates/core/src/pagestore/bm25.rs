//! Okapi BM25 over an append-only inverted index.

use std::collections::{BTreeSet, HashMap};

use super::PageId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// `ln(1 + (N - n + 0.5) / (n + 0.5))`: never negative, and strictly
/// decreasing in `n` for fixed `N`.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated term-frequency component of a single term/document pair.
pub fn tf_weight(tf: f64, doc_len: f64, avg_len: f64, params: Bm25Params) -> f64 {
    let norm = if avg_len > 0.0 {
        doc_len / avg_len
    } else {
        0.0
    };
    (tf * (params.k1 + 1.0)) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub page_id: PageId,
    pub tf: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    params: Bm25Params,
    postings: HashMap<String, Vec<Posting>>,
    doc_lengths: Vec<usize>,
    total_length: usize,
}

impl Bm25Index {
    pub fn new(params: Bm25Params) -> Self {
        Self {
            params,
            ..Default::default()
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Indexes the next document. Its id is the current document count.
    pub fn add(&mut self, tokens: &[String]) -> PageId {
        let id = PageId(self.doc_lengths.len());
        let mut counts: HashMap<&str, u32> = HashMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        for (term, tf) in counts {
            self.postings
                .entry(term.to_string())
                .or_default()
                .push(Posting { page_id: id, tf });
        }
        self.doc_lengths.push(tokens.len());
        self.total_length += tokens.len();
        id
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_length(&self, id: PageId) -> Option<usize> {
        self.doc_lengths.get(id.0).copied()
    }

    pub fn avg_doc_length(&self) -> f64 {
        if self.doc_lengths.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.doc_lengths.len() as f64
        }
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_count(&self) -> usize {
        self.postings.len()
    }

    /// Scores every document sharing a term with the query.
    ///
    /// Distinct query terms are summed in lexicographic order so scores are
    /// bit-for-bit reproducible. Zero scores are dropped; the result is
    /// sorted by score descending, ties by ascending id, and cut to `k`.
    pub fn search(&self, query_tokens: &[String], k: usize) -> Vec<(PageId, f64)> {
        let n = self.doc_count();
        if n == 0 || k == 0 {
            return Vec::new();
        }
        let terms: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
        let avg = self.avg_doc_length();
        let mut scores: HashMap<PageId, f64> = HashMap::new();
        for term in terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let w = idf(n, list.len());
            for p in list {
                let len = self.doc_lengths[p.page_id.0] as f64;
                *scores.entry(p.page_id).or_insert(0.0) +=
                    w * tf_weight(p.tf as f64, len, avg, self.params);
            }
        }
        let mut ranked: Vec<(PageId, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::tokenize;

    fn index(docs: &[&str]) -> Bm25Index {
        let mut idx = Bm25Index::new(Bm25Params::default());
        for d in docs {
            idx.add(&tokenize(d).tokens);
        }
        idx
    }

    #[test]
    fn idf_is_monotone_and_non_negative() {
        for n in 1..50 {
            for df in 1..n {
                assert!(idf(n, df) >= idf(n, df + 1));
                assert!(idf(n, df + 1) >= 0.0);
            }
        }
    }

    #[test]
    fn average_length() {
        let idx = index(&["a b", "c d", "e"]);
        assert!((idx.avg_doc_length() - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(Bm25Index::default().avg_doc_length(), 0.0);
    }

    #[test]
    fn postings_sorted_with_positive_tf() {
        let idx = index(&["x y x", "y", "x z"]);
        let xs = idx.postings("x");
        assert_eq!(
            xs,
            [
                Posting {
                    page_id: PageId(0),
                    tf: 2
                },
                Posting {
                    page_id: PageId(2),
                    tf: 1
                }
            ]
        );
        assert_eq!(idx.doc_freq("y"), 2);
        assert_eq!(idx.doc_freq("nope"), 0);
    }

    #[test]
    fn apple_corpus_ranking() {
        let idx = index(&["apple banana", "apple apple", "cherry"]);
        let hits = idx.search(&tokenize("apple").tokens, 5);
        let ids: Vec<_> = hits.iter().map(|h| h.0).collect();
        assert_eq!(ids, [PageId(1), PageId(0)]);
    }

    #[test]
    fn identical_docs_tie_break_by_id() {
        let idx = index(&["other", "same text", "same text"]);
        let hits = idx.search(&tokenize("same").tokens, 5);
        assert_eq!(hits[0].0, PageId(1));
        assert_eq!(hits[1].0, PageId(2));
        assert_eq!(hits[0].1, hits[1].1);
    }

    #[test]
    fn absent_or_empty_query() {
        let idx = index(&["apple"]);
        assert!(idx.search(&tokenize("zzz").tokens, 5).is_empty());
        assert!(idx.search(&[], 5).is_empty());
    }
}
