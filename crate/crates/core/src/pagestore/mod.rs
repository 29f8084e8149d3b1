//! Lossless, append-only page storage with keyword, vector and id lookup.
//!
//! Every page is indexed on append. The searchable text of a page is its
//! header followed by its content (header indexing can be switched off for
//! ablations), so a page written mid-conversation stays findable through
//! the context its header names.

pub mod bm25;
pub mod embedding;
pub mod persist;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textcore::tokenize;
use bm25::{Bm25Index, Bm25Params};
use embedding::{cosine, EmbeddingProvider, HashEmbedder};

/// Dense page ordinal; equals the page's position in its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageId(pub usize);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: PageId,
    pub session_id: u64,
    pub header: String,
    pub content: String,
}

impl Page {
    /// `[page {id}] {header} ∥ {content}`, the form pages take in prompts.
    pub fn render(&self) -> String {
        format!("[page {}] {} ∥ {}", self.id, self.header, self.content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Bm25,
    Embedding,
    PageId,
}

impl ToolKind {
    pub const ALL: [ToolKind; 3] = [ToolKind::Bm25, ToolKind::Embedding, ToolKind::PageId];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::Bm25 => "bm25",
            ToolKind::Embedding => "embedding",
            ToolKind::PageId => "page_id",
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ToolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "bm25" => Ok(ToolKind::Bm25),
            "embedding" => Ok(ToolKind::Embedding),
            "page_id" | "id" => Ok(ToolKind::PageId),
            other => Err(format!("unknown tool `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub page_id: PageId,
    pub score: f64,
    pub tool: ToolKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("page id {got} does not match next id {expected}")]
    IdMismatch { expected: PageId, got: PageId },
    #[error("embedding dimension mismatch: index has {expected}, provider gives {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Returned by [`PageStore::get_by_ids`] when some ids do not exist. The
/// pages that were found are still handed back.
#[derive(Debug, Clone, Error)]
#[error("unknown page ids {missing:?}")]
pub struct UnknownPageIds {
    pub missing: Vec<PageId>,
    pub found: Vec<Arc<Page>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreOptions {
    pub index_headers: bool,
    pub bm25: Bm25Params,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            index_headers: true,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Default)]
struct ReadCounter(AtomicU64);

impl Clone for ReadCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.0.load(Ordering::Relaxed)))
    }
}

/// Append-only page collection with its BM25 and embedding indexes.
///
/// `Clone` is a snapshot: pages are shared, indexes are copied, and the
/// clone never observes later appends to the original.
#[derive(Debug, Clone)]
pub struct PageStore {
    options: StoreOptions,
    pages: Vec<Arc<Page>>,
    bm25: Bm25Index,
    vectors: Vec<Vec<f32>>,
    embedder: Arc<dyn EmbeddingProvider>,
    reads: ReadCounter,
}

impl Default for PageStore {
    fn default() -> Self {
        Self::new(StoreOptions::default(), Arc::new(HashEmbedder::default()))
    }
}

impl PageStore {
    pub fn new(options: StoreOptions, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        Self {
            options,
            pages: Vec::new(),
            bm25: Bm25Index::new(options.bm25),
            vectors: Vec::new(),
            embedder,
            reads: ReadCounter::default(),
        }
    }

    pub fn options(&self) -> StoreOptions {
        self.options
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn next_id(&self) -> PageId {
        PageId(self.pages.len())
    }

    pub fn pages(&self) -> &[Arc<Page>] {
        &self.pages
    }

    pub fn bm25_index(&self) -> &Bm25Index {
        &self.bm25
    }

    pub fn vector(&self, id: PageId) -> Option<&[f32]> {
        self.vectors.get(id.0).map(Vec::as_slice)
    }

    /// Number of search or lookup calls served so far.
    pub fn read_count(&self) -> u64 {
        self.reads.0.load(Ordering::Relaxed)
    }

    fn note_read(&self) {
        self.reads.0.fetch_add(1, Ordering::Relaxed);
    }

    /// Text that the indexes see for `page`.
    pub fn searchable_text(&self, page: &Page) -> String {
        if self.options.index_headers {
            format!("{} {}", page.header, page.content)
        } else {
            page.content.clone()
        }
    }

    pub fn append_page(&mut self, page: Page) -> Result<PageId, StoreError> {
        let expected = self.next_id();
        if page.id != expected {
            return Err(StoreError::IdMismatch {
                expected,
                got: page.id,
            });
        }
        let text = self.searchable_text(&page);
        let vector = self.embedder.embed(&text);
        if vector.len() != self.embedder.dimension() {
            return Err(StoreError::DimensionMismatch {
                expected: self.embedder.dimension(),
                got: vector.len(),
            });
        }
        let indexed = self.bm25.add(&tokenize(&text).tokens);
        debug_assert_eq!(indexed, expected);
        self.vectors.push(vector);
        self.pages.push(Arc::new(page));
        Ok(expected)
    }

    pub fn get(&self, id: PageId) -> Option<&Arc<Page>> {
        self.pages.get(id.0)
    }

    /// Pages in the requested order. Unknown ids are reported in the error
    /// together with the pages that were found.
    pub fn get_by_ids(&self, ids: &[PageId]) -> Result<Vec<Arc<Page>>, UnknownPageIds> {
        self.note_read();
        let mut found = Vec::with_capacity(ids.len());
        let mut missing = Vec::new();
        for &id in ids {
            match self.pages.get(id.0) {
                Some(p) => found.push(Arc::clone(p)),
                None => missing.push(id),
            }
        }
        if missing.is_empty() {
            Ok(found)
        } else {
            Err(UnknownPageIds { missing, found })
        }
    }

    pub fn search_bm25(&self, query: &str, k: usize) -> Vec<RetrievalResult> {
        self.note_read();
        self.bm25
            .search(&tokenize(query).tokens, k)
            .into_iter()
            .map(|(page_id, score)| RetrievalResult {
                page_id,
                score,
                tool: ToolKind::Bm25,
            })
            .collect()
    }

    /// Top-`k` pages by cosine similarity to `provider.embed(query)`. Pages
    /// with zero similarity are left out.
    pub fn search_embedding(
        &self,
        query: &str,
        k: usize,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<RetrievalResult>, StoreError> {
        self.note_read();
        let expected = self.embedder.dimension();
        if provider.dimension() != expected {
            return Err(StoreError::DimensionMismatch {
                expected,
                got: provider.dimension(),
            });
        }
        let q = provider.embed(query);
        if q.len() != expected {
            return Err(StoreError::DimensionMismatch {
                expected,
                got: q.len(),
            });
        }
        let mut scored: Vec<RetrievalResult> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| RetrievalResult {
                page_id: PageId(i),
                score: cosine(&q, v),
                tool: ToolKind::Embedding,
            })
            .filter(|r| r.score > 0.0)
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.page_id.cmp(&b.page_id)));
        scored.truncate(k);
        Ok(scored)
    }
}
