//! Offline stage: turn each arriving session into memos and pages.
//!
//! A session is segmented into page-sized chunks. For every chunk the
//! backend writes a header from the memory seen so far, the chunk is stored
//! losslessly as a page under that header, and the backend writes a memo
//! which is appended to the memory with a back-reference to the page.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelbackend::{BackendError, ModelBackend, PromptError, PromptSet, TemplateName};
use crate::pagestore::{Page, PageId, PageStore, StoreError};
use crate::textcore::{count_tokens, segment_into_pages, truncate_middle};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: u64,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Session {
    pub fn new(id: u64, content: impl Into<String>) -> Self {
        Self {
            id,
            content: content.into(),
            created_at: None,
            metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memo {
    pub session_id: u64,
    pub source_page_ids: Vec<PageId>,
    pub text: String,
}

/// The light memory: memos in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MemoryState {
    memos: Vec<Memo>,
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_memos(memos: Vec<Memo>) -> Self {
        Self { memos }
    }

    pub fn memos(&self) -> &[Memo] {
        &self.memos
    }

    pub fn len(&self) -> usize {
        self.memos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memos.is_empty()
    }

    pub fn last_session_id(&self) -> Option<u64> {
        self.memos.last().map(|m| m.session_id)
    }

    fn push(&mut self, memo: Memo) {
        debug_assert!(self
            .last_session_id()
            .is_none_or(|last| last <= memo.session_id));
        self.memos.push(memo);
    }
}

/// One line per memo: `[session {id} | pages {ids}] {text}`.
pub fn render_memory(memory: &MemoryState) -> String {
    memory
        .memos
        .iter()
        .map(|m| {
            let ids: Vec<String> = m.source_page_ids.iter().map(|p| p.to_string()).collect();
            format!(
                "[session {} | pages {}] {}",
                m.session_id,
                ids.join(","),
                m.text.replace(['\r', '\n'], " ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemorizerConfig {
    pub page_size: usize,
    pub memo_budget: usize,
    pub header_budget: usize,
}

impl Default for MemorizerConfig {
    fn default() -> Self {
        Self {
            page_size: 2048,
            memo_budget: 256,
            header_budget: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemorizeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend returned an empty memo")]
    EmptyCompletion,
    #[error("session {got} arrived after session {last}")]
    OutOfOrderSession { last: u64, got: u64 },
    #[error("session {0} has no content")]
    EmptySession(u64),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub struct Memorizer<'a> {
    backend: &'a dyn ModelBackend,
    prompts: &'a PromptSet,
    config: MemorizerConfig,
}

impl<'a> Memorizer<'a> {
    pub fn new(
        backend: &'a dyn ModelBackend,
        prompts: &'a PromptSet,
        config: MemorizerConfig,
    ) -> Self {
        Self {
            backend,
            prompts,
            config,
        }
    }

    pub fn config(&self) -> MemorizerConfig {
        self.config
    }

    /// Writes the memo for `chunk`, which will live at `page_id`. The memo is
    /// returned, not appended.
    pub fn memorize(
        &self,
        chunk: &str,
        memory: &MemoryState,
        session_id: u64,
        page_id: PageId,
    ) -> Result<Memo, MemorizeError> {
        let exchange = self.prompts.render(
            TemplateName::Memorize,
            &[("memory", &render_memory(memory)), ("chunk", chunk)],
        )?;
        let text = self.backend.complete(&exchange)?;
        let text = text.trim();
        if text.is_empty() {
            return Err(MemorizeError::EmptyCompletion);
        }
        Ok(Memo {
            session_id,
            source_page_ids: vec![page_id],
            text: truncate_middle(text, self.config.memo_budget),
        })
    }

    /// Header for `chunk`; a blank completion yields an empty header.
    pub fn make_header(&self, chunk: &str, memory: &MemoryState) -> Result<String, MemorizeError> {
        let exchange = self.prompts.render(
            TemplateName::Header,
            &[("memory", &render_memory(memory)), ("chunk", chunk)],
        )?;
        let text = self.backend.complete(&exchange)?;
        Ok(truncate_middle(text.trim(), self.config.header_budget))
    }

    /// Segments `session`, writes one header, page and memo per chunk, and
    /// commits them to `memory` and `store` only once every backend call
    /// has succeeded. Returns the new page ids.
    pub fn ingest(
        &self,
        session: &Session,
        memory: &mut MemoryState,
        store: &mut PageStore,
    ) -> Result<Vec<PageId>, MemorizeError> {
        let last = memory
            .last_session_id()
            .max(store.pages().last().map(|p| p.session_id));
        if let Some(last) = last {
            if session.id <= last {
                return Err(MemorizeError::OutOfOrderSession {
                    last,
                    got: session.id,
                });
            }
        }
        if count_tokens(&session.content) == 0 {
            return Err(MemorizeError::EmptySession(session.id));
        }

        let mut staged = memory.clone();
        let mut pages = Vec::new();
        let base = store.next_id().0;
        for (i, chunk) in segment_into_pages(&session.content, self.config.page_size)
            .into_iter()
            .enumerate()
        {
            let id = PageId(base + i);
            let header = self.make_header(&chunk, &staged)?;
            let memo = self.memorize(&chunk, &staged, session.id, id)?;
            staged.push(memo);
            pages.push(Page {
                id,
                session_id: session.id,
                header,
                content: chunk,
            });
        }

        let mut ids = Vec::with_capacity(pages.len());
        for page in pages {
            ids.push(store.append_page(page)?);
        }
        *memory = staged;
        Ok(ids)
    }
}
