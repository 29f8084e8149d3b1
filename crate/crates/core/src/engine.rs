//! Memory + page-store bundled with the settings that drive them.
//!
//! [`Engine`] is the single-threaded form used by batch tools. [`SharedEngine`]
//! serves concurrent readers: every research run works on an immutable
//! [`Snapshot`], and an ingest builds the next snapshot off to the side and
//! swaps it in only when it is complete.

use std::path::Path;
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use thiserror::Error;

use crate::memorizer::{MemorizeError, Memorizer, MemorizerConfig, MemoryState, Session};
use crate::modelbackend::{ModelBackend, PromptSet};
use crate::pagestore::persist::{self, PersistError};
use crate::pagestore::{PageId, PageStore, StoreOptions};
use crate::researcher::{FinalContext, Request, ResearchConfig, ResearchFailure, Researcher};

#[derive(Debug, Clone, Default)]
pub struct EngineSettings {
    pub memorizer: MemorizerConfig,
    pub research: ResearchConfig,
    pub store: StoreOptions,
    pub prompts: PromptSet,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Memorize(#[from] MemorizeError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("another ingest is in progress")]
    WriterBusy,
}

#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub memory: MemoryState,
    pub store: PageStore,
}

impl Snapshot {
    pub fn research(
        &self,
        request: &Request,
        backend: &dyn ModelBackend,
        settings: &EngineSettings,
        config: &ResearchConfig,
    ) -> Result<FinalContext, ResearchFailure> {
        Researcher::new(backend, &settings.prompts, config.clone()).research(
            request,
            &self.memory,
            &self.store,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    pub state: Snapshot,
    pub settings: EngineSettings,
}

impl Engine {
    pub fn new(settings: EngineSettings) -> Self {
        let store = PageStore::new(
            settings.store,
            Arc::new(crate::pagestore::embedding::HashEmbedder::default()),
        );
        Self {
            state: Snapshot {
                memory: MemoryState::new(),
                store,
            },
            settings,
        }
    }

    /// Loads `dir`; the page size recorded there overrides `settings`.
    pub fn load(dir: &Path, mut settings: EngineSettings) -> Result<Self, PersistError> {
        let archive = persist::load_with(
            dir,
            settings.store,
            Arc::new(crate::pagestore::embedding::HashEmbedder::default()),
        )?;
        settings.memorizer.page_size = archive.page_size;
        Ok(Self {
            state: Snapshot {
                memory: archive.memory,
                store: archive.store,
            },
            settings,
        })
    }

    /// Loads `dir` if it holds a store, otherwise starts empty.
    pub fn open_or_create(dir: &Path, settings: EngineSettings) -> Result<Self, PersistError> {
        if persist::exists(dir) {
            Self::load(dir, settings)
        } else {
            Ok(Self::new(settings))
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), PersistError> {
        persist::save(
            dir,
            &self.state.store,
            &self.state.memory,
            self.settings.memorizer.page_size,
        )?;
        Ok(())
    }

    pub fn ingest(
        &mut self,
        session: &Session,
        backend: &dyn ModelBackend,
    ) -> Result<Vec<PageId>, MemorizeError> {
        Memorizer::new(backend, &self.settings.prompts, self.settings.memorizer).ingest(
            session,
            &mut self.state.memory,
            &mut self.state.store,
        )
    }

    pub fn research(
        &self,
        request: &Request,
        backend: &dyn ModelBackend,
    ) -> Result<FinalContext, ResearchFailure> {
        self.state
            .research(request, backend, &self.settings, &self.settings.research)
    }
}

/// Snapshot-isolated engine for concurrent use.
#[derive(Debug)]
pub struct SharedEngine {
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
    settings: EngineSettings,
}

impl SharedEngine {
    pub fn new(engine: Engine) -> Self {
        Self {
            current: RwLock::new(Arc::new(engine.state)),
            writer: Mutex::new(()),
            settings: engine.settings,
        }
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    /// The latest committed state. Never blocks on an in-flight ingest.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.current.read().unwrap())
    }

    /// Ingests `session`, waiting for any other ingest to finish first.
    /// When `persist_to` is given the new state is saved before it becomes
    /// visible.
    pub fn ingest(
        &self,
        session: &Session,
        backend: &dyn ModelBackend,
        persist_to: Option<&Path>,
    ) -> Result<Vec<PageId>, EngineError> {
        let guard = self.writer.lock().unwrap();
        let ids = self.ingest_locked(session, backend, persist_to)?;
        drop(guard);
        Ok(ids)
    }

    /// Like [`SharedEngine::ingest`] but fails with `WriterBusy` instead of
    /// waiting.
    pub fn try_ingest(
        &self,
        session: &Session,
        backend: &dyn ModelBackend,
        persist_to: Option<&Path>,
    ) -> Result<Vec<PageId>, EngineError> {
        let guard = match self.writer.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(EngineError::WriterBusy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let ids = self.ingest_locked(session, backend, persist_to)?;
        drop(guard);
        Ok(ids)
    }

    fn ingest_locked(
        &self,
        session: &Session,
        backend: &dyn ModelBackend,
        persist_to: Option<&Path>,
    ) -> Result<Vec<PageId>, EngineError> {
        let mut next = (*self.snapshot()).clone();
        let ids = Memorizer::new(backend, &self.settings.prompts, self.settings.memorizer).ingest(
            session,
            &mut next.memory,
            &mut next.store,
        )?;
        if let Some(dir) = persist_to {
            persist::save(
                dir,
                &next.store,
                &next.memory,
                self.settings.memorizer.page_size,
            )?;
        }
        *self.current.write().unwrap() = Arc::new(next);
        Ok(ids)
    }

    pub fn research(
        &self,
        request: &Request,
        backend: &dyn ModelBackend,
        config: &ResearchConfig,
    ) -> Result<FinalContext, ResearchFailure> {
        self.snapshot()
            .research(request, backend, &self.settings, config)
    }
}
