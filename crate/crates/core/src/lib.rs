//! Just-in-time agentic memory.
//!
//! Offline, the [`memorizer`] compresses each session into memos (a light,
//! lossy memory) and stores the session itself losslessly as header-decorated
//! pages in a [`pagestore`]. Online, the [`researcher`] plans searches from
//! the memory, retrieves pages, integrates what it finds and reflects until
//! the request is covered, then assembles the context a client agent uses.

pub mod engine;
pub mod evalharness;
pub mod memorizer;
pub mod modelbackend;
pub mod pagestore;
pub mod researcher;
pub mod textcore;

pub use engine::{Engine, EngineError, EngineSettings, SharedEngine, Snapshot};
pub use memorizer::{Memo, MemoryState, Session};
pub use modelbackend::{ModelBackend, ScriptRule, ScriptedBackend};
pub use pagestore::{Page, PageId, PageStore, ToolKind};
pub use researcher::{FinalContext, OutputFormat, Request, ResearchConfig};
