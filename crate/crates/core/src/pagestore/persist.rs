//! On-disk layout: a directory holding `manifest.json`, `pages.jsonl` and
//! `memos.jsonl`. Indexes are not stored; they are rebuilt on load.

use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::embedding::{EmbeddingProvider, HashEmbedder};
use super::{Page, PageId, PageStore, StoreOptions};
use crate::memorizer::{Memo, MemoryState};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAGES_FILE: &str = "pages.jsonl";
pub const MEMOS_FILE: &str = "memos.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub page_count: usize,
    pub memo_count: usize,
    pub page_size: usize,
    pub checksum_pages: String,
    pub checksum_memos: String,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt store: {0}")]
    CorruptManifest(String),
}

fn corrupt(msg: impl Into<String>) -> PersistError {
    PersistError::CorruptManifest(msg.into())
}

/// A loaded store directory.
#[derive(Debug, Clone)]
pub struct StoreArchive {
    pub store: PageStore,
    pub memory: MemoryState,
    pub page_size: usize,
}

fn to_jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(&row).expect("rows serialize"));
        out.push('\n');
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `dir`. The manifest is written last (via rename), so a reader
/// never pairs a new manifest with stale data files.
pub fn save(
    dir: &Path,
    store: &PageStore,
    memory: &MemoryState,
    page_size: usize,
) -> Result<Manifest, PersistError> {
    fs::create_dir_all(dir)?;
    let pages = to_jsonl(store.pages().iter().map(|p| p.as_ref()));
    let memos = to_jsonl(memory.memos());
    let manifest = Manifest {
        version: FORMAT_VERSION,
        page_count: store.len(),
        memo_count: memory.len(),
        page_size,
        checksum_pages: sha256_hex(pages.as_bytes()),
        checksum_memos: sha256_hex(memos.as_bytes()),
    };
    fs::write(dir.join(PAGES_FILE), pages)?;
    fs::write(dir.join(MEMOS_FILE), memos)?;
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(
        &tmp,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    fs::rename(tmp, dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// True when `dir` holds a manifest.
pub fn exists(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

pub fn load(dir: &Path) -> Result<StoreArchive, PersistError> {
    load_with(
        dir,
        StoreOptions::default(),
        Arc::new(HashEmbedder::default()),
    )
}

pub fn load_with(
    dir: &Path,
    options: StoreOptions,
    embedder: Arc<dyn EmbeddingProvider>,
) -> Result<StoreArchive, PersistError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = match fs::read_to_string(&manifest_path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(corrupt(format!("no {MANIFEST_FILE} in {}", dir.display())))
        }
        Err(e) => return Err(e.into()),
    };
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| corrupt(format!("unreadable manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported version {} (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }

    let pages_raw = fs::read(dir.join(PAGES_FILE))?;
    let memos_raw = fs::read(dir.join(MEMOS_FILE))?;
    if sha256_hex(&pages_raw) != manifest.checksum_pages {
        return Err(corrupt("pages checksum mismatch"));
    }
    if sha256_hex(&memos_raw) != manifest.checksum_memos {
        return Err(corrupt("memos checksum mismatch"));
    }

    let pages: Vec<Page> = parse_jsonl(&pages_raw, PAGES_FILE)?;
    let memos: Vec<Memo> = parse_jsonl(&memos_raw, MEMOS_FILE)?;
    if pages.len() != manifest.page_count || memos.len() != manifest.memo_count {
        return Err(corrupt("row counts do not match manifest"));
    }

    let mut store = PageStore::new(options, embedder);
    for page in pages {
        store
            .append_page(page)
            .map_err(|e| corrupt(format!("{PAGES_FILE}: {e}")))?;
    }
    let page_count = store.len();
    if let Some(m) = memos
        .iter()
        .find(|m| m.source_page_ids.iter().any(|&PageId(id)| id >= page_count))
    {
        return Err(corrupt(format!(
            "memo of session {} references a missing page",
            m.session_id
        )));
    }
    if memos.windows(2).any(|w| w[0].session_id > w[1].session_id) {
        return Err(corrupt("memos out of session order"));
    }

    Ok(StoreArchive {
        store,
        memory: MemoryState::from_memos(memos),
        page_size: manifest.page_size,
    })
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(
    raw: &[u8],
    file: &str,
) -> Result<Vec<T>, PersistError> {
    let text = std::str::from_utf8(raw).map_err(|_| corrupt(format!("{file} is not UTF-8")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| corrupt(format!("{file} line {}: {e}", i + 1)))
        })
        .collect()
}
