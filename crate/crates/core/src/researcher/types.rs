use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::pagestore::{Page, PageId, ToolKind};

/// What the client asked for, plus the chain of requests it was refined
/// from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_from: Option<Box<Request>>,
}

impl Request {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            refined_from: None,
        }
    }

    pub fn refine(self, text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            refined_from: Some(Box::new(self)),
        }
    }

    /// Number of refinements behind this request.
    pub fn depth(&self) -> usize {
        let mut n = 0;
        let mut cur = self;
        while let Some(prev) = &cur.refined_from {
            n += 1;
            cur = prev;
        }
        n
    }

    pub fn original(&self) -> &Request {
        let mut cur = self;
        while let Some(prev) = &cur.refined_from {
            cur = prev;
        }
        cur
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToolCall {
    Bm25 { query: String },
    Embedding { query: String },
    PageId { ids: Vec<PageId> },
}

impl ToolCall {
    pub fn kind(&self) -> ToolKind {
        match self {
            ToolCall::Bm25 { .. } => ToolKind::Bm25,
            ToolCall::Embedding { .. } => ToolKind::Embedding,
            ToolCall::PageId { .. } => ToolKind::PageId,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SearchPlan {
    pub reasoning: String,
    pub calls: Vec<ToolCall>,
    pub sufficient_from_memory: bool,
}

/// Outcome of one executed tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub call: ToolCall,
    /// Pages returned, in rank (or request) order.
    pub page_ids: Vec<PageId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub misses: Vec<PageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Every page retrieved during a run, keyed by id, with per-call
/// provenance.
#[derive(Debug, Clone, Default)]
pub struct RetrievedSet {
    pages: BTreeMap<PageId, Arc<Page>>,
    provenance: Vec<CallRecord>,
}

impl RetrievedSet {
    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn contains(&self, id: PageId) -> bool {
        self.pages.contains_key(&id)
    }

    pub fn get(&self, id: PageId) -> Option<&Arc<Page>> {
        self.pages.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = PageId> + '_ {
        self.pages.keys().copied()
    }

    pub fn provenance(&self) -> &[CallRecord] {
        &self.provenance
    }

    pub fn executed_calls(&self) -> BTreeSet<&ToolCall> {
        self.provenance.iter().map(|r| &r.call).collect()
    }

    /// Inserts `page` unless already present; true when it was new.
    pub(crate) fn insert(&mut self, page: Arc<Page>) -> bool {
        use std::collections::btree_map::Entry;
        match self.pages.entry(page.id) {
            Entry::Vacant(v) => {
                v.insert(page);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub(crate) fn record(&mut self, record: CallRecord) {
        self.provenance.push(record);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntegrationResult {
    pub text: String,
    pub cited_page_ids: Vec<PageId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub sufficient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_request: Option<String>,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Sufficient,
    NoNewCalls,
    DepthReached,
    MemorySufficient,
    /// An operation failed; the trace holds everything done before it.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    /// Request text the plan was made for.
    pub request: String,
    pub plan: SearchPlan,
    /// Calls actually run (plan calls minus repeats of earlier ones).
    pub executed: Vec<CallRecord>,
    pub new_page_ids: Vec<PageId>,
    pub integration: IntegrationResult,
    pub reflection: Option<ReflectionOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResearchTrace {
    pub request: String,
    pub iterations: Vec<Iteration>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ResearchTrace {
    pub fn new(request: impl Into<String>) -> Self {
        Self {
            request: request.into(),
            iterations: Vec::new(),
            termination: Termination::Aborted,
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    IntegrationOnly,
    IntegrationWithPage,
    IntegrationWithExtraction,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::IntegrationOnly => "integration-only",
            OutputFormat::IntegrationWithPage => "integration-with-page",
            OutputFormat::IntegrationWithExtraction => "integration-with-extraction",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "integration-only" | "integration" => Ok(OutputFormat::IntegrationOnly),
            "integration-with-page" | "page" => Ok(OutputFormat::IntegrationWithPage),
            "integration-with-extraction" | "extraction" => {
                Ok(OutputFormat::IntegrationWithExtraction)
            }
            other => Err(format!("unknown output format `{other}`")),
        }
    }
}

/// The context handed back to the client, with the trace that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalContext {
    pub context: String,
    pub format: OutputFormat,
    pub trace: ResearchTrace,
}
