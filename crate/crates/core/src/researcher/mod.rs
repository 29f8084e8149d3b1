//! Online stage: plan, search, integrate and reflect over the page-store.
//!
//! One run is a small state machine. Each iteration asks the backend for a
//! search plan (from the active request, the memory and the toolkit),
//! executes its tool calls against a frozen store, folds the new pages into
//! the running integration, and asks for a sufficiency verdict. An
//! insufficient verdict carries a refined request that drives the next
//! plan. The loop stops on a sufficient verdict, on a plan that answers
//! from memory, on a plan with no new calls, or at the depth bound.

mod output;
pub mod parse;
mod types;

pub use output::assemble_output;
pub use types::{
    CallRecord, FinalContext, IntegrationResult, Iteration, OutputFormat, ReflectionOutcome,
    Request, ResearchTrace, RetrievedSet, SearchPlan, Termination, ToolCall,
};

use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;

use serde::Deserialize;
use thiserror::Error;

use crate::memorizer::{render_memory, MemoryState};
use crate::modelbackend::{
    BackendError, ChatExchange, ModelBackend, PromptError, PromptSet, TemplateName,
};
use crate::pagestore::{Page, PageId, PageStore, ToolKind};
use parse::parse_object;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResearchConfig {
    pub max_reflection_depth: usize,
    /// Pages returned per tool call.
    pub top_k: usize,
    pub enabled_tools: BTreeSet<ToolKind>,
    pub output_format: OutputFormat,
    /// Show the retrieved pages to the reflect step, not just the
    /// integration.
    pub reflect_with_evidence: bool,
    /// Extra attempts after an unparseable structured completion.
    pub parse_retries: usize,
}

impl Default for ResearchConfig {
    fn default() -> Self {
        Self {
            max_reflection_depth: 3,
            top_k: 5,
            enabled_tools: ToolKind::ALL.into_iter().collect(),
            output_format: OutputFormat::IntegrationOnly,
            reflect_with_evidence: false,
            parse_retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResearchError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unparseable plan after {attempts} attempts: {message}")]
    PlanParse { attempts: usize, message: String },
    #[error("unparseable integration after {attempts} attempts: {message}")]
    IntegrationParse { attempts: usize, message: String },
    #[error("unparseable reflection after {attempts} attempts: {message}")]
    ReflectionParse { attempts: usize, message: String },
}

/// A failed run: the error plus the trace up to the failure.
#[derive(Debug, Clone, Error)]
#[error("research aborted after {} iteration(s): {error}", trace.iterations.len())]
pub struct ResearchFailure {
    pub error: ResearchError,
    pub trace: ResearchTrace,
}

#[derive(Deserialize)]
struct RawPlan {
    #[serde(default)]
    reasoning: String,
    #[serde(default)]
    sufficient_from_memory: bool,
    #[serde(default)]
    calls: Vec<ToolCall>,
}

#[derive(Deserialize)]
struct RawIntegration {
    text: String,
    #[serde(default)]
    cited: Vec<PageId>,
}

#[derive(Deserialize)]
struct RawReflection {
    sufficient: bool,
    #[serde(default)]
    refined_request: Option<String>,
    #[serde(default)]
    reasoning: String,
}

/// Human-readable description of the enabled tools, shown to the planner.
pub fn toolkit_description(tools: &BTreeSet<ToolKind>) -> String {
    tools
        .iter()
        .map(|t| match t {
            ToolKind::Bm25 => {
                "- bm25: keyword search over all pages. Parameter \"query\": a few distinctive keywords."
            }
            ToolKind::Embedding => {
                "- embedding: semantic vector search over all pages. Parameter \"query\": a short natural-language description."
            }
            ToolKind::PageId => {
                "- page_id: fetch pages directly by id, e.g. ids listed in the memory. Parameter \"ids\": a list of page ids."
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// What the integrate step is shown as new evidence.
pub enum Evidence<'a> {
    Pages(&'a [Arc<Page>]),
    Memory(&'a str),
}

impl Evidence<'_> {
    fn render(&self) -> String {
        match self {
            Evidence::Pages([]) => "(no new pages)".to_string(),
            Evidence::Pages(pages) => render_pages(pages.iter().map(Arc::as_ref)),
            Evidence::Memory("") => "(memory is empty)".to_string(),
            Evidence::Memory(m) => format!("Memory:\n{m}"),
        }
    }
}

pub(crate) fn render_pages<'a>(pages: impl Iterator<Item = &'a Page>) -> String {
    pages.map(Page::render).collect::<Vec<_>>().join("\n\n")
}

pub struct Researcher<'a> {
    backend: &'a dyn ModelBackend,
    prompts: &'a PromptSet,
    config: ResearchConfig,
}

impl<'a> Researcher<'a> {
    pub fn new(
        backend: &'a dyn ModelBackend,
        prompts: &'a PromptSet,
        config: ResearchConfig,
    ) -> Self {
        Self {
            backend,
            prompts,
            config,
        }
    }

    pub fn config(&self) -> &ResearchConfig {
        &self.config
    }

    /// Sends `exchange` until `parse` accepts the reply, at most
    /// `1 + parse_retries` times. Backend errors are returned at once.
    fn ask<T>(
        &self,
        exchange: &ChatExchange,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Result<T, (usize, String)>, BackendError> {
        let attempts = 1 + self.config.parse_retries;
        let mut last = String::new();
        for _ in 0..attempts {
            let reply = self.backend.complete(exchange)?;
            match parse(&reply) {
                Ok(v) => return Ok(Ok(v)),
                Err(e) => {
                    log::debug!("unparseable completion: {e}");
                    last = e;
                }
            }
        }
        Ok(Err((attempts, last)))
    }

    pub fn plan(&self, request: &str, memory: &str) -> Result<SearchPlan, ResearchError> {
        let toolkit = toolkit_description(&self.config.enabled_tools);
        let exchange = self.prompts.render(
            TemplateName::Plan,
            &[
                ("request", request),
                ("memory", memory),
                ("toolkit", &toolkit),
            ],
        )?;
        let parsed = self.ask(&exchange, |reply| {
            let raw: RawPlan = parse_object(reply)?;
            if raw.sufficient_from_memory && !raw.calls.is_empty() {
                return Err("plan answers from memory but also lists calls".into());
            }
            Ok(SearchPlan {
                reasoning: raw.reasoning,
                calls: raw.calls,
                sufficient_from_memory: raw.sufficient_from_memory,
            })
        })?;
        parsed.map_err(|(attempts, message)| ResearchError::PlanParse { attempts, message })
    }

    /// Runs `calls` (concurrently when there are several) and merges their
    /// hits into `accumulated`. Returns the per-call records and the ids that
    /// were new to `accumulated`, in call order then rank order.
    pub fn execute_plan(
        &self,
        calls: &[ToolCall],
        store: &PageStore,
        accumulated: &mut RetrievedSet,
    ) -> (Vec<CallRecord>, Vec<PageId>) {
        let run =
            |call: &ToolCall| run_call(call, store, self.config.top_k, &self.config.enabled_tools);
        let records: Vec<CallRecord> = if calls.len() <= 1 {
            calls.iter().map(run).collect()
        } else {
            thread::scope(|s| {
                let handles: Vec<_> = calls.iter().map(|c| s.spawn(move || run(c))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("tool call panicked"))
                    .collect()
            })
        };

        let mut new_ids = Vec::new();
        for record in &records {
            for &id in &record.page_ids {
                if let Some(page) = store.get(id) {
                    if accumulated.insert(Arc::clone(page)) {
                        new_ids.push(id);
                    }
                }
            }
            accumulated.record(record.clone());
        }
        (records, new_ids)
    }

    /// Folds `evidence` into `previous`. Citations are kept only when they
    /// name pages in `retrieved`.
    pub fn integrate(
        &self,
        request: &str,
        previous: &IntegrationResult,
        evidence: Evidence<'_>,
        retrieved: &RetrievedSet,
    ) -> Result<IntegrationResult, ResearchError> {
        let previous_text = if previous.text.is_empty() {
            "(none yet)"
        } else {
            previous.text.as_str()
        };
        let exchange = self.prompts.render(
            TemplateName::Integrate,
            &[
                ("request", request),
                ("previous", previous_text),
                ("evidence", &evidence.render()),
            ],
        )?;
        let parsed = self.ask(&exchange, parse_object::<RawIntegration>)?;
        let raw = parsed
            .map_err(|(attempts, message)| ResearchError::IntegrationParse { attempts, message })?;
        let mut cited = Vec::new();
        for id in raw.cited {
            if retrieved.contains(id) && !cited.contains(&id) {
                cited.push(id);
            }
        }
        Ok(IntegrationResult {
            text: raw.text,
            cited_page_ids: cited,
        })
    }

    pub fn reflect(
        &self,
        integration: &IntegrationResult,
        request: &str,
        retrieved: &RetrievedSet,
    ) -> Result<ReflectionOutcome, ResearchError> {
        let evidence = if self.config.reflect_with_evidence {
            render_pages(
                retrieved
                    .ids()
                    .filter_map(|id| retrieved.get(id))
                    .map(Arc::as_ref),
            )
        } else {
            "(not shown)".to_string()
        };
        let exchange = self.prompts.render(
            TemplateName::Reflect,
            &[
                ("request", request),
                ("integration", &integration.text),
                ("evidence", &evidence),
            ],
        )?;
        let parsed = self.ask(&exchange, |reply| {
            let raw: RawReflection = parse_object(reply)?;
            let refined = raw.refined_request.filter(|r| !r.trim().is_empty());
            if !raw.sufficient && refined.is_none() {
                return Err("insufficient verdict without a refined request".into());
            }
            Ok(ReflectionOutcome {
                sufficient: raw.sufficient,
                refined_request: if raw.sufficient { None } else { refined },
                reasoning: raw.reasoning,
            })
        })?;
        parsed.map_err(|(attempts, message)| ResearchError::ReflectionParse { attempts, message })
    }

    /// Runs the full loop for `request` and assembles the final context in
    /// the configured output format.
    pub fn research(
        &self,
        request: &Request,
        memory: &MemoryState,
        store: &PageStore,
    ) -> Result<FinalContext, ResearchFailure> {
        let original = request.original().text.clone();
        let memory_text = render_memory(memory);
        let mut trace = ResearchTrace::new(original.clone());
        let mut retrieved = RetrievedSet::default();
        let mut integration = IntegrationResult::default();
        let mut active = request.clone();

        macro_rules! attempt {
            ($e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(error) => {
                        trace.termination = Termination::Aborted;
                        return Err(ResearchFailure {
                            error: error.into(),
                            trace,
                        });
                    }
                }
            };
        }

        let mut termination = Termination::DepthReached;
        for depth in 1..=self.config.max_reflection_depth {
            let plan = attempt!(self.plan(&active.text, &memory_text));

            if plan.sufficient_from_memory {
                integration = attempt!(self.integrate(
                    &original,
                    &integration,
                    Evidence::Memory(&memory_text),
                    &retrieved
                ));
                trace.iterations.push(Iteration {
                    request: active.text.clone(),
                    plan,
                    executed: Vec::new(),
                    new_page_ids: Vec::new(),
                    integration: integration.clone(),
                    reflection: None,
                });
                termination = Termination::MemorySufficient;
                break;
            }

            let executed_before = retrieved.executed_calls();
            let mut fresh: Vec<ToolCall> = Vec::new();
            for call in &plan.calls {
                if !executed_before.contains(call) && !fresh.contains(call) {
                    fresh.push(call.clone());
                }
            }
            if fresh.is_empty() {
                trace.iterations.push(Iteration {
                    request: active.text.clone(),
                    plan,
                    executed: Vec::new(),
                    new_page_ids: Vec::new(),
                    integration: integration.clone(),
                    reflection: None,
                });
                termination = Termination::NoNewCalls;
                break;
            }

            let (executed, new_ids) = self.execute_plan(&fresh, store, &mut retrieved);
            let new_pages: Vec<Arc<Page>> = new_ids
                .iter()
                .filter_map(|id| retrieved.get(*id).cloned())
                .collect();
            integration = attempt!(self.integrate(
                &original,
                &integration,
                Evidence::Pages(&new_pages),
                &retrieved
            ));
            let reflection = attempt!(self.reflect(&integration, &original, &retrieved));
            let sufficient = reflection.sufficient;
            let refined = reflection.refined_request.clone();
            trace.iterations.push(Iteration {
                request: active.text.clone(),
                plan,
                executed,
                new_page_ids: new_ids,
                integration: integration.clone(),
                reflection: Some(reflection),
            });

            if sufficient {
                termination = Termination::Sufficient;
                break;
            }
            if depth == self.config.max_reflection_depth {
                break;
            }
            if let Some(next) = refined {
                active = active.refine(next);
            }
        }
        trace.termination = termination;

        let (context, warning) = assemble_output(
            &integration,
            &retrieved,
            self.config.output_format,
            &original,
            self.backend,
            self.prompts,
        );
        trace.warnings.extend(warning);
        Ok(FinalContext {
            context,
            format: self.config.output_format,
            trace,
        })
    }
}

fn run_call(
    call: &ToolCall,
    store: &PageStore,
    top_k: usize,
    enabled: &BTreeSet<ToolKind>,
) -> CallRecord {
    let mut record = CallRecord {
        call: call.clone(),
        page_ids: Vec::new(),
        misses: Vec::new(),
        error: None,
    };
    if !enabled.contains(&call.kind()) {
        record.error = Some(format!("tool `{}` is disabled", call.kind()));
        return record;
    }
    match call {
        ToolCall::Bm25 { query } => {
            record.page_ids = store
                .search_bm25(query, top_k)
                .into_iter()
                .map(|r| r.page_id)
                .collect();
        }
        ToolCall::Embedding { query } => {
            match store.search_embedding(query, top_k, store.embedder().as_ref()) {
                Ok(hits) => record.page_ids = hits.into_iter().map(|r| r.page_id).collect(),
                Err(e) => record.error = Some(e.to_string()),
            }
        }
        ToolCall::PageId { ids } => {
            let ids: Vec<PageId> = ids.iter().copied().take(top_k).collect();
            match store.get_by_ids(&ids) {
                Ok(pages) => record.page_ids = pages.iter().map(|p| p.id).collect(),
                Err(e) => {
                    record.page_ids = e.found.iter().map(|p| p.id).collect();
                    record.misses = e.missing;
                }
            }
        }
    }
    record
}

/// Re-executes the calls recorded in `trace` against `store` and returns
/// the new page ids each iteration would have produced.
pub fn replay_new_page_ids(
    trace: &ResearchTrace,
    store: &PageStore,
    config: &ResearchConfig,
) -> Vec<Vec<PageId>> {
    let mut seen = BTreeSet::new();
    trace
        .iterations
        .iter()
        .map(|it| {
            let mut new_ids = Vec::new();
            for record in &it.executed {
                let replayed = run_call(&record.call, store, config.top_k, &config.enabled_tools);
                for id in replayed.page_ids {
                    if seen.insert(id) {
                        new_ids.push(id);
                    }
                }
            }
            new_ids
        })
        .collect()
}
