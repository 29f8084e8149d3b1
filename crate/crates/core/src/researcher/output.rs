use std::collections::BTreeSet;

use super::{render_pages, IntegrationResult, OutputFormat, RetrievedSet};
use crate::modelbackend::{ModelBackend, PromptSet, TemplateName};

/// Builds the final context in `format`.
///
/// Extraction makes a single backend call over all cited pages. If that
/// call fails or comes back blank, the integration text alone is returned
/// together with a warning for the trace.
pub fn assemble_output(
    integration: &IntegrationResult,
    retrieved: &RetrievedSet,
    format: OutputFormat,
    request: &str,
    backend: &dyn ModelBackend,
    prompts: &PromptSet,
) -> (String, Option<String>) {
    let cited: BTreeSet<_> = integration
        .cited_page_ids
        .iter()
        .filter_map(|id| retrieved.get(*id))
        .map(|p| p.id)
        .collect();
    let pages = || {
        cited
            .iter()
            .filter_map(|id| retrieved.get(*id))
            .map(|p| p.as_ref())
    };
    let text = integration.text.clone();

    match format {
        OutputFormat::IntegrationOnly => (text, None),
        OutputFormat::IntegrationWithPage if cited.is_empty() => (text, None),
        OutputFormat::IntegrationWithPage => (format!("{text}\n\n{}", render_pages(pages())), None),
        OutputFormat::IntegrationWithExtraction if cited.is_empty() => (text, None),
        OutputFormat::IntegrationWithExtraction => {
            let rendered = render_pages(pages());
            let extracted = prompts
                .render(
                    TemplateName::Extract,
                    &[
                        ("request", request),
                        ("integration", &integration.text),
                        ("pages", &rendered),
                    ],
                )
                .map_err(|e| e.to_string())
                .and_then(|ex| backend.complete(&ex).map_err(|e| e.to_string()));
            match extracted {
                Ok(snippets) if !snippets.trim().is_empty() => {
                    (format!("{text}\n\n{}", snippets.trim()), None)
                }
                Ok(_) => (
                    text,
                    Some("extraction returned nothing; fell back to integration-only".into()),
                ),
                Err(e) => (
                    text,
                    Some(format!(
                        "extraction failed ({e}); fell back to integration-only"
                    )),
                ),
            }
        }
    }
}
