use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ChatExchange, ChatMessage};
use crate::textcore::{count_tokens, truncate_middle};

const SYSTEM: &str = include_str!("../../prompts/system.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateName {
    Memorize,
    Header,
    Plan,
    Integrate,
    Reflect,
    Extract,
    Answer,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::Memorize,
        TemplateName::Header,
        TemplateName::Plan,
        TemplateName::Integrate,
        TemplateName::Reflect,
        TemplateName::Extract,
        TemplateName::Answer,
    ];

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateName::Memorize => include_str!("../../prompts/memorize.txt"),
            TemplateName::Header => include_str!("../../prompts/header.txt"),
            TemplateName::Plan => include_str!("../../prompts/plan.txt"),
            TemplateName::Integrate => include_str!("../../prompts/integrate.txt"),
            TemplateName::Reflect => include_str!("../../prompts/reflect.txt"),
            TemplateName::Extract => include_str!("../../prompts/extract.txt"),
            TemplateName::Answer => include_str!("../../prompts/answer.txt"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateName::Memorize => "memorize",
            TemplateName::Header => "header",
            TemplateName::Plan => "plan",
            TemplateName::Integrate => "integrate",
            TemplateName::Reflect => "reflect",
            TemplateName::Extract => "extract",
            TemplateName::Answer => "answer",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template `{template}` needs a binding for `{name}`")]
    MissingBinding {
        template: TemplateName,
        name: String,
    },
    #[error(
        "template `{template}` needs {needed} tokens without any bindings, budget is {budget}"
    )]
    BudgetTooSmall {
        template: TemplateName,
        needed: usize,
        budget: usize,
    },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_]+)\}\}").unwrap())
}

/// Prompt text with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub template: String,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, template: impl Into<String>) -> Self {
        Self {
            name,
            template: template.into(),
        }
    }

    pub fn builtin(name: TemplateName) -> Self {
        Self::new(name, name.builtin_text())
    }

    /// Distinct placeholder names, in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for cap in placeholder_re().captures_iter(&self.template) {
            let name = cap.get(1).unwrap().as_str();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    fn substitute(&self, values: &BTreeMap<&str, String>) -> String {
        placeholder_re()
            .replace_all(&self.template, |cap: &regex::Captures<'_>| {
                values[cap.get(1).unwrap().as_str()].clone()
            })
            .into_owned()
    }
}

/// The template set plus the limits every rendered exchange obeys.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub system: String,
    /// Upper bound on system + user tokens of a rendered exchange.
    pub context_budget: usize,
    pub max_output_tokens: usize,
    pub temperature: f64,
    templates: BTreeMap<TemplateName, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            system: SYSTEM.trim_end().to_string(),
            context_budget: 32_000,
            max_output_tokens: 1024,
            temperature: 0.0,
            templates: TemplateName::ALL
                .into_iter()
                .map(|n| (n, PromptTemplate::builtin(n)))
                .collect(),
        }
    }
}

impl PromptSet {
    pub fn with_context_budget(mut self, budget: usize) -> Self {
        self.context_budget = budget;
        self
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.templates.insert(template.name, template);
        self
    }

    pub fn template(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }

    pub fn render(
        &self,
        name: TemplateName,
        bindings: &[(&str, &str)],
    ) -> Result<ChatExchange, PromptError> {
        render_prompt(self.template(name), bindings, self)
    }
}

/// Substitutes `bindings` into `template` and wraps the result in an
/// exchange.
///
/// When system + user text exceeds `limits.context_budget`, the binding with
/// the most tokens is middle-truncated first, then the next largest, until
/// the exchange fits.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &[(&str, &str)],
    limits: &PromptSet,
) -> Result<ChatExchange, PromptError> {
    let names = template.placeholders();
    let mut values: BTreeMap<&str, String> = BTreeMap::new();
    for &name in &names {
        let value = bindings
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.to_string())
            .ok_or_else(|| PromptError::MissingBinding {
                template: template.name,
                name: name.to_string(),
            })?;
        values.insert(name, value);
    }
    let occurrences = |name: &str| {
        placeholder_re()
            .captures_iter(&template.template)
            .filter(|c| &c[1] == name)
            .count()
    };

    let system_tokens = count_tokens(&limits.system);
    let budget = limits.context_budget;
    let mut user = template.substitute(&values);
    loop {
        let total = system_tokens + count_tokens(&user);
        if total <= budget {
            break;
        }
        // Largest binding first; ties go to the earliest placeholder.
        let largest = names
            .iter()
            .map(|&n| (n, count_tokens(&values[n])))
            .filter(|&(_, c)| c > 0)
            .fold(None::<(&str, usize)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((name, count)) = largest else {
            return Err(PromptError::BudgetTooSmall {
                template: template.name,
                needed: total,
                budget,
            });
        };
        let excess = (total - budget).div_ceil(occurrences(name));
        let truncated = truncate_middle(&values[name], count.saturating_sub(excess));
        values.insert(name, truncated);
        user = template.substitute(&values);
    }

    Ok(ChatExchange {
        system: limits.system.clone(),
        messages: vec![ChatMessage::user(user)],
        max_output_tokens: limits.max_output_tokens,
        temperature: limits.temperature,
    })
}
