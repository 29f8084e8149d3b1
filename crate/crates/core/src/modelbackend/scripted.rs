//! Deterministic rule-driven backend for tests and offline replays.

use std::path::Path;
use std::sync::Mutex;

use regex::{Regex, RegexBuilder};
use serde::Deserialize;

use super::{BackendError, ChatExchange, ModelBackend};

#[derive(Debug, Clone)]
pub enum Matcher {
    /// Matches when the last user message contains the text.
    Contains(String),
    /// Regex over the last user message; `.` also matches newlines.
    Pattern(Regex),
}

impl Matcher {
    pub fn pattern(pattern: &str) -> Result<Self, regex::Error> {
        RegexBuilder::new(pattern)
            .dot_matches_new_line(true)
            .build()
            .map(Matcher::Pattern)
    }

    fn is_match(&self, message: &str) -> bool {
        match self {
            Matcher::Contains(s) => message.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(message),
        }
    }
}

#[derive(Debug, Clone)]
enum Reply {
    Text(String),
    Fail(BackendError),
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: Matcher,
    reply: Reply,
    pub max_uses: Option<usize>,
}

impl ScriptRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Contains(needle.into()),
            reply: Reply::Text(response.into()),
            max_uses: None,
        }
    }

    /// Panics on an invalid regex; use [`Matcher::pattern`] for fallible
    /// construction.
    pub fn pattern(pattern: &str, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::pattern(pattern).expect("invalid script pattern"),
            reply: Reply::Text(response.into()),
            max_uses: None,
        }
    }

    /// A rule that fails with `error` instead of answering.
    pub fn failing(matcher: Matcher, error: BackendError) -> Self {
        Self {
            matcher,
            reply: Reply::Fail(error),
            max_uses: None,
        }
    }

    pub fn max_uses(mut self, n: usize) -> Self {
        self.max_uses = Some(n);
        self
    }

    pub fn response(&self) -> Option<&str> {
        match &self.reply {
            Reply::Text(t) => Some(t),
            Reply::Fail(_) => None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    contains: Option<String>,
    pattern: Option<String>,
    response: Option<String>,
    fail: Option<String>,
    max_uses: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    Wrapped { rules: Vec<RuleFile> },
    Bare(Vec<RuleFile>),
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptLoadError {
    #[error("cannot read script file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid script JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule {index}: {message}")]
    Rule { index: usize, message: String },
}

/// Answers each exchange with the first rule whose matcher accepts the last
/// user message. Rules with `max_uses` stop matching once used up.
///
/// Every call is recorded, so tests can assert on call counts and on the
/// exact prompts the engine produced.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    state: Mutex<State>,
}

#[derive(Debug, Default)]
struct State {
    uses: Vec<usize>,
    calls: Vec<String>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        let uses = vec![0; rules.len()];
        Self {
            rules,
            state: Mutex::new(State {
                uses,
                calls: Vec::new(),
            }),
        }
    }

    /// Parses `{"rules": [...]}` or a bare array of rules. Each rule has
    /// exactly one of `contains`/`pattern`, exactly one of `response`/`fail`,
    /// and an optional `max_uses`.
    pub fn from_json(json: &str) -> Result<Self, ScriptLoadError> {
        let file: ScriptFile = serde_json::from_str(json)?;
        let raw = match file {
            ScriptFile::Wrapped { rules } | ScriptFile::Bare(rules) => rules,
        };
        let mut rules = Vec::with_capacity(raw.len());
        for (index, r) in raw.into_iter().enumerate() {
            let bad = |message: &str| ScriptLoadError::Rule {
                index,
                message: message.to_string(),
            };
            let matcher = match (r.contains, r.pattern) {
                (Some(c), None) => Matcher::Contains(c),
                (None, Some(p)) => Matcher::pattern(&p).map_err(|e| bad(&e.to_string()))?,
                _ => return Err(bad("needs exactly one of `contains` or `pattern`")),
            };
            let reply = match (r.response, r.fail) {
                (Some(t), None) => Reply::Text(t),
                (None, Some(msg)) => Reply::Fail(BackendError::Transport(msg)),
                _ => return Err(bad("needs exactly one of `response` or `fail`")),
            };
            rules.push(ScriptRule {
                matcher,
                reply,
                max_uses: r.max_uses,
            });
        }
        Ok(Self::new(rules))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ScriptLoadError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().calls.len()
    }

    /// Last user message of every exchange seen so far, in call order.
    pub fn calls(&self) -> Vec<String> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn calls_with_prefix(&self, prefix: &str) -> usize {
        self.state
            .lock()
            .unwrap()
            .calls
            .iter()
            .filter(|c| c.starts_with(prefix))
            .count()
    }
}

impl ModelBackend for ScriptedBackend {
    fn complete(&self, exchange: &ChatExchange) -> Result<String, BackendError> {
        exchange.validate()?;
        let message = exchange.last_user_message().unwrap_or_default();
        let mut state = self.state.lock().unwrap();
        state.calls.push(message.to_string());
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.max_uses.is_some_and(|max| state.uses[i] >= max) {
                continue;
            }
            if rule.matcher.is_match(message) {
                state.uses[i] += 1;
                return match &rule.reply {
                    Reply::Text(t) => Ok(t.clone()),
                    Reply::Fail(e) => Err(e.clone()),
                };
            }
        }
        Err(BackendError::NoMatchingRule(
            message.chars().take(80).collect(),
        ))
    }
}
