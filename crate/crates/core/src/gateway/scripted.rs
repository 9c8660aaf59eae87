//! Deterministic in-process provider for tests and offline runs.
//!
//! A script is either an ordered list of rules (first matching rule wins) or
//! a plain sequence of steps (step `i` answers call `i`). A call that no rule
//! matches is an explicit error, never a silent default.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ProviderError, ProviderReply, Role, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Any,
    /// Substring of any message content.
    Contains(String),
    SystemContains(String),
    LastUserContains(String),
    All(Vec<Matcher>),
    Not(Box<Matcher>),
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher::Contains(s.into())
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Contains(s) => request
                .messages
                .iter()
                .any(|m| m.content.contains(s.as_str())),
            Matcher::SystemContains(s) => request
                .messages
                .iter()
                .any(|m| m.role == Role::System && m.content.contains(s.as_str())),
            Matcher::LastUserContains(s) => request
                .messages
                .iter()
                .rev()
                .find(|m| m.role == Role::User)
                .is_some_and(|m| m.content.contains(s.as_str())),
            Matcher::All(ms) => ms.iter().all(|m| m.matches(request)),
            Matcher::Not(m) => !m.matches(request),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transient,
    Auth,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Reply(String),
    Fail(FailureKind),
}

impl Step {
    pub fn reply(s: impl Into<String>) -> Self {
        Step::Reply(s.into())
    }
}

/// How a rule with several steps picks one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Per-rule firing counter, cycling through the steps.
    #[default]
    Counter,
    /// `seed mod len` of the request's sampling seed, falling back to the
    /// counter when no seed is sent. Order-independent under concurrency.
    Seed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub when: Matcher,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub select: Selection,
}

impl Rule {
    pub fn new(when: Matcher, reply: impl Into<String>) -> Self {
        Self {
            when,
            steps: vec![Step::Reply(reply.into())],
            select: Selection::Counter,
        }
    }

    pub fn cycle(when: Matcher, steps: Vec<Step>, select: Selection) -> Self {
        Self {
            when,
            steps,
            select,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Script {
    Rules { rules: Vec<Rule> },
    Sequence { steps: Vec<Step> },
}

impl Script {
    pub fn rules(rules: Vec<Rule>) -> Self {
        Script::Rules { rules }
    }

    pub fn sequence(steps: Vec<Step>) -> Self {
        Script::Sequence { steps }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read script {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid script {}: {e}", path.display()))
    }

    fn is_empty(&self) -> bool {
        match self {
            Script::Rules { rules } => rules.is_empty() || rules.iter().any(|r| r.steps.is_empty()),
            Script::Sequence { steps } => steps.is_empty(),
        }
    }
}

pub struct ScriptedProvider {
    script: Script,
    counters: Vec<AtomicUsize>,
    sequence_pos: AtomicUsize,
    latency: Duration,
    calls: Mutex<Vec<ChatRequest>>,
}

impl std::fmt::Debug for ScriptedProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedProvider")
            .field("script", &self.script)
            .finish_non_exhaustive()
    }
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Result<Self, String> {
        if script.is_empty() {
            return Err("script is empty".into());
        }
        let n = match &script {
            Script::Rules { rules } => rules.len(),
            Script::Sequence { .. } => 0,
        };
        Ok(Self {
            script,
            counters: (0..n).map(|_| AtomicUsize::new(0)).collect(),
            sequence_pos: AtomicUsize::new(0),
            latency: Duration::ZERO,
            calls: Mutex::new(Vec::new()),
        })
    }

    /// Sleeps for `latency` on every call and reports it as the latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    fn pick(&self, request: &ChatRequest) -> Result<Step, ProviderError> {
        match &self.script {
            Script::Sequence { steps } => {
                let i = self.sequence_pos.fetch_add(1, Ordering::SeqCst);
                steps.get(i).cloned().ok_or_else(|| {
                    ProviderError::ScriptMiss(format!(
                        "sequence exhausted after {} steps",
                        steps.len()
                    ))
                })
            }
            Script::Rules { rules } => {
                let (i, rule) = rules
                    .iter()
                    .enumerate()
                    .find(|(_, r)| r.when.matches(request))
                    .ok_or_else(|| {
                        let last = request
                            .messages
                            .last()
                            .map(|m| m.content.as_str())
                            .unwrap_or("");
                        let snippet: String = last.chars().take(80).collect();
                        ProviderError::ScriptMiss(format!(
                            "no rule matched request ending with `{snippet}`"
                        ))
                    })?;
                let fired = self.counters[i].fetch_add(1, Ordering::SeqCst);
                let idx = match (rule.select, request.params.seed) {
                    (Selection::Seed, Some(seed)) => (seed % rule.steps.len() as u64) as usize,
                    _ => fired % rule.steps.len(),
                };
                Ok(rule.steps[idx].clone())
            }
        }
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        self.calls.lock().unwrap().push(request.clone());
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        match self.pick(request)? {
            Step::Reply(content) => Ok(ProviderReply {
                content,
                usage: Usage::default(),
                latency: Some(self.latency),
            }),
            Step::Fail(FailureKind::Transient) => Err(ProviderError::Transient(
                "scripted transient failure".into(),
            )),
            Step::Fail(FailureKind::Auth) => {
                Err(ProviderError::Auth("scripted auth failure".into()))
            }
            Step::Fail(FailureKind::Malformed) => {
                Err(ProviderError::Malformed("scripted malformed body".into()))
            }
        }
    }
}
