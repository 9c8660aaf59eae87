//! Knowledge tagging by recursive, level-by-level model queries.
//!
//! Starting at the root's children, the model is shown one sibling set at a
//! time and picks the relevant nodes; each picked inner node is expanded the
//! same way, depth-first. Every root-to-leaf path reached becomes a tag.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError, SamplingParams};
use crate::knowledge::{KnowledgePath, KnowledgeTree, Question};
use crate::prompt::{Language, TemplateError, TemplateKind, TemplateSet};
use crate::reply::find_object;
use crate::text::collapse_whitespace;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 6;
pub const DEFAULT_BUDGET: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDecision {
    pub question_id: String,
    /// Node whose children were offered.
    pub parent_id: String,
    pub level_node_ids: Vec<String>,
    pub selected_node_ids: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagResult {
    pub question_id: String,
    pub paths: Vec<KnowledgePath>,
    pub decisions: Vec<TagDecision>,
    pub attempts_used: u32,
}

/// One line of the tagging output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TagRecord {
    Tagged(TagResult),
    Untagged {
        question_id: String,
        attempts_used: u32,
        last_error: String,
    },
}

impl TagRecord {
    pub fn question_id(&self) -> &str {
        match self {
            TagRecord::Tagged(r) => &r.question_id,
            TagRecord::Untagged { question_id, .. } => question_id,
        }
    }

    pub fn paths(&self) -> Option<&[KnowledgePath]> {
        match self {
            TagRecord::Tagged(r) => Some(&r.paths),
            TagRecord::Untagged { .. } => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TagReplyError {
    #[error("no JSON object with `knowledge_points` and `classification_reason` found")]
    NoObject,
    #[error("selected `{0}` is not one of the offered candidates")]
    UnknownCandidate(String),
}

#[derive(Debug, Error)]
pub enum TagError {
    #[error("unparsable reply at `{parent_id}`: {source}")]
    Reply {
        parent_id: String,
        #[source]
        source: TagReplyError,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("tagging exceeded its {0:?} budget")]
    Timeout(Duration),
}

#[derive(Debug, Error)]
#[error(
    "question `{question_id}` could not be tagged after {attempts_used} attempts: {last_error}"
)]
pub struct TagFailure {
    pub question_id: String,
    pub attempts_used: u32,
    pub last_error: String,
    /// Stopped early on a provider error that retrying cannot fix.
    pub fatal: bool,
}

/// Parsed tagging reply: positions into the candidate list, in candidate
/// order, plus the model's stated reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagReply {
    pub selected: Vec<usize>,
    pub reason: String,
}

impl TagReply {
    pub fn names<'a>(&self, candidates: &[&'a str]) -> Vec<&'a str> {
        self.selected.iter().map(|&i| candidates[i]).collect()
    }
}

/// Finds the first well-formed JSON object carrying a `knowledge_points`
/// string list and a `classification_reason` string, anywhere in `raw`
/// (prose and code fences around it are ignored). Names match candidates
/// exactly after whitespace normalization. An empty list is a valid reply.
pub fn parse_tag_reply(raw: &str, candidates: &[&str]) -> Result<TagReply, TagReplyError> {
    let (points, reason) = find_tag_object(raw).ok_or(TagReplyError::NoObject)?;
    let normalized: Vec<String> = candidates.iter().map(|c| collapse_whitespace(c)).collect();
    let mut selected = Vec::new();
    for name in points {
        let key = collapse_whitespace(&name);
        let idx = normalized
            .iter()
            .position(|c| *c == key)
            .ok_or(TagReplyError::UnknownCandidate(name))?;
        if !selected.contains(&idx) {
            selected.push(idx);
        }
    }
    selected.sort_unstable();
    Ok(TagReply { selected, reason })
}

#[derive(Deserialize)]
struct TagObject {
    knowledge_points: Vec<String>,
    classification_reason: String,
}

fn find_tag_object(raw: &str) -> Option<(Vec<String>, String)> {
    find_object::<TagObject>(raw).map(|o| (o.knowledge_points, o.classification_reason))
}

#[derive(Debug, Clone)]
pub struct TaggerConfig {
    pub include_answer: bool,
    pub max_attempts: u32,
    pub budget: Duration,
    pub params: SamplingParams,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        Self {
            include_answer: true,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            budget: DEFAULT_BUDGET,
            params: SamplingParams::greedy(),
        }
    }
}

pub struct Tagger<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: TaggerConfig,
}

impl<'a> Tagger<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateSet, config: TaggerConfig) -> Self {
        Self {
            gateway,
            templates,
            config,
        }
    }

    fn prompt(&self, question: &Question, candidates: &[&str]) -> Result<String, TemplateError> {
        let language = self.templates.language();
        let answer = if self.config.include_answer {
            question.reference_answer.clone()
        } else {
            match language {
                Language::Zh => "（未提供）".to_string(),
                Language::En => "(not provided)".to_string(),
            }
        };
        let points = serde_json::to_string(candidates).expect("names serialize");
        self.templates.render(
            TemplateKind::Tagging,
            &[
                ("field", question.subject.field_label(language)),
                ("question", &question.render()),
                ("answer", &answer),
                ("knowledge_points", &points),
            ],
        )
    }

    /// One tagging attempt, bounded by the configured wall-clock budget.
    pub async fn tag_question(
        &self,
        question: &Question,
        tree: &KnowledgeTree,
    ) -> Result<TagResult, TagError> {
        tokio::time::timeout(self.config.budget, self.traverse(question, tree))
            .await
            .map_err(|_| TagError::Timeout(self.config.budget))?
    }

    async fn traverse(
        &self,
        question: &Question,
        tree: &KnowledgeTree,
    ) -> Result<TagResult, TagError> {
        let mut decisions = Vec::new();
        let mut paths: Vec<KnowledgePath> = Vec::new();
        let mut stack = vec![Frame::Expand(tree.root().id.clone())];
        while let Some(frame) = stack.pop() {
            let parent_id = match frame {
                Frame::Leaf(id) => {
                    let path = tree.path_to_leaf(&id).expect("leaf ids come from the tree");
                    if !paths.contains(&path) {
                        paths.push(path);
                    }
                    continue;
                }
                Frame::Expand(id) => id,
            };
            let children = tree
                .children_of(&parent_id)
                .expect("parent ids come from the tree");
            let ids: Vec<&str> = children.iter().map(|(id, _)| *id).collect();
            let names: Vec<&str> = children.iter().map(|(_, name)| *name).collect();

            let prompt = self.prompt(question, &names)?;
            let outcome = self
                .gateway
                .complete_chat(&[ChatMessage::user(prompt)], &self.config.params)
                .await?;
            let reply =
                parse_tag_reply(&outcome.content, &names).map_err(|source| TagError::Reply {
                    parent_id: parent_id.clone(),
                    source,
                })?;

            let selected: Vec<&str> = reply.selected.iter().map(|&i| ids[i]).collect();
            // Reverse push keeps authored order when popping.
            for id in selected.iter().rev() {
                if tree.is_leaf(id) == Some(true) {
                    stack.push(Frame::Leaf(id.to_string()));
                } else {
                    stack.push(Frame::Expand(id.to_string()));
                }
            }
            decisions.push(TagDecision {
                question_id: question.id.clone(),
                parent_id,
                level_node_ids: ids.iter().map(|s| s.to_string()).collect(),
                selected_node_ids: selected.iter().map(|s| s.to_string()).collect(),
                reason: reply.reason,
            });
        }
        Ok(TagResult {
            question_id: question.id.clone(),
            paths,
            decisions,
            attempts_used: 1,
        })
    }

    /// Reruns [`Self::tag_question`] until it succeeds or `max_attempts`
    /// attempts are spent. Fatal provider errors stop the loop at once.
    pub async fn tag_with_retries(
        &self,
        question: &Question,
        tree: &KnowledgeTree,
    ) -> Result<TagResult, TagFailure> {
        let max = self.config.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max {
            match self.tag_question(question, tree).await {
                Ok(mut result) => {
                    result.attempts_used = attempt;
                    return Ok(result);
                }
                Err(TagError::Gateway(e)) if e.is_fatal() => {
                    return Err(TagFailure {
                        question_id: question.id.clone(),
                        attempts_used: attempt,
                        last_error: e.to_string(),
                        fatal: true,
                    });
                }
                Err(e) => {
                    tracing::warn!(question = %question.id, attempt, "tagging attempt failed: {e}");
                    last_error = e.to_string();
                }
            }
        }
        Err(TagFailure {
            question_id: question.id.clone(),
            attempts_used: max,
            last_error,
            fatal: false,
        })
    }

    /// Like [`Self::tag_with_retries`], but a question that runs out of
    /// attempts becomes an `Untagged` record. Only fatal failures are errors.
    pub async fn tag_record(
        &self,
        question: &Question,
        tree: &KnowledgeTree,
    ) -> Result<TagRecord, TagFailure> {
        match self.tag_with_retries(question, tree).await {
            Ok(r) => Ok(TagRecord::Tagged(r)),
            Err(f) if f.fatal => Err(f),
            Err(f) => Ok(TagRecord::Untagged {
                question_id: f.question_id,
                attempts_used: f.attempts_used,
                last_error: f.last_error,
            }),
        }
    }
}

enum Frame {
    Expand(String),
    Leaf(String),
}
