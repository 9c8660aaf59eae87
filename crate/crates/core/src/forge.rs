//! Difficulty-graded example problems per knowledge path, with a
//! verify-and-regenerate loop.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, Gateway, GatewayError, SamplingParams};
use crate::knowledge::{DifficultyLevel, ExampleOrigin, ExampleProblem, KnowledgePath, Subject};
use crate::prompt::{Language, TemplateError, TemplateKind, TemplateSet};
use crate::reply::{find_object, scalar_text};

pub const DEFAULT_MAX_ROUNDS: u32 = 5;

/// Source of candidate material for a path. `query` is the path's display
/// string.
#[async_trait]
pub trait Retrieval: Send + Sync {
    async fn candidates(&self, query: &str, level: DifficultyLevel) -> Result<Vec<String>, String>;
}

/// Fixed candidate lists keyed by (path display, level), e.g. loaded from a
/// file prepared offline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StaticRetrieval {
    entries: BTreeMap<String, BTreeMap<u8, Vec<String>>>,
}

impl StaticRetrieval {
    pub fn insert(
        &mut self,
        query: impl Into<String>,
        level: DifficultyLevel,
        candidates: Vec<String>,
    ) {
        self.entries
            .entry(query.into())
            .or_default()
            .insert(level.get(), candidates);
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[async_trait]
impl Retrieval for StaticRetrieval {
    async fn candidates(&self, query: &str, level: DifficultyLevel) -> Result<Vec<String>, String> {
        Ok(self
            .entries
            .get(query)
            .and_then(|m| m.get(&level.get()))
            .cloned()
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub alignment_ok: bool,
    pub correctness_ok: bool,
    pub difficulty_ok: bool,
    #[serde(default)]
    pub notes: String,
}

impl VerificationVerdict {
    pub fn accepted(&self) -> bool {
        self.alignment_ok && self.correctness_ok && self.difficulty_ok
    }

    fn rejected(notes: String) -> Self {
        Self {
            alignment_ok: false,
            correctness_ok: false,
            difficulty_ok: false,
            notes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeStatus {
    Forged,
    Unforged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelHistory {
    pub level: DifficultyLevel,
    pub verdicts: Vec<VerificationVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForgeRecord {
    pub path: KnowledgePath,
    pub status: ForgeStatus,
    /// Verification rounds run.
    pub rounds: u32,
    /// Latest item per level, in level order. An unforged record may lack
    /// levels whose output never parsed.
    pub items: Vec<ExampleProblem>,
    pub verdicts: Vec<LevelHistory>,
}

impl ForgeRecord {
    pub fn is_forged(&self) -> bool {
        self.status == ForgeStatus::Forged
    }

    /// Items usable for teaching: verified ones, and only from forged paths.
    pub fn verified_items(&self) -> Vec<&ExampleProblem> {
        if !self.is_forged() {
            return Vec::new();
        }
        self.items.iter().filter(|i| i.verified).collect()
    }
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("unparsable {level} item: {reason}")]
    UnparsableItem {
        level: DifficultyLevel,
        reason: String,
    },
    #[error("unparsable verdict for {level} item")]
    UnparsableVerdict { level: DifficultyLevel },
    #[error("retrieval failed: {0}")]
    Retrieval(String),
    #[error("max_rounds must be at least 1")]
    ZeroRounds,
}

#[derive(Deserialize)]
struct ItemObject {
    statement: String,
    #[serde(deserialize_with = "scalar_text")]
    answer: String,
    solution: String,
}

#[derive(Deserialize)]
struct NormalizedObject {
    usable: bool,
}

/// Parses `{statement, answer, solution}`; every field must be present and
/// non-empty.
pub fn parse_item(raw: &str) -> Result<(String, String, String), String> {
    let obj: ItemObject =
        find_object(raw).ok_or("no JSON object with statement, answer and solution")?;
    for (name, value) in [
        ("statement", &obj.statement),
        ("answer", &obj.answer),
        ("solution", &obj.solution),
    ] {
        if value.trim().is_empty() {
            return Err(format!("missing {name}"));
        }
    }
    Ok((obj.statement, obj.answer, obj.solution))
}

pub fn parse_verdict(raw: &str) -> Option<VerificationVerdict> {
    find_object(raw)
}

#[derive(Debug, Clone)]
pub struct ForgeConfig {
    pub max_rounds: u32,
    pub params: SamplingParams,
    pub verifier_params: SamplingParams,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            params: SamplingParams::default(),
            verifier_params: SamplingParams::greedy(),
        }
    }
}

fn level_label(level: DifficultyLevel, language: Language) -> &'static str {
    match (language, level.get()) {
        (Language::Zh, 1) => "第1级（课堂练习）",
        (Language::Zh, 2) => "第2级（单元测验）",
        (Language::Zh, _) => "第3级（高考难度）",
        (Language::En, 1) => "Level 1 (in-class exercise)",
        (Language::En, 2) => "Level 2 (unit quiz)",
        (Language::En, _) => "Level 3 (exam-comparable)",
    }
}

fn level_rubric(level: DifficultyLevel, language: Language) -> &'static str {
    match (language, level.get()) {
        (Language::Zh, 1) => "直接运用该知识点即可求解的基础题，步骤少，适合课堂当堂练习。",
        (Language::Zh, 2) => "需要把该知识点与相关知识结合、包含多个推理步骤的单元测验题。",
        (Language::Zh, _) => "综合性与思维量与高考真题相当的题目。",
        (Language::En, 1) => "A basic problem solvable by direct use of the knowledge point, with few steps, suitable as an in-class exercise.",
        (Language::En, 2) => "A unit-quiz problem that combines the knowledge point with related material and takes several reasoning steps.",
        (Language::En, _) => "A problem whose breadth and reasoning load match a real Gaokao exam item.",
    }
}

fn level_constraints(level: DifficultyLevel, language: Language) -> &'static str {
    match (language, level.get()) {
        (Language::Zh, 3) => "限制：不得照搬任何高考真题原题，必须是原创题或经过实质改编的题目。",
        (Language::En, 3) => {
            "Constraint: do not reproduce any official Gaokao exam item verbatim; the problem must be original or substantially adapted."
        }
        _ => "",
    }
}

fn feedback_text(previous: Option<&ExampleProblem>, notes: &str, language: Language) -> String {
    let previous = previous.map(|p| p.statement.as_str()).unwrap_or("");
    match language {
        Language::Zh => format!(
            "上一版题目未通过审核，请据此修改或重新编写。\n上一版题目：{previous}\n审核意见：{notes}\n"
        ),
        Language::En => format!(
            "A previous version was rejected by the reviewer; revise or rewrite it accordingly.\nPrevious version: {previous}\nReviewer notes: {notes}\n"
        ),
    }
}

pub struct Forge<'a> {
    generator: &'a Gateway,
    verifier: &'a Gateway,
    retrieval: Option<&'a dyn Retrieval>,
    templates: &'a TemplateSet,
    subject: Subject,
    config: ForgeConfig,
}

impl<'a> Forge<'a> {
    pub fn new(
        generator: &'a Gateway,
        verifier: &'a Gateway,
        templates: &'a TemplateSet,
        subject: Subject,
        config: ForgeConfig,
    ) -> Self {
        Self {
            generator,
            verifier,
            retrieval: None,
            templates,
            subject,
            config,
        }
    }

    pub fn with_retrieval(mut self, retrieval: &'a dyn Retrieval) -> Self {
        self.retrieval = Some(retrieval);
        self
    }

    fn language(&self) -> Language {
        self.templates.language()
    }

    fn field(&self) -> &str {
        self.subject.field_label(self.language())
    }

    async fn ask(
        &self,
        gateway: &Gateway,
        prompt: String,
        params: &SamplingParams,
    ) -> Result<String, ForgeError> {
        let out = gateway
            .complete_chat(&[ChatMessage::user(prompt)], params)
            .await?;
        Ok(out.content)
    }

    fn item(
        &self,
        path: &KnowledgePath,
        level: DifficultyLevel,
        parts: (String, String, String),
        origin: ExampleOrigin,
    ) -> ExampleProblem {
        let (statement, answer, solution) = parts;
        ExampleProblem {
            path: path.clone(),
            level,
            statement,
            answer,
            solution,
            origin,
            verified: false,
        }
    }

    async fn retrieved_draft(
        &self,
        path: &KnowledgePath,
        level: DifficultyLevel,
    ) -> Result<Option<ExampleProblem>, ForgeError> {
        let Some(retrieval) = self.retrieval else {
            return Ok(None);
        };
        let candidates = retrieval
            .candidates(&path.display, level)
            .await
            .map_err(ForgeError::Retrieval)?;
        if candidates.is_empty() {
            return Ok(None);
        }
        let listing = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("[{}] {}", i + 1, c.trim()))
            .collect::<Vec<_>>()
            .join("\n\n");
        let language = self.language();
        let prompt = self.templates.render(
            TemplateKind::NormalizeRetrieved,
            &[
                ("field", self.field()),
                ("knowledge_path", &path.display),
                ("level", level_label(level, language)),
                ("level_rubric", level_rubric(level, language)),
                ("candidates", &listing),
            ],
        )?;
        let raw = self
            .ask(self.generator, prompt, &self.config.params)
            .await?;
        let Some(obj) = find_object::<NormalizedObject>(&raw) else {
            return Err(ForgeError::UnparsableItem {
                level,
                reason: "normalizer reply has no `usable` object".into(),
            });
        };
        if !obj.usable {
            return Ok(None);
        }
        let parts =
            parse_item(&raw).map_err(|reason| ForgeError::UnparsableItem { level, reason })?;
        Ok(Some(self.item(
            path,
            level,
            parts,
            ExampleOrigin::Retrieved,
        )))
    }

    async fn generate(
        &self,
        path: &KnowledgePath,
        level: DifficultyLevel,
        feedback: &str,
    ) -> Result<ExampleProblem, ForgeError> {
        let language = self.language();
        let prompt = self.templates.render(
            TemplateKind::GenerateItem,
            &[
                ("field", self.field()),
                ("knowledge_path", &path.display),
                ("level", level_label(level, language)),
                ("level_rubric", level_rubric(level, language)),
                ("constraints", level_constraints(level, language)),
                ("feedback", feedback),
            ],
        )?;
        let raw = self
            .ask(self.generator, prompt, &self.config.params)
            .await?;
        let parts =
            parse_item(&raw).map_err(|reason| ForgeError::UnparsableItem { level, reason })?;
        Ok(self.item(path, level, parts, ExampleOrigin::Generated))
    }

    async fn first_draft(
        &self,
        path: &KnowledgePath,
        level: DifficultyLevel,
    ) -> Result<ExampleProblem, ForgeError> {
        match self.retrieved_draft(path, level).await? {
            Some(item) => Ok(item),
            None => self.generate(path, level, "").await,
        }
    }

    /// One unverified item per level, retrieved where the retrieval source
    /// has usable material and generated otherwise.
    pub async fn generate_examples(
        &self,
        path: &KnowledgePath,
    ) -> Result<Vec<ExampleProblem>, ForgeError> {
        let mut items = Vec::with_capacity(3);
        for level in DifficultyLevel::ALL {
            items.push(self.first_draft(path, level).await?);
        }
        Ok(items)
    }

    pub async fn verify_example(
        &self,
        item: &ExampleProblem,
    ) -> Result<VerificationVerdict, ForgeError> {
        let language = self.language();
        let prompt = self.templates.render(
            TemplateKind::VerifyItem,
            &[
                ("field", self.field()),
                ("knowledge_path", &item.path.display),
                ("level", level_label(item.level, language)),
                ("level_rubric", level_rubric(item.level, language)),
                ("statement", &item.statement),
                ("answer", &item.answer),
                ("solution", &item.solution),
            ],
        )?;
        let raw = self
            .ask(self.verifier, prompt, &self.config.verifier_params)
            .await?;
        parse_verdict(&raw).ok_or(ForgeError::UnparsableVerdict { level: item.level })
    }

    /// Drafts, verifies and regenerates until every level is accepted or
    /// `max_rounds` verification rounds are spent. Unparsable drafts or
    /// verdicts count as a rejected round; provider failures abort.
    pub async fn forge_with_repair(&self, path: &KnowledgePath) -> Result<ForgeRecord, ForgeError> {
        let max_rounds = self.config.max_rounds;
        if max_rounds == 0 {
            return Err(ForgeError::ZeroRounds);
        }
        let mut items: Vec<Option<ExampleProblem>> = vec![None, None, None];
        let mut history: Vec<Vec<VerificationVerdict>> = vec![Vec::new(), Vec::new(), Vec::new()];
        let mut accepted = [false; 3];
        let mut rounds = 0;

        while rounds < max_rounds && accepted.iter().any(|a| !a) {
            rounds += 1;
            for level in DifficultyLevel::ALL {
                let i = level.index();
                if accepted[i] {
                    continue;
                }
                let draft = if rounds == 1 {
                    self.first_draft(path, level).await
                } else {
                    let notes = history[i].last().map(|v| v.notes.as_str()).unwrap_or("");
                    let feedback = feedback_text(items[i].as_ref(), notes, self.language());
                    self.generate(path, level, &feedback).await
                };
                let verdict = match draft {
                    Ok(item) => {
                        let verdict = match self.verify_example(&item).await {
                            Ok(v) => v,
                            Err(ForgeError::UnparsableVerdict { .. }) => {
                                VerificationVerdict::rejected(
                                    "verifier reply was unparsable".into(),
                                )
                            }
                            Err(e) => return Err(e),
                        };
                        items[i] = Some(item);
                        verdict
                    }
                    Err(ForgeError::UnparsableItem { reason, .. }) => {
                        VerificationVerdict::rejected(format!("draft was unparsable: {reason}"))
                    }
                    Err(e) => return Err(e),
                };
                accepted[i] = verdict.accepted();
                history[i].push(verdict);
            }
        }

        let forged = accepted.iter().all(|a| *a);
        if !forged {
            tracing::warn!(path = %path.display, rounds, "path left unforged");
        }
        let items = items
            .into_iter()
            .zip(accepted)
            .filter_map(|(item, ok)| item.map(|it| ExampleProblem { verified: ok, ..it }))
            .collect();
        Ok(ForgeRecord {
            path: path.clone(),
            status: if forged {
                ForgeStatus::Forged
            } else {
                ForgeStatus::Unforged
            },
            rounds,
            items,
            verdicts: DifficultyLevel::ALL
                .into_iter()
                .zip(history)
                .map(|(level, verdicts)| LevelHistory { level, verdicts })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fixtures::math_tree;
    use crate::gateway::{FailureKind, Matcher, Rule, Script, ScriptedProvider, Selection, Step};

    const L1: &str = "第1级";
    const L2: &str = "第2级";
    const L3: &str = "第3级";

    fn item_json(tag: &str) -> String {
        serde_json::json!({"statement": format!("题目 {tag}"), "answer": 3, "solution": "步骤"})
            .to_string()
    }

    fn verdict(a: bool, c: bool, d: bool, notes: &str) -> String {
        serde_json::json!({"alignment_ok": a, "correctness_ok": c, "difficulty_ok": d, "notes": notes}).to_string()
    }

    fn accept() -> String {
        verdict(true, true, true, "")
    }

    fn provider(rules: Vec<Rule>) -> Arc<ScriptedProvider> {
        Arc::new(ScriptedProvider::new(Script::rules(rules)).unwrap())
    }

    fn generator_rules() -> Vec<Rule> {
        vec![
            Rule::new(Matcher::contains(L1), item_json("一")),
            Rule::new(Matcher::contains(L2), item_json("二")),
            Rule::new(Matcher::contains(L3), item_json("三")),
        ]
    }

    fn path() -> KnowledgePath {
        math_tree().path_to_leaf("fn-monotonic").unwrap()
    }

    struct Setup {
        generator: Gateway,
        verifier: Gateway,
        gen_p: Arc<ScriptedProvider>,
        ver_p: Arc<ScriptedProvider>,
        templates: TemplateSet,
    }

    fn setup(gen_rules: Vec<Rule>, ver_rules: Vec<Rule>) -> Setup {
        let gen_p = provider(gen_rules);
        let ver_p = provider(ver_rules);
        Setup {
            generator: Gateway::scripted("gen", gen_p.clone()),
            verifier: Gateway::scripted("ver", ver_p.clone()),
            gen_p,
            ver_p,
            templates: TemplateSet::builtin(Language::Zh),
        }
    }

    impl Setup {
        fn forge(&self) -> Forge<'_> {
            Forge::new(
                &self.generator,
                &self.verifier,
                &self.templates,
                Subject::mathematics(),
                ForgeConfig::default(),
            )
        }
    }

    fn history_lens(r: &ForgeRecord) -> Vec<usize> {
        r.verdicts.iter().map(|h| h.verdicts.len()).collect()
    }

    #[tokio::test]
    async fn all_accepted_in_round_one() {
        let s = setup(generator_rules(), vec![Rule::new(Matcher::Any, accept())]);
        let r = s.forge().forge_with_repair(&path()).await.unwrap();
        assert_eq!(r.status, ForgeStatus::Forged);
        assert_eq!(r.rounds, 1);
        let levels: Vec<u8> = r.items.iter().map(|i| i.level.get()).collect();
        assert_eq!(levels, [1, 2, 3]);
        assert!(r
            .items
            .iter()
            .all(|i| i.verified && i.origin == ExampleOrigin::Generated));
        assert_eq!(r.items[0].answer, "3");
        assert_eq!(r.verified_items().len(), 3);
        assert_eq!(history_lens(&r), [1, 1, 1]);
    }

    #[tokio::test]
    async fn level_two_rejected_once_takes_two_rounds() {
        let two_phase = Rule::cycle(
            Matcher::contains(L2),
            vec![
                Step::reply(verdict(true, true, false, "太简单")),
                Step::reply(accept()),
            ],
            Selection::Counter,
        );
        let s = setup(
            generator_rules(),
            vec![two_phase, Rule::new(Matcher::Any, accept())],
        );
        let r = s.forge().forge_with_repair(&path()).await.unwrap();
        assert_eq!(r.status, ForgeStatus::Forged);
        assert_eq!(r.rounds, 2);
        assert_eq!(history_lens(&r), [1, 2, 1]);
        assert!(!r.verdicts[1].verdicts[0].accepted());
        assert_eq!(s.gen_p.call_count(), 4);
        assert_eq!(s.ver_p.call_count(), 4);
        let regen = &s.gen_p.calls()[3].messages[0].content;
        assert!(regen.contains("审核意见：太简单"));
        assert!(regen.contains("上一版题目：题目 二"));
    }

    #[tokio::test]
    async fn always_rejecting_verifier_leaves_path_unforged_after_five_rounds() {
        let s = setup(
            generator_rules(),
            vec![Rule::new(Matcher::Any, verdict(false, true, true, "偏题"))],
        );
        let r = s.forge().forge_with_repair(&path()).await.unwrap();
        assert_eq!(r.status, ForgeStatus::Unforged);
        assert_eq!(r.rounds, 5);
        assert_eq!(history_lens(&r), [5, 5, 5]);
        assert_eq!(s.ver_p.call_count(), 15);
        assert!(r.items.iter().all(|i| !i.verified));
        assert!(r.verified_items().is_empty());
    }

    #[tokio::test]
    async fn unparsable_draft_consumes_a_round() {
        let mut rules = generator_rules();
        rules[0] = Rule::cycle(
            Matcher::contains(L1),
            vec![Step::reply("抱歉"), Step::reply(item_json("一"))],
            Selection::Counter,
        );
        let s = setup(rules, vec![Rule::new(Matcher::Any, accept())]);
        let r = s.forge().forge_with_repair(&path()).await.unwrap();
        assert_eq!(r.rounds, 2);
        assert_eq!(history_lens(&r), [2, 1, 1]);
        assert!(r.verdicts[0].verdicts[0].notes.contains("unparsable"));
        assert!(r.is_forged());
    }

    #[tokio::test]
    async fn unparsable_verdict_counts_as_rejection() {
        let flaky = Rule::cycle(
            Matcher::contains(L3),
            vec![
                Step::reply(r#"{"alignment_ok": true}"#),
                Step::reply(accept()),
            ],
            Selection::Counter,
        );
        let s = setup(
            generator_rules(),
            vec![flaky, Rule::new(Matcher::Any, accept())],
        );
        let r = s.forge().forge_with_repair(&path()).await.unwrap();
        assert_eq!(history_lens(&r), [1, 1, 2]);
    }

    #[tokio::test]
    async fn retrieval_for_level_one_only() {
        let normalizer = Rule::new(
            Matcher::contains("CANDIDATE-X"),
            serde_json::json!({"usable": true, "statement": "检索题", "answer": "B", "solution": "解"}).to_string(),
        );
        let mut rules = vec![normalizer];
        rules.extend(generator_rules());
        let s = setup(rules, vec![Rule::new(Matcher::Any, accept())]);
        let mut retrieval = StaticRetrieval::default();
        retrieval.insert(
            path().display,
            DifficultyLevel::ALL[0],
            vec!["CANDIDATE-X 原始材料".into()],
        );
        let items = s
            .forge()
            .with_retrieval(&retrieval)
            .generate_examples(&path())
            .await
            .unwrap();
        let origins: Vec<ExampleOrigin> = items.iter().map(|i| i.origin).collect();
        assert_eq!(
            origins,
            [
                ExampleOrigin::Retrieved,
                ExampleOrigin::Generated,
                ExampleOrigin::Generated
            ]
        );
        assert_eq!(items[0].statement, "检索题");
    }

    #[tokio::test]
    async fn unusable_retrieval_falls_back_to_generation() {
        let mut rules = vec![Rule::new(
            Matcher::contains("CANDIDATE-X"),
            r#"{"usable": false}"#,
        )];
        rules.extend(generator_rules());
        let s = setup(rules, vec![Rule::new(Matcher::Any, accept())]);
        let mut retrieval = StaticRetrieval::default();
        for level in DifficultyLevel::ALL {
            retrieval.insert(path().display, level, vec!["CANDIDATE-X".into()]);
        }
        let items = s
            .forge()
            .with_retrieval(&retrieval)
            .generate_examples(&path())
            .await
            .unwrap();
        assert!(items.iter().all(|i| i.origin == ExampleOrigin::Generated));
        assert_eq!(s.gen_p.call_count(), 6);
    }

    #[tokio::test]
    async fn item_without_solution_is_unparsable() {
        let rules = vec![Rule::new(
            Matcher::Any,
            r#"{"statement": "s", "answer": "a"}"#,
        )];
        let s = setup(rules, vec![Rule::new(Matcher::Any, accept())]);
        let err = s.forge().generate_examples(&path()).await.unwrap_err();
        assert!(matches!(err, ForgeError::UnparsableItem { .. }));
        assert!(
            parse_item(r#"{"statement": "s", "answer": "a", "solution": " "}"#)
                .unwrap_err()
                .contains("solution")
        );
    }

    #[tokio::test]
    async fn verify_parses_the_three_judgments() {
        let s = setup(
            generator_rules(),
            vec![
                Rule::new(Matcher::contains(L1), verdict(true, true, false, "难度")),
                Rule::new(
                    Matcher::Any,
                    r#"{"alignment_ok": true, "correctness_ok": true}"#,
                ),
            ],
        );
        let forge = s.forge();
        let items = forge.generate_examples(&path()).await.unwrap();
        let v = forge.verify_example(&items[0]).await.unwrap();
        assert!(v.alignment_ok && v.correctness_ok && !v.difficulty_ok);
        assert!(!v.accepted());
        let err = forge.verify_example(&items[1]).await.unwrap_err();
        assert!(matches!(err, ForgeError::UnparsableVerdict { .. }));
    }

    #[tokio::test]
    async fn only_level_three_carries_the_reuse_constraint() {
        let s = setup(generator_rules(), vec![Rule::new(Matcher::Any, accept())]);
        s.forge().generate_examples(&path()).await.unwrap();
        let calls = s.gen_p.calls();
        let has = |i: usize| calls[i].messages[0].content.contains("不得照搬");
        assert!(!has(0) && !has(1) && has(2));
    }

    #[tokio::test]
    async fn provider_failure_is_fatal() {
        let auth = Rule::cycle(
            Matcher::Any,
            vec![Step::Fail(FailureKind::Auth)],
            Selection::Counter,
        );
        let s = setup(vec![auth], vec![Rule::new(Matcher::Any, accept())]);
        let err = s.forge().forge_with_repair(&path()).await;
        assert!(matches!(err, Err(ForgeError::Gateway(_))));
    }
}
