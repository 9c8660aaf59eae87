use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::evaluator::{EvaluationConfig, GradingPolicy, DEFAULT_KS};
use crate::forge::DEFAULT_MAX_ROUNDS;
use crate::gateway::{ModelEndpoint, SamplingParams, DEFAULT_CONCURRENCY};
use crate::prompt::Language;
use crate::tagger::{DEFAULT_BUDGET, DEFAULT_MAX_ATTEMPTS};
use crate::teaching::{TeachingMode, DEFAULT_TURN_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub tree: PathBuf,
    /// One question record per line.
    pub questions: PathBuf,
    /// Expected per-subject counts, checked after loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Directory of `<lang>/<template>.txt` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts_dir: Option<PathBuf>,
    /// Candidate example problems keyed by path display and level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<PathBuf>,
}

/// Endpoint names per role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    /// Needed only when some question arrives without tags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<String>,
    pub student: String,
}

impl Roles {
    fn named(&self) -> Vec<(&'static str, &str)> {
        let optional = [
            ("tagger", &self.tagger),
            ("generator", &self.generator),
            ("verifier", &self.verifier),
            ("teacher", &self.teacher),
        ];
        let mut out: Vec<(&'static str, &str)> = optional
            .into_iter()
            .filter_map(|(role, name)| name.as_deref().map(|n| (role, n)))
            .collect();
        out.push(("student", &self.student));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggingSection {
    pub include_answer: bool,
    pub max_attempts: u32,
    pub budget_secs: u64,
    pub params: SamplingParams,
}

impl Default for TaggingSection {
    fn default() -> Self {
        Self {
            include_answer: true,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            budget_secs: DEFAULT_BUDGET.as_secs(),
            params: SamplingParams::greedy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeSection {
    pub max_rounds: u32,
    pub params: SamplingParams,
    pub verifier_params: SamplingParams,
}

impl Default for ForgeSection {
    fn default() -> Self {
        Self {
            max_rounds: DEFAULT_MAX_ROUNDS,
            params: SamplingParams::default(),
            verifier_params: SamplingParams::greedy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeachingSection {
    pub turn_cap: u32,
    /// Independent sessions per question; 0 runs the baselines only.
    pub sessions: u32,
    pub mode: TeachingMode,
    pub teacher_params: SamplingParams,
    pub student_params: SamplingParams,
}

impl Default for TeachingSection {
    fn default() -> Self {
        Self {
            turn_cap: DEFAULT_TURN_CAP,
            sessions: 3,
            mode: TeachingMode::KnowledgeOnly,
            teacher_params: SamplingParams::default(),
            student_params: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub samples_per_session: u32,
    pub ks: Vec<u32>,
    pub params: SamplingParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub surplus: u32,
    /// Also sample with the knowledge points in the student's system prompt.
    pub knowledge_only: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            samples_per_session: 64,
            ks: DEFAULT_KS.to_vec(),
            params: SamplingParams::default(),
            seed: None,
            surplus: 8,
            knowledge_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default)]
    pub language: Language,
    /// Row label for the teacher in reports; defaults to the teacher endpoint name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Parent directory for run directories named by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub data: DataConfig,
    pub endpoints: BTreeMap<String, ModelEndpoint>,
    pub roles: Roles,
    #[serde(default)]
    pub tagging: TaggingSection,
    #[serde(default)]
    pub forge: ForgeSection,
    #[serde(default)]
    pub teaching: TeachingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl HarnessConfig {
    /// Parses a TOML config, resolves relative paths against the file's
    /// directory and validates the result.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let mut config: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for (key, endpoint) in &mut config.endpoints {
            if endpoint.name.is_empty() {
                endpoint.name = key.clone();
            }
        }
        Ok(config)
    }

    /// Rewrites every relative input path as `base.join(path)`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.for_each_path(fix);
    }

    pub(crate) fn for_each_path(&mut self, mut f: impl FnMut(&mut PathBuf)) {
        f(&mut self.data.tree);
        f(&mut self.data.questions);
        for p in [
            &mut self.data.manifest,
            &mut self.data.prompts_dir,
            &mut self.data.retrieval,
            &mut self.output_root,
        ]
        .into_iter()
        .flatten()
        {
            f(p);
        }
        for endpoint in self.endpoints.values_mut() {
            if let Some(p) = &mut endpoint.script {
                f(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.concurrency == 0 {
            return Err(invalid("concurrency must be at least 1"));
        }
        for (key, endpoint) in &self.endpoints {
            if &endpoint.name != key {
                return Err(invalid(format!(
                    "endpoint `{key}` declares a different name `{}`",
                    endpoint.name
                )));
            }
            endpoint.validate().map_err(invalid)?;
        }
        for (role, name) in self.roles.named() {
            if !self.endpoints.contains_key(name) {
                return Err(invalid(format!(
                    "role `{role}` names unknown endpoint `{name}`"
                )));
            }
        }
        let teaching = &self.teaching;
        if teaching.turn_cap == 0 {
            return Err(invalid("teaching.turn_cap must be at least 1"));
        }
        if teaching.sessions > 0 && self.roles.teacher.is_none() {
            return Err(invalid("teaching.sessions > 0 needs a `teacher` role"));
        }
        if teaching.sessions > 0 && teaching.mode == TeachingMode::WithExamples {
            for (role, name) in [
                ("generator", &self.roles.generator),
                ("verifier", &self.roles.verifier),
            ] {
                if name.is_none() {
                    return Err(invalid(format!(
                        "teaching.mode = with_examples needs a `{role}` role"
                    )));
                }
            }
        }
        for (what, params) in [
            ("teaching.teacher_params", &teaching.teacher_params),
            ("teaching.student_params", &teaching.student_params),
            ("tagging.params", &self.tagging.params),
            ("forge.params", &self.forge.params),
            ("forge.verifier_params", &self.forge.verifier_params),
        ] {
            params
                .validate()
                .map_err(|e| invalid(format!("{what}: {e}")))?;
        }
        if self.tagging.max_attempts == 0 {
            return Err(invalid("tagging.max_attempts must be at least 1"));
        }
        if self.tagging.budget_secs == 0 {
            return Err(invalid("tagging.budget_secs must be at least 1"));
        }
        if self.forge.max_rounds == 0 {
            return Err(invalid("forge.max_rounds must be at least 1"));
        }
        self.evaluation_config()
            .validate()
            .map_err(|e| invalid(format!("evaluation: {e}")))
    }

    pub fn evaluation_config(&self) -> EvaluationConfig {
        let e = &self.evaluation;
        EvaluationConfig {
            sessions: self.teaching.sessions,
            samples_per_session: e.samples_per_session,
            ks: e.ks.clone(),
            student_params: e.params.clone(),
            seed: e.seed,
            grading: GradingPolicy::MultipleChoice,
            surplus: e.surplus,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .or_else(|| self.roles.teacher.clone())
            .unwrap_or_else(|| "baseline".into())
    }

    /// Endpoint names in use, sorted and deduplicated.
    pub fn endpoints_used(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .roles
            .named()
            .into_iter()
            .map(|(_, n)| n.to_string())
            .collect();
        names.sort();
        names.dedup();
        names
    }
}
