use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::manifest::{RunManifest, Stage};
use super::{HarnessConfig, HarnessError};
use crate::artifact::{read_json, write_json};
use crate::digest::sha256_hex;
use crate::forge::StaticRetrieval;
use crate::gateway::{provider_for, BackoffPolicy, Gateway, Recorder};
use crate::knowledge::{load_questions_file, DatasetManifest, KnowledgeTree, Question};
use crate::prompt::TemplateSet;
use crate::text::file_stem;

/// Paths inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn calls_log(&self) -> PathBuf {
        self.root.join("calls.jsonl")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }

    pub fn tags(&self) -> PathBuf {
        self.root.join("tags")
    }

    pub fn tag_file(&self, question_id: &str) -> PathBuf {
        self.tags().join(format!("{}.json", file_stem(question_id)))
    }

    pub fn examples(&self) -> PathBuf {
        self.root.join("examples")
    }

    pub fn example_file(&self, leaf_id: &str) -> PathBuf {
        self.examples().join(format!("{}.json", file_stem(leaf_id)))
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn attempts(&self) -> PathBuf {
        self.root.join("attempts")
    }

    pub fn attempt_file(&self, question_id: &str, unit: &str) -> PathBuf {
        self.attempts()
            .join(file_stem(question_id))
            .join(format!("{unit}.jsonl"))
    }

    pub fn attempt_failure_file(&self, question_id: &str, unit: &str) -> PathBuf {
        self.attempts()
            .join(file_stem(question_id))
            .join(format!("{unit}.failed.json"))
    }
}

/// The config as persisted in a run directory: input paths point at the
/// copies under `inputs/`, relative to the run directory, and every copied
/// file is pinned by digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenConfig {
    pub config: HarnessConfig,
    /// Relative path to SHA-256 of the file contents.
    pub inputs: BTreeMap<String, String>,
}

impl FrozenConfig {
    /// SHA-256 of the canonical JSON form. Independent of where the run
    /// directory lives.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

fn copy_input(
    src: &Path,
    root: &Path,
    rel: &str,
    inputs: &mut BTreeMap<String, String>,
) -> Result<PathBuf, HarnessError> {
    let bytes = std::fs::read(src)
        .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", src.display())))?;
    let dst = root.join(rel);
    crate::artifact::write_atomic(&dst, &bytes).map_err(HarnessError::io(&dst))?;
    inputs.insert(rel.to_string(), sha256_hex(&bytes));
    Ok(PathBuf::from(rel))
}

fn copy_prompts(
    src: &Path,
    root: &Path,
    inputs: &mut BTreeMap<String, String>,
) -> Result<PathBuf, HarnessError> {
    let base = "inputs/prompts";
    let read = |dir: &Path| {
        std::fs::read_dir(dir)
            .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", dir.display())))
    };
    for lang in read(src)? {
        let lang = lang.map_err(HarnessError::io(src))?;
        if !lang.path().is_dir() {
            continue;
        }
        let lang_name = lang.file_name().to_string_lossy().into_owned();
        for file in read(&lang.path())? {
            let file = file.map_err(HarnessError::io(lang.path()))?;
            let name = file.file_name().to_string_lossy().into_owned();
            if name.ends_with(".txt") {
                copy_input(
                    &file.path(),
                    root,
                    &format!("{base}/{lang_name}/{name}"),
                    inputs,
                )?;
            }
        }
    }
    Ok(PathBuf::from(base))
}

fn load_inputs(
    config: &HarnessConfig,
) -> Result<(KnowledgeTree, Vec<Question>, TemplateSet), HarnessError> {
    let data = &config.data;
    let tree = KnowledgeTree::load(&data.tree).map_err(|e| HarnessError::Data(e.to_string()))?;
    let set = load_questions_file(&data.questions, &tree)
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    if let Some(path) = &data.manifest {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Data(format!("cannot read {}: {e}", path.display())))?;
        let expected =
            DatasetManifest::from_json(&text).map_err(|e| HarnessError::Data(e.to_string()))?;
        expected
            .check(&set)
            .map_err(|e| HarnessError::Data(e.to_string()))?;
    }
    if set.questions.is_empty() {
        return Err(HarnessError::Data(format!(
            "{} has no questions",
            data.questions.display()
        )));
    }
    let templates = match &data.prompts_dir {
        Some(dir) => TemplateSet::with_overrides(config.language, dir),
        None => Ok(TemplateSet::builtin(config.language)),
    }
    .map_err(|e| HarnessError::Data(e.to_string()))?;
    Ok((tree, set.questions, templates))
}

/// Validates `config`, then creates the run directory with frozen inputs
/// and a manifest whose stage flags are all false.
pub fn init_run(config: &HarnessConfig, dir: &Path) -> Result<Run, HarnessError> {
    config.validate()?;
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(HarnessError::io(dir))?;
        if entries.next().is_some() {
            return Err(HarnessError::RunExists(dir.to_path_buf()));
        }
    }
    let (tree, _, _) = load_inputs(config)?;

    let mut frozen = config.clone();
    frozen.output_root = None;
    let mut inputs = BTreeMap::new();
    let data = &mut frozen.data;
    data.tree = copy_input(&config.data.tree, dir, "inputs/tree.json", &mut inputs)?;
    data.questions = copy_input(
        &config.data.questions,
        dir,
        "inputs/questions.jsonl",
        &mut inputs,
    )?;
    if let Some(p) = &config.data.manifest {
        data.manifest = Some(copy_input(
            p,
            dir,
            "inputs/dataset-manifest.json",
            &mut inputs,
        )?);
    }
    if let Some(p) = &config.data.retrieval {
        data.retrieval = Some(copy_input(p, dir, "inputs/retrieval.json", &mut inputs)?);
    }
    if let Some(p) = &config.data.prompts_dir {
        data.prompts_dir = Some(copy_prompts(p, dir, &mut inputs)?);
    }
    for (name, endpoint) in frozen.endpoints.iter_mut() {
        if let Some(p) = &endpoint.script {
            let rel = format!("inputs/scripts/{}.json", file_stem(name));
            endpoint.script = Some(copy_input(p, dir, &rel, &mut inputs)?);
        }
    }

    let frozen = FrozenConfig {
        config: frozen,
        inputs,
    };
    let run_dir = RunDir::new(dir);
    let manifest = RunManifest::new(
        frozen.hash(),
        config.endpoints_used(),
        tree.version().to_string(),
    );
    write_json(&run_dir.config(), &frozen).map_err(HarnessError::io(run_dir.config()))?;
    write_json(&run_dir.manifest(), &manifest).map_err(HarnessError::io(run_dir.manifest()))?;
    tracing::info!(run = %manifest.run_id, dir = %dir.display(), "run initialized");
    Run::open(dir)
}

/// An opened run: frozen config resolved against the run directory, with
/// the inputs loaded.
#[derive(Debug)]
pub struct Run {
    pub dir: RunDir,
    pub config: HarnessConfig,
    pub config_hash: String,
    pub manifest: RunManifest,
    pub tree: KnowledgeTree,
    pub questions: Vec<Question>,
    pub templates: TemplateSet,
    pub retrieval: Option<StaticRetrieval>,
}

impl Run {
    /// Opens an existing run, checking that the manifest, the frozen config
    /// and the copied inputs still agree.
    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        let run_dir = RunDir::new(dir);
        let inconsistent = HarnessError::Inconsistent;
        if !run_dir.manifest().exists() {
            return Err(inconsistent(format!(
                "{} has no manifest.json",
                dir.display()
            )));
        }
        let manifest: RunManifest = read_json(&run_dir.manifest())
            .map_err(|e| inconsistent(format!("unreadable manifest: {e}")))?;
        let frozen: FrozenConfig = read_json(&run_dir.config())
            .map_err(|e| inconsistent(format!("unreadable frozen config: {e}")))?;
        let hash = frozen.hash();
        if hash != manifest.config_hash {
            return Err(inconsistent(format!(
                "config hash {hash} does not match manifest {}",
                manifest.config_hash
            )));
        }
        if let Some((stage, missing)) = manifest.stages.gap() {
            return Err(inconsistent(format!(
                "stage `{stage}` is marked done but `{missing}` is not"
            )));
        }
        for (rel, digest) in &frozen.inputs {
            let path = dir.join(rel);
            let bytes =
                std::fs::read(&path).map_err(|e| inconsistent(format!("input {rel}: {e}")))?;
            if &sha256_hex(&bytes) != digest {
                return Err(inconsistent(format!(
                    "input {rel} changed since the run was initialized"
                )));
            }
        }

        let mut config = frozen.config;
        config.resolve_paths(dir);
        config.validate()?;
        let (tree, questions, templates) = load_inputs(&config)?;
        if tree.version() != manifest.tree_version {
            return Err(inconsistent(format!(
                "tree version {} does not match manifest {}",
                tree.version(),
                manifest.tree_version
            )));
        }
        let retrieval = match &config.data.retrieval {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
                Some(
                    StaticRetrieval::from_json(&text)
                        .map_err(|e| HarnessError::Data(format!("retrieval file: {e}")))?,
                )
            }
            None => None,
        };
        Ok(Self {
            dir: run_dir,
            config,
            config_hash: hash,
            manifest,
            tree,
            questions,
            templates,
            retrieval,
        })
    }

    /// Sets a stage flag and persists the manifest. Re-reads the stored
    /// manifest first so a flag set elsewhere is never cleared.
    pub fn mark_done(&mut self, stage: Stage) -> Result<(), HarnessError> {
        let path = self.dir.manifest();
        let stored: RunManifest = read_json(&path).map_err(HarnessError::io(&path))?;
        if stored.config_hash != self.manifest.config_hash
            || !stored.stages.extends(&self.manifest.stages)
        {
            return Err(HarnessError::Inconsistent(
                "manifest changed underneath the run".into(),
            ));
        }
        self.manifest = stored;
        self.manifest.stages.set(stage);
        write_json(&path, &self.manifest).map_err(HarnessError::io(&path))
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// One gateway per endpoint in use, sharing an in-flight bound and the
/// run's call log.
#[derive(Debug)]
pub struct Gateways {
    by_name: BTreeMap<String, Gateway>,
}

impl Gateways {
    pub fn build(run: &Run, concurrency: Option<usize>) -> Result<Self, HarnessError> {
        let bound = concurrency.unwrap_or(run.config.concurrency);
        if bound == 0 {
            return Err(HarnessError::Config(
                "concurrency must be at least 1".into(),
            ));
        }
        let limiter = Arc::new(Semaphore::new(bound));
        let log = run.dir.calls_log();
        let recorder = Arc::new(Recorder::with_file(&log).map_err(HarnessError::io(&log))?);
        let mut by_name = BTreeMap::new();
        for name in run.config.endpoints_used() {
            let endpoint = run.config.endpoints[&name].clone();
            let provider = provider_for(&endpoint).map_err(HarnessError::Config)?;
            let scripted = endpoint.script.is_some();
            let mut gateway = Gateway::new(endpoint, provider)
                .with_limiter(limiter.clone())
                .with_recorder(recorder.clone());
            if scripted {
                gateway = gateway.with_backoff(BackoffPolicy::none());
            }
            by_name.insert(name, gateway);
        }
        Ok(Self { by_name })
    }

    pub fn from_map(by_name: BTreeMap<String, Gateway>) -> Self {
        Self { by_name }
    }

    pub fn get(&self, role: &str, name: Option<&str>) -> Result<&Gateway, HarnessError> {
        let name = name.ok_or_else(|| {
            HarnessError::Config(format!("no endpoint is assigned to role `{role}`"))
        })?;
        self.by_name.get(name).ok_or_else(|| {
            HarnessError::Config(format!("role `{role}` names unknown endpoint `{name}`"))
        })
    }
}
