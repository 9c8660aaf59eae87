use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::Duration;

use futures::TryStreamExt;
use serde::{Deserialize, Serialize};

use super::manifest::Stage;
use super::run::{Gateways, Run};
use super::HarnessError;
use crate::artifact::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::evaluator::{
    aggregate, render_markdown, sample_answers, AttemptRecord, EvaluationReport, ReportSpec,
    SampleError, StudentContext,
};
use crate::forge::{Forge, ForgeConfig, ForgeError, ForgeRecord};
use crate::knowledge::{KnowledgePath, Question};
use crate::tagger::{TagRecord, Tagger, TaggerConfig};
use crate::teaching::{
    build_student_prompt, read_transcript, render_knowledge, transcript_path, SessionConfig,
    SessionError, TeacherBriefing, TeachingEngine, TeachingMode, Termination,
};

/// Knobs for a single stage invocation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Limits {
    /// Stop after this many items, leaving the stage incomplete.
    pub max_items: Option<usize>,
    /// Items processed at once; defaults to the config's concurrency.
    pub concurrency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub processed: usize,
    pub remaining: usize,
    pub complete: bool,
    pub warnings: Vec<String>,
}

/// Marker left in place of an attempts file when sampling could not finish.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitFailure {
    pub question_id: String,
    pub unit: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResumePlan {
    /// Earliest incomplete stage; `None` when the run is finished.
    pub next: Option<Stage>,
    /// Ids still owing work in that stage: question ids, or leaf ids for
    /// the forge stage.
    pub pending: Vec<String>,
    /// Work items left; a question can own several (sessions, units).
    pub items: usize,
}

pub fn session_id(index: u32) -> String {
    format!("session-{}", index + 1)
}

enum TagState {
    Known(Vec<KnowledgePath>),
    Untagged(String),
    Pending,
}

fn tag_state(run: &Run, q: &Question) -> Result<TagState, HarnessError> {
    if !q.tags.is_empty() {
        return Ok(TagState::Known(q.tags.clone()));
    }
    let path = run.dir.tag_file(&q.id);
    if !path.exists() {
        return Ok(TagState::Pending);
    }
    let record: TagRecord = read_json(&path)
        .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", path.display())))?;
    if record.question_id() != q.id {
        return Err(HarnessError::Inconsistent(format!(
            "{} belongs to question `{}`",
            path.display(),
            record.question_id()
        )));
    }
    match record {
        TagRecord::Tagged(r) => {
            for p in &r.paths {
                run.tree
                    .check_path(p)
                    .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", path.display())))?;
            }
            Ok(TagState::Known(r.paths))
        }
        TagRecord::Untagged {
            attempts_used,
            last_error,
            ..
        } => Ok(TagState::Untagged(format!(
            "untagged after {attempts_used} attempts: {last_error}"
        ))),
    }
}

/// Questions that reach teaching and evaluation, with their paths.
fn eligible(run: &Run) -> Result<Vec<(&Question, Vec<KnowledgePath>)>, HarnessError> {
    let mut out = Vec::new();
    for q in &run.questions {
        match tag_state(run, q)? {
            TagState::Known(paths) if !paths.is_empty() => out.push((q, paths)),
            TagState::Known(_) | TagState::Untagged(_) => {}
            TagState::Pending => {
                return Err(HarnessError::Inconsistent(format!(
                    "question `{}` has not been tagged",
                    q.id
                )));
            }
        }
    }
    Ok(out)
}

fn needs_forge(run: &Run) -> bool {
    run.config.teaching.sessions > 0 && run.config.teaching.mode == TeachingMode::WithExamples
}

fn pending_tags(run: &Run) -> Result<Vec<&Question>, HarnessError> {
    let mut out = Vec::new();
    for q in &run.questions {
        if matches!(tag_state(run, q)?, TagState::Pending) {
            out.push(q);
        }
    }
    Ok(out)
}

fn pending_forge(run: &Run) -> Result<Vec<KnowledgePath>, HarnessError> {
    if !needs_forge(run) {
        return Ok(Vec::new());
    }
    let mut by_leaf = BTreeMap::new();
    for (_, paths) in eligible(run)? {
        for p in paths {
            by_leaf.entry(p.leaf_id().to_string()).or_insert(p);
        }
    }
    Ok(by_leaf
        .into_iter()
        .filter(|(leaf, _)| !run.dir.example_file(leaf).exists())
        .map(|(_, p)| p)
        .collect())
}

/// A question, its knowledge paths and a session index (or a sampling unit).
type WorkItem<'a, T> = (&'a Question, Vec<KnowledgePath>, T);

fn pending_teach(run: &Run) -> Result<Vec<WorkItem<'_, u32>>, HarnessError> {
    let root = run.dir.transcripts();
    let mut out = Vec::new();
    for (q, paths) in eligible(run)? {
        for i in 0..run.config.teaching.sessions {
            if !transcript_path(&root, &q.id, &session_id(i)).exists() {
                out.push((q, paths.clone(), i));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Pre,
    KnowledgeOnly,
    Post(u32),
}

impl Unit {
    fn name(self) -> String {
        match self {
            Unit::Pre => "pre".into(),
            Unit::KnowledgeOnly => "knowledge_only".into(),
            Unit::Post(i) => format!("post-{}", session_id(i)),
        }
    }
}

fn read_session(
    run: &Run,
    q: &Question,
    index: u32,
) -> Result<crate::teaching::TeachingSession, HarnessError> {
    let path = transcript_path(&run.dir.transcripts(), &q.id, &session_id(index));
    read_transcript(&path)
        .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", path.display())))
}

/// Sampling units for a question. None at all when a session ended on a
/// provider error, since the question is excluded anyway.
fn units_for(run: &Run, q: &Question) -> Result<Vec<Unit>, HarnessError> {
    let mut units = vec![Unit::Pre];
    if run.config.evaluation.knowledge_only {
        units.push(Unit::KnowledgeOnly);
    }
    for i in 0..run.config.teaching.sessions {
        if read_session(run, q, i)?.termination == Termination::ProviderError {
            return Ok(Vec::new());
        }
        units.push(Unit::Post(i));
    }
    Ok(units)
}

fn unit_done(run: &Run, q: &Question, unit: Unit) -> bool {
    let name = unit.name();
    run.dir.attempt_file(&q.id, &name).exists()
        || run.dir.attempt_failure_file(&q.id, &name).exists()
}

fn pending_evaluate(run: &Run) -> Result<Vec<WorkItem<'_, Unit>>, HarnessError> {
    let mut out = Vec::new();
    for (q, paths) in eligible(run)? {
        for unit in units_for(run, q)? {
            if !unit_done(run, q, unit) {
                out.push((q, paths.clone(), unit));
            }
        }
    }
    Ok(out)
}

/// Deduplicated owner ids of the pending items, and the item count.
fn pending_ids(run: &Run, stage: Stage) -> Result<(Vec<String>, usize), HarnessError> {
    let ids: Vec<String> = match stage {
        Stage::Tag => pending_tags(run)?
            .into_iter()
            .map(|q| q.id.clone())
            .collect(),
        Stage::Forge => pending_forge(run)?
            .iter()
            .map(|p| p.leaf_id().to_string())
            .collect(),
        Stage::Teach => pending_teach(run)?
            .into_iter()
            .map(|(q, _, _)| q.id.clone())
            .collect(),
        Stage::Evaluate => pending_evaluate(run)?
            .into_iter()
            .map(|(q, _, _)| q.id.clone())
            .collect(),
    };
    let items = ids.len();
    let mut seen = BTreeSet::new();
    Ok((
        ids.into_iter()
            .filter(|id| seen.insert(id.clone()))
            .collect(),
        items,
    ))
}

/// Finds the earliest stage without its flag and the items it still owes.
/// A flagged stage with missing artifacts is reported, not repaired.
pub fn plan_resume(run: &Run) -> Result<ResumePlan, HarnessError> {
    for stage in Stage::ALL {
        let (pending, items) = pending_ids(run, stage)?;
        if !run.manifest.stages.get(stage) {
            return Ok(ResumePlan {
                next: Some(stage),
                pending,
                items,
            });
        }
        if !pending.is_empty() {
            return Err(HarnessError::Inconsistent(format!(
                "stage `{stage}` is marked done but {} item(s) lack artifacts, e.g. `{}`",
                pending.len(),
                pending[0]
            )));
        }
    }
    if !run.dir.report_json().exists() {
        return Err(HarnessError::Inconsistent(
            "evaluation is marked done but report.json is missing".into(),
        ));
    }
    Ok(ResumePlan {
        next: None,
        pending: Vec::new(),
        items: 0,
    })
}

/// Question id to the reason it is left out of the report.
pub fn exclusions(run: &Run) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut out = BTreeMap::new();
    for q in &run.questions {
        let reason = match tag_state(run, q)? {
            TagState::Untagged(reason) => Some(reason),
            TagState::Pending => Some("not tagged".to_string()),
            TagState::Known(paths) if paths.is_empty() => Some("no knowledge points".to_string()),
            TagState::Known(_) => None,
        };
        if let Some(reason) = reason {
            out.insert(q.id.clone(), reason);
            continue;
        }
        for i in 0..run.config.teaching.sessions {
            let path = transcript_path(&run.dir.transcripts(), &q.id, &session_id(i));
            if !path.exists() {
                continue;
            }
            let session = read_session(run, q, i)?;
            if session.termination == Termination::ProviderError {
                let detail = session.error.unwrap_or_default();
                out.insert(
                    q.id.clone(),
                    format!("{} ended on a provider error: {detail}", session_id(i)),
                );
                break;
            }
        }
        if out.contains_key(&q.id) {
            continue;
        }
        let dir = run.dir.attempts().join(crate::text::file_stem(&q.id));
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        let mut markers: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(".failed.json"))
            .collect();
        markers.sort();
        if let Some(path) = markers.first() {
            let failure: UnitFailure = read_json(path)
                .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", path.display())))?;
            out.insert(
                q.id.clone(),
                format!(
                    "sampling for `{}` incomplete: {}",
                    failure.unit, failure.reason
                ),
            );
        }
    }
    Ok(out)
}

/// Aggregates every persisted attempt record of the run. A pure function of
/// the run directory.
pub fn build_report(run: &Run) -> Result<EvaluationReport, HarnessError> {
    let excluded = exclusions(run)?;
    let mut records: Vec<AttemptRecord> = Vec::new();
    for (q, _) in eligible(run)? {
        if excluded.contains_key(&q.id) {
            continue;
        }
        for unit in units_for(run, q)? {
            let path = run.dir.attempt_file(&q.id, &unit.name());
            if path.exists() {
                let batch: Vec<AttemptRecord> = read_jsonl(&path)
                    .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", path.display())))?;
                records.extend(batch);
            }
        }
    }
    let spec = ReportSpec {
        label: run.config.label(),
        config_hash: run.config_hash.clone(),
        n: run.config.evaluation.samples_per_session,
        ks: run.config.evaluation.ks.clone(),
        excluded,
    };
    Ok(aggregate(&records, &spec)?)
}

fn report_bytes(report: &EvaluationReport) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

fn write_report(run: &Run, report: &EvaluationReport) -> Result<(), HarnessError> {
    let json = run.dir.report_json();
    write_atomic(&json, &report_bytes(report)).map_err(HarnessError::io(&json))?;
    let md = run.dir.report_md();
    write_atomic(
        &md,
        render_markdown(std::slice::from_ref(report)).as_bytes(),
    )
    .map_err(HarnessError::io(&md))
}

/// Recomputes the report from the persisted records. The flag tells
/// whether it is byte-identical to the stored `report.json`.
pub fn recompute_report(run: &Run) -> Result<(EvaluationReport, bool), HarnessError> {
    let report = build_report(run)?;
    let path = run.dir.report_json();
    let stored = std::fs::read(&path).map_err(HarnessError::io(&path))?;
    let same = stored == report_bytes(&report);
    Ok((report, same))
}

/// Runs one stage over its pending items and sets its flag once nothing
/// is left. Items are independent; each lands in its own file.
pub async fn run_stage(
    run: &mut Run,
    gateways: &Gateways,
    stage: Stage,
    limits: Limits,
) -> Result<StageReport, HarnessError> {
    if let Some(&missing) = Stage::ALL
        .iter()
        .take_while(|&&s| s != stage)
        .find(|&&s| !run.manifest.stages.get(s))
    {
        return Err(HarnessError::OutOfOrder { stage, missing });
    }
    if run.manifest.stages.get(stage) {
        return Ok(StageReport {
            stage,
            processed: 0,
            remaining: 0,
            complete: true,
            warnings: vec![format!("stage `{stage}` is already complete")],
        });
    }
    let run_ref: &Run = run;
    let (processed, warnings) = match stage {
        Stage::Tag => tag_stage(run_ref, gateways, limits).await?,
        Stage::Forge => forge_stage(run_ref, gateways, limits).await?,
        Stage::Teach => teach_stage(run_ref, gateways, limits).await?,
        Stage::Evaluate => evaluate_stage(run_ref, gateways, limits).await?,
    };
    for w in &warnings {
        tracing::warn!(stage = %stage, "{w}");
    }
    let remaining = pending_ids(run, stage)?.1;
    let complete = remaining == 0;
    if complete {
        if stage == Stage::Evaluate {
            write_report(run, &build_report(run)?)?;
        }
        run.mark_done(stage)?;
    }
    tracing::info!(stage = %stage, processed, remaining, "stage finished");
    Ok(StageReport {
        stage,
        processed,
        remaining,
        complete,
        warnings,
    })
}

fn take<T>(items: Vec<T>, limits: Limits) -> Vec<T> {
    let n = limits.max_items.unwrap_or(usize::MAX);
    items.into_iter().take(n).collect()
}

fn fan_out(run: &Run, limits: Limits) -> usize {
    limits.concurrency.unwrap_or(run.config.concurrency).max(1)
}

type Outcome = (usize, Vec<String>);

async fn for_each<T, F, Fut>(items: Vec<T>, width: usize, f: F) -> Result<Outcome, HarnessError>
where
    F: Fn(T) -> Fut,
    Fut: std::future::Future<Output = Result<Option<String>, HarnessError>>,
{
    let processed = items.len();
    let warnings = Mutex::new(Vec::new());
    futures::stream::iter(items.into_iter().map(Ok::<T, HarnessError>))
        .try_for_each_concurrent(width, |item| {
            let fut = f(item);
            let warnings = &warnings;
            async move {
                if let Some(w) = fut.await? {
                    warnings.lock().unwrap().push(w);
                }
                Ok(())
            }
        })
        .await?;
    let mut warnings = warnings.into_inner().unwrap();
    warnings.sort();
    Ok((processed, warnings))
}

async fn tag_stage(
    run: &Run,
    gateways: &Gateways,
    limits: Limits,
) -> Result<Outcome, HarnessError> {
    let items = take(pending_tags(run)?, limits);
    if items.is_empty() {
        return Ok((0, Vec::new()));
    }
    let gateway = gateways.get("tagger", run.config.roles.tagger.as_deref())?;
    let t = &run.config.tagging;
    let tagger = Tagger::new(
        gateway,
        &run.templates,
        TaggerConfig {
            include_answer: t.include_answer,
            max_attempts: t.max_attempts,
            budget: Duration::from_secs(t.budget_secs),
            params: t.params.clone(),
        },
    );
    let tagger = &tagger;
    for_each(items, fan_out(run, limits), |q| async move {
        let record = tagger.tag_record(q, &run.tree).await.map_err(|f| {
            HarnessError::Provider(format!("tagging `{}`: {}", f.question_id, f.last_error))
        })?;
        let path = run.dir.tag_file(&q.id);
        write_json(&path, &record).map_err(HarnessError::io(&path))?;
        Ok(match record {
            TagRecord::Untagged { attempts_used, .. } => Some(format!(
                "question `{}` untagged after {attempts_used} attempts",
                q.id
            )),
            TagRecord::Tagged(_) => None,
        })
    })
    .await
}

async fn forge_stage(
    run: &Run,
    gateways: &Gateways,
    limits: Limits,
) -> Result<Outcome, HarnessError> {
    let items = take(pending_forge(run)?, limits);
    if items.is_empty() {
        return Ok((0, Vec::new()));
    }
    let roles = &run.config.roles;
    let f = &run.config.forge;
    let mut forge = Forge::new(
        gateways.get("generator", roles.generator.as_deref())?,
        gateways.get("verifier", roles.verifier.as_deref())?,
        &run.templates,
        run.tree.subject().clone(),
        ForgeConfig {
            max_rounds: f.max_rounds,
            params: f.params.clone(),
            verifier_params: f.verifier_params.clone(),
        },
    );
    if let Some(r) = &run.retrieval {
        forge = forge.with_retrieval(r);
    }
    let forge = &forge;
    for_each(items, fan_out(run, limits), |path| async move {
        let record = forge.forge_with_repair(&path).await.map_err(|e| match e {
            ForgeError::Template(e) => HarnessError::Data(e.to_string()),
            ForgeError::ZeroRounds => HarnessError::Config(e.to_string()),
            e => HarnessError::Provider(format!("forging `{}`: {e}", path.display)),
        })?;
        let file = run.dir.example_file(path.leaf_id());
        write_json(&file, &record).map_err(HarnessError::io(&file))?;
        Ok((!record.is_forged())
            .then(|| format!("`{}` unforged after {} rounds", path.display, record.rounds)))
    })
    .await
}

/// Briefing for a question. In example mode, falls back to knowledge only
/// when any of its paths failed to forge.
fn briefing_for(
    run: &Run,
    q: &Question,
    paths: &[KnowledgePath],
) -> Result<(TeacherBriefing, Option<String>), HarnessError> {
    let field = q.subject.field_label(run.config.language);
    let mut mode = run.config.teaching.mode;
    let mut examples = Vec::new();
    let mut warning = None;
    if mode == TeachingMode::WithExamples {
        for p in paths {
            let file = run.dir.example_file(p.leaf_id());
            let record: ForgeRecord = read_json(&file)
                .map_err(|e| HarnessError::Inconsistent(format!("{}: {e}", file.display())))?;
            if !record.is_forged() {
                warning = Some(format!(
                    "question `{}`: `{}` has no verified examples; teaching with knowledge points only",
                    q.id, p.display
                ));
                mode = TeachingMode::KnowledgeOnly;
                break;
            }
            examples.extend(record.verified_items().into_iter().cloned());
        }
    }
    let briefing = TeacherBriefing::new(field, paths, examples, mode, q)
        .map_err(|e| HarnessError::Data(format!("question `{}`: {e}", q.id)))?;
    Ok((briefing, warning))
}

async fn teach_stage(
    run: &Run,
    gateways: &Gateways,
    limits: Limits,
) -> Result<Outcome, HarnessError> {
    let items = take(pending_teach(run)?, limits);
    if items.is_empty() {
        return Ok((0, Vec::new()));
    }
    let roles = &run.config.roles;
    let t = &run.config.teaching;
    let engine = TeachingEngine {
        teacher: gateways.get("teacher", roles.teacher.as_deref())?,
        student: gateways.get("student", Some(&roles.student))?,
        templates: &run.templates,
        config: SessionConfig {
            turn_cap: t.turn_cap,
            teacher_params: t.teacher_params.clone(),
            student_params: t.student_params.clone(),
        },
    };
    let mut briefings = BTreeMap::new();
    let mut fallbacks = Vec::new();
    for (q, paths, _) in &items {
        if !briefings.contains_key(q.id.as_str()) {
            let (briefing, warning) = briefing_for(run, q, paths)?;
            fallbacks.extend(warning);
            briefings.insert(q.id.as_str(), briefing);
        }
    }
    let (engine, briefings) = (&engine, &briefings);
    let (processed, mut warnings) = for_each(items, fan_out(run, limits), |(q, _, i)| async move {
        let sid = session_id(i);
        let out = transcript_path(&run.dir.transcripts(), &q.id, &sid);
        let briefing = briefings[q.id.as_str()].clone();
        let session = engine
            .run_session(briefing, &q.id, &sid, Some(&out))
            .await
            .map_err(|e| match e {
                SessionError::Fatal(e) => {
                    HarnessError::Provider(format!("teaching `{}` {sid}: {e}", q.id))
                }
                SessionError::Io(source) => HarnessError::Io {
                    path: out.clone(),
                    source,
                },
                e => HarnessError::Data(format!("question `{}`: {e}", q.id)),
            })?;
        Ok((session.termination == Termination::ProviderError)
            .then(|| format!("question `{}` {sid} ended on a provider error", q.id)))
    })
    .await?;
    warnings.extend(fallbacks);
    Ok((processed, warnings))
}

async fn evaluate_stage(
    run: &Run,
    gateways: &Gateways,
    limits: Limits,
) -> Result<Outcome, HarnessError> {
    let items = take(pending_evaluate(run)?, limits);
    if items.is_empty() {
        return Ok((0, Vec::new()));
    }
    let student = gateways.get("student", Some(&run.config.roles.student))?;
    let config = run.config.evaluation_config();
    let config = &config;
    for_each(items, fan_out(run, limits), |(q, paths, unit)| async move {
        let name = unit.name();
        let field = q.subject.field_label(run.config.language);
        let student_system;
        let session;
        let context = match unit {
            Unit::Pre => StudentContext::Pre,
            Unit::KnowledgeOnly => {
                student_system =
                    build_student_prompt(field, &render_knowledge(&paths), &run.templates)
                        .map_err(|e| HarnessError::Data(format!("question `{}`: {e}", q.id)))?;
                StudentContext::KnowledgeOnly {
                    student_system: &student_system,
                }
            }
            Unit::Post(i) => {
                session = read_session(run, q, i)?;
                StudentContext::Post { session: &session }
            }
        };
        let reason = match sample_answers(student, q, context, &run.templates, config).await {
            Ok(records) => {
                let path = run.dir.attempt_file(&q.id, &name);
                write_jsonl(&path, &records).map_err(HarnessError::io(&path))?;
                return Ok(None);
            }
            Err(SampleError::Fatal(e)) => {
                return Err(HarnessError::Provider(format!(
                    "sampling `{}` {name}: {e}",
                    q.id
                )))
            }
            Err(SampleError::Template(e)) => return Err(HarnessError::Data(e.to_string())),
            Err(e @ SampleError::Partial { .. }) | Err(e @ SampleError::Ungradable(_)) => {
                e.to_string()
            }
        };
        let marker = UnitFailure {
            question_id: q.id.clone(),
            unit: name.clone(),
            reason: reason.clone(),
        };
        let path = run.dir.attempt_failure_file(&q.id, &name);
        write_json(&path, &marker).map_err(HarnessError::io(&path))?;
        Ok(Some(format!("question `{}` {name}: {reason}", q.id)))
    })
    .await
}
