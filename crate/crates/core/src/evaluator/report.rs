use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use super::pass_at_k::pass_at_k_exact;
use super::sampling::{AttemptRecord, Phase};
use crate::teaching::BASELINE_SESSION_ID;

/// Values keyed by k.
pub type KMap = BTreeMap<u32, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub n: u32,
    pub c: u32,
    pub pass: KMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub per_question: BTreeMap<String, QuestionScore>,
    /// Macro-average over questions.
    pub aggregate: KMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostResult {
    pub sessions: BTreeMap<String, PhaseResult>,
    pub mean: KMap,
    pub best: KMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub mean: KMap,
    pub best: KMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Row label for the teacher configuration.
    pub label: String,
    pub config_hash: String,
    pub n: u32,
    pub ks: Vec<u32>,
    pub questions: Vec<String>,
    /// Question id to the reason it was left out.
    pub excluded: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre: Option<PhaseResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge_only: Option<PhaseResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post: Option<PostResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_vs_pre: Option<Deltas>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_vs_knowledge_only: Option<Deltas>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportSpec {
    pub label: String,
    pub config_hash: String,
    pub n: u32,
    pub ks: Vec<u32>,
    /// Questions flagged upstream (untagged, partial sampling, ...).
    pub excluded: BTreeMap<String, String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("record/config mismatch: {0}")]
    Mismatch(String),
    #[error("no question has complete records")]
    NoQuestions,
    #[error("invalid spec: {0}")]
    Spec(String),
}

type GroupKey<'a> = (&'a str, Phase, &'a str);

fn mismatch(msg: String) -> AggregateError {
    AggregateError::Mismatch(msg)
}

fn group(records: &[AttemptRecord], n: u32) -> Result<BTreeMap<GroupKey<'_>, u32>, AggregateError> {
    let mut seen: BTreeMap<GroupKey<'_>, BTreeSet<u32>> = BTreeMap::new();
    let mut correct: BTreeMap<GroupKey<'_>, u32> = BTreeMap::new();
    for r in records {
        let baseline = r.session_id == BASELINE_SESSION_ID;
        if (r.phase == Phase::Post) == baseline {
            return Err(mismatch(format!(
                "`{}`: phase {} with session `{}`",
                r.question_id,
                r.phase.as_str(),
                r.session_id
            )));
        }
        if r.sample_index >= n {
            return Err(mismatch(format!(
                "`{}`: sample index {} with n = {n}",
                r.question_id, r.sample_index
            )));
        }
        if r.correct && r.extracted.is_none() {
            return Err(mismatch(format!(
                "`{}`: correct record without an extracted answer",
                r.question_id
            )));
        }
        let key = (r.question_id.as_str(), r.phase, r.session_id.as_str());
        if !seen.entry(key).or_default().insert(r.sample_index) {
            return Err(mismatch(format!(
                "`{}` {} `{}`: duplicate sample {}",
                r.question_id,
                r.phase.as_str(),
                r.session_id,
                r.sample_index
            )));
        }
        *correct.entry(key).or_default() += u32::from(r.correct);
    }
    // Incomplete groups are dropped here; callers see them as missing.
    Ok(correct
        .into_iter()
        .filter(|(key, _)| seen[key].len() == n as usize)
        .collect())
}

/// Exact values keyed by k; rounded to `f64` only when stored in a report.
type Exact = BTreeMap<u32, BigRational>;

fn round(exact: &Exact) -> KMap {
    exact
        .iter()
        .map(|(k, v)| (*k, v.to_f64().expect("bounded value")))
        .collect()
}

fn exact_scores(n: u32, c: u32, ks: &[u32]) -> Exact {
    ks.iter()
        .map(|&k| {
            (
                k,
                pass_at_k_exact(n.into(), c.into(), k.into()).expect("validated ranges"),
            )
        })
        .collect()
}

fn mean(values: &[&Exact], ks: &[u32]) -> Exact {
    let count = BigRational::from_integer(BigInt::from(values.len()));
    ks.iter()
        .map(|&k| {
            let sum = values
                .iter()
                .fold(BigRational::zero(), |acc, v| acc + &v[&k]);
            (k, sum / &count)
        })
        .collect()
}

fn best(values: &[&Exact], ks: &[u32]) -> Exact {
    ks.iter()
        .map(|&k| {
            (
                k,
                values
                    .iter()
                    .map(|v| v[&k].clone())
                    .max()
                    .expect("non-empty"),
            )
        })
        .collect()
}

fn diff(a: &Exact, b: &Exact) -> KMap {
    a.iter()
        .map(|(k, v)| (*k, (v - &b[k]).to_f64().expect("bounded value")))
        .collect()
}

struct ExactPhase {
    result: PhaseResult,
    aggregate: Exact,
}

/// Pure function of the records: per-question Pass@k per phase and session,
/// macro-averaged over the questions complete in every phase present.
/// Averages and deltas are computed exactly and rounded once.
pub fn aggregate(
    records: &[AttemptRecord],
    spec: &ReportSpec,
) -> Result<EvaluationReport, AggregateError> {
    let n = spec.n;
    if n == 0 || spec.ks.is_empty() || spec.ks.iter().any(|&k| k == 0 || k > n) {
        return Err(AggregateError::Spec(format!(
            "ks {:?} invalid for n = {n}",
            spec.ks
        )));
    }
    let complete = group(records, n)?;

    let phases: BTreeSet<Phase> = records.iter().map(|r| r.phase).collect();
    let sessions: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.phase == Phase::Post)
        .map(|r| r.session_id.as_str())
        .collect();
    let all_questions: BTreeSet<&str> = records.iter().map(|r| r.question_id.as_str()).collect();

    let mut excluded = spec.excluded.clone();
    let mut included = Vec::new();
    for q in all_questions {
        if excluded.contains_key(q) {
            continue;
        }
        let mut missing = None;
        for &phase in &phases {
            let ids: Vec<&str> = if phase == Phase::Post {
                sessions.iter().copied().collect()
            } else {
                vec![BASELINE_SESSION_ID]
            };
            if let Some(s) = ids
                .iter()
                .find(|s| !complete.contains_key(&(q, phase, **s)))
            {
                missing = Some(format!("incomplete {} records for `{s}`", phase.as_str()));
                break;
            }
        }
        match missing {
            Some(reason) => {
                excluded.insert(q.to_string(), reason);
            }
            None => included.push(q),
        }
    }
    if included.is_empty() {
        return Err(AggregateError::NoQuestions);
    }

    let phase_result = |phase: Phase, session: &str| {
        let exact: Vec<(String, u32, Exact)> = included
            .iter()
            .map(|q| {
                let c = complete[&(*q, phase, session)];
                (q.to_string(), c, exact_scores(n, c, &spec.ks))
            })
            .collect();
        let aggregate = mean(&exact.iter().map(|e| &e.2).collect::<Vec<_>>(), &spec.ks);
        let per_question = exact
            .iter()
            .map(|(q, c, e)| {
                let score = QuestionScore {
                    n,
                    c: *c,
                    pass: round(e),
                };
                (q.clone(), score)
            })
            .collect();
        ExactPhase {
            result: PhaseResult {
                per_question,
                aggregate: round(&aggregate),
            },
            aggregate,
        }
    };

    let pre = phases
        .contains(&Phase::Pre)
        .then(|| phase_result(Phase::Pre, BASELINE_SESSION_ID));
    let knowledge_only = phases
        .contains(&Phase::KnowledgeOnly)
        .then(|| phase_result(Phase::KnowledgeOnly, BASELINE_SESSION_ID));
    let post = phases.contains(&Phase::Post).then(|| {
        let by_session: Vec<(&str, ExactPhase)> = sessions
            .iter()
            .map(|s| (*s, phase_result(Phase::Post, s)))
            .collect();
        let aggregates: Vec<&Exact> = by_session.iter().map(|(_, p)| &p.aggregate).collect();
        let mean = mean(&aggregates, &spec.ks);
        let best = best(&aggregates, &spec.ks);
        let result = PostResult {
            sessions: by_session
                .into_iter()
                .map(|(s, p)| (s.to_string(), p.result))
                .collect(),
            mean: round(&mean),
            best: round(&best),
        };
        (result, mean, best)
    });

    let deltas = |base: &Option<ExactPhase>| {
        let ((_, mean, best), base) = (post.as_ref()?, base.as_ref()?);
        Some(Deltas {
            mean: diff(mean, &base.aggregate),
            best: diff(best, &base.aggregate),
        })
    };
    let delta_vs_pre = deltas(&pre);
    let delta_vs_knowledge_only = deltas(&knowledge_only);

    Ok(EvaluationReport {
        label: spec.label.clone(),
        config_hash: spec.config_hash.clone(),
        n,
        ks: spec.ks.clone(),
        questions: included.into_iter().map(str::to_string).collect(),
        excluded,
        pre: pre.map(|p| p.result),
        knowledge_only: knowledge_only.map(|p| p.result),
        post: post.map(|p| p.0),
        delta_vs_pre,
        delta_vs_knowledge_only,
    })
}

struct Row<'a> {
    condition: String,
    values: &'a KMap,
}

fn rows(report: &EvaluationReport) -> Vec<Row<'_>> {
    let mut rows = Vec::new();
    if let Some(pre) = &report.pre {
        rows.push(Row {
            condition: "No teaching".into(),
            values: &pre.aggregate,
        });
    }
    if let Some(ko) = &report.knowledge_only {
        rows.push(Row {
            condition: "Knowledge only".into(),
            values: &ko.aggregate,
        });
    }
    if let Some(post) = &report.post {
        rows.push(Row {
            condition: format!("{} (mean of {})", report.label, post.sessions.len()),
            values: &post.mean,
        });
        rows.push(Row {
            condition: format!("{} (best)", report.label),
            values: &post.best,
        });
    }
    rows
}

fn baseline(report: &EvaluationReport) -> Option<&KMap> {
    report.pre.as_ref().map(|p| &p.aggregate)
}

/// Pass@k accuracy (%) and the change against the no-teaching baseline,
/// one row per condition. Several reports share one table when their ks
/// agree; baseline rows are printed once per report.
pub fn render_markdown(reports: &[EvaluationReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::from("| Condition |");
    let mut rule = String::from("|---|");
    for k in &first.ks {
        out.push_str(&format!(" Pass@{k} | Δ |"));
        rule.push_str("---:|---:|");
    }
    out.push('\n');
    out.push_str(&rule);
    out.push('\n');
    for report in reports {
        let base = baseline(report);
        for row in rows(report) {
            out.push_str(&format!("| {} |", row.condition));
            for k in &report.ks {
                let v = row.values[k];
                let delta = match base {
                    Some(b) if !std::ptr::eq(row.values, b) => {
                        format!("{:+.2}", 100.0 * (v - b[k]))
                    }
                    _ => "–".to_string(),
                };
                out.push_str(&format!(" {:.2} | {delta} |", 100.0 * v));
            }
            out.push('\n');
        }
    }
    out.push('\n');
    for report in reports {
        out.push_str(&format!(
            "`{}`: {} questions, n = {}, config {}",
            report.label,
            report.questions.len(),
            report.n,
            report.config_hash
        ));
        if !report.excluded.is_empty() {
            out.push_str(&format!(", {} excluded", report.excluded.len()));
        }
        out.push('\n');
    }
    out
}

/// Long format: one line per (condition, k) at full precision.
pub fn render_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("label,config_hash,condition,k,pass_at_k,delta_vs_pre\n");
    for report in reports {
        let base = baseline(report);
        for row in rows(report) {
            for k in &report.ks {
                let v = row.values[k];
                let delta = base.map(|b| (v - b[k]).to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{k},{v},{delta}\n",
                    csv_field(&report.label),
                    report.config_hash,
                    csv_field(&row.condition)
                ));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
