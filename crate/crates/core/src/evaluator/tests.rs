use std::sync::Arc;

use super::*;
use crate::fixtures::{choice_question, math_tree};
use crate::gateway::{
    FailureKind, Gateway, Matcher, Rule, Script, ScriptedProvider, Selection, Step,
};
use crate::prompt::{Language, TemplateSet};
use crate::teaching::{
    baseline_session, DialogueTurn, Speaker, TeacherBriefing, TeachingMode, TeachingSession,
    Termination,
};

fn student(rules: Vec<Rule>) -> (Gateway, Arc<ScriptedProvider>) {
    let p = Arc::new(ScriptedProvider::new(Script::rules(rules)).unwrap());
    (
        Gateway::scripted("student", p.clone()).with_max_retries(0),
        p,
    )
}

fn config(n: u32, seed: Option<u64>) -> EvaluationConfig {
    EvaluationConfig {
        samples_per_session: n,
        ks: vec![1],
        seed,
        ..EvaluationConfig::default()
    }
}

fn taught_session(phrase: &str) -> TeachingSession {
    let q = choice_question("q1", "题干", "A");
    let paths = [math_tree().path_to_leaf("fn-parity").unwrap()];
    let briefing =
        TeacherBriefing::new("数学", &paths, vec![], TeachingMode::KnowledgeOnly, &q).unwrap();
    let mut s = baseline_session(briefing, &TemplateSet::builtin(Language::Zh), "q1").unwrap();
    s.session_id = "session-0".into();
    s.turns = vec![
        DialogueTurn {
            index: 0,
            speaker: Speaker::Teacher,
            content: format!("记住 {phrase}"),
            latency: Default::default(),
        },
        DialogueTurn {
            index: 1,
            speaker: Speaker::Student,
            content: "好".into(),
            latency: Default::default(),
        },
        DialogueTurn {
            index: 2,
            speaker: Speaker::Teacher,
            content: "teach done".into(),
            latency: Default::default(),
        },
    ];
    s.termination = Termination::Token;
    s
}

#[tokio::test]
async fn always_correct_student() {
    let (g, _) = student(vec![Rule::new(Matcher::Any, "答案：A")]);
    let q = choice_question("q1", "题干", "A");
    let t = TemplateSet::builtin(Language::Zh);
    let recs = sample_answers(&g, &q, StudentContext::Pre, &t, &config(8, None))
        .await
        .unwrap();
    assert_eq!(recs.len(), 8);
    assert!(recs
        .iter()
        .all(|r| r.correct && r.phase == Phase::Pre && r.session_id == "baseline"));
    let idx: Vec<u32> = recs.iter().map(|r| r.sample_index).collect();
    assert_eq!(idx, (0..8).collect::<Vec<_>>());
}

#[tokio::test]
async fn planted_phrase_separates_pre_from_post() {
    let rules = vec![
        Rule::new(Matcher::contains("KEY-PHRASE"), "所以选 A"),
        Rule::new(Matcher::Any, "所以选 B"),
    ];
    let (g, p) = student(rules);
    let q = choice_question("q1", "题干", "A");
    let t = TemplateSet::builtin(Language::Zh);
    let cfg = config(8, None);
    let pre = sample_answers(&g, &q, StudentContext::Pre, &t, &cfg)
        .await
        .unwrap();
    let session = taught_session("KEY-PHRASE");
    let post = sample_answers(&g, &q, StudentContext::Post { session: &session }, &t, &cfg)
        .await
        .unwrap();
    assert_eq!(pre.iter().filter(|r| r.correct).count(), 0);
    assert_eq!(post.iter().filter(|r| r.correct).count(), 8);
    assert!(post.iter().all(|r| r.session_id == "session-0"));

    // The question message is the same in both phases and closes the context.
    let calls = p.calls();
    let pre_msgs = &calls[0].messages;
    let post_msgs = &calls[8].messages;
    assert_eq!(pre_msgs.len(), 1);
    assert_eq!(post_msgs.len(), 5);
    assert_eq!(pre_msgs.last(), post_msgs.last());
}

#[tokio::test]
async fn knowledge_only_adds_just_the_system_prompt() {
    let (g, p) = student(vec![Rule::new(Matcher::Any, "A")]);
    let q = choice_question("q1", "题干", "A");
    let t = TemplateSet::builtin(Language::Zh);
    let ctx = StudentContext::KnowledgeOnly {
        student_system: "系统：知识点",
    };
    let recs = sample_answers(&g, &q, ctx, &t, &config(2, None))
        .await
        .unwrap();
    assert!(recs.iter().all(|r| r.phase == Phase::KnowledgeOnly));
    let msgs = &p.calls()[0].messages;
    assert_eq!(msgs.len(), 2);
    assert_eq!(msgs[0].content, "系统：知识点");
}

#[tokio::test]
async fn quarter_correct_cycle_over_64_seeded_samples() {
    let steps = vec![
        Step::reply("A"),
        Step::reply("B"),
        Step::reply("C"),
        Step::reply("D"),
    ];
    let (g, _) = student(vec![Rule::cycle(Matcher::Any, steps, Selection::Seed)]);
    let q = choice_question("q1", "题干", "A");
    let t = TemplateSet::builtin(Language::Zh);
    let recs = sample_answers(&g, &q, StudentContext::Pre, &t, &config(64, Some(1000)))
        .await
        .unwrap();
    let c = recs.iter().filter(|r| r.correct).count();
    assert_eq!(c, 16);
    assert_eq!(pass_at_k(64, c as u64, 1).unwrap(), 0.25);
}

#[tokio::test]
async fn failed_sample_is_redrawn() {
    let steps = vec![Step::Fail(FailureKind::Transient), Step::reply("A")];
    let (g, p) = student(vec![Rule::cycle(Matcher::Any, steps, Selection::Counter)]);
    let q = choice_question("q1", "题干", "A");
    let t = TemplateSet::builtin(Language::Zh);
    let recs = sample_answers(&g, &q, StudentContext::Pre, &t, &config(1, None))
        .await
        .unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(p.call_count(), 2);
}

#[tokio::test]
async fn persistent_failures_give_a_partial_result() {
    let steps = vec![Step::Fail(FailureKind::Transient), Step::reply("A")];
    let (g, p) = student(vec![Rule::cycle(Matcher::Any, steps, Selection::Seed)]);
    let q = choice_question("q1", "题干", "A");
    let t = TemplateSet::builtin(Language::Zh);
    let mut cfg = config(4, Some(0));
    cfg.surplus = 3;
    match sample_answers(&g, &q, StudentContext::Pre, &t, &cfg).await {
        Err(SampleError::Partial {
            missing, records, ..
        }) => {
            assert_eq!(missing, 2);
            assert_eq!(records.len(), 2);
        }
        other => panic!("expected partial, got {other:?}"),
    }
    assert_eq!(p.call_count(), 4 + 3);
}

#[test]
fn config_validation() {
    assert!(EvaluationConfig::default().validate().is_ok());
    let c = EvaluationConfig {
        samples_per_session: 16,
        ..EvaluationConfig::default()
    };
    assert!(c.validate().unwrap_err().contains("max(ks)"));
}

// Aggregation.

fn recs(q: &str, phase: Phase, session: &str, n: u32, c: u32) -> Vec<AttemptRecord> {
    (0..n)
        .map(|i| AttemptRecord {
            question_id: q.into(),
            session_id: session.into(),
            phase,
            sample_index: i,
            raw_reply: String::new(),
            extracted: Some(if i < c { "A" } else { "B" }.into()),
            correct: i < c,
        })
        .collect()
}

fn spec(n: u32, ks: &[u32]) -> ReportSpec {
    ReportSpec {
        label: "teacher".into(),
        config_hash: "h".into(),
        n,
        ks: ks.to_vec(),
        excluded: Default::default(),
    }
}

#[test]
fn full_delta_on_single_question() {
    let mut all = recs("q1", Phase::Pre, "baseline", 64, 0);
    all.extend(recs("q1", Phase::Post, "session-0", 64, 64));
    let r = aggregate(&all, &spec(64, &DEFAULT_KS)).unwrap();
    assert_eq!(r.delta_vs_pre.as_ref().unwrap().mean[&1], 1.0);
    assert_eq!(r.delta_vs_pre.as_ref().unwrap().mean[&64], 1.0);
    assert!(r.delta_vs_knowledge_only.is_none());
}

#[test]
fn macro_average_over_two_questions() {
    let mut all = recs("q1", Phase::Post, "session-0", 4, 2);
    all.extend(recs("q2", Phase::Post, "session-0", 4, 4));
    let r = aggregate(&all, &spec(4, &[1])).unwrap();
    assert_eq!(r.post.unwrap().mean[&1], 0.75);
}

#[test]
fn session_mean_and_best() {
    let mut all = Vec::new();
    for (s, c) in [("session-0", 6), ("session-1", 7), ("session-2", 8)] {
        all.extend(recs("q1", Phase::Post, s, 10, c));
    }
    let r = aggregate(&all, &spec(10, &[1])).unwrap();
    let post = r.post.unwrap();
    let per_session: Vec<f64> = post.sessions.values().map(|p| p.aggregate[&1]).collect();
    assert_eq!(per_session, [0.6, 0.7, 0.8]);
    assert_eq!(post.mean[&1], 0.7);
    assert_eq!(post.best[&1], 0.8);
}

#[test]
fn incomplete_questions_are_excluded_and_mismatches_rejected() {
    let mut all = recs("q1", Phase::Pre, "baseline", 4, 1);
    all.extend(recs("q2", Phase::Pre, "baseline", 3, 1));
    all.extend(recs("q1", Phase::Post, "session-0", 4, 4));
    let r = aggregate(&all, &spec(4, &[1, 4])).unwrap();
    assert_eq!(r.questions, ["q1"]);
    assert!(r.excluded["q2"].contains("pre"));

    let mut dup = recs("q1", Phase::Pre, "baseline", 4, 1);
    dup.push(dup[0].clone());
    assert!(matches!(
        aggregate(&dup, &spec(4, &[1])),
        Err(AggregateError::Mismatch(_))
    ));
    let wrong_session = recs("q1", Phase::Post, "baseline", 4, 1);
    assert!(matches!(
        aggregate(&wrong_session, &spec(4, &[1])),
        Err(AggregateError::Mismatch(_))
    ));
    assert_eq!(
        aggregate(&[], &spec(4, &[1])),
        Err(AggregateError::NoQuestions)
    );
    assert!(matches!(
        aggregate(&dup, &spec(4, &[8])),
        Err(AggregateError::Spec(_))
    ));
}

#[test]
fn aggregation_is_order_independent_and_repeatable() {
    let mut all = recs("q1", Phase::Pre, "baseline", 8, 3);
    all.extend(recs("q2", Phase::KnowledgeOnly, "baseline", 8, 5));
    all.extend(recs("q2", Phase::Pre, "baseline", 8, 1));
    all.extend(recs("q1", Phase::KnowledgeOnly, "baseline", 8, 2));
    for s in ["session-0", "session-1"] {
        all.extend(recs("q1", Phase::Post, s, 8, 7));
        all.extend(recs("q2", Phase::Post, s, 8, 4));
    }
    let a = aggregate(&all, &spec(8, &[1, 4, 8])).unwrap();
    all.reverse();
    let b = aggregate(&all, &spec(8, &[1, 4, 8])).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let back: EvaluationReport = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(back, a);
    assert!(a.delta_vs_knowledge_only.is_some());
}

#[test]
fn baseline_only_report_and_rendering() {
    let mut all = recs("q1", Phase::Pre, "baseline", 4, 1);
    all.extend(recs("q1", Phase::KnowledgeOnly, "baseline", 4, 2));
    let r = aggregate(&all, &spec(4, &[1, 4])).unwrap();
    assert!(r.post.is_none() && r.delta_vs_pre.is_none());
    let md = render_markdown(std::slice::from_ref(&r));
    assert!(md.contains("| No teaching | 25.00 | – | 100.00 | – |"));
    assert!(md.contains("| Knowledge only | 50.00 | +25.00 |"));
    assert!(!md.contains("best"));
    let csv = render_csv(&[r]);
    assert!(csv.starts_with("label,config_hash,condition,k,pass_at_k,delta_vs_pre\n"));
    assert!(csv.contains("teacher,h,Knowledge only,1,0.5,0.25\n"));
}
