use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::fixtures::{choice_question, math_tree};
use crate::gateway::{FailureKind, Gateway, Matcher, Role, Rule, Script, ScriptedProvider, Step};
use crate::knowledge::{DifficultyLevel, ExampleOrigin, ExampleProblem, KnowledgePath};
use crate::prompt::{Language, TemplateSet};

const STATEMENT: &str = "函数 f(x)=x^2 在区间 (0,1) 上是";

fn paths() -> Vec<KnowledgePath> {
    let tree = math_tree();
    vec![
        tree.path_to_leaf("fn-monotonic").unwrap(),
        tree.path_to_leaf("fn-parity").unwrap(),
    ]
}

fn briefing() -> TeacherBriefing {
    let q = choice_question("q1", STATEMENT, "A");
    TeacherBriefing::new(
        "数学",
        &paths(),
        Vec::new(),
        TeachingMode::KnowledgeOnly,
        &q,
    )
    .unwrap()
}

fn example(level: u8, verified: bool) -> ExampleProblem {
    ExampleProblem {
        path: paths()[0].clone(),
        level: DifficultyLevel::new(level).unwrap(),
        statement: format!("例题陈述{level}"),
        answer: "增".into(),
        solution: format!("例题解答{level}"),
        origin: ExampleOrigin::Generated,
        verified,
    }
}

fn scripted(script: Script) -> (Gateway, Arc<ScriptedProvider>) {
    let p = Arc::new(ScriptedProvider::new(script).unwrap());
    (Gateway::scripted("g", p.clone()), p)
}

struct Run {
    session: TeachingSession,
    teacher: Arc<ScriptedProvider>,
    student: Arc<ScriptedProvider>,
}

async fn run(teacher: Script, student: Script, out: Option<&std::path::Path>) -> Run {
    let (tg, tp) = scripted(teacher);
    let (sg, sp) = scripted(student);
    let templates = TemplateSet::builtin(Language::Zh);
    let engine = TeachingEngine {
        teacher: &tg,
        student: &sg,
        templates: &templates,
        config: SessionConfig::default(),
    };
    let session = engine
        .run_session(briefing(), "q1", "session-0", out)
        .await
        .unwrap();
    Run {
        session,
        teacher: tp,
        student: sp,
    }
}

fn student_ok() -> Script {
    Script::rules(vec![Rule::new(Matcher::Any, "明白了")])
}

#[test]
fn teach_done_variant_table() {
    let table = [
        ("好的，今天就到这里。**teach done**", true),
        ("we are not done teaching", false),
        ("TEACH   DONE", true),
        ("Teach Done", true),
        ("`teach done`", true),
        ("<b>Teach</b> <i>done</i>", true),
        ("teach\n\tdone", true),
        ("__teach__ __done__", true),
        ("【teach done】", true),
        ("teach　done", true),
        ("teachdone", false),
        ("teach-done", false),
        ("done teach", false),
        ("", false),
    ];
    for (text, expected) in table {
        assert_eq!(detect_teach_done(text), expected, "{text:?}");
    }
}

/// Independent check for the negative example: split on anything that is not
/// a letter and look for the two words next to each other.
#[test]
fn not_done_teaching_has_no_contiguous_token() {
    let text = "we are not done teaching";
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    let adjacent = words.windows(2).any(|w| w[0] == "teach" && w[1] == "done");
    assert!(!adjacent);
    assert_eq!(detect_teach_done(text), adjacent);
}

proptest! {
    #[test]
    fn detection_survives_case_markup_and_spacing(
        prefix in "[a-z ]{0,12}",
        wrap in prop::sample::select(vec!["", "**", "__", "`", "~~"]),
        gap in "[ \t\n]{1,4}",
        upper in any::<bool>(),
    ) {
        let token = format!("{wrap}teach{gap}done{wrap}");
        let token = if upper { token.to_uppercase() } else { token };
        let text = format!("{prefix} {token}");
        prop_assert!(detect_teach_done(&text));
    }

    #[test]
    fn text_without_teach_never_fires(s in "[a-su-z ,.*]{0,40}") {
        prop_assert!(!detect_teach_done(&s));
    }
}

#[tokio::test]
async fn token_on_first_turn() {
    let r = run(
        Script::sequence(vec![Step::reply("直接 teach done")]),
        student_ok(),
        None,
    )
    .await;
    assert_eq!(r.session.turns.len(), 1);
    assert_eq!(r.session.termination, Termination::Token);
    assert_eq!(r.student.call_count(), 0);
    r.session.check().unwrap();
}

#[tokio::test]
async fn never_terminating_teacher_hits_the_cap() {
    let r = run(
        Script::rules(vec![Rule::new(Matcher::Any, "继续讲解")]),
        student_ok(),
        None,
    )
    .await;
    assert_eq!(r.session.teacher_turns(), 30);
    assert_eq!(r.session.turns.len(), 59);
    assert_eq!(r.session.termination, Termination::TurnCap);
    assert_eq!(r.teacher.call_count(), 30);
    assert_eq!(r.student.call_count(), 29);
    r.session.check().unwrap();
}

#[tokio::test]
async fn three_explanations_then_token() {
    let teacher = Script::sequence(vec![
        Step::reply("讲解一"),
        Step::reply("讲解二"),
        Step::reply("讲解三"),
        Step::reply("掌握了。**Teach Done**"),
    ]);
    let student = Script::sequence(vec![
        Step::reply("答一"),
        Step::reply("答二"),
        Step::reply("答三"),
    ]);
    let r = run(teacher, student, None).await;
    let speakers: Vec<Speaker> = r.session.turns.iter().map(|t| t.speaker).collect();
    use Speaker::{Student as S, Teacher as T};
    assert_eq!(speakers, [T, S, T, S, T, S, T]);
    assert_eq!(r.session.teacher_turns(), 4);
    assert_eq!(r.session.termination, Termination::Token);

    // Second teacher call: own line as assistant, student line as user.
    let call = &r.teacher.calls()[1];
    let roles: Vec<Role> = call.messages.iter().map(|m| m.role).collect();
    assert_eq!(roles, [Role::System, Role::Assistant, Role::User]);
    assert_eq!(call.messages[2].content, "答一");
    // First student call: teacher line as user, under the student system prompt.
    let call = &r.student.calls()[0];
    assert_eq!(call.messages.len(), 2);
    assert!(call.messages[0].content.contains("学生"));
    assert_eq!(
        (call.messages[1].role, call.messages[1].content.as_str()),
        (Role::User, "讲解一")
    );
}

#[tokio::test]
async fn provider_failure_keeps_partial_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let path = transcript_path(dir.path(), "q1", "session-0");
    let teacher = Script::rules(vec![Rule::new(Matcher::Any, "讲解")]);
    let mut steps = vec![Step::reply("好")];
    steps.extend(std::iter::repeat_n(Step::Fail(FailureKind::Transient), 11));
    let r = run(teacher, Script::sequence(steps), Some(&path)).await;
    assert_eq!(r.session.termination, Termination::ProviderError);
    assert_eq!(r.session.turns.len(), 3);
    assert!(r.session.error.as_deref().unwrap().starts_with("student"));
    let back = read_transcript(&path).unwrap();
    assert_eq!(back, r.session);
}

#[tokio::test]
async fn auth_failure_aborts_without_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let path = transcript_path(dir.path(), "q1", "session-0");
    let (tg, _) = scripted(Script::rules(vec![Rule::new(Matcher::Any, "讲解")]));
    let (sg, _) = scripted(Script::sequence(vec![Step::Fail(FailureKind::Auth)]));
    let templates = TemplateSet::builtin(Language::Zh);
    let engine = TeachingEngine {
        teacher: &tg,
        student: &sg,
        templates: &templates,
        config: SessionConfig::default(),
    };
    let err = engine
        .run_session(briefing(), "q1", "session-0", Some(&path))
        .await
        .unwrap_err();
    assert!(matches!(err, SessionError::Fatal(ref e) if e.is_auth()));
    assert!(!path.exists());
}

#[tokio::test]
async fn scripted_sessions_are_deterministic() {
    let teacher = || Script::sequence(vec![Step::reply("一"), Step::reply("teach done")]);
    let a = run(teacher(), student_ok(), None).await.session;
    let b = run(teacher(), student_ok(), None).await.session;
    assert_eq!(render_transcript(&a), render_transcript(&b));
}

#[test]
fn transcript_reader_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.transcript");
    let mut s = baseline_session(briefing(), &TemplateSet::builtin(Language::Zh), "q1").unwrap();
    s.turns.push(DialogueTurn {
        index: 0,
        speaker: Speaker::Student,
        content: "x".into(),
        latency: std::time::Duration::ZERO,
    });
    write_transcript(&path, &s).unwrap();
    assert!(read_transcript(&path).is_err());
    std::fs::write(&path, "").unwrap();
    assert!(read_transcript(&path).is_err());
}

#[test]
fn knowledge_only_prompt_lists_paths_without_examples() {
    let templates = TemplateSet::builtin(Language::Zh);
    let text = build_teacher_prompt(&briefing(), &templates).unwrap();
    assert!(text.contains("- 数学/代数/函数/单调性\n- 数学/代数/函数/奇偶性"));
    assert!(!text.contains("例题陈述"));
    assert!(!text.contains('{'));
}

#[test]
fn examples_prompt_carries_statements_and_solutions() {
    let q = choice_question("q1", STATEMENT, "A");
    let examples = vec![example(1, true), example(2, true)];
    let b =
        TeacherBriefing::new("数学", &paths(), examples, TeachingMode::WithExamples, &q).unwrap();
    let text = build_teacher_prompt(&b, &TemplateSet::builtin(Language::Zh)).unwrap();
    for needle in [
        "例题陈述1",
        "例题解答1",
        "例题陈述2",
        "例题解答2",
        "数学/代数/函数/奇偶性",
    ] {
        assert!(text.contains(needle), "{needle}");
    }
}

#[test]
fn briefing_rejections() {
    let q = choice_question("q1", STATEMENT, "A");
    let mut leaky = paths();
    leaky[0].display = format!("数学/{}", STATEMENT.replace(' ', ""));
    assert_eq!(
        TeacherBriefing::new("数学", &leaky, vec![], TeachingMode::KnowledgeOnly, &q),
        Err(BriefingError::Leak("knowledge_content"))
    );
    assert_eq!(
        TeacherBriefing::new("数学", &paths(), vec![], TeachingMode::WithExamples, &q),
        Err(BriefingError::NoExamples)
    );
    assert!(matches!(
        TeacherBriefing::new(
            "数学",
            &paths(),
            vec![example(1, false)],
            TeachingMode::WithExamples,
            &q
        ),
        Err(BriefingError::UnverifiedExample(_))
    ));
    let mut leaky_example = example(3, true);
    leaky_example.solution = format!("原题：{STATEMENT}");
    assert_eq!(
        TeacherBriefing::new(
            "数学",
            &paths(),
            vec![leaky_example],
            TeachingMode::WithExamples,
            &q
        ),
        Err(BriefingError::Leak("examples"))
    );
    assert_eq!(
        TeacherBriefing::new("数学", &[], vec![], TeachingMode::KnowledgeOnly, &q),
        Err(BriefingError::NoKnowledge)
    );
}

#[test]
fn student_prompt_variants() {
    let zh =
        build_student_prompt("数学", "- 数学/代数", &TemplateSet::builtin(Language::Zh)).unwrap();
    assert!(zh.contains("- 数学/代数") && zh.contains("学生"));
    let en = build_student_prompt(
        "mathematics",
        "- Math/Algebra",
        &TemplateSet::builtin(Language::En),
    )
    .unwrap();
    assert!(en.contains("- Math/Algebra") && en.contains("student"));
    assert!(matches!(
        build_student_prompt("数学", "  ", &TemplateSet::builtin(Language::Zh)),
        Err(StudentPromptError::NoKnowledge)
    ));
}

#[test]
fn baselines_have_no_turns_and_match() {
    let templates = TemplateSet::builtin(Language::Zh);
    let a = baseline_session(briefing(), &templates, "q1").unwrap();
    let b = baseline_session(briefing(), &templates, "q1").unwrap();
    assert!(a.turns.is_empty() && a.is_baseline());
    assert_eq!(a.termination, Termination::Token);
    assert_eq!(a, b);
    a.check().unwrap();
}
