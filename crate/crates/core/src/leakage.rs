//! Guarding against the held-out question reaching the teacher.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::knowledge::Question;
use crate::teaching::{read_transcript, TeachingSession, TRANSCRIPT_EXT};
use crate::text::strip_whitespace;

/// True if `statement` occurs in `text` verbatim or once all whitespace is
/// removed from both.
pub fn contains_statement(text: &str, statement: &str) -> bool {
    let statement = statement.trim();
    if statement.is_empty() {
        return false;
    }
    text.contains(statement) || strip_whitespace(text).contains(&strip_whitespace(statement))
}

/// Where in a transcript the statement was found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeakSite {
    Briefing,
    TeacherSystem,
    Turn { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakFinding {
    pub transcript: PathBuf,
    pub question_id: String,
    pub site: LeakSite,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub transcripts_scanned: usize,
    /// Transcripts whose question id is not in the supplied question set.
    pub unknown_questions: Vec<PathBuf>,
    pub findings: Vec<LeakFinding>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty() && self.unknown_questions.is_empty()
    }
}

/// Every place the teacher could have seen `statement` in one session:
/// the briefing, its system prompt and every dialogue turn.
pub fn scan_session(session: &TeachingSession, statement: &str) -> Vec<LeakSite> {
    let mut sites = Vec::new();
    let briefing = serde_json::to_string(&session.briefing).expect("briefing serializes");
    let b = &session.briefing;
    let briefing_texts = [b.field.as_str(), b.knowledge_content.as_str()]
        .into_iter()
        .chain(
            b.examples
                .iter()
                .flat_map(|e| [e.statement.as_str(), e.answer.as_str(), e.solution.as_str()]),
        );
    if briefing_texts
        .into_iter()
        .any(|t| contains_statement(t, statement))
        || contains_statement(&briefing, statement)
    {
        sites.push(LeakSite::Briefing);
    }
    if contains_statement(&session.teacher_system, statement) {
        sites.push(LeakSite::TeacherSystem);
    }
    for t in &session.turns {
        if contains_statement(&t.content, statement) {
            sites.push(LeakSite::Turn { index: t.index });
        }
    }
    sites
}

/// All transcript files under `root`, in sorted order.
pub fn find_transcripts(root: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.extension().is_some_and(|e| e == TRANSCRIPT_EXT) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Scans every transcript under `root` against its own question's statement.
pub fn scan_transcripts(root: &Path, questions: &[Question]) -> io::Result<LeakageReport> {
    let statements: BTreeMap<&str, &str> = questions
        .iter()
        .map(|q| (q.id.as_str(), q.statement.as_str()))
        .collect();
    let mut report = LeakageReport::default();
    for path in find_transcripts(root)? {
        let session = read_transcript(&path)?;
        report.transcripts_scanned += 1;
        let Some(statement) = statements.get(session.question_id.as_str()) else {
            report.unknown_questions.push(path);
            continue;
        };
        for site in scan_session(&session, statement) {
            report.findings.push(LeakFinding {
                transcript: path.clone(),
                question_id: session.question_id.clone(),
                site,
            });
        }
    }
    Ok(report)
}
