//! Transcript files: a header line followed by one line per turn.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::briefing::TeacherBriefing;
use super::session::{DialogueTurn, TeachingSession, Termination};
use crate::artifact::write_atomic;
use crate::text::file_stem;

pub const TRANSCRIPT_EXT: &str = "transcript";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    session_id: String,
    question_id: String,
    briefing: TeacherBriefing,
    teacher_system: String,
    student_system: String,
    termination: Termination,
    turn_cap: u32,
    turn_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(Box<Header>),
    Turn(DialogueTurn),
}

/// `{root}/{question_id}/{session_id}.transcript`, with unsafe ids hashed.
pub fn transcript_path(root: &Path, question_id: &str, session_id: &str) -> PathBuf {
    root.join(file_stem(question_id))
        .join(format!("{}.{TRANSCRIPT_EXT}", file_stem(session_id)))
}

pub fn render_transcript(session: &TeachingSession) -> String {
    let header = Line::Header(Box::new(Header {
        session_id: session.session_id.clone(),
        question_id: session.question_id.clone(),
        briefing: session.briefing.clone(),
        teacher_system: session.teacher_system.clone(),
        student_system: session.student_system.clone(),
        termination: session.termination,
        turn_cap: session.turn_cap,
        turn_count: session.turns.len(),
        error: session.error.clone(),
    }));
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for t in &session.turns {
        out.push_str(&serde_json::to_string(&Line::Turn(t.clone())).expect("turn serializes"));
        out.push('\n');
    }
    out
}

pub fn write_transcript(path: &Path, session: &TeachingSession) -> io::Result<()> {
    write_atomic(path, render_transcript(session).as_bytes())
}

fn invalid(path: &Path, msg: impl std::fmt::Display) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidData,
        format!("{}: {msg}", path.display()),
    )
}

/// Reads a transcript back and checks its structural invariants.
pub fn read_transcript(path: &Path) -> io::Result<TeachingSession> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = match lines.next().map(serde_json::from_str::<Line>) {
        Some(Ok(Line::Header(h))) => *h,
        Some(Err(e)) => return Err(invalid(path, e)),
        _ => return Err(invalid(path, "missing header")),
    };
    let mut turns = Vec::new();
    for l in lines {
        match serde_json::from_str::<Line>(l).map_err(|e| invalid(path, e))? {
            Line::Turn(t) => turns.push(t),
            Line::Header(_) => return Err(invalid(path, "second header")),
        }
    }
    if turns.len() != header.turn_count {
        return Err(invalid(
            path,
            format!(
                "header announces {} turns, found {}",
                header.turn_count,
                turns.len()
            ),
        ));
    }
    let session = TeachingSession {
        session_id: header.session_id,
        question_id: header.question_id,
        briefing: header.briefing,
        teacher_system: header.teacher_system,
        student_system: header.student_system,
        turns,
        termination: header.termination,
        turn_cap: header.turn_cap,
        error: header.error,
    };
    session.check().map_err(|e| invalid(path, e))?;
    Ok(session)
}
