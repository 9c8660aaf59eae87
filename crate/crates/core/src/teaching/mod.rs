//! Leakage-controlled teacher/student dialogue.

mod briefing;
mod session;
mod transcript;

pub use briefing::{
    build_student_prompt, build_teacher_prompt, render_knowledge, BriefingError,
    StudentPromptError, TeacherBriefing, TeachingMode,
};
pub use session::{
    baseline_session, detect_teach_done, DialogueTurn, SessionConfig, SessionError, Speaker,
    TeachingEngine, TeachingSession, Termination, BASELINE_SESSION_ID, DEFAULT_TURN_CAP,
};
pub use transcript::{
    read_transcript, render_transcript, transcript_path, write_transcript, TRANSCRIPT_EXT,
};

#[cfg(test)]
mod tests;
