//! Domain data: the syllabus tree, questions, example problems, and the
//! checks that keep them consistent.

mod example;
mod lint;
mod question;
mod subject;
mod tree;

pub use example::{DifficultyLevel, ExampleOrigin, ExampleProblem};
pub use lint::{lint_tree, LintFinding};
pub use question::fullwidth_to_ascii;
pub use question::{
    load_questions, load_questions_file, normalize_choice_answer, DatasetManifest, Question,
    QuestionError, QuestionSet,
};
pub use subject::{Subject, GAOKAO_SUBJECTS};
pub use tree::{KnowledgeNode, KnowledgePath, KnowledgeTree, TreeDocument, TreeError};
