use serde::{Deserialize, Serialize};

use super::KnowledgePath;

/// Difficulty on the three-step gradient: 1 in-class exercise, 2 unit quiz,
/// 3 exam-comparable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DifficultyLevel(u8);

impl DifficultyLevel {
    pub const ALL: [DifficultyLevel; 3] =
        [DifficultyLevel(1), DifficultyLevel(2), DifficultyLevel(3)];

    pub fn new(level: u8) -> Option<Self> {
        (1..=3).contains(&level).then_some(Self(level))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }
}

impl TryFrom<u8> for DifficultyLevel {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        Self::new(v).ok_or_else(|| format!("difficulty level {v} outside 1..=3"))
    }
}

impl From<DifficultyLevel> for u8 {
    fn from(l: DifficultyLevel) -> u8 {
        l.0
    }
}

impl std::fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Level {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrigin {
    Retrieved,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleProblem {
    pub path: KnowledgePath,
    pub level: DifficultyLevel,
    pub statement: String,
    pub answer: String,
    pub solution: String,
    pub origin: ExampleOrigin,
    pub verified: bool,
}

impl ExampleProblem {
    pub fn is_complete(&self) -> bool {
        !self.statement.trim().is_empty()
            && !self.answer.trim().is_empty()
            && !self.solution.trim().is_empty()
    }
}
