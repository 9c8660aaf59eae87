use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tag,
    Forge,
    Teach,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Tag, Stage::Forge, Stage::Teach, Stage::Evaluate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tag => "tag",
            Stage::Forge => "forge",
            Stage::Teach => "teach",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFlags {
    pub tagged: bool,
    pub forged: bool,
    pub taught: bool,
    pub evaluated: bool,
}

impl StageFlags {
    pub fn get(&self, stage: Stage) -> bool {
        match stage {
            Stage::Tag => self.tagged,
            Stage::Forge => self.forged,
            Stage::Teach => self.taught,
            Stage::Evaluate => self.evaluated,
        }
    }

    fn slot(&mut self, stage: Stage) -> &mut bool {
        match stage {
            Stage::Tag => &mut self.tagged,
            Stage::Forge => &mut self.forged,
            Stage::Teach => &mut self.taught,
            Stage::Evaluate => &mut self.evaluated,
        }
    }

    /// Flags only move from false to true.
    pub fn set(&mut self, stage: Stage) {
        *self.slot(stage) = true;
    }

    /// True when `self` can follow `earlier` without clearing a flag.
    pub fn extends(&self, earlier: &StageFlags) -> bool {
        Stage::ALL.iter().all(|&s| self.get(s) || !earlier.get(s))
    }

    /// A set flag with an unset predecessor.
    pub fn gap(&self) -> Option<(Stage, Stage)> {
        Stage::ALL
            .windows(2)
            .find(|w| self.get(w[1]) && !self.get(w[0]))
            .map(|w| (w[1], w[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config_hash: String,
    pub stages: StageFlags,
    pub endpoints: Vec<String>,
    pub tree_version: String,
}

impl RunManifest {
    pub fn new(config_hash: String, endpoints: Vec<String>, tree_version: String) -> Self {
        Self {
            run_id: uuid::Uuid::new_v4().to_string(),
            created_at: Utc::now(),
            config_hash,
            stages: StageFlags::default(),
            endpoints,
            tree_version,
        }
    }

    pub fn is_complete(&self) -> bool {
        Stage::ALL.iter().all(|&s| self.stages.get(s))
    }
}
