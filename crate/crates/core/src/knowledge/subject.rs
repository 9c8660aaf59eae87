use serde::{Deserialize, Serialize};

use crate::prompt::Language;

/// Open-ended subject label. The seven Gaokao subjects ship as constants;
/// any other label is accepted verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Subject(String);

/// (English label, Chinese label) for the shipped subjects.
pub const GAOKAO_SUBJECTS: [(&str, &str); 7] = [
    ("Mathematics", "数学"),
    ("Physics", "物理"),
    ("Chemistry", "化学"),
    ("Biology", "生物"),
    ("History", "历史"),
    ("Geography", "地理"),
    ("Politics", "政治"),
];

impl Subject {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }

    pub fn mathematics() -> Self {
        Self::new(GAOKAO_SUBJECTS[0].0)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Label used for the `{field}` placeholder. Known subjects are rendered
    /// in the prompt language; anything else is passed through.
    pub fn field_label(&self, language: Language) -> &str {
        let key = self.0.trim();
        for (en, zh) in GAOKAO_SUBJECTS {
            if key.eq_ignore_ascii_case(en) || key == zh {
                return match language {
                    Language::Zh => zh,
                    Language::En => match en {
                        "Mathematics" => "mathematics",
                        "Physics" => "physics",
                        "Chemistry" => "chemistry",
                        "Biology" => "biology",
                        "History" => "history",
                        "Geography" => "geography",
                        _ => "politics",
                    },
                };
            }
        }
        &self.0
    }
}

impl std::fmt::Display for Subject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Subject {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}
