//! Held-out questions, their record file format and the count manifest.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{KnowledgePath, KnowledgeTree, Subject, TreeError};

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: question `{id}` is invalid: {reason}")]
    Invalid {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("line {line}: question `{id}` is tagged with unknown node id `{node_id}`")]
    UnknownTagNode {
        line: usize,
        id: String,
        node_id: String,
    },
    #[error("line {line}: question `{id}` has an invalid tag: {source}")]
    BadTag {
        line: usize,
        id: String,
        #[source]
        source: TreeError,
    },
    #[error("line {line}: question `{id}` was tagged against tree version {found}, loaded tree is {expected}")]
    VersionMismatch {
        line: usize,
        id: String,
        expected: String,
        found: String,
    },
    #[error("line {line}: duplicate question id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("manifest parse error: {0}")]
    Manifest(serde_json::Error),
    #[error("dataset does not match manifest: {0}")]
    ManifestMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub subject: Subject,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<BTreeMap<String, String>>,
    pub reference_answer: String,
    #[serde(default)]
    pub tags: Vec<KnowledgePath>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Question {
    pub fn is_multiple_choice(&self) -> bool {
        self.choices.is_some()
    }

    /// Choice labels in order, or empty for free-response items.
    pub fn choice_labels(&self) -> Vec<&str> {
        self.choices
            .as_ref()
            .map(|c| c.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Statement followed by the labeled options, as shown to models.
    pub fn render(&self) -> String {
        let mut out = self.statement.trim_end().to_string();
        if let Some(choices) = &self.choices {
            for (label, text) in choices {
                out.push('\n');
                out.push_str(label);
                out.push_str(". ");
                out.push_str(text.trim());
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.statement.trim().is_empty() {
            return Err("empty statement".into());
        }
        match &self.choices {
            Some(choices) => {
                if choices.is_empty() {
                    return Err("choices present but empty".into());
                }
                for label in choices.keys() {
                    if !is_choice_label(label) {
                        return Err(format!("choice label `{label}` is not a single letter A-Z"));
                    }
                }
                let answer = normalize_choice_answer(&self.reference_answer);
                if answer.is_empty() {
                    return Err("reference answer names no choice".into());
                }
                if let Some(bad) = answer
                    .chars()
                    .find(|c| !choices.contains_key(&c.to_string()))
                {
                    return Err(format!(
                        "reference answer letter `{bad}` is not a choice label"
                    ));
                }
                if answer != self.reference_answer {
                    return Err("reference answer is not normalized".into());
                }
            }
            None => {
                if self.reference_answer.trim().is_empty() {
                    return Err("empty reference answer".into());
                }
            }
        }
        Ok(())
    }
}

fn is_choice_label(label: &str) -> bool {
    let mut chars = label.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_ascii_uppercase())
}

/// Normalizes a multiple-choice key to an ordered, deduplicated letter set:
/// `"c, a"` and `"ＡＣ"` both become `"AC"`.
pub fn normalize_choice_answer(raw: &str) -> String {
    let mut letters: Vec<char> = raw
        .chars()
        .filter_map(|c| {
            let c = fullwidth_to_ascii(c);
            c.is_ascii_alphabetic().then(|| c.to_ascii_uppercase())
        })
        .collect();
    letters.sort_unstable();
    letters.dedup();
    letters.into_iter().collect()
}

/// Maps full-width Latin letters to their ASCII forms.
pub fn fullwidth_to_ascii(c: char) -> char {
    match c {
        'Ａ'..='Ｚ' | 'ａ'..='ｚ' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
        _ => c,
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ChoicesField {
    Labeled(BTreeMap<String, String>),
    Ordered(Vec<String>),
}

/// One line of the question file.
#[derive(Debug, Deserialize)]
struct QuestionRecord {
    id: String,
    subject: Subject,
    statement: String,
    #[serde(default)]
    choices: Option<ChoicesField>,
    reference_answer: String,
    #[serde(default)]
    tags: Vec<Vec<String>>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    tree_version: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<Question>,
    pub counts: BTreeMap<Subject, usize>,
    pub tree_version: String,
}

/// Reads one JSON record per line. Blank lines are skipped; any invalid
/// record fails the load with its line number.
pub fn load_questions<R: BufRead>(
    reader: R,
    tree: &KnowledgeTree,
) -> Result<QuestionSet, QuestionError> {
    let mut set = QuestionSet {
        tree_version: tree.version().to_string(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| QuestionError::Io {
            path: "<stream>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord =
            serde_json::from_str(&line).map_err(|source| QuestionError::Malformed {
                line: line_no,
                source,
            })?;
        let question = into_question(record, tree, line_no)?;
        if !seen.insert(question.id.clone()) {
            return Err(QuestionError::DuplicateId {
                line: line_no,
                id: question.id,
            });
        }
        *set.counts.entry(question.subject.clone()).or_default() += 1;
        set.questions.push(question);
    }
    Ok(set)
}

pub fn load_questions_file(
    path: &Path,
    tree: &KnowledgeTree,
) -> Result<QuestionSet, QuestionError> {
    let file = std::fs::File::open(path).map_err(|source| QuestionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_questions(std::io::BufReader::new(file), tree)
}

fn into_question(
    record: QuestionRecord,
    tree: &KnowledgeTree,
    line: usize,
) -> Result<Question, QuestionError> {
    let id = record.id;
    if let Some(found) = record.tree_version {
        if found != tree.version() {
            return Err(QuestionError::VersionMismatch {
                line,
                id,
                expected: tree.version().to_string(),
                found,
            });
        }
    }
    let choices = record.choices.map(|c| match c {
        ChoicesField::Labeled(map) => map,
        ChoicesField::Ordered(list) => list
            .into_iter()
            .enumerate()
            .map(|(i, text)| (((b'A' + i as u8) as char).to_string(), text))
            .collect(),
    });
    let reference_answer = if choices.is_some() {
        normalize_choice_answer(&record.reference_answer)
    } else {
        record.reference_answer.trim().to_string()
    };

    let mut tags: Vec<KnowledgePath> = Vec::new();
    for ids in &record.tags {
        if let Some(unknown) = ids.iter().find(|n| !tree.contains(n)) {
            return Err(QuestionError::UnknownTagNode {
                line,
                id,
                node_id: unknown.clone(),
            });
        }
        let path = tree
            .resolve_tag(ids)
            .map_err(|source| QuestionError::BadTag {
                line,
                id: id.clone(),
                source,
            })?;
        if !tags.contains(&path) {
            tags.push(path);
        }
    }

    let question = Question {
        id,
        subject: record.subject,
        statement: record.statement,
        choices,
        reference_answer,
        tags,
        source: record.source,
    };
    question
        .validate()
        .map_err(|reason| QuestionError::Invalid {
            line,
            id: question.id.clone(),
            reason,
        })?;
    Ok(question)
}

/// Expected per-subject counts, checked after loading a dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_version: Option<String>,
    pub counts: BTreeMap<Subject, usize>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self, QuestionError> {
        serde_json::from_str(text).map_err(QuestionError::Manifest)
    }

    pub fn check(&self, set: &QuestionSet) -> Result<(), QuestionError> {
        if let Some(v) = &self.tree_version {
            if v != &set.tree_version {
                return Err(QuestionError::ManifestMismatch(format!(
                    "manifest expects tree version {v}, dataset was loaded against {}",
                    set.tree_version
                )));
            }
        }
        let mut problems = Vec::new();
        for (subject, expected) in &self.counts {
            let found = set.counts.get(subject).copied().unwrap_or(0);
            if found != *expected {
                problems.push(format!("{subject}: expected {expected}, found {found}"));
            }
        }
        for (subject, found) in &set.counts {
            if !self.counts.contains_key(subject) {
                problems.push(format!(
                    "{subject}: {found} questions but no manifest entry"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(QuestionError::ManifestMismatch(problems.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::KnowledgeNode;

    fn tree() -> KnowledgeTree {
        KnowledgeTree::new(
            Subject::mathematics(),
            KnowledgeNode::branch(
                "math",
                "数学",
                vec![KnowledgeNode::branch(
                    "fn",
                    "函数",
                    vec![
                        KnowledgeNode::leaf("fn.def", "函数的概念"),
                        KnowledgeNode::leaf("fn.mono", "单调性"),
                    ],
                )],
            ),
        )
        .unwrap()
    }

    fn record(id: &str, tags: &str) -> String {
        format!(
            r#"{{"id":"{id}","subject":"Mathematics","statement":"函数 f(x)=x^2 的定义域是","choices":{{"A":"R","B":"[0,+∞)","C":"(0,+∞)","D":"∅"}},"reference_answer":"a","tags":{tags}}}"#
        )
    }

    #[test]
    fn empty_input_gives_empty_set() {
        let set = load_questions("".as_bytes(), &tree()).unwrap();
        assert!(set.questions.is_empty());
        assert!(set.counts.is_empty());
    }

    #[test]
    fn loads_and_resolves_tags() {
        let text = record("q1", r#"[["math","fn","fn.def"],["fn.mono"]]"#);
        let set = load_questions(text.as_bytes(), &tree()).unwrap();
        let q = &set.questions[0];
        assert_eq!(q.reference_answer, "A");
        assert_eq!(q.tags.len(), 2);
        assert_eq!(q.tags[1].node_ids, vec!["math", "fn", "fn.mono"]);
        assert_eq!(set.counts[&Subject::mathematics()], 1);
    }

    #[test]
    fn unknown_tag_node_is_named() {
        let text = record("q1", r#"[["math","fn","fn.nope"]]"#);
        let err = load_questions(text.as_bytes(), &tree()).unwrap_err();
        assert!(
            matches!(&err, QuestionError::UnknownTagNode { node_id, .. } if node_id == "fn.nope")
        );
        assert!(err.to_string().contains("fn.nope"));
    }

    #[test]
    fn malformed_and_invalid_records() {
        let err = load_questions("{\"id\":1}".as_bytes(), &tree()).unwrap_err();
        assert!(matches!(err, QuestionError::Malformed { line: 1, .. }));

        let text = r#"{"id":"q","subject":"Mathematics","statement":"x","choices":["a","b"],"reference_answer":"E"}"#;
        let err = load_questions(text.as_bytes(), &tree()).unwrap_err();
        assert!(matches!(err, QuestionError::Invalid { .. }), "{err}");

        let text = r#"{"id":"q","subject":"Mathematics","statement":"  ","reference_answer":"1"}"#;
        assert!(load_questions(text.as_bytes(), &tree()).is_err());
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = r#"{"id":"q","subject":"Mathematics","statement":"x?","reference_answer":"1","tree_version":"abc"}"#;
        assert!(matches!(
            load_questions(text.as_bytes(), &tree()).unwrap_err(),
            QuestionError::VersionMismatch { .. }
        ));
    }

    #[test]
    fn manifest_with_166_math_questions() {
        let t = tree();
        let text: String = (0..166)
            .map(|i| record(&format!("m{i:03}"), r#"[["fn.def"]]"#) + "\n")
            .collect();
        let set = load_questions(text.as_bytes(), &t).unwrap();
        assert_eq!(set.questions.len(), 166);
        let manifest = DatasetManifest::from_json(r#"{"counts":{"Mathematics":166}}"#).unwrap();
        manifest.check(&set).unwrap();
        let wrong = DatasetManifest::from_json(r#"{"counts":{"Mathematics":165}}"#).unwrap();
        assert!(wrong.check(&set).is_err());
    }

    #[test]
    fn choice_normalization() {
        assert_eq!(normalize_choice_answer("c, a"), "AC");
        assert_eq!(normalize_choice_answer("ＡＣ"), "AC");
        assert_eq!(normalize_choice_answer("BB"), "B");
    }
}
