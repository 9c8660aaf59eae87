//! Review aids for a freshly extracted tree. Findings are advisory; a human
//! signs off on the tree, the linter never changes it.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{KnowledgeNode, KnowledgeTree};
use crate::text::fold_key;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LintFinding {
    /// Name is empty once invisible characters and whitespace are removed.
    EmptyName { id: String },
    /// Siblings whose names are equal ignoring case and whitespace.
    NearDuplicateSiblings {
        parent_id: String,
        ids: Vec<String>,
        name: String,
    },
    /// A leaf hanging directly off the root.
    ShallowLeaf { id: String, name: String },
}

impl std::fmt::Display for LintFinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LintFinding::EmptyName { id } => write!(f, "empty name on node `{id}`"),
            LintFinding::NearDuplicateSiblings {
                parent_id,
                ids,
                name,
            } => write!(
                f,
                "near-duplicate siblings under `{parent_id}`: {} share name `{name}`",
                ids.join(", ")
            ),
            LintFinding::ShallowLeaf { id, name } => {
                write!(f, "leaf `{id}` ({name}) sits directly under the root")
            }
        }
    }
}

fn is_invisible(c: char) -> bool {
    c.is_control()
        || matches!(
            c,
            '\u{200B}'..='\u{200F}' | '\u{2060}'..='\u{2064}' | '\u{FEFF}' | '\u{00AD}'
        )
}

fn normalized_name(name: &str) -> String {
    let visible: String = name.chars().filter(|c| !is_invisible(*c)).collect();
    fold_key(&visible)
}

pub fn lint_tree(tree: &KnowledgeTree) -> Vec<LintFinding> {
    let mut findings = Vec::new();
    walk(tree.root(), 0, &mut findings);
    findings
}

fn walk(node: &KnowledgeNode, depth: usize, findings: &mut Vec<LintFinding>) {
    if normalized_name(&node.name).is_empty() {
        findings.push(LintFinding::EmptyName {
            id: node.id.clone(),
        });
    }
    if depth == 1 && node.is_leaf() {
        findings.push(LintFinding::ShallowLeaf {
            id: node.id.clone(),
            name: node.name.clone(),
        });
    }

    let mut groups: BTreeMap<String, Vec<&KnowledgeNode>> = BTreeMap::new();
    for child in &node.children {
        let key = normalized_name(&child.name);
        if !key.is_empty() {
            groups.entry(key).or_default().push(child);
        }
    }
    // Report groups in the order their first member was authored.
    let mut dups: Vec<_> = groups.into_values().filter(|g| g.len() > 1).collect();
    dups.sort_by_key(|g| {
        node.children
            .iter()
            .position(|c| c.id == g[0].id)
            .unwrap_or(usize::MAX)
    });
    for group in dups {
        findings.push(LintFinding::NearDuplicateSiblings {
            parent_id: node.id.clone(),
            ids: group.iter().map(|c| c.id.clone()).collect(),
            name: group[0].name.trim().to_string(),
        });
    }

    for child in &node.children {
        walk(child, depth + 1, findings);
    }
}
