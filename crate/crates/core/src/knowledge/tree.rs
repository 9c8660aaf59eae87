//! The syllabus hierarchy and the root-to-leaf paths used as knowledge tags.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Subject;
use crate::digest::sha256_hex;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("tree document does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read tree file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate node id `{id}` (under `{first_parent}` and again under `{second_parent}`)")]
    DuplicateId {
        id: String,
        first_parent: String,
        second_parent: String,
    },
    #[error("cycle detected: node id `{id}` reappears below itself ({chain})")]
    Cycle { id: String, chain: String },
    #[error("node under `{parent}` has an empty id")]
    EmptyId { parent: String },
    #[error("node `{id}` has an empty name")]
    EmptyName { id: String },
    #[error("root `{id}` has no children")]
    EmptyRoot { id: String },
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is not a leaf")]
    NotALeaf(String),
    #[error("invalid knowledge path {ids:?}: {reason}")]
    InvalidPath { ids: Vec<String>, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub children: Vec<KnowledgeNode>,
}

impl KnowledgeNode {
    pub fn leaf(id: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            children: Vec::new(),
        }
    }

    pub fn branch(
        id: impl Into<String>,
        name: impl Into<String>,
        children: Vec<KnowledgeNode>,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// On-disk form of a tree: `{ "subject": ..., "root": {id, name, children[]} }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeDocument {
    pub subject: Subject,
    pub root: KnowledgeNode,
}

#[derive(Debug, Clone)]
struct NodeInfo {
    name: String,
    parent: Option<String>,
    depth: usize,
    children: Vec<String>,
}

/// A validated syllabus tree. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TreeDocument", into = "TreeDocument")]
pub struct KnowledgeTree {
    subject: Subject,
    root: KnowledgeNode,
    version: String,
    index: HashMap<String, NodeInfo>,
}

impl PartialEq for KnowledgeTree {
    fn eq(&self, other: &Self) -> bool {
        self.subject == other.subject && self.root == other.root
    }
}

impl TryFrom<TreeDocument> for KnowledgeTree {
    type Error = TreeError;

    fn try_from(doc: TreeDocument) -> Result<Self, TreeError> {
        KnowledgeTree::new(doc.subject, doc.root)
    }
}

impl From<KnowledgeTree> for TreeDocument {
    fn from(tree: KnowledgeTree) -> Self {
        TreeDocument {
            subject: tree.subject,
            root: tree.root,
        }
    }
}

/// A root-to-leaf chain of node ids; the unit attached to questions as a tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KnowledgePath {
    pub node_ids: Vec<String>,
    pub display: String,
}

impl KnowledgePath {
    pub fn leaf_id(&self) -> &str {
        self.node_ids.last().map(String::as_str).unwrap_or_default()
    }
}

impl std::fmt::Display for KnowledgePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.display)
    }
}

impl KnowledgeTree {
    pub fn new(subject: Subject, root: KnowledgeNode) -> Result<Self, TreeError> {
        let index = build_index(&root)?;
        if root.children.is_empty() {
            return Err(TreeError::EmptyRoot { id: root.id });
        }
        let version = tree_version(&root);
        Ok(Self {
            subject,
            root,
            version,
            index,
        })
    }

    /// Parses and validates a tree document.
    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let doc: TreeDocument = serde_json::from_str(text)?;
        Self::try_from(doc)
    }

    pub fn load(path: &Path) -> Result<Self, TreeError> {
        let text = std::fs::read_to_string(path).map_err(|source| TreeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn subject(&self) -> &Subject {
        &self.subject
    }

    pub fn root(&self) -> &KnowledgeNode {
        &self.root
    }

    /// Content hash over every node id, name and the child ordering.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn name_of(&self, id: &str) -> Option<&str> {
        self.index.get(id).map(|n| n.name.as_str())
    }

    pub fn depth_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|n| n.depth)
    }

    pub fn is_leaf(&self, id: &str) -> Option<bool> {
        self.index.get(id).map(|n| n.children.is_empty())
    }

    /// Direct children of `id` as `(id, name)` pairs, in authored order.
    pub fn children_of(&self, id: &str) -> Option<Vec<(&str, &str)>> {
        let info = self.index.get(id)?;
        Some(
            info.children
                .iter()
                .map(|c| (c.as_str(), self.index[c].name.as_str()))
                .collect(),
        )
    }

    pub fn node_count(&self) -> usize {
        self.index.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.index
            .values()
            .filter(|n| n.children.is_empty())
            .count()
    }

    /// One path per leaf, in depth-first (authored) order.
    pub fn enumerate_paths(&self) -> Vec<KnowledgePath> {
        let mut out = Vec::new();
        let mut ids = Vec::new();
        let mut names = Vec::new();
        collect_paths(&self.root, &mut ids, &mut names, &mut out);
        out
    }

    /// The unique root-to-leaf path ending at `leaf_id`.
    pub fn path_to_leaf(&self, leaf_id: &str) -> Result<KnowledgePath, TreeError> {
        let info = self
            .index
            .get(leaf_id)
            .ok_or_else(|| TreeError::UnknownNode(leaf_id.to_string()))?;
        if !info.children.is_empty() {
            return Err(TreeError::NotALeaf(leaf_id.to_string()));
        }
        let mut chain = vec![leaf_id.to_string()];
        let mut cursor = info.parent.clone();
        while let Some(id) = cursor {
            cursor = self.index[&id].parent.clone();
            chain.push(id);
        }
        chain.reverse();
        Ok(self.path_from_ids(chain))
    }

    fn path_from_ids(&self, node_ids: Vec<String>) -> KnowledgePath {
        let display = node_ids
            .iter()
            .map(|id| self.index[id].name.as_str())
            .collect::<Vec<_>>()
            .join("/");
        KnowledgePath { node_ids, display }
    }

    /// Resolves a tag given as an id chain. The chain must end at a leaf and
    /// follow parent-to-child edges; leading ancestors may be omitted.
    pub fn resolve_tag(&self, ids: &[String]) -> Result<KnowledgePath, TreeError> {
        let Some(last) = ids.last() else {
            return Err(TreeError::InvalidPath {
                ids: Vec::new(),
                reason: "empty tag".into(),
            });
        };
        for id in ids {
            if !self.contains(id) {
                return Err(TreeError::UnknownNode(id.clone()));
            }
        }
        let full = self.path_to_leaf(last)?;
        if !full.node_ids.ends_with(ids) {
            return Err(TreeError::InvalidPath {
                ids: ids.to_vec(),
                reason: "ids do not form a parent-to-child chain".into(),
            });
        }
        Ok(full)
    }

    /// Checks every path invariant: starts at the root, ends at a leaf, each
    /// consecutive pair is an edge, and the display matches the names.
    pub fn check_path(&self, path: &KnowledgePath) -> Result<(), TreeError> {
        let invalid = |reason: &str| TreeError::InvalidPath {
            ids: path.node_ids.clone(),
            reason: reason.to_string(),
        };
        if path.node_ids.first().map(String::as_str) != Some(self.root.id.as_str()) {
            return Err(invalid("does not start at the root"));
        }
        for id in &path.node_ids {
            if !self.contains(id) {
                return Err(TreeError::UnknownNode(id.clone()));
            }
        }
        for pair in path.node_ids.windows(2) {
            if self.index[&pair[1]].parent.as_deref() != Some(pair[0].as_str()) {
                return Err(invalid("consecutive ids are not a parent-to-child edge"));
            }
        }
        if self.is_leaf(path.leaf_id()) != Some(true) {
            return Err(invalid("does not end at a leaf"));
        }
        if self.path_from_ids(path.node_ids.clone()).display != path.display {
            return Err(invalid("display does not match node names"));
        }
        Ok(())
    }
}

fn collect_paths(
    node: &KnowledgeNode,
    ids: &mut Vec<String>,
    names: &mut Vec<String>,
    out: &mut Vec<KnowledgePath>,
) {
    ids.push(node.id.clone());
    names.push(node.name.clone());
    if node.children.is_empty() {
        out.push(KnowledgePath {
            node_ids: ids.clone(),
            display: names.join("/"),
        });
    } else {
        for child in &node.children {
            collect_paths(child, ids, names, out);
        }
    }
    ids.pop();
    names.pop();
}

fn tree_version(root: &KnowledgeNode) -> String {
    let canonical = serde_json::to_vec(root).expect("node serializes");
    sha256_hex(&canonical)
}

fn build_index(root: &KnowledgeNode) -> Result<HashMap<String, NodeInfo>, TreeError> {
    let mut index: HashMap<String, NodeInfo> = HashMap::new();
    let mut ancestors: Vec<String> = Vec::new();
    let mut on_chain: HashSet<String> = HashSet::new();
    visit(root, None, 0, &mut index, &mut ancestors, &mut on_chain)?;
    Ok(index)
}

fn visit(
    node: &KnowledgeNode,
    parent: Option<&str>,
    depth: usize,
    index: &mut HashMap<String, NodeInfo>,
    ancestors: &mut Vec<String>,
    on_chain: &mut HashSet<String>,
) -> Result<(), TreeError> {
    let parent_label = parent.unwrap_or("<root>").to_string();
    if node.id.trim().is_empty() {
        return Err(TreeError::EmptyId {
            parent: parent_label,
        });
    }
    if node.name.trim().is_empty() {
        return Err(TreeError::EmptyName {
            id: node.id.clone(),
        });
    }
    if on_chain.contains(&node.id) {
        let mut chain = ancestors.clone();
        chain.push(node.id.clone());
        return Err(TreeError::Cycle {
            id: node.id.clone(),
            chain: chain.join(" -> "),
        });
    }
    if let Some(existing) = index.get(&node.id) {
        return Err(TreeError::DuplicateId {
            id: node.id.clone(),
            first_parent: existing.parent.clone().unwrap_or_else(|| "<root>".into()),
            second_parent: parent_label,
        });
    }
    index.insert(
        node.id.clone(),
        NodeInfo {
            name: node.name.clone(),
            parent: parent.map(str::to_string),
            depth,
            children: node.children.iter().map(|c| c.id.clone()).collect(),
        },
    );
    ancestors.push(node.id.clone());
    on_chain.insert(node.id.clone());
    for child in &node.children {
        visit(child, Some(&node.id), depth + 1, index, ancestors, on_chain)?;
    }
    on_chain.remove(&node.id);
    ancestors.pop();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(depth: usize, prefix: &str) -> KnowledgeNode {
        if depth == 0 {
            return KnowledgeNode::leaf(prefix, format!("n{prefix}"));
        }
        KnowledgeNode::branch(
            prefix,
            format!("n{prefix}"),
            vec![
                binary(depth - 1, &format!("{prefix}0")),
                binary(depth - 1, &format!("{prefix}1")),
            ],
        )
    }

    #[test]
    fn minimal_tree_has_one_path() {
        let tree = KnowledgeTree::new(
            Subject::mathematics(),
            KnowledgeNode::branch("r", "数学", vec![KnowledgeNode::leaf("a", "集合")]),
        )
        .unwrap();
        let paths = tree.enumerate_paths();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].node_ids, vec!["r", "a"]);
        assert_eq!(paths[0].display, "数学/集合");
    }

    #[test]
    fn three_level_binary_tree_paths_in_dfs_order() {
        // Levels: root, 2 children, 4 grandchildren (leaves).
        let tree = KnowledgeTree::new(Subject::mathematics(), binary(2, "r")).unwrap();
        let leaves: Vec<_> = tree
            .enumerate_paths()
            .iter()
            .map(|p| p.leaf_id().to_string())
            .collect();
        assert_eq!(leaves, vec!["r00", "r01", "r10", "r11"]);
    }

    #[test]
    fn duplicate_id_is_named() {
        let doc = r#"{"subject":"Mathematics","root":{"id":"r","name":"R","children":[
            {"id":"a","name":"A","children":[]},
            {"id":"b","name":"B","children":[{"id":"a","name":"A2"}]}]}}"#;
        let err = KnowledgeTree::from_json(doc).unwrap_err();
        match err {
            TreeError::DuplicateId { id, .. } => assert_eq!(id, "a"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn id_reappearing_below_itself_is_a_cycle() {
        let doc = r#"{"subject":"Mathematics","root":{"id":"r","name":"R","children":[
            {"id":"a","name":"A","children":[{"id":"r","name":"loop"}]}]}}"#;
        assert!(matches!(
            KnowledgeTree::from_json(doc).unwrap_err(),
            TreeError::Cycle { id, .. } if id == "r"
        ));
    }

    #[test]
    fn rejects_blank_names_and_bare_roots() {
        let doc = r#"{"subject":"Physics","root":{"id":"r","name":"R","children":[{"id":"a","name":"  "}]}}"#;
        assert!(matches!(
            KnowledgeTree::from_json(doc).unwrap_err(),
            TreeError::EmptyName { .. }
        ));
        let doc = r#"{"subject":"Physics","root":{"id":"r","name":"R","children":[]}}"#;
        assert!(matches!(
            KnowledgeTree::from_json(doc).unwrap_err(),
            TreeError::EmptyRoot { .. }
        ));
        assert!(matches!(
            KnowledgeTree::from_json("{not json").unwrap_err(),
            TreeError::Parse(_)
        ));
    }

    #[test]
    fn version_tracks_ids_names_and_order() {
        let a = KnowledgeTree::new(Subject::mathematics(), binary(2, "r")).unwrap();
        let mut root = binary(2, "r");
        root.children.swap(0, 1);
        let swapped = KnowledgeTree::new(Subject::mathematics(), root).unwrap();
        assert_ne!(a.version(), swapped.version());
        let mut root = binary(2, "r");
        root.children[0].name.push('x');
        let renamed = KnowledgeTree::new(Subject::mathematics(), root).unwrap();
        assert_ne!(a.version(), renamed.version());
        let same = KnowledgeTree::new(Subject::mathematics(), binary(2, "r")).unwrap();
        assert_eq!(a.version(), same.version());
    }

    #[test]
    fn resolve_and_check_paths() {
        let tree = KnowledgeTree::new(Subject::mathematics(), binary(2, "r")).unwrap();
        let full = tree
            .resolve_tag(&["r".into(), "r1".into(), "r10".into()])
            .unwrap();
        assert_eq!(full, tree.resolve_tag(&["r10".into()]).unwrap());
        tree.check_path(&full).unwrap();
        assert!(matches!(
            tree.resolve_tag(&["zz".into()]).unwrap_err(),
            TreeError::UnknownNode(id) if id == "zz"
        ));
        assert!(tree.resolve_tag(&["r0".into(), "r10".into()]).is_err());
        assert!(matches!(
            tree.resolve_tag(&["r1".into()]).unwrap_err(),
            TreeError::NotALeaf(_)
        ));
        let mut bad = full.clone();
        bad.node_ids.remove(1);
        assert!(tree.check_path(&bad).is_err());
    }
}
