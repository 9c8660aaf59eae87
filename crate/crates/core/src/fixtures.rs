//! Small trees and questions shared by unit tests.

use crate::knowledge::{KnowledgeNode, KnowledgeTree, Question, Subject};

/// root > {algebra > {functions > {monotonic, parity}, sequences > {arith, geom}},
///         geometry > {triangles > {sine}}}
pub fn math_tree() -> KnowledgeTree {
    let root = KnowledgeNode::branch(
        "math",
        "数学",
        vec![
            KnowledgeNode::branch(
                "algebra",
                "代数",
                vec![
                    KnowledgeNode::branch(
                        "functions",
                        "函数",
                        vec![
                            KnowledgeNode::leaf("fn-monotonic", "单调性"),
                            KnowledgeNode::leaf("fn-parity", "奇偶性"),
                        ],
                    ),
                    KnowledgeNode::branch(
                        "sequences",
                        "数列",
                        vec![
                            KnowledgeNode::leaf("seq-arith", "等差数列"),
                            KnowledgeNode::leaf("seq-geom", "等比数列"),
                        ],
                    ),
                ],
            ),
            KnowledgeNode::branch(
                "geometry",
                "几何",
                vec![KnowledgeNode::branch(
                    "triangles",
                    "三角形",
                    vec![KnowledgeNode::leaf("tri-sine", "正弦定理")],
                )],
            ),
        ],
    );
    KnowledgeTree::new(Subject::mathematics(), root).unwrap()
}

pub fn choice_question(id: &str, statement: &str, answer: &str) -> Question {
    Question {
        id: id.to_string(),
        subject: Subject::mathematics(),
        statement: statement.to_string(),
        choices: Some(
            [("A", "1"), ("B", "2"), ("C", "3"), ("D", "4")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        ),
        reference_answer: answer.to_string(),
        tags: Vec::new(),
        source: None,
    }
}

/// A tagging reply selecting `names`.
pub fn tag_reply(names: &[&str]) -> String {
    serde_json::json!({"knowledge_points": names, "classification_reason": "fits"}).to_string()
}
