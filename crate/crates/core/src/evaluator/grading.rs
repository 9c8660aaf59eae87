//! Multiple-choice answer extraction.

use serde::{Deserialize, Serialize};

use crate::knowledge::{fullwidth_to_ascii, normalize_choice_answer, Question};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingPolicy {
    /// Last maximal run of choice letters.
    #[default]
    MultipleChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub extracted: Option<String>,
    pub correct: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("question `{0}` has no choices; only multiple-choice grading is available")]
pub struct UngradableQuestion(pub String);

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | '，' | '、' | '/')
}

fn is_markup(c: char) -> bool {
    matches!(
        c,
        '*' | '_'
            | '`'
            | '#'
            | '~'
            | '>'
            | '|'
            | '$'
            | '{'
            | '}'
            | '['
            | ']'
            | '【'
            | '】'
            | '('
            | ')'
            | '（'
            | '）'
    )
}

/// The final answer in `reply`: the last maximal run of tokens made only of
/// `labels`, where tokens are maximal ASCII-alphanumeric stretches and a run
/// may be joined by separators (whitespace, `,` `，` `、` `/`). Markup
/// counts as whitespace and full-width letters as ASCII. Returned as an
/// ordered letter set.
pub fn extract_choice(reply: &str, labels: &[char]) -> Option<String> {
    let chars: Vec<char> = reply
        .chars()
        .map(fullwidth_to_ascii)
        .map(|c| if is_markup(c) { ' ' } else { c })
        .collect();
    let mut last: Option<String> = None;
    let mut run = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let token = &chars[start..i];
            if token.iter().all(|t| labels.contains(t)) {
                run.extend(token);
            } else if !run.is_empty() {
                last = Some(std::mem::take(&mut run));
            }
            continue;
        }
        if !is_separator(c) && !run.is_empty() {
            last = Some(std::mem::take(&mut run));
        }
        i += 1;
    }
    if !run.is_empty() {
        last = Some(run);
    }
    last.map(|r| normalize_choice_answer(&r))
}

pub fn grade_answer(reply: &str, question: &Question) -> Result<Grade, UngradableQuestion> {
    let labels: Vec<char> = question
        .choice_labels()
        .iter()
        .filter_map(|l| l.chars().next())
        .collect();
    if labels.is_empty() {
        return Err(UngradableQuestion(question.id.clone()));
    }
    let extracted = extract_choice(reply, &labels);
    let reference = normalize_choice_answer(&question.reference_answer);
    let correct = extracted.as_deref() == Some(reference.as_str());
    Ok(Grade { extracted, correct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::choice_question;

    const ABCD: [char; 4] = ['A', 'B', 'C', 'D'];

    /// Splits on every character that is neither a separator nor ASCII
    /// alphanumeric, then looks for the last stretch of label-only words
    /// inside the last segment that has one.
    fn oracle(reply: &str) -> Option<String> {
        let text: String = reply
            .chars()
            .map(fullwidth_to_ascii)
            .map(|c| if is_markup(c) { ' ' } else { c })
            .collect();
        let segments = text.split(|c: char| !c.is_ascii_alphanumeric() && !is_separator(c));
        let mut last = None;
        for seg in segments {
            let mut current = Vec::new();
            for word in seg.split(is_separator).filter(|w| !w.is_empty()) {
                if word.chars().all(|c| ABCD.contains(&c)) {
                    current.push(word);
                } else if !current.is_empty() {
                    last = Some(current.concat());
                    current.clear();
                }
            }
            if !current.is_empty() {
                last = Some(current.concat());
            }
        }
        last.map(|s| normalize_choice_answer(&s))
    }

    #[test]
    fn spec_examples() {
        let b = choice_question("q", "s", "B");
        assert_eq!(
            grade_answer("……所以选 B", &b).unwrap(),
            Grade {
                extracted: Some("B".into()),
                correct: true
            }
        );
        let ac = choice_question("q", "s", "AC");
        let reply = "A 不对，答案是 AC";
        assert_eq!(oracle(reply).as_deref(), Some("AC"));
        assert_eq!(
            grade_answer(reply, &ac).unwrap(),
            Grade {
                extracted: Some("AC".into()),
                correct: true
            }
        );
        assert_eq!(
            grade_answer("我不知道", &b).unwrap(),
            Grade {
                extracted: None,
                correct: false
            }
        );
    }

    #[test]
    fn extraction_table_agrees_with_oracle() {
        let cases = [
            ("故选：**BD**", Some("BD")),
            ("答案：Ａ", Some("A")),
            ("选 C、A", Some("AC")),
            ("A, C", Some("AC")),
            ("A/B", Some("AB")),
            ("\\boxed{D}", Some("D")),
            ("The answer is B.", Some("B")),
            ("选项E不存在，选B", Some("B")),
            ("ABC1 是编号", None),
            ("答案为 B 不是 A", Some("A")),
            ("b", None),
            ("", None),
        ];
        for (reply, expected) in cases {
            assert_eq!(
                extract_choice(reply, &ABCD).as_deref(),
                expected,
                "{reply:?}"
            );
            assert_eq!(oracle(reply).as_deref(), expected, "oracle {reply:?}");
        }
    }

    #[test]
    fn partial_multi_select_is_wrong() {
        let q = choice_question("q", "s", "AC");
        assert_eq!(
            grade_answer("选 A", &q).unwrap(),
            Grade {
                extracted: Some("A".into()),
                correct: false
            }
        );
    }

    #[test]
    fn free_response_is_ungradable() {
        let mut q = choice_question("q", "s", "A");
        q.choices = None;
        assert_eq!(grade_answer("A", &q), Err(UngradableQuestion("q".into())));
    }
}
