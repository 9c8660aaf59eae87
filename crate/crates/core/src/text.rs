//! Small text normalization helpers shared across modules.

/// Collapses every run of whitespace into a single space and trims the ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Removes all whitespace. Used for leakage checks, where a statement that
/// was re-wrapped or re-spaced must still be caught.
pub fn strip_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Case-insensitive, whitespace-normalized comparison key.
pub fn fold_key(s: &str) -> String {
    collapse_whitespace(s).to_lowercase()
}

/// Filesystem-safe stem for an opaque identifier. Safe ids are used verbatim;
/// anything else is replaced by a digest so distinct ids never collide.
pub fn file_stem(id: &str) -> String {
    let safe = !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if safe {
        id.to_string()
    } else {
        format!("h-{}", &crate::digest::sha256_hex(id.as_bytes())[..24])
    }
}
