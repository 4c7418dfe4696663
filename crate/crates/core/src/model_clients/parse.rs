use serde::{Deserialize, Serialize};

const ARTICLES: [&str; 3] = ["a", "an", "the"];
const MAX_OBJECT_TOKENS: usize = 3;

fn is_edge_junk(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '。')
}

/// Normalizes a one-word object answer. Returns `None` when the reply is
/// empty or longer than three tokens after stripping.
pub fn parse_object(raw: &str) -> Option<String> {
    let mut current = raw.to_lowercase();
    // Stripping an article can expose more edge punctuation, so iterate to
    // a fixed point. Every pass is non-growing, so this terminates.
    loop {
        let trimmed = current.trim_matches(|c: char| is_edge_junk(c) || c.is_whitespace());
        let mut tokens: Vec<&str> = trimmed.split_whitespace().collect();
        while tokens.len() > 1 && ARTICLES.contains(&tokens[0]) {
            tokens.remove(0);
        }
        let next = tokens.join(" ");
        if next == current {
            break;
        }
        current = next;
    }
    let count = current.split_whitespace().count();
    if count == 0 || count > MAX_OBJECT_TOKENS {
        return None;
    }
    Some(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
    Ambiguous,
}

/// Reads the first alphabetic token of a reply.
pub fn parse_yes_no(raw: &str) -> YesNo {
    let first = raw
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .map(str::to_lowercase);
    match first.as_deref() {
        Some("yes") => YesNo::Yes,
        Some("no") => YesNo::No,
        _ => YesNo::Ambiguous,
    }
}
