//! Label extraction from free-text replies.

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::llm::template::LabelLexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub label: Label,
    pub rationale: String,
    pub raw_reply: String,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whole-word, case-insensitive occurrences of either label surface, as
/// `(position, label)` in text order. A shorter surface nested inside a
/// longer match ("hate" inside "not hate") is not reported separately.
pub fn label_mentions(text: &str, lexicon: &LabelLexicon) -> Vec<(usize, Label)> {
    let hay = text.to_lowercase();
    let mut surfaces: Vec<(Label, String)> = lexicon.entries().iter().map(|(l, s)| (*l, s.to_lowercase())).collect();
    surfaces.sort_by_key(|(_, s)| std::cmp::Reverse(s.len()));

    let mut covered: Vec<(usize, usize)> = Vec::new();
    let mut hits = Vec::new();
    for (label, needle) in &surfaces {
        let mut from = 0;
        while let Some(rel) = hay[from..].find(needle.as_str()) {
            let start = from + rel;
            let end = start + needle.len();
            let before_ok = hay[..start].chars().next_back().is_none_or(|c| !is_word_char(c));
            let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
            let nested = covered.iter().any(|&(s, e)| start < e && end > s);
            if before_ok && after_ok && !nested {
                covered.push((start, end));
                hits.push((start, *label));
            }
            from = start + needle[..].chars().next().map_or(1, char::len_utf8);
        }
    }
    hits.sort_by_key(|&(pos, _)| pos);
    hits
}

/// True when `line` is nothing but a label declaration such as `hate` or
/// `Answer: not hate.`
fn is_bare_declaration(line: &str, lexicon: &LabelLexicon) -> bool {
    let lowered = line.to_lowercase();
    let mut rest = lowered.trim().to_string();
    for prefix in ["final answer", "answer", "label", "classification"] {
        if let Some(stripped) = rest.strip_prefix(prefix) {
            rest = stripped.trim_start_matches([':', '-', ' ']).to_string();
            break;
        }
    }
    let rest = rest.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    lexicon.label_of(rest).is_some()
}

/// Parses a backend reply.
///
/// The final non-empty line is scanned first. If it names exactly one
/// label, that label wins and the lines above it become the rationale (a
/// one-line sentence such as "Therefore, this tweet is not hate speech." is
/// kept as its own rationale). Otherwise the whole reply is searched and the
/// last mention wins; no mention at all is an error.
pub fn parse_reply(raw_reply: &str, lexicon: &LabelLexicon) -> Result<ClassificationOutcome> {
    let trimmed = raw_reply.trim();
    let lines: Vec<&str> = trimmed.lines().collect();
    let last_idx = lines.iter().rposition(|l| !l.trim().is_empty());
    let Some(last_idx) = last_idx else {
        return Err(Error::UnparseableReply {
            message: "empty reply".into(),
            raw_reply: raw_reply.to_string(),
        });
    };
    let last = lines[last_idx];
    let mut last_labels: Vec<Label> = label_mentions(last, lexicon).into_iter().map(|(_, l)| l).collect();
    last_labels.dedup();
    let mut distinct = last_labels.clone();
    distinct.sort();
    distinct.dedup();

    if distinct.len() == 1 {
        let above = lines[..last_idx].join("\n").trim().to_string();
        let rationale = if above.is_empty() && !is_bare_declaration(last, lexicon) {
            last.trim().to_string()
        } else {
            above
        };
        return Ok(ClassificationOutcome {
            label: distinct[0],
            rationale,
            raw_reply: raw_reply.to_string(),
        });
    }

    match label_mentions(trimmed, lexicon).last() {
        Some(&(_, label)) => Ok(ClassificationOutcome {
            label,
            rationale: trimmed.to_string(),
            raw_reply: raw_reply.to_string(),
        }),
        None => Err(Error::UnparseableReply {
            message: "no label found in reply".into(),
            raw_reply: raw_reply.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> LabelLexicon {
        LabelLexicon::default()
    }

    #[test]
    fn sentence_declaration_is_not_hate() {
        let out = parse_reply(
            "The tweet expresses concern for a community.\nTherefore, this tweet is not hate speech.",
            &lex(),
        )
        .unwrap();
        assert_eq!(out.label, Label::NotHate);
        assert_eq!(out.rationale, "The tweet expresses concern for a community.");
    }

    #[test]
    fn single_sentence_keeps_itself_as_rationale() {
        let out = parse_reply("Therefore, this tweet is not hate speech.", &lex()).unwrap();
        assert_eq!(out.label, Label::NotHate);
        assert_eq!(out.rationale, "Therefore, this tweet is not hate speech.");
    }

    #[test]
    fn bare_label_has_empty_rationale() {
        let out = parse_reply("hate", &lex()).unwrap();
        assert_eq!(out.label, Label::Hate);
        assert_eq!(out.rationale, "");
        let out = parse_reply("Reasoning.\nAnswer: Not Hate.", &lex()).unwrap();
        assert_eq!(out.label, Label::NotHate);
        assert_eq!(out.rationale, "Reasoning.");
    }

    #[test]
    fn no_label_is_an_error_carrying_the_reply() {
        match parse_reply("I cannot decide.", &lex()) {
            Err(Error::UnparseableReply { raw_reply, .. }) => assert_eq!(raw_reply, "I cannot decide."),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_reply("   \n ", &lex()).is_err());
    }

    #[test]
    fn ambiguous_final_line_falls_back_to_last_mention() {
        let out = parse_reply("It is hate, or maybe not hate", &lex()).unwrap();
        assert_eq!(out.label, Label::NotHate);
        let out = parse_reply("Looks like hate.\nI am unsure.", &lex()).unwrap();
        assert_eq!(out.label, Label::Hate);
    }

    #[test]
    fn whole_word_matching() {
        assert!(label_mentions("hateful and whatever", &lex()).is_empty());
        assert_eq!(label_mentions("not hate", &lex()), vec![(0, Label::NotHate)]);
    }
}
