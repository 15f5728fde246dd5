//! Prompt templates with named `{placeholder}` slots.
//!
//! A template file has up to four sections, each introduced by a header line:
//!
//! ```text
//! [system]
//! Decide whether the text is hate speech.
//! [demo]
//! Text: {text}
//! Answer: {label}
//! [query]
//! Text: {text}
//! Answer:
//! [labels]
//! hate = hate
//! not_hate = not hate
//! ```
//!
//! In the demo and query sections `{{` and `}}` render as literal braces;
//! the system section is literal text. Placeholders are checked when the
//! template is built, never at render time.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::llm::{Prompt, Task};
use crate::target::Demonstration;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLexicon {
    pub hate: String,
    pub not_hate: String,
}

impl Default for LabelLexicon {
    fn default() -> Self {
        LabelLexicon {
            hate: "hate".into(),
            not_hate: "not hate".into(),
        }
    }
}

impl LabelLexicon {
    pub fn new(hate: impl Into<String>, not_hate: impl Into<String>) -> Result<Self> {
        let lex = LabelLexicon {
            hate: hate.into().trim().to_string(),
            not_hate: not_hate.into().trim().to_string(),
        };
        if lex.hate.is_empty() || lex.not_hate.is_empty() {
            return Err(Error::Template("label surfaces must be non-empty".into()));
        }
        if lex.hate.to_lowercase() == lex.not_hate.to_lowercase() {
            return Err(Error::Template("label surfaces must differ".into()));
        }
        Ok(lex)
    }

    pub fn surface(&self, label: Label) -> &str {
        match label {
            Label::Hate => &self.hate,
            Label::NotHate => &self.not_hate,
        }
    }

    pub fn label_of(&self, surface: &str) -> Option<Label> {
        let s = surface.trim().to_lowercase();
        if s == self.hate.to_lowercase() {
            Some(Label::Hate)
        } else if s == self.not_hate.to_lowercase() {
            Some(Label::NotHate)
        } else {
            None
        }
    }

    pub fn entries(&self) -> [(Label, &str); 2] {
        [(Label::Hate, &self.hate), (Label::NotHate, &self.not_hate)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Text,
    Label,
    Target,
}

impl Slot {
    fn name(self) -> &'static str {
        match self {
            Slot::Text => "text",
            Slot::Label => "label",
            Slot::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Lit(String),
    Var(Slot),
}

/// A template string compiled into literal and placeholder segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    source: String,
    segments: Vec<Segment>,
}

impl Pattern {
    fn compile(source: &str, allowed: &[Slot], required: &[Slot], section: &str) -> Result<Pattern> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => name.push(ch),
                            None => return Err(Error::Template(format!("unclosed placeholder in [{section}]"))),
                        }
                    }
                    let slot = allowed
                        .iter()
                        .copied()
                        .find(|s| s.name() == name.trim())
                        .ok_or_else(|| Error::Template(format!("unknown placeholder {{{name}}} in [{section}]")))?;
                    if !lit.is_empty() {
                        segments.push(Segment::Lit(std::mem::take(&mut lit)));
                    }
                    segments.push(Segment::Var(slot));
                }
                '}' => {
                    return Err(Error::Template(format!("stray '}}' in [{section}]")));
                }
                other => lit.push(other),
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Lit(lit));
        }
        for slot in required {
            if !segments.contains(&Segment::Var(*slot)) {
                return Err(Error::Template(format!(
                    "[{section}] is missing placeholder {{{}}}",
                    slot.name()
                )));
            }
        }
        Ok(Pattern {
            source: source.to_string(),
            segments,
        })
    }

    fn render(&self, text: &str, label: &str, target: &str) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Lit(s) => out.push_str(s),
                Segment::Var(Slot::Text) => out.push_str(text),
                Segment::Var(Slot::Label) => out.push_str(label),
                Segment::Var(Slot::Target) => out.push_str(target),
            }
        }
        out
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub system_text: String,
    demo: Pattern,
    query: Pattern,
    pub label_lexicon: LabelLexicon,
}

pub const DEFAULT_SYSTEM: &str = "You are a content moderation assistant. Decide whether the text is \
implicit hate speech. Explain your reasoning in one or two sentences, then give the answer \
'hate' or 'not hate' on the last line.";

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(
            DEFAULT_SYSTEM,
            "Text: {text}\nAnswer: {label}",
            "Text: {text}\nAnswer:",
            LabelLexicon::default(),
        )
        .expect("default template is valid")
    }
}

impl PromptTemplate {
    pub fn new(system_text: &str, demo_block: &str, query_block: &str, label_lexicon: LabelLexicon) -> Result<Self> {
        Ok(PromptTemplate {
            system_text: system_text.trim().to_string(),
            demo: Pattern::compile(
                demo_block.trim(),
                &[Slot::Text, Slot::Label, Slot::Target],
                &[Slot::Text, Slot::Label],
                "demo",
            )?,
            query: Pattern::compile(query_block.trim(), &[Slot::Text], &[Slot::Text], "query")?,
            label_lexicon,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                let name = trimmed[1..trimmed.len() - 1].trim().to_lowercase();
                if matches!(name.as_str(), "system" | "demo" | "query" | "labels") {
                    if sections.iter().any(|(n, _)| *n == name) {
                        return Err(Error::Template(format!("section [{name}] appears twice")));
                    }
                    sections.push((name, String::new()));
                    continue;
                }
            }
            match sections.last_mut() {
                Some((_, body)) => {
                    body.push_str(line);
                    body.push('\n');
                }
                None if trimmed.is_empty() => {}
                None => return Err(Error::Template("text before the first section header".into())),
            }
        }
        let get = |name: &str| sections.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_str());
        let demo = get("demo").ok_or_else(|| Error::Template("missing [demo] section".into()))?;
        let query = get("query").ok_or_else(|| Error::Template("missing [query] section".into()))?;
        let lexicon = match get("labels") {
            None => LabelLexicon::default(),
            Some(body) => {
                let mut hate = None;
                let mut not_hate = None;
                for line in body.lines().filter(|l| !l.trim().is_empty()) {
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| Error::Template(format!("bad [labels] line '{line}'")))?;
                    match key.trim() {
                        "hate" => hate = Some(value.trim().to_string()),
                        "not_hate" => not_hate = Some(value.trim().to_string()),
                        other => return Err(Error::Template(format!("unknown label key '{other}'"))),
                    }
                }
                LabelLexicon::new(
                    hate.ok_or_else(|| Error::Template("[labels] needs 'hate'".into()))?,
                    not_hate.ok_or_else(|| Error::Template("[labels] needs 'not_hate'".into()))?,
                )?
            }
        };
        Self::new(get("system").unwrap_or(""), demo, query, lexicon)
    }

    /// Serializes back into the section file format.
    pub fn to_file_string(&self) -> String {
        format!(
            "[system]\n{}\n[demo]\n{}\n[query]\n{}\n[labels]\nhate = {}\nnot_hate = {}\n",
            self.system_text,
            self.demo.source(),
            self.query.source(),
            self.label_lexicon.hate,
            self.label_lexicon.not_hate
        )
    }

    pub fn render_demo(&self, demo: &Demonstration) -> String {
        self.demo.render(
            &demo.text,
            self.label_lexicon.surface(demo.label),
            demo.target.as_deref().unwrap_or(""),
        )
    }

    pub fn render_query(&self, query_text: &str) -> String {
        self.query.render(query_text, "", "")
    }

    /// System text, one block per demonstration in list order, then the query.
    pub fn render_prompt(&self, demos: &[Demonstration], query_text: &str) -> Prompt {
        let blocks: Vec<String> = demos.iter().map(|d| self.render_demo(d)).collect();
        Prompt::assemble(
            Task::Classify,
            &self.system_text,
            &blocks,
            self.render_query(query_text),
            query_text,
        )
    }
}
