//! Rule-driven offline backend.
//!
//! Rules are tried in file order; the first whose `trigger` occurs in the
//! query text (and whose optional `context` occurs in the demonstration
//! blocks) fires. Matching is case-insensitive. A rule with neither field is
//! the default and is mandatory for classification.
//!
//! Classification replies are the rendered rationale followed by an
//! `Answer: <label>` line. `{quote}` in the rationale expands to the rule's
//! `quote` wrapped in double quotes, which lets fixtures produce shortcut
//! rationales on demand. A rule without `label` emits the rationale alone,
//! producing an unparseable reply.
//!
//! Target-prediction prompts are answered by `task = "target"` rules, or by
//! echoing the most frequent `Target:` value among the demonstrations.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::llm::template::LabelLexicon;
use crate::llm::{ClassificationBackend, Prompt, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTask {
    #[default]
    Classify,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub task: RuleTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default)]
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote: Option<String>,
    /// Reply for target rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl MockRule {
    pub fn classify(trigger: Option<&str>, label: Label, rationale: &str) -> MockRule {
        MockRule {
            task: RuleTask::Classify,
            trigger: trigger.map(str::to_string),
            context: None,
            label: Some(label),
            rationale: rationale.to_string(),
            quote: None,
            target: None,
        }
    }

    pub fn with_context(mut self, context: &str) -> Self {
        self.context = Some(context.to_string());
        self
    }

    pub fn with_quote(mut self, quote: &str) -> Self {
        self.quote = Some(quote.to_string());
        self
    }

    pub fn target(trigger: &str, target: &str) -> MockRule {
        MockRule {
            task: RuleTask::Target,
            trigger: Some(trigger.to_string()),
            context: None,
            label: None,
            rationale: String::new(),
            quote: None,
            target: Some(target.to_string()),
        }
    }

    fn is_default(&self) -> bool {
        self.trigger.is_none() && self.context.is_none()
    }

    fn fires(&self, query: &str, context: &str) -> bool {
        let hit = |needle: &Option<String>, hay: &str| needle.as_ref().is_none_or(|n| hay.contains(&n.to_lowercase()));
        hit(&self.trigger, query) && hit(&self.context, context)
    }

    fn render(&self, lexicon: &LabelLexicon) -> String {
        let quote = self.quote.as_deref().map(|q| format!("\"{q}\"")).unwrap_or_default();
        let rationale = self.rationale.replace("{quote}", &quote);
        match self.label {
            Some(label) if rationale.trim().is_empty() => format!("Answer: {}", lexicon.surface(label)),
            Some(label) => format!("{}\nAnswer: {}", rationale.trim(), lexicon.surface(label)),
            None => rationale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: Vec<MockRule>,
    lexicon: LabelLexicon,
    identity: String,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Result<Self> {
        if !rules.iter().any(|r| r.task == RuleTask::Classify && r.is_default()) {
            return Err(Error::Config("mock rules need a default classify rule".into()));
        }
        if let Some(r) = rules
            .iter()
            .find(|r| r.task == RuleTask::Target && r.target.as_deref().is_none_or(|t| t.trim().is_empty()))
        {
            return Err(Error::Config(format!(
                "target rule {:?} has no target reply",
                r.trigger
            )));
        }
        let canonical = serde_json::to_vec(&rules)?;
        let identity = format!("mock:{}", hex::encode(&Sha256::digest(&canonical)[..6]));
        Ok(MockBackend {
            rules,
            lexicon: LabelLexicon::default(),
            identity,
        })
    }

    /// Loads rules from a JSONL file (one rule object per line).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rules.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(rules)
    }

    pub fn with_lexicon(mut self, lexicon: LabelLexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// The reply the rules produce for `prompt`; pure in `(rules, prompt)`.
    pub fn reply(&self, prompt: &Prompt) -> String {
        let query = prompt.query.to_lowercase();
        let context = prompt.context.to_lowercase();
        match prompt.task {
            Task::Classify => self
                .rules
                .iter()
                .filter(|r| r.task == RuleTask::Classify)
                .find(|r| r.fires(&query, &context))
                .map(|r| r.render(&self.lexicon))
                .expect("default rule always fires"),
            Task::PredictTarget => {
                if let Some(r) = self
                    .rules
                    .iter()
                    .filter(|r| r.task == RuleTask::Target)
                    .find(|r| r.fires(&query, &context))
                {
                    return r.target.clone().unwrap_or_default();
                }
                dominant_target(&prompt.context).unwrap_or_default()
            }
        }
    }
}

/// Most frequent `Target:` line value; ties go to the earliest seen.
fn dominant_target(context: &str) -> Option<String> {
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (order, line) in context.lines().enumerate() {
        if let Some(value) = line.trim().strip_prefix("Target:") {
            let value = value.trim().to_lowercase();
            if !value.is_empty() {
                let e = counts.entry(value).or_insert((0, order));
                e.0 += 1;
            }
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(v, _)| v)
}

impl ClassificationBackend for MockBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn complete(&self, prompt: &Prompt) -> Result<String> {
        Ok(self.reply(prompt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{classify, parse_reply};

    fn prompt(query: &str, context: &str) -> Prompt {
        Prompt {
            task: Task::Classify,
            system: String::new(),
            body: String::new(),
            query: query.into(),
            context: context.into(),
        }
    }

    fn backend() -> MockBackend {
        MockBackend::new(vec![
            MockRule::classify(Some("supremacy"), Label::Hate, "The phrase {quote} indicates hate.")
                .with_quote("white supremacy"),
            MockRule::classify(Some("white"), Label::NotHate, "Mentions a group neutrally."),
            MockRule::classify(None, Label::NotHate, "Nothing hateful here."),
        ])
        .unwrap()
    }

    #[test]
    fn first_matching_rule_fires() {
        let b = backend();
        let reply = b.reply(&prompt("White supremacy again", ""));
        assert_eq!(reply, "The phrase \"white supremacy\" indicates hate.\nAnswer: hate");
        let out = parse_reply(&reply, &LabelLexicon::default()).unwrap();
        assert_eq!(out.label, Label::Hate);
        assert_eq!(out.rationale, "The phrase \"white supremacy\" indicates hate.");
    }

    #[test]
    fn default_rule_fires_when_nothing_matches() {
        let out = classify(&backend(), &prompt("a calm sentence", ""), &LabelLexicon::default()).unwrap();
        assert_eq!(out.label, Label::NotHate);
        assert_eq!(out.rationale, "Nothing hateful here.");
    }

    #[test]
    fn earlier_rule_wins_over_later_match() {
        // "white supremacy" matches rule 0 and rule 1
        let out = classify(&backend(), &prompt("white supremacy", ""), &LabelLexicon::default()).unwrap();
        assert_eq!(out.label, Label::Hate);
    }

    #[test]
    fn context_trigger_requires_demo_text() {
        let b = MockBackend::new(vec![
            MockRule::classify(Some("x"), Label::NotHate, "ctx").with_context("counterpoint"),
            MockRule::classify(None, Label::Hate, "default"),
        ])
        .unwrap();
        assert_eq!(b.reply(&prompt("x", "a counterpoint demo")), "ctx\nAnswer: not hate");
        assert_eq!(b.reply(&prompt("x", "other demo")), "default\nAnswer: hate");
    }

    #[test]
    fn default_rule_is_mandatory() {
        assert!(MockBackend::new(vec![MockRule::classify(Some("a"), Label::Hate, "")]).is_err());
    }

    #[test]
    fn labelless_rule_yields_parse_error() {
        let mut bad = MockRule::classify(None, Label::Hate, "I refuse to answer.");
        bad.label = None;
        let b = MockBackend::new(vec![
            MockRule::classify(Some("never-matches-xyz"), Label::Hate, ""),
            bad.clone(),
            MockRule::classify(None, Label::Hate, ""),
        ])
        .unwrap();
        assert!(classify(&b, &prompt("anything", ""), &LabelLexicon::default()).is_err());
    }

    #[test]
    fn target_prompts_echo_dominant_target() {
        let b = backend();
        let mut p = prompt(
            "q",
            "Text: a\nTarget: jews\n\nText: b\nTarget: white jews\n\nText: c\nTarget: jews",
        );
        p.task = Task::PredictTarget;
        assert_eq!(b.reply(&p), "jews");
    }

    #[test]
    fn identity_depends_on_rules() {
        let a = backend();
        let b = MockBackend::new(vec![MockRule::classify(None, Label::Hate, "x")]).unwrap();
        assert_ne!(a.identity(), b.identity());
        assert_eq!(a.identity(), backend().identity());
    }
}
