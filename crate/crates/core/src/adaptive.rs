//! The adaptive replacement policy.
//!
//! Target-prioritized demonstrations are swapped for plain BM25 ones when
//! (1) enough target-matched demonstrations score at or below the
//! similarity threshold `tau`, and (2) the classifier's rationale rests on
//! short quoted phrases (a shortcut). The threshold is tuned on a dev split
//! by replaying recorded decisions over a grid.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::eval::{confusion, metrics};
use crate::llm::ClassificationOutcome;
use crate::target::Demonstration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    Both,
    SimilarityOnly,
    ShortcutOnly,
    None,
}

impl ConditionMode {
    pub const ALL: [ConditionMode; 4] = [
        ConditionMode::Both,
        ConditionMode::SimilarityOnly,
        ConditionMode::ShortcutOnly,
        ConditionMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionMode::Both => "both",
            ConditionMode::SimilarityOnly => "similarity_only",
            ConditionMode::ShortcutOnly => "shortcut_only",
            ConditionMode::None => "none",
        }
    }
}

impl std::fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "both" => Ok(ConditionMode::Both),
            "similarity_only" => Ok(ConditionMode::SimilarityOnly),
            "shortcut_only" => Ok(ConditionMode::ShortcutOnly),
            "none" => Ok(ConditionMode::None),
            other => Err(Error::Config(format!("unknown condition mode '{other}'"))),
        }
    }
}

/// How the target-matched demonstration scores are compared with `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityAggregate {
    /// At least `min_failing` demonstrations score `<= tau`.
    #[default]
    Count,
    /// The lowest score is `<= tau`.
    Min,
    /// The mean score is `<= tau`.
    Mean,
}

impl FromStr for SimilarityAggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(SimilarityAggregate::Count),
            "min" => Ok(SimilarityAggregate::Min),
            "mean" => Ok(SimilarityAggregate::Mean),
            other => Err(Error::Config(format!("unknown similarity aggregate '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub tau: f64,
    pub min_failing: usize,
    pub shortcut_max_words: usize,
    pub condition_mode: ConditionMode,
    pub aggregate: SimilarityAggregate,
    /// Only count quoted spans that also occur in the query text.
    pub shortcut_require_source: bool,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            tau: 10.0,
            min_failing: 1,
            shortcut_max_words: 3,
            condition_mode: ConditionMode::Both,
            aggregate: SimilarityAggregate::Count,
            shortcut_require_source: false,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.min_failing == 0 {
            return Err(Error::Config("min_failing must be >= 1".into()));
        }
        if self.shortcut_max_words == 0 {
            return Err(Error::Config("shortcut_max_words must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses the `key = value` config file format (TOML).
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: AdaptiveConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn similarity_holds(&self, scores: &[f64]) -> bool {
        similarity_condition_scores(scores, self.tau, self.min_failing, self.aggregate)
    }

    pub fn shortcut_holds(&self, rationale: &str, query_text: &str) -> bool {
        if self.shortcut_require_source {
            detect_shortcut_from_source(rationale, self.shortcut_max_words, query_text)
        } else {
            detect_shortcut(rationale, self.shortcut_max_words)
        }
    }
}

/// Spans enclosed in double quotes (`"..."` or typographic `“...”`),
/// verbatim. An unmatched trailing quote is ignored.
pub fn quoted_spans(text: &str) -> Vec<&str> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (open, c) {
            (None, '"' | '\u{201C}') => open = Some(i + c.len_utf8()),
            (Some(start), '"' | '\u{201D}') => {
                spans.push(&text[start..i]);
                open = None;
            }
            _ => {}
        }
    }
    spans
}

/// True iff the rationale quotes at least one phrase and every quoted span
/// has between 1 and `max_words` whitespace-delimited words.
pub fn detect_shortcut(rationale: &str, max_words: usize) -> bool {
    let spans = quoted_spans(rationale);
    !spans.is_empty()
        && spans.iter().all(|s| {
            let n = s.split_whitespace().count();
            (1..=max_words).contains(&n)
        })
}

/// [`detect_shortcut`] that additionally requires every quoted phrase to
/// appear in the query text (case-insensitive, surrounding punctuation
/// ignored).
pub fn detect_shortcut_from_source(rationale: &str, max_words: usize, source: &str) -> bool {
    let hay = source.to_lowercase();
    detect_shortcut(rationale, max_words)
        && quoted_spans(rationale).iter().all(|s| {
            let needle = s.trim().trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase();
            !needle.is_empty() && hay.contains(&needle)
        })
}

fn target_scores(demos: &[Demonstration]) -> Vec<f64> {
    demos
        .iter()
        .filter(|d| d.priority.is_target_based())
        .map(|d| d.bm25_score)
        .collect()
}

/// Counts P1/P2 demonstrations scoring `<= tau`; true when at least
/// `min_failing` do. Lists without target-matched demonstrations never fail.
pub fn similarity_condition(demos: &[Demonstration], tau: f64, min_failing: usize) -> bool {
    similarity_condition_scores(&target_scores(demos), tau, min_failing, SimilarityAggregate::Count)
}

pub fn similarity_condition_scores(
    scores: &[f64],
    tau: f64,
    min_failing: usize,
    aggregate: SimilarityAggregate,
) -> bool {
    if scores.is_empty() {
        return false;
    }
    match aggregate {
        SimilarityAggregate::Count => scores.iter().filter(|&&s| s <= tau).count() >= min_failing,
        SimilarityAggregate::Min => scores.iter().copied().fold(f64::INFINITY, f64::min) <= tau,
        SimilarityAggregate::Mean => scores.iter().sum::<f64>() / scores.len() as f64 <= tau,
    }
}

pub fn should_replace(mode: ConditionMode, similarity: bool, shortcut: bool) -> bool {
    match mode {
        ConditionMode::Both => similarity && shortcut,
        ConditionMode::SimilarityOnly => similarity,
        ConditionMode::ShortcutOnly => shortcut,
        ConditionMode::None => false,
    }
}

/// Per-query record of both retrieval sets, the policy inputs, and the
/// final outcome.
///
/// For the non-adaptive strategies only the fields for that strategy are
/// filled: `reticl_*` for plain BM25 retrieval, `baseline_demos` for random
/// and zero-shot prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveDecision {
    pub id: String,
    #[serde(default)]
    pub tp_demos: Vec<Demonstration>,
    #[serde(default)]
    pub reticl_demos: Vec<Demonstration>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline_demos: Vec<Demonstration>,
    #[serde(default)]
    pub predicted_target: Option<String>,
    pub tp_outcome: Option<ClassificationOutcome>,
    pub reticl_outcome: Option<ClassificationOutcome>,
    pub condition_similarity: bool,
    pub condition_shortcut: bool,
    pub replaced: bool,
    pub final_outcome: ClassificationOutcome,
}

impl AdaptiveDecision {
    pub fn tp_label(&self) -> Option<Label> {
        self.tp_outcome.as_ref().map(|o| o.label)
    }

    pub fn reticl_label(&self) -> Option<Label> {
        self.reticl_outcome.as_ref().map(|o| o.label)
    }
}

/// The recorded facts the threshold sweep needs for one dev item.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem {
    pub id: String,
    pub gold: Label,
    pub tp_label: Label,
    /// Falls back to `tp_label` when the plain-retrieval call failed.
    pub reticl_label: Label,
    /// BM25 scores of the P1/P2 demonstrations.
    pub target_scores: Vec<f64>,
    pub shortcut: bool,
}

impl ReplayItem {
    pub fn from_decision(decision: &AdaptiveDecision, gold: Label) -> Result<Self> {
        let tp_label = decision.tp_label().ok_or_else(|| {
            Error::Data(format!(
                "decision '{}' has no target-prioritized outcome to replay",
                decision.id
            ))
        })?;
        Ok(ReplayItem {
            id: decision.id.clone(),
            gold,
            tp_label,
            reticl_label: decision.reticl_label().unwrap_or(tp_label),
            target_scores: target_scores(&decision.tp_demos),
            shortcut: decision.condition_shortcut,
        })
    }

    pub fn label_at(&self, config: &AdaptiveConfig, tau: f64) -> Label {
        let sim = similarity_condition_scores(&self.target_scores, tau, config.min_failing, config.aggregate);
        if should_replace(config.condition_mode, sim, self.shortcut) {
            self.reticl_label
        } else {
            self.tp_label
        }
    }
}

pub fn replay_items(decisions: &[AdaptiveDecision], golds: &HashMap<String, Label>) -> Result<Vec<ReplayItem>> {
    let mut missing = Vec::new();
    let mut items = Vec::with_capacity(decisions.len());
    for d in decisions {
        match golds.get(&d.id) {
            Some(&g) => items.push(ReplayItem::from_decision(d, g)?),
            None => missing.push(d.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("no gold label for ids: {}", missing.join(", "))));
    }
    Ok(items)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            min: 0.0,
            max: 150.0,
            step: 1.0,
        }
    }
}

impl SweepGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !self.min.is_finite()
            || !self.max.is_finite()
            || self.max < self.min
            || self.step.is_nan()
            || self.step <= 0.0
        {
            return Err(Error::Config(format!(
                "invalid sweep grid min={} max={} step={}",
                self.min, self.max, self.step
            )));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub tau_star: f64,
    pub best_macro_f1: f64,
    /// `(tau, macro_f1)` with Macro-F1 in percent.
    pub curve: Vec<(f64, f64)>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,macro_f1\n");
        for (tau, f1) in &self.curve {
            s.push_str(&format!("{tau},{f1:.6}\n"));
        }
        s
    }
}

/// Macro-F1 of the replayed labels at a single threshold.
pub fn replay_macro_f1(items: &[ReplayItem], config: &AdaptiveConfig, tau: f64) -> Result<f64> {
    let preds: Vec<Label> = items.iter().map(|it| it.label_at(config, tau)).collect();
    let golds: Vec<Label> = items.iter().map(|it| it.gold).collect();
    Ok(metrics(&confusion(&preds, &golds)?).macro_f1)
}

/// Grid search for the Macro-F1-maximizing threshold. Only recorded
/// outcomes are replayed; the backend is never queried. Ties go to the
/// smallest threshold.
pub fn optimize_threshold(items: &[ReplayItem], config: &AdaptiveConfig, grid: SweepGrid) -> Result<SweepResult> {
    if items.is_empty() {
        return Err(Error::Data("threshold sweep needs a non-empty dev set".into()));
    }
    let mut curve = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for tau in grid.points()? {
        let f1 = replay_macro_f1(items, config, tau)?;
        curve.push((tau, f1));
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((tau, f1));
        }
    }
    let (tau_star, best_macro_f1) = best.expect("grid has at least one point");
    Ok(SweepResult {
        tau_star,
        best_macro_f1,
        curve,
    })
}

/// Best-of-both labels: the gold label when either strategy got it right,
/// otherwise the (wrong) target-prioritized label.
pub fn upper_bound_labels(decisions: &[AdaptiveDecision], golds: &[Label]) -> Result<Vec<Label>> {
    if decisions.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} decisions but {} gold labels",
            decisions.len(),
            golds.len()
        )));
    }
    decisions
        .iter()
        .zip(golds)
        .map(|(d, &gold)| {
            let tp = d
                .tp_label()
                .ok_or_else(|| Error::Data(format!("decision '{}' lacks a target-prioritized outcome", d.id)))?;
            let reticl = d.reticl_label().unwrap_or(tp);
            Ok(if tp == gold || reticl == gold { gold } else { tp })
        })
        .collect()
}
