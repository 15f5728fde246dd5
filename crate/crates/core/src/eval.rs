//! Binary classification metrics (Hate = positive) and report emission.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptive::{upper_bound_labels, AdaptiveConfig, AdaptiveDecision, ConditionMode, ReplayItem};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::pipeline::Strategy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, pred: Label, gold: Label) {
        match (pred, gold) {
            (Label::Hate, Label::Hate) => self.tp += 1,
            (Label::Hate, Label::NotHate) => self.fp += 1,
            (Label::NotHate, Label::Hate) => self.fn_ += 1,
            (Label::NotHate, Label::NotHate) => self.tn += 1,
        }
    }
}

pub fn confusion(preds: &[Label], golds: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("cannot score an empty prediction set".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &g) in preds.iter().zip(golds) {
        cm.record(p, g);
    }
    Ok(cm)
}

/// All scores are percentages. `over_sensitivity` may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub balanced_acc: f64,
    pub prec1: f64,
    pub rec1: f64,
    pub prec0: f64,
    pub rec0: f64,
    pub over_sensitivity: f64,
    pub accuracy: f64,
    pub support_hate: u64,
    pub support_not: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn balanced_accuracy(rec1: f64, rec0: f64) -> f64 {
    (rec1 + rec0) / 2.0
}

/// Recall of the hate class minus its precision.
pub fn over_sensitivity(prec1: f64, rec1: f64) -> f64 {
    rec1 - prec1
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let p1 = ratio(cm.tp, cm.tp + cm.fp);
    let r1 = ratio(cm.tp, cm.tp + cm.fn_);
    let p0 = ratio(cm.tn, cm.tn + cm.fn_);
    let r0 = ratio(cm.tn, cm.tn + cm.fp);
    let (f1_1, f1_0) = (f1(p1, r1), f1(p0, r0));
    let support_hate = cm.tp + cm.fn_;
    let support_not = cm.tn + cm.fp;
    let total = support_hate + support_not;
    let weighted = if total == 0 {
        0.0
    } else {
        (support_hate as f64 * f1_1 + support_not as f64 * f1_0) / total as f64
    };
    let pct = |x: f64| x * 100.0;
    MetricsReport {
        macro_f1: pct((f1_1 + f1_0) / 2.0),
        weighted_f1: pct(weighted),
        balanced_acc: pct(balanced_accuracy(r1, r0)),
        prec1: pct(p1),
        rec1: pct(r1),
        prec0: pct(p0),
        rec0: pct(r0),
        over_sensitivity: pct(over_sensitivity(p1, r1)),
        accuracy: pct(ratio(cm.tp + cm.tn, total)),
        support_hate,
        support_not,
    }
}

/// Half-up rounding to two decimals, tolerant of binary representation
/// error (71.045 rounds to 71.05).
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let nudged = scaled + scaled.signum() * 1e-7;
    let r = nudged.round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Final,
    TpOnly,
    ReticlOnly,
    UpperBound,
}

impl EvalMode {
    pub const ALL: [EvalMode; 4] = [
        EvalMode::Final,
        EvalMode::TpOnly,
        EvalMode::ReticlOnly,
        EvalMode::UpperBound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Final => "final",
            EvalMode::TpOnly => "tp_only",
            EvalMode::ReticlOnly => "reticl_only",
            EvalMode::UpperBound => "upper_bound",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "final" => Ok(EvalMode::Final),
            "tp_only" => Ok(EvalMode::TpOnly),
            "reticl_only" => Ok(EvalMode::ReticlOnly),
            "upper_bound" => Ok(EvalMode::UpperBound),
            other => Err(Error::Config(format!("unknown eval mode '{other}'"))),
        }
    }
}

/// Per-item labels for `mode`, aligned with `golds`' order.
pub fn select_labels(
    decisions: &[AdaptiveDecision],
    golds: &[(String, Label)],
    mode: EvalMode,
) -> Result<(Vec<Label>, Vec<Label>)> {
    let by_id: HashMap<&str, &AdaptiveDecision> = decisions.iter().map(|d| (d.id.as_str(), d)).collect();
    let missing: Vec<String> = golds
        .iter()
        .filter(|(id, _)| !by_id.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingItems(missing));
    }
    let ordered: Vec<&AdaptiveDecision> = golds.iter().map(|(id, _)| by_id[id.as_str()]).collect();
    let gold_labels: Vec<Label> = golds.iter().map(|(_, l)| *l).collect();
    let need = |d: &AdaptiveDecision, label: Option<Label>, what: &str| {
        label.ok_or_else(|| Error::Data(format!("decision '{}' has no {what} outcome", d.id)))
    };
    let preds = match mode {
        EvalMode::Final => ordered
            .iter()
            .map(|d| Ok(d.final_outcome.label))
            .collect::<Result<Vec<_>>>()?,
        EvalMode::TpOnly => ordered
            .iter()
            .map(|d| need(d, d.tp_label(), "target-prioritized"))
            .collect::<Result<Vec<_>>>()?,
        EvalMode::ReticlOnly => ordered
            .iter()
            .map(|d| need(d, d.reticl_label(), "plain-retrieval"))
            .collect::<Result<Vec<_>>>()?,
        EvalMode::UpperBound => {
            let owned: Vec<AdaptiveDecision> = ordered.iter().map(|d| (*d).clone()).collect();
            upper_bound_labels(&owned, &gold_labels)?
        }
    };
    Ok((preds, gold_labels))
}

pub fn evaluate_run(
    decisions: &[AdaptiveDecision],
    golds: &[(String, Label)],
    mode: EvalMode,
) -> Result<MetricsReport> {
    let (preds, gold_labels) = select_labels(decisions, golds, mode)?;
    Ok(metrics(&confusion(&preds, &gold_labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    pub mode: EvalMode,
    pub k: usize,
    pub condition_mode: ConditionMode,
    pub report: MetricsReport,
}

impl ReportRow {
    pub fn demonstration_label(&self) -> String {
        match self.strategy {
            Strategy::Ariiha => format!(
                "ariiha {} ({}-shot, {})",
                self.mode.as_str(),
                self.k,
                self.condition_mode
            ),
            Strategy::Zero => "zero (0-shot)".to_string(),
            s => format!("{} ({}-shot)", s.as_str(), self.k),
        }
    }
}

pub const METRIC_COLUMNS: [&str; 8] = [
    "Macro-F1",
    "Weighted-F1",
    "Balanced-Acc",
    "Prec@1",
    "Rec@1",
    "Prec@0",
    "Rec@0",
    "Over-Sensitivity",
];

fn metric_values(r: &MetricsReport) -> [f64; 8] {
    [
        r.macro_f1,
        r.weighted_f1,
        r.balanced_acc,
        r.prec1,
        r.rec1,
        r.prec0,
        r.rec0,
        r.over_sensitivity,
    ]
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("strategy,mode,k,condition_mode");
    for c in METRIC_COLUMNS {
        s.push(',');
        s.push_str(c);
    }
    s.push_str(",Accuracy,support_hate,support_not\n");
    for row in rows {
        s.push_str(&format!(
            "{},{},{},{}",
            row.strategy.as_str(),
            row.mode.as_str(),
            row.k,
            row.condition_mode
        ));
        for v in metric_values(&row.report) {
            s.push(',');
            s.push_str(&fmt2(v));
        }
        s.push_str(&format!(
            ",{},{},{}\n",
            fmt2(row.report.accuracy),
            row.report.support_hate,
            row.report.support_not
        ));
    }
    s
}

pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::from("| Demonstration |");
    for c in METRIC_COLUMNS {
        s.push_str(&format!(" {c} |"));
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(METRIC_COLUMNS.len()));
    s.push('\n');
    for row in rows {
        s.push_str(&format!("| {} |", row.demonstration_label()));
        for v in metric_values(&row.report) {
            s.push_str(&format!(" {} |", fmt2(v)));
        }
        s.push('\n');
    }
    s
}

pub fn render_json(rows: &[ReportRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("report rows serialize");
    s.push('\n');
    s
}

/// Final-output rows for every condition mode at a fixed threshold,
/// computed by replaying recorded decisions.
pub fn ablation_rows(items: &[ReplayItem], base: &AdaptiveConfig, tau: f64, k: usize) -> Result<Vec<ReportRow>> {
    let golds: Vec<Label> = items.iter().map(|it| it.gold).collect();
    ConditionMode::ALL
        .iter()
        .map(|&mode| {
            let cfg = AdaptiveConfig {
                condition_mode: mode,
                ..base.clone()
            };
            let preds: Vec<Label> = items.iter().map(|it| it.label_at(&cfg, tau)).collect();
            Ok(ReportRow {
                strategy: Strategy::Ariiha,
                mode: EvalMode::Final,
                k,
                condition_mode: mode,
                report: metrics(&confusion(&preds, &golds)?),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" | "markdown-table" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

/// Writes `report.{csv,json,md}` into `dir` for each requested format.
pub fn emit_reports(rows: &[ReportRow], dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => ("report.csv", render_csv(rows)),
            ReportFormat::Json => ("report.json", render_json(rows)),
            ReportFormat::Markdown => ("report.md", render_markdown(rows)),
        };
        let path = dir.join(name);
        crate::io::write_string(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_cases() {
        use Label::*;
        let all_hate = vec![Hate; 4];
        assert_eq!(
            confusion(&all_hate, &all_hate).unwrap(),
            ConfusionMatrix {
                tp: 4,
                fp: 0,
                fn_: 0,
                tn: 0
            }
        );
        let miss = confusion(&[NotHate; 3], &[Hate; 3]).unwrap();
        assert_eq!(miss.fn_, 3);
        let preds = [Hate, Hate, Hate, Hate, Hate, NotHate, NotHate, NotHate];
        let golds = [Hate, Hate, Hate, NotHate, NotHate, Hate, NotHate, NotHate];
        assert_eq!(
            confusion(&preds, &golds).unwrap(),
            ConfusionMatrix {
                tp: 3,
                fp: 2,
                fn_: 1,
                tn: 2
            }
        );
        assert!(confusion(&[Hate], &[]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn worked_example() {
        let r = metrics(&ConfusionMatrix {
            tp: 3,
            fp: 2,
            fn_: 1,
            tn: 4,
        });
        assert_eq!(fmt2(r.prec1), "60.00");
        assert_eq!(fmt2(r.rec1), "75.00");
        assert_eq!(fmt2(r.prec0), "80.00");
        assert_eq!(fmt2(r.rec0), "66.67");
        assert_eq!(fmt2(r.balanced_acc), "70.83");
        assert_eq!(fmt2(r.over_sensitivity), "15.00");
        assert_eq!(fmt2(r.macro_f1), "69.70");
        // F1_hate = 2/3, F1_not = 8/11, supports 4 and 6
        let weighted = (4.0 * (2.0 / 3.0) + 6.0 * (8.0 / 11.0)) / 10.0 * 100.0;
        assert!((r.weighted_f1 - weighted).abs() < 1e-9);
        assert_eq!(fmt2(r.accuracy), "70.00");
    }

    #[test]
    fn zero_denominators() {
        let r = metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 5,
        });
        assert_eq!(r.prec1, 0.0);
        assert_eq!(r.rec1, 0.0);
        assert_eq!(r.rec0, 100.0);
        assert_eq!(r.macro_f1, 50.0);
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(fmt2(71.045), "71.05");
        assert_eq!(fmt2(77.545), "77.55");
        assert_eq!(fmt2(17.599999999999994), "17.60");
        assert_eq!(fmt2(-1.005), "-1.01");
        assert_eq!(fmt2(-0.0001), "0.00");
    }

    #[test]
    fn csv_has_one_row_per_report() {
        let row = ReportRow {
            strategy: Strategy::Ariiha,
            mode: EvalMode::Final,
            k: 8,
            condition_mode: ConditionMode::Both,
            report: metrics(&ConfusionMatrix {
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1,
            }),
        };
        let csv = render_csv(std::slice::from_ref(&row));
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("ariiha,final,8,both,50.00"));
        let md = render_markdown(&[row]);
        assert!(md.starts_with(
            "| Demonstration | Macro-F1 | Weighted-F1 | Balanced-Acc | Prec@1 | Rec@1 | Prec@0 | Rec@0 | Over-Sensitivity |"
        ));
    }
}
