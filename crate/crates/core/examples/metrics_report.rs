//! Metrics from a confusion matrix, rendered the way `ariiha eval` writes
//! its reports.

use ariiha::adaptive::ConditionMode;
use ariiha::corpus::Label;
use ariiha::eval::{confusion, metrics, render_csv, render_markdown, EvalMode, ReportRow};
use ariiha::pipeline::Strategy;

fn main() -> ariiha::Result<()> {
    use Label::*;
    let golds = [
        Hate, Hate, Hate, Hate, NotHate, NotHate, NotHate, NotHate, NotHate, NotHate,
    ];
    let runs = [
        (
            Strategy::Reticl,
            [
                Hate, Hate, NotHate, NotHate, Hate, Hate, NotHate, NotHate, NotHate, NotHate,
            ],
        ),
        (
            Strategy::Ariiha,
            [
                Hate, Hate, Hate, NotHate, Hate, NotHate, NotHate, NotHate, NotHate, NotHate,
            ],
        ),
    ];

    let mut rows = Vec::new();
    for (strategy, preds) in runs {
        let cm = confusion(&preds, &golds)?;
        println!("{strategy:?}: {cm:?}");
        rows.push(ReportRow {
            strategy,
            mode: EvalMode::Final,
            k: 8,
            condition_mode: ConditionMode::Both,
            report: metrics(&cm),
        });
    }
    println!("\n{}", render_markdown(&rows));
    print!("{}", render_csv(&rows));
    Ok(())
}
