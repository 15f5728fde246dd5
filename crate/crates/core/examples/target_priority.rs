//! Target-prioritized demonstration selection: exact target matches first
//! (P1), then similar groups (P2), then everything else by BM25 (P3).

use ariiha::corpus::{Example, ExamplePool, Label, Split};
use ariiha::retrieval::{Bm25Index, Bm25Params};
use ariiha::target::{normalize_target, target_prioritized_retrieve, DefaultMatcher, TargetTable};

fn ex(id: &str, text: &str, label: Label, target: Option<&str>) -> Example {
    Example {
        id: id.into(),
        text: text.into(),
        label,
        target: target.map(Into::into),
        split: Split::Pool,
    }
}

fn main() -> ariiha::Result<()> {
    use Label::*;
    let pool = ExamplePool::new(vec![
        ex(
            "p1",
            "black women are always so loud at work",
            Hate,
            Some("black women"),
        ),
        ex("p2", "black people built this city too", NotHate, Some("black people")),
        ex(
            "p3",
            "black people should go back where they came from",
            Hate,
            Some("Black people"),
        ),
        ex("p4", "they are loud at work and never quiet", Hate, Some("immigrants")),
        ex("p5", "work was quiet today", NotHate, None),
        ex("p6", "women at work deserve equal pay", NotHate, Some("women")),
    ])?;
    let index = Bm25Index::build(&pool, Bm25Params::default());
    let targets = TargetTable::from_annotations(&pool);

    let query = Example {
        split: Split::Test,
        ..ex("q1", "black people are so loud at work", Hate, None)
    };
    // Usually predicted by the LLM; fixed here.
    let predicted = normalize_target("black people")?;

    let demos = target_prioritized_retrieve(&pool, &index, &targets, &DefaultMatcher, &query, Some(&predicted), 4);
    for d in &demos {
        println!(
            "{:?}  {:<3} {:>7.4}  {:<13} {}",
            d.priority,
            d.id,
            d.bm25_score,
            d.target.as_deref().unwrap_or("-"),
            d.text
        );
    }
    Ok(())
}
