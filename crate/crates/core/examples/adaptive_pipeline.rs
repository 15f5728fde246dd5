//! One query through the adaptive pipeline, using the bundled fixture pool
//! and the scripted mock backend.
//!
//! The query mentions "white jews" in a harmless context. Target-prioritized
//! retrieval surfaces a hateful pool example about the same group, the model
//! echoes the group name in quotes, and the decision falls back to plain
//! BM25 demonstrations, which flip the answer to "not hate".

use std::path::Path;

use ariiha::corpus::{load_examples, Format, LoadOptions, Split};
use ariiha::llm::{MockBackend, PromptTemplate};
use ariiha::pipeline::{Pipeline, PipelineConfig};
use ariiha::retrieval::{Bm25Index, Bm25Params};
use ariiha::target::{normalize_target, DefaultMatcher, TargetTable};

fn main() -> ariiha::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let opts = LoadOptions {
        null_token: Some("NULL".into()),
    };
    let pool = load_examples(fixtures.join("pool.tsv"), Format::Tsv, Split::Pool, &opts)?;
    let test = load_examples(fixtures.join("test.tsv"), Format::Tsv, Split::Test, &opts)?;
    let query = test.get("t08").expect("fixture has t08").clone();

    let index = Bm25Index::build(&pool, Bm25Params::default());
    let backend = MockBackend::from_file(fixtures.join("mock_rules.jsonl"))?;
    let template = PromptTemplate::default();

    let mut targets = TargetTable::from_annotations(&pool);
    targets.insert(&query.id, normalize_target("white jews")?);

    let config = PipelineConfig {
        k: 3,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(&pool, &index, &targets, &DefaultMatcher, &backend, &template, config)?;
    let d = pipeline.ariiha_classify(0, &query)?;

    println!("query: {}\n", query.text);
    println!("target-prioritized demonstrations:");
    for demo in &d.tp_demos {
        println!(
            "  {:?} {:<4} {:>7.3} [{}] {}",
            demo.priority, demo.id, demo.bm25_score, demo.label, demo.text
        );
    }
    let tp = d.tp_outcome.as_ref().expect("adaptive run records both outcomes");
    println!("  -> {} | {}", tp.label, tp.rationale);
    println!(
        "\nsimilarity condition: {}   shortcut: {}   replaced: {}\n",
        d.condition_similarity, d.condition_shortcut, d.replaced
    );
    println!("plain BM25 demonstrations:");
    for demo in &d.reticl_demos {
        println!(
            "  {:<4} {:>7.3} [{}] {}",
            demo.id, demo.bm25_score, demo.label, demo.text
        );
    }
    if let Some(rt) = &d.reticl_outcome {
        println!("  -> {} | {}", rt.label, rt.rationale);
    }
    println!("\nfinal: {} (gold: {})", d.final_outcome.label, query.label);
    Ok(())
}
