//! Classify the fixture dev split once, then grid-search tau by replaying
//! the recorded outcomes. No model calls happen during the sweep.

use std::collections::HashMap;
use std::path::Path;

use ariiha::adaptive::{optimize_threshold, replay_items, ConditionMode, SweepGrid};
use ariiha::cli::resolve_targets;
use ariiha::corpus::{load_examples, Format, LoadOptions, Split};
use ariiha::llm::{MockBackend, PromptTemplate};
use ariiha::pipeline::{Pipeline, PipelineConfig, Strategy};
use ariiha::retrieval::{Bm25Index, Bm25Params};
use ariiha::target::{DefaultMatcher, TargetCache};

fn main() -> ariiha::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let opts = LoadOptions {
        null_token: Some("NULL".into()),
    };
    let pool = load_examples(fixtures.join("pool.tsv"), Format::Tsv, Split::Pool, &opts)?;
    let dev = load_examples(fixtures.join("dev.tsv"), Format::Tsv, Split::Dev, &opts)?;
    let index = Bm25Index::build(&pool, Bm25Params::default());
    let backend = MockBackend::from_file(fixtures.join("mock_rules.jsonl"))?;
    let template = PromptTemplate::default();

    let cache = TargetCache::in_memory("example");
    let queries: Vec<_> = dev.iter().collect();
    let (targets, failures) = resolve_targets(&pool, &index, &backend, 4, cache, &queries)?;
    assert!(failures.is_empty());

    let config = PipelineConfig {
        k: 4,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(
        &pool,
        &index,
        &targets,
        &DefaultMatcher,
        &backend,
        &template,
        config.clone(),
    )?;
    let out = pipeline.run(dev.examples(), Strategy::Ariiha, 1);

    let golds: HashMap<String, _> = dev.iter().map(|e| (e.id.clone(), e.label)).collect();
    let items = replay_items(&out.decisions, &golds)?;
    let grid = SweepGrid {
        min: 0.0,
        max: 30.0,
        step: 2.0,
    };
    for mode in ConditionMode::ALL {
        let cfg = ariiha::adaptive::AdaptiveConfig {
            condition_mode: mode,
            ..config.adaptive.clone()
        };
        let result = optimize_threshold(&items, &cfg, grid)?;
        let curve: Vec<String> = result.curve.iter().map(|(t, f)| format!("{t}:{f:.1}")).collect();
        println!(
            "{:<15} tau*={:<4} F1={:.2}  {}",
            mode.as_str(),
            result.tau_star,
            result.best_macro_f1,
            curve.join(" ")
        );
    }
    Ok(())
}
