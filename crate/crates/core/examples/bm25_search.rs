//! Build a BM25 index, run a few top-k queries, and round-trip it to disk.
//!
//! cargo run --example bm25_search -- "remember when the parks were clean"

use std::collections::HashSet;

use ariiha::retrieval::{tokenize, Bm25Index, Bm25Params};

const DOCS: &[(&str, &str)] = &[
    ("a1", "remember when our parks were clean and quiet"),
    ("a2", "the parks department planted new trees"),
    ("a3", "remember when we could walk home at night"),
    ("a4", "they ruin every neighborhood they move into"),
    ("a5", "our neighborhood garden won a prize"),
];

fn main() -> ariiha::Result<()> {
    let query = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "remember when the parks were clean".to_string());

    let index = Bm25Index::from_documents(DOCS.iter().copied(), Bm25Params::default());
    println!(
        "{} docs, avg length {:.2}, query tokens {:?}",
        index.doc_count(),
        index.avg_doc_length(),
        tokenize(&query).tokens()
    );

    for hit in index.top_k(&query, 3, &HashSet::new()) {
        println!("  {:<3} {:>7.4}", hit.doc_id, hit.score);
    }

    // Leave-one-out: a query that is itself a pool member never retrieves itself.
    let exclude: HashSet<String> = ["a1".to_string()].into();
    let loo = index.top_k(DOCS[0].1, 2, &exclude);
    println!(
        "a1 neighbours without itself: {:?}",
        loo.iter().map(|d| &d.doc_id).collect::<Vec<_>>()
    );

    let dir = std::env::temp_dir().join("ariiha-bm25-example");
    let path = dir.join("index.json");
    index.save(&path)?;
    let loaded = Bm25Index::load(&path)?;
    assert_eq!(loaded.score_all(&tokenize(&query)), index.score_all(&tokenize(&query)));
    println!("saved and reloaded {}", path.display());
    Ok(())
}
