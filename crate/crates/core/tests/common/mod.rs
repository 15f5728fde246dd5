#![allow(dead_code)]

use std::collections::HashMap;

use ariiha::adaptive::AdaptiveDecision;
use ariiha::corpus::{Example, ExamplePool, Label, Split};
use ariiha::eval::ConfusionMatrix;
use ariiha::llm::{ClassificationOutcome, MockBackend, MockRule, PromptTemplate};
use ariiha::pipeline::{Pipeline, PipelineConfig, Strategy};
use ariiha::retrieval::{tokenize, Bm25Index, Bm25Params};
use ariiha::target::{normalize_target, DefaultMatcher, Priority, TargetMatch, TargetMatcher, TargetTable};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn example(id: &str, text: &str, label: Label, target: Option<&str>, split: Split) -> Example {
    Example {
        id: id.to_string(),
        text: text.to_string(),
        label,
        target: target.map(str::to_string),
        split,
    }
}

// ---------------------------------------------------------------- BM25 ----

/// Full-scan Okapi BM25 written straight from the definition.
pub fn oracle_scores(docs: &[(String, String)], query: &str, params: Bm25Params) -> Vec<f64> {
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, t)| tokenize(t).0).collect();
    let n = docs.len() as f64;
    let total: usize = toks.iter().map(Vec::len).sum();
    let avg = if docs.is_empty() { 0.0 } else { total as f64 / n };
    let mut terms: Vec<String> = Vec::new();
    for t in tokenize(query).0 {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let dfs: Vec<f64> = terms
        .iter()
        .map(|term| toks.iter().filter(|d| d.contains(term)).count() as f64)
        .collect();
    toks.iter()
        .map(|doc| {
            let mut s = 0.0;
            for (term, &df) in terms.iter().zip(&dfs) {
                let tf = doc.iter().filter(|t| *t == term).count();
                if tf == 0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let norm = if avg > 0.0 {
                    1.0 - params.b + params.b * (doc.len() as f64 / avg)
                } else {
                    1.0
                };
                let tf = tf as f64;
                s += idf * (tf * (params.k1 + 1.0)) / (tf + params.k1 * norm);
            }
            s
        })
        .collect()
}

/// Oracle top-k: every document scored, stable sort by (-score, id).
pub fn oracle_top_k(
    docs: &[(String, String)],
    query: &str,
    k: usize,
    exclude: &[String],
    params: Bm25Params,
) -> Vec<(String, f64)> {
    let scores = oracle_scores(docs, query, params);
    let mut all: Vec<(String, f64)> = docs
        .iter()
        .zip(scores)
        .filter(|((id, _), _)| !exclude.contains(id))
        .map(|((id, _), s)| (id.clone(), s))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

const VOCAB: [&str; 24] = [
    "they", "are", "not", "welcome", "here", "people", "city", "group", "always", "never", "family", "work", "school",
    "the", "a", "of", "and", "new", "old", "home", "street", "vote", "land", "quiet",
];

/// A random corpus of up to `max_docs` documents with up to `max_len`
/// tokens each. Ids are shuffled so position order differs from id order,
/// and the small vocabulary produces plenty of exact score ties.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize, max_len: usize) -> Vec<(String, String)> {
    let n = rng.gen_range(1..=max_docs);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    ids.into_iter()
        .map(|i| (format!("doc{i:03}"), random_text(rng, max_len)))
        .collect()
}

pub fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let len = rng.gen_range(0..=max_len);
    let mut words: Vec<String> = (0..len)
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
        .collect();
    if rng.gen_bool(0.2) && !words.is_empty() {
        let i = rng.gen_range(0..words.len());
        words[i] = format!("\"{}!\"", words[i].to_uppercase());
    }
    words.join(" ")
}

// ---------------------------------------------------- priority oracle ----

const GROUPS: [&str; 8] = [
    "jews",
    "white jews",
    "black people",
    "women",
    "muslim women",
    "immigrants",
    "the immigrants",
    "asians",
];

pub struct RandomPool {
    pub pool: ExamplePool,
    pub index: Bm25Index,
    pub targets: TargetTable,
}

pub fn random_pool(rng: &mut ChaCha8Rng, max_docs: usize) -> RandomPool {
    let docs = random_corpus(rng, max_docs, 20);
    let examples: Vec<Example> = docs
        .iter()
        .map(|(id, text)| {
            let target = if rng.gen_bool(0.15) {
                None
            } else {
                Some(GROUPS[rng.gen_range(0..GROUPS.len())])
            };
            let label = if rng.gen_bool(0.5) { Label::Hate } else { Label::NotHate };
            example(id, text, label, target, Split::Pool)
        })
        .collect();
    let pool = ExamplePool::new(examples).expect("unique ids");
    let index = Bm25Index::build(&pool, Bm25Params::default());
    let targets = TargetTable::from_annotations(&pool);
    RandomPool { pool, index, targets }
}

pub fn random_group(rng: &mut ChaCha8Rng) -> &'static str {
    GROUPS[rng.gen_range(0..GROUPS.len())]
}

/// (id, priority, score) chosen by brute force.
pub fn oracle_priority(
    rp: &RandomPool,
    query: &Example,
    predicted: Option<&str>,
    k: usize,
) -> Vec<(String, Priority, f64)> {
    let docs: Vec<(String, String)> = rp.pool.iter().map(|e| (e.id.clone(), e.text.clone())).collect();
    let scores = oracle_scores(&docs, &query.text, rp.index.params());
    let q = predicted.map(|p| normalize_target(p).unwrap());
    let mut all: Vec<(String, Priority, f64)> = rp
        .pool
        .iter()
        .zip(scores)
        .filter(|(e, _)| e.id != query.id)
        .map(|(e, s)| {
            let level = match (&q, rp.targets.get(&e.id)) {
                (Some(q), Some(t)) => DefaultMatcher.compare(q, t),
                _ => TargetMatch::Unrelated,
            };
            (e.id.clone(), Priority::of_match(level), s)
        })
        .collect();
    all.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then_with(|| b.2.total_cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    all.truncate(k);
    all
}

// ------------------------------------------------------------ metrics ----

pub struct NaiveMetrics {
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub balanced_acc: f64,
    pub prec1: f64,
    pub rec1: f64,
    pub prec0: f64,
    pub rec0: f64,
    pub over_sensitivity: f64,
}

/// Per-class definitions applied to an explicit list of (pred, gold) pairs.
pub fn naive_metrics(cm: &ConfusionMatrix) -> NaiveMetrics {
    let mut pairs = Vec::new();
    pairs.extend(std::iter::repeat_n((Label::Hate, Label::Hate), cm.tp as usize));
    pairs.extend(std::iter::repeat_n((Label::Hate, Label::NotHate), cm.fp as usize));
    pairs.extend(std::iter::repeat_n((Label::NotHate, Label::Hate), cm.fn_ as usize));
    pairs.extend(std::iter::repeat_n((Label::NotHate, Label::NotHate), cm.tn as usize));
    let class = |c: Label| {
        let predicted = pairs.iter().filter(|(p, _)| *p == c).count() as f64;
        let actual = pairs.iter().filter(|(_, g)| *g == c).count() as f64;
        let hit = pairs.iter().filter(|(p, g)| *p == c && *g == c).count() as f64;
        let precision = if predicted > 0.0 { hit / predicted } else { 0.0 };
        let recall = if actual > 0.0 { hit / actual } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        (precision, recall, f1, actual)
    };
    let (p1, r1, f1h, n1) = class(Label::Hate);
    let (p0, r0, f1n, n0) = class(Label::NotHate);
    let n = n1 + n0;
    NaiveMetrics {
        macro_f1: 100.0 * (f1h + f1n) / 2.0,
        weighted_f1: if n > 0.0 {
            100.0 * (f1h * n1 + f1n * n0) / n
        } else {
            0.0
        },
        balanced_acc: 100.0 * (r1 + r0) / 2.0,
        prec1: 100.0 * p1,
        rec1: 100.0 * r1,
        prec0: 100.0 * p0,
        rec0: 100.0 * r0,
        over_sensitivity: 100.0 * (r1 - p1),
    }
}

pub fn outcome(label: Label, rationale: &str) -> ClassificationOutcome {
    ClassificationOutcome {
        label,
        rationale: rationale.to_string(),
        raw_reply: format!("{rationale}\nAnswer: {label}"),
    }
}

/// A decision log with random per-strategy labels. `final` copies the
/// strategy picked by the `replaced` flag.
pub fn random_log(rng: &mut ChaCha8Rng, n: usize) -> (Vec<AdaptiveDecision>, Vec<(String, Label)>) {
    let pick = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { Label::Hate } else { Label::NotHate };
    let mut decisions = Vec::with_capacity(n);
    let mut golds = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("item{i}");
        let tp = pick(rng);
        let rt = pick(rng);
        let replaced = rng.gen_bool(0.3);
        let fin = if replaced { rt } else { tp };
        decisions.push(AdaptiveDecision {
            id: id.clone(),
            tp_demos: Vec::new(),
            reticl_demos: Vec::new(),
            baseline_demos: Vec::new(),
            predicted_target: None,
            tp_outcome: Some(outcome(tp, "tp")),
            reticl_outcome: Some(outcome(rt, "reticl")),
            condition_similarity: replaced,
            condition_shortcut: replaced,
            replaced,
            final_outcome: outcome(fin, "final"),
        });
        golds.push((id, pick(rng)));
    }
    (decisions, golds)
}

// ------------------------------------------------ engineered sweep data ----

/// Dev split built so that replacing demonstrations helps exactly when the
/// threshold covers a target-demonstration score in (9, 10], and hurts once
/// it also covers scores in (10, 11]. With the integer grid the optimum is
/// tau = 10.
///
/// Every pool document has the same length, so BM25 length normalization is
/// neutral and scores depend only on term and document frequencies.
pub struct SweepFixture {
    pub pool: ExamplePool,
    pub dev: ExamplePool,
    pub index: Bm25Index,
    pub targets: TargetTable,
    pub backend: MockBackend,
    pub helped: Vec<String>,
    pub hurt: Vec<String>,
}

const DOC_LEN: usize = 12;
const POOL_SIZE: usize = 40;

fn padded(id: &str, words: &[String]) -> String {
    let mut w = words.to_vec();
    let mut j = 0;
    while w.len() < DOC_LEN {
        w.push(format!("pad{id}x{j}"));
        j += 1;
    }
    w.join(" ")
}

pub fn sweep_fixture() -> SweepFixture {
    let mut pool = Vec::new();
    let mut dev = Vec::new();
    let mut targets = TargetTable::new();
    let mut helped = Vec::new();
    let mut hurt = Vec::new();

    // Target-matched demonstrations share three query words with the query,
    // repeated to set the score. Plain-retrieval demonstrations share five
    // query words, outrank them, and carry the "counterpoint" marker.
    let kinds: [(&str, &[usize], Label, usize); 2] = [
        ("help", &[2, 1, 1], Label::NotHate, 4),
        ("hurt", &[2, 2, 1], Label::Hate, 3),
    ];
    for (kind, tfs, gold, count) in kinds {
        for i in 0..count {
            let item = format!("{kind}{i}");
            let q: Vec<String> = (0..5).map(|j| format!("{item}w{j}")).collect();
            let group = format!("grp{item}");
            let mut query_words = q.clone();
            query_words.push(format!("{kind}q"));
            dev.push(example(
                &format!("dev_{item}"),
                &query_words.join(" "),
                gold,
                None,
                Split::Dev,
            ));
            targets.insert(&format!("dev_{item}"), normalize_target(&group).unwrap());

            let mut p1 = Vec::new();
            for (j, &tf) in tfs.iter().enumerate() {
                for _ in 0..tf {
                    p1.push(q[j].clone());
                }
            }
            let p1_id = format!("tp_{item}");
            pool.push(example(
                &p1_id,
                &padded(&p1_id, &p1),
                Label::Hate,
                Some(&group),
                Split::Pool,
            ));

            let mut p3 = q.clone();
            p3.push("counterpoint".into());
            let p3_id = format!("rt_{item}");
            let other = format!("oth{item}");
            pool.push(example(
                &p3_id,
                &padded(&p3_id, &p3),
                Label::NotHate,
                Some(&other),
                Split::Pool,
            ));
            match kind {
                "help" => helped.push(format!("dev_{item}")),
                _ => hurt.push(format!("dev_{item}")),
            }
        }
    }
    // Items the policy never touches: no quoted rationale, no matching target.
    for (i, gold) in [
        Label::NotHate,
        Label::NotHate,
        Label::NotHate,
        Label::Hate,
        Label::Hate,
        Label::Hate,
    ]
    .into_iter()
    .enumerate()
    {
        let marker = if gold == Label::Hate { "hateq" } else { "calmq" };
        let id = format!("dev_plain{i}");
        dev.push(example(
            &id,
            &format!("plain{i}a plain{i}b {marker}"),
            gold,
            None,
            Split::Dev,
        ));
        targets.insert(&id, normalize_target(&format!("nobody{i}")).unwrap());
    }
    let mut j = 0;
    while pool.len() < POOL_SIZE {
        let id = format!("bg{j}");
        pool.push(example(
            &id,
            &padded(&id, &[]),
            Label::NotHate,
            Some(&format!("bg{j}")),
            Split::Pool,
        ));
        j += 1;
    }

    let pool = ExamplePool::new(pool).unwrap();
    let dev = ExamplePool::new(dev).unwrap();
    let index = Bm25Index::build(&pool, Bm25Params::default());
    targets.extend(TargetTable::from_annotations(&pool));
    let backend = MockBackend::new(vec![
        MockRule::classify(Some("helpq"), Label::NotHate, "Read in context the text is benign.")
            .with_context("counterpoint"),
        MockRule::classify(Some("helpq"), Label::Hate, "The word {quote} marks a slur.").with_quote("helpq"),
        MockRule::classify(Some("hurtq"), Label::NotHate, "Read in context the text is benign.")
            .with_context("counterpoint"),
        MockRule::classify(Some("hurtq"), Label::Hate, "The word {quote} marks a slur.").with_quote("hurtq"),
        MockRule::classify(Some("hateq"), Label::Hate, "The text demeans a group."),
        MockRule::classify(None, Label::NotHate, "Nothing hostile is said."),
    ])
    .unwrap();
    SweepFixture {
        pool,
        dev,
        index,
        targets,
        backend,
        helped,
        hurt,
    }
}

impl SweepFixture {
    pub fn config(&self, tau: f64) -> PipelineConfig {
        let mut c = PipelineConfig {
            k: 1,
            ..PipelineConfig::default()
        };
        c.adaptive.tau = tau;
        c
    }

    pub fn run(&self, tau: f64) -> Vec<AdaptiveDecision> {
        let template = PromptTemplate::default();
        let p = Pipeline::new(
            &self.pool,
            &self.index,
            &self.targets,
            &DefaultMatcher,
            &self.backend,
            &template,
            self.config(tau),
        )
        .unwrap();
        let out = p.run(self.dev.examples(), Strategy::Ariiha, 1);
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        out.decisions
    }

    pub fn golds(&self) -> HashMap<String, Label> {
        self.dev.iter().map(|e| (e.id.clone(), e.label)).collect()
    }
}
