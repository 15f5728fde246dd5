//! Target groups: normalization, similarity, prediction of missing
//! annotations, and target-prioritized demonstration retrieval.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, ExamplePool, Label};
use crate::error::{Error, Result};
use crate::llm::{ClassificationBackend, Prompt, Task};
use crate::retrieval::{is_strippable_punct, tokenize, Bm25Index};

const STOPWORDS_TXT: &str = include_str!("../resources/stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_TXT
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedTarget {
    canonical: String,
    content_tokens: BTreeSet<String>,
}

impl NormalizedTarget {
    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn content_tokens(&self) -> &BTreeSet<String> {
        &self.content_tokens
    }
}

impl std::fmt::Display for NormalizedTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical)
    }
}

/// Lowercases, collapses whitespace and strips punctuation around each
/// word. For multi-target annotations (`a, b` or `a; b`) the first listed
/// group wins.
pub fn normalize_target(raw: &str) -> Result<NormalizedTarget> {
    let first = raw.split([',', ';', '|']).next().unwrap_or("");
    let words: Vec<String> = first
        .split_whitespace()
        .map(|w| w.trim_matches(is_strippable_punct).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    if words.is_empty() {
        return Err(Error::InvalidTarget(format!("'{raw}' is empty after normalization")));
    }
    let stop = stopwords();
    let content_tokens = words.iter().filter(|w| !stop.contains(w.as_str())).cloned().collect();
    Ok(NormalizedTarget {
        canonical: words.join(" "),
        content_tokens,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMatch {
    Exact,
    Similar,
    #[serde(rename = "none")]
    Unrelated,
}

/// Decides how closely two target groups match. Must be symmetric.
pub trait TargetMatcher: Send + Sync {
    fn compare(&self, a: &NormalizedTarget, b: &NormalizedTarget) -> TargetMatch;
}

/// Exact on equal canonical strings; similar on a shared content token or
/// when one canonical string contains the other on word boundaries.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultMatcher;

fn contains_words(hay: &str, needle: &str) -> bool {
    format!(" {hay} ").contains(&format!(" {needle} "))
}

impl TargetMatcher for DefaultMatcher {
    fn compare(&self, a: &NormalizedTarget, b: &NormalizedTarget) -> TargetMatch {
        if a.canonical == b.canonical {
            TargetMatch::Exact
        } else if !a.content_tokens.is_disjoint(&b.content_tokens)
            || contains_words(&a.canonical, &b.canonical)
            || contains_words(&b.canonical, &a.canonical)
        {
            TargetMatch::Similar
        } else {
            TargetMatch::Unrelated
        }
    }
}

pub fn target_similarity(a: &NormalizedTarget, b: &NormalizedTarget) -> TargetMatch {
    DefaultMatcher.compare(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Priority {
    P1,
    P2,
    P3,
}

impl Priority {
    pub fn of_match(m: TargetMatch) -> Priority {
        match m {
            TargetMatch::Exact => Priority::P1,
            TargetMatch::Similar => Priority::P2,
            TargetMatch::Unrelated => Priority::P3,
        }
    }

    pub fn is_target_based(self) -> bool {
        self != Priority::P3
    }
}

/// A pool example selected for a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub text: String,
    pub label: Label,
    /// Resolved (annotated or predicted) canonical target, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub bm25_score: f64,
    pub priority: Priority,
}

impl Demonstration {
    pub fn new(ex: &Example, target: Option<&NormalizedTarget>, bm25_score: f64, priority: Priority) -> Self {
        Demonstration {
            id: ex.id.clone(),
            text: ex.text.clone(),
            label: ex.label,
            target: target.map(|t| t.canonical.clone()),
            bm25_score,
            priority,
        }
    }
}

/// Resolved targets keyed by example id.
#[derive(Debug, Clone, Default)]
pub struct TargetTable {
    map: HashMap<String, NormalizedTarget>,
}

impl TargetTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Targets taken from annotations only; unparseable annotations are
    /// treated as missing.
    pub fn from_annotations<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let mut t = TargetTable::new();
        for ex in examples {
            if let Some(nt) = ex.target.as_deref().and_then(|raw| normalize_target(raw).ok()) {
                t.insert(&ex.id, nt);
            }
        }
        t
    }

    pub fn insert(&mut self, id: &str, target: NormalizedTarget) {
        self.map.insert(id.to_string(), target);
    }

    pub fn get(&self, id: &str) -> Option<&NormalizedTarget> {
        self.map.get(id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn extend(&mut self, other: TargetTable) {
        self.map.extend(other.map);
    }
}

/// Selects up to `k` demonstrations: exact target matches first, then
/// similar ones, then the remaining pool by BM25 rank. Within each band
/// examples are ordered by BM25 score against the query, ties by id. The
/// query's own id is never selected.
pub fn target_prioritized_retrieve(
    pool: &ExamplePool,
    index: &Bm25Index,
    targets: &TargetTable,
    matcher: &dyn TargetMatcher,
    query: &Example,
    predicted_target: Option<&NormalizedTarget>,
    k: usize,
) -> Vec<Demonstration> {
    let scores = index.score_all(&tokenize(&query.text));
    let self_pos = index.position(&query.id);
    let levels: Vec<TargetMatch> = pool
        .iter()
        .map(|ex| match (predicted_target, targets.get(&ex.id)) {
            (Some(q), Some(t)) => matcher.compare(q, t),
            _ => TargetMatch::Unrelated,
        })
        .collect();

    let mut chosen: Vec<(usize, f64, Priority)> = Vec::with_capacity(k);
    let mut taken = vec![false; pool.len()];
    for band in [TargetMatch::Exact, TargetMatch::Similar, TargetMatch::Unrelated] {
        let room = k - chosen.len();
        if room == 0 {
            break;
        }
        let picked = index.rank(&scores, room, |pos| {
            Some(pos) != self_pos && !taken[pos] && (band == TargetMatch::Unrelated || levels[pos] == band)
        });
        for (pos, score) in picked {
            taken[pos] = true;
            chosen.push((pos, score, Priority::of_match(band)));
        }
    }

    chosen
        .into_iter()
        .map(|(pos, score, prio)| {
            let ex = &pool.examples()[pos];
            Demonstration::new(ex, targets.get(&ex.id), score, prio)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub target: String,
    pub backend: String,
    pub prompt_hash: String,
}

/// Sidecar JSONL of predicted targets keyed by example id and backend.
#[derive(Debug)]
pub struct TargetCache {
    path: Option<PathBuf>,
    backend: String,
    entries: Mutex<HashMap<String, CacheEntry>>,
}

impl TargetCache {
    pub fn in_memory(backend: &str) -> Self {
        TargetCache {
            path: None,
            backend: backend.to_string(),
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (or starts) a cache file; entries from other backends are ignored.
    pub fn open(path: impl Into<PathBuf>, backend: &str) -> Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            for e in crate::io::read_jsonl::<CacheEntry>(&path)? {
                if e.backend == backend {
                    entries.insert(e.id.clone(), e);
                }
            }
        }
        Ok(TargetCache {
            path: Some(path),
            backend: backend.to_string(),
            entries: Mutex::new(entries),
        })
    }

    pub fn get(&self, id: &str) -> Option<CacheEntry> {
        self.entries.lock().expect("cache poisoned").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn put(&self, entry: CacheEntry) -> Result<()> {
        let mut guard = self.entries.lock().expect("cache poisoned");
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut line = serde_json::to_vec(&entry)?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::io(path, e))?;
        }
        guard.insert(entry.id.clone(), entry);
        Ok(())
    }
}

pub const TARGET_SYSTEM: &str = "Identify the demographic group targeted by the text. \
Answer with the group name only, on the last line.";

/// Few-shot prompt listing each demonstration's text and annotated target.
pub fn target_prompt(demos: &[(&Example, &NormalizedTarget)], query_text: &str) -> Prompt {
    let blocks: Vec<String> = demos
        .iter()
        .map(|(ex, t)| format!("Text: {}\nTarget: {}", ex.text, t.canonical()))
        .collect();
    Prompt::assemble(
        Task::PredictTarget,
        TARGET_SYSTEM,
        &blocks,
        format!("Text: {query_text}\nTarget:"),
        query_text,
    )
}

/// Final line of a target reply, with an optional `Target:` prefix removed.
pub fn parse_target_reply(reply: &str) -> Result<NormalizedTarget> {
    let line = reply
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::Backend("empty target reply".into()))?;
    let line = match line.get(..7) {
        Some(p) if p.eq_ignore_ascii_case("target:") => line[7..].trim(),
        _ => line,
    };
    normalize_target(line)
}

/// Predicts target groups with few-shot prompts built from the BM25-closest
/// annotated pool examples.
pub struct TargetPredictor<'a> {
    pool: &'a ExamplePool,
    index: &'a Bm25Index,
    annotated: TargetTable,
    backend: &'a dyn ClassificationBackend,
    shots: usize,
    cache: TargetCache,
}

impl<'a> TargetPredictor<'a> {
    pub fn new(
        pool: &'a ExamplePool,
        index: &'a Bm25Index,
        backend: &'a dyn ClassificationBackend,
        shots: usize,
        cache: TargetCache,
    ) -> Self {
        TargetPredictor {
            pool,
            index,
            annotated: TargetTable::from_annotations(pool),
            backend,
            shots,
            cache,
        }
    }

    pub fn cache(&self) -> &TargetCache {
        &self.cache
    }

    pub fn predict(&self, id: &str, text: &str) -> Result<NormalizedTarget> {
        if let Some(hit) = self.cache.get(id) {
            return normalize_target(&hit.target).map_err(|e| Error::for_example(id, e));
        }
        let prompt = self.prompt_for(id, text)?;
        let reply = self.backend.complete(&prompt).map_err(|e| Error::for_example(id, e))?;
        let target = parse_target_reply(&reply)
            .map_err(|e| Error::for_example(id, Error::Backend(format!("unusable target reply: {e}"))))?;
        self.cache.put(CacheEntry {
            id: id.to_string(),
            target: target.canonical().to_string(),
            backend: self.cache.backend.clone(),
            prompt_hash: prompt.hash(),
        })?;
        Ok(target)
    }

    pub fn prompt_for(&self, id: &str, text: &str) -> Result<Prompt> {
        let eligible = self
            .pool
            .iter()
            .filter(|ex| ex.id != id && self.annotated.get(&ex.id).is_some())
            .count();
        if eligible < self.shots {
            return Err(Error::InsufficientAnnotated {
                needed: self.shots,
                available: eligible,
            });
        }
        let scores = self.index.score_all(&tokenize(text));
        let ids = self.index.doc_ids();
        let top = self.index.rank(&scores, self.shots, |pos| {
            ids[pos] != id && self.annotated.get(&ids[pos]).is_some()
        });
        let demos: Vec<(&Example, &NormalizedTarget)> = top
            .iter()
            .map(|&(pos, _)| {
                let ex = &self.pool.examples()[pos];
                (ex, self.annotated.get(&ex.id).expect("filtered on annotation"))
            })
            .collect();
        Ok(target_prompt(&demos, text))
    }

    /// Annotated targets plus predictions for every unannotated pool example.
    /// Failed predictions are returned alongside; those examples stay
    /// unresolved and can only be selected by BM25 rank.
    pub fn resolve_pool(&self) -> (TargetTable, Vec<(String, Error)>) {
        let mut table = self.annotated.clone();
        let mut failures = Vec::new();
        for ex in self.pool {
            if table.get(&ex.id).is_some() {
                continue;
            }
            match self.predict(&ex.id, &ex.text) {
                Ok(t) => table.insert(&ex.id, t),
                Err(e) => failures.push((ex.id.clone(), e)),
            }
        }
        (table, failures)
    }

    /// Predicted targets for query examples (annotations on queries are not used).
    pub fn resolve_queries<'q>(
        &self,
        queries: impl IntoIterator<Item = &'q Example>,
    ) -> (TargetTable, Vec<(String, Error)>) {
        let mut table = TargetTable::new();
        let mut failures = Vec::new();
        for ex in queries {
            match self.predict(&ex.id, &ex.text) {
                Ok(t) => table.insert(&ex.id, t),
                Err(e) => failures.push((ex.id.clone(), e)),
            }
        }
        (table, failures)
    }
}

pub fn cache_path_default(out_dir: &Path) -> PathBuf {
    out_dir.join("targets.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::llm::{MockBackend, MockRule};
    use crate::retrieval::Bm25Params;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn nt(s: &str) -> NormalizedTarget {
        normalize_target(s).unwrap()
    }

    fn ex(id: &str, text: &str, target: Option<&str>) -> Example {
        Example {
            id: id.into(),
            text: text.into(),
            label: Label::Hate,
            target: target.map(str::to_string),
            split: Split::Pool,
        }
    }

    #[test]
    fn normalization() {
        let t = nt("White Jews ");
        assert_eq!(t.canonical(), "white jews");
        assert_eq!(
            t.content_tokens().iter().map(String::as_str).collect::<Vec<_>>(),
            ["jews", "white"]
        );
        assert_eq!(
            nt("the immigrants").content_tokens().iter().collect::<Vec<_>>(),
            ["immigrants"]
        );
        assert_eq!(nt("  Black   folks!! ").canonical(), "black folks");
        assert_eq!(nt("muslims, refugees").canonical(), "muslims");
        assert!(normalize_target("  ").is_err());
        assert!(normalize_target("!!").is_err());
    }

    #[test]
    fn similarity_levels() {
        assert_eq!(
            target_similarity(&nt("white jews"), &nt("white jews")),
            TargetMatch::Exact
        );
        assert_eq!(target_similarity(&nt("white jews"), &nt("jews")), TargetMatch::Similar);
        assert_eq!(target_similarity(&nt("jews"), &nt("white jews")), TargetMatch::Similar);
        assert_eq!(target_similarity(&nt("jews"), &nt("muslims")), TargetMatch::Unrelated);
        assert_eq!(target_similarity(&nt("men"), &nt("women")), TargetMatch::Unrelated);
        assert_eq!(
            target_similarity(&nt("the others"), &nt("others")),
            TargetMatch::Similar
        );
    }

    #[test]
    fn degenerate_pool_equals_plain_top_k() {
        let pool = ExamplePool::new(vec![
            ex("a", "alpha beta", Some("muslims")),
            ex("b", "alpha", Some("women")),
            ex("c", "gamma", None),
        ])
        .unwrap();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let targets = TargetTable::from_annotations(&pool);
        let query = ex("q", "alpha beta gamma", None);
        let got = target_prioritized_retrieve(&pool, &index, &targets, &DefaultMatcher, &query, Some(&nt("jews")), 2);
        let plain = index.top_k(&query.text, 2, &HashSet::new());
        assert_eq!(got.len(), 2);
        for (d, s) in got.iter().zip(&plain) {
            assert_eq!(d.id, s.doc_id);
            assert_eq!(d.bm25_score, s.score);
            assert_eq!(d.priority, Priority::P3);
        }
    }

    #[test]
    fn overflowing_exact_band_keeps_best_scores() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let text = format!("{} jewish news", "word ".repeat(i + 1));
            rows.push(ex(&format!("e{i:02}"), &text, Some("jews")));
        }
        rows.push(ex("other", "jewish news jewish news", Some("muslims")));
        let pool = ExamplePool::new(rows).unwrap();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let targets = TargetTable::from_annotations(&pool);
        let query = ex("q", "jewish news", None);
        let got = target_prioritized_retrieve(&pool, &index, &targets, &DefaultMatcher, &query, Some(&nt("jews")), 8);
        assert_eq!(got.len(), 8);
        assert!(got.iter().all(|d| d.priority == Priority::P1));
        // shorter docs score higher under length normalization
        let ids: Vec<_> = got.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["e00", "e01", "e02", "e03", "e04", "e05", "e06", "e07"]);
    }

    #[test]
    fn query_in_pool_is_excluded() {
        let pool = ExamplePool::new(vec![ex("a", "x y", Some("jews")), ex("b", "x", Some("jews"))]).unwrap();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let targets = TargetTable::from_annotations(&pool);
        let got = target_prioritized_retrieve(
            &pool,
            &index,
            &targets,
            &DefaultMatcher,
            &pool.examples()[0],
            Some(&nt("jews")),
            5,
        );
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, "b");
    }

    struct Counting<'a>(&'a MockBackend, AtomicUsize);

    impl ClassificationBackend for Counting<'_> {
        fn identity(&self) -> String {
            self.0.identity()
        }
        fn complete(&self, prompt: &Prompt) -> Result<String> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.complete(prompt)
        }
    }

    fn target_pool() -> ExamplePool {
        ExamplePool::new(vec![
            ex("p1", "the jews control the banks", Some("jews")),
            ex("p2", "jews and their media", Some("jews")),
            ex("p3", "white jews are a problem", Some("white jews")),
            ex("p4", "muslims pray", Some("muslims")),
            ex("p5", "refugees arrive", Some("refugees")),
            ex("p6", "an unannotated jews text", None),
        ])
        .unwrap()
    }

    #[test]
    fn prediction_uses_dominant_demo_target_and_caches() {
        let pool = target_pool();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let mock = MockBackend::new(vec![MockRule::classify(None, Label::Hate, "x")]).unwrap();
        let counting = Counting(&mock, AtomicUsize::new(0));
        let predictor = TargetPredictor::new(&pool, &index, &counting, 3, TargetCache::in_memory(&mock.identity()));
        let t = predictor.predict("q1", "the white jews media and banks").unwrap();
        assert_eq!(DefaultMatcher.compare(&t, &nt("jews")), TargetMatch::Exact);
        assert_eq!(counting.1.load(Ordering::SeqCst), 1);
        let again = predictor.predict("q1", "the white jews media and banks").unwrap();
        assert_eq!(again, t);
        assert_eq!(counting.1.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn insufficient_annotations() {
        let pool = target_pool();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let mock = MockBackend::new(vec![MockRule::classify(None, Label::Hate, "x")]).unwrap();
        let predictor = TargetPredictor::new(&pool, &index, &mock, 8, TargetCache::in_memory("m"));
        let err = predictor.predict("q", "text").unwrap_err();
        assert!(err.to_string().contains("insufficient annotated examples"), "{err}");
    }

    #[test]
    fn empty_reply_is_an_error_with_id() {
        let pool = target_pool();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let mock = MockBackend::new(vec![
            MockRule::target("silence", "   "),
            MockRule::classify(None, Label::Hate, "x"),
        ]);
        assert!(mock.is_err());
        let mock = MockBackend::new(vec![MockRule::classify(None, Label::Hate, "x")]).unwrap();
        // no demos carry targets → echo yields an empty reply
        let predictor = TargetPredictor::new(&pool, &index, &mock, 0, TargetCache::in_memory("m"));
        let err = predictor.predict("qid", "anything").unwrap_err();
        assert!(err.to_string().contains("qid"), "{err}");
    }

    #[test]
    fn resolving_pool_only_queries_null_rows() {
        let pool = target_pool();
        let index = Bm25Index::build(&pool, Bm25Params::default());
        let mock = MockBackend::new(vec![MockRule::classify(None, Label::Hate, "x")]).unwrap();
        let counting = Counting(&mock, AtomicUsize::new(0));
        let predictor = TargetPredictor::new(&pool, &index, &counting, 2, TargetCache::in_memory("m"));
        let (table, failures) = predictor.resolve_pool();
        assert!(failures.is_empty());
        assert_eq!(table.len(), 6);
        assert_eq!(counting.1.load(Ordering::SeqCst), 1);
        assert_eq!(table.get("p6").unwrap().canonical(), "jews");
    }

    #[test]
    fn cache_file_round_trip_filters_backend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = TargetCache::open(&path, "b1").unwrap();
        cache
            .put(CacheEntry {
                id: "x".into(),
                target: "jews".into(),
                backend: "b1".into(),
                prompt_hash: "h".into(),
            })
            .unwrap();
        assert_eq!(TargetCache::open(&path, "b1").unwrap().len(), 1);
        assert_eq!(TargetCache::open(&path, "b2").unwrap().len(), 0);
    }

    #[test]
    fn target_reply_prefix_is_stripped() {
        assert_eq!(
            parse_target_reply("reasoning\nTarget: White Jews").unwrap().canonical(),
            "white jews"
        );
        assert!(parse_target_reply("\n\n").is_err());
    }
}
