//! End-to-end classification: retrieve demonstrations, prompt the backend,
//! and apply the adaptive replacement policy.

use std::collections::HashSet;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::{should_replace, similarity_condition_scores, AdaptiveConfig, AdaptiveDecision};
use crate::corpus::{Example, ExamplePool};
use crate::error::{Error, Result};
use crate::llm::{classify_logged, ClassificationBackend, ClassificationOutcome, PromptTemplate, RunLog};
use crate::retrieval::{tokenize, Bm25Index};
use crate::target::{target_prioritized_retrieve, Demonstration, Priority, TargetMatcher, TargetTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Plain BM25 top-k demonstrations.
    Reticl,
    /// Target-prioritized demonstrations, never replaced.
    Target,
    /// Target-prioritized with adaptive replacement.
    Ariiha,
    /// `k` uniformly sampled pool examples.
    Random,
    /// No demonstrations.
    Zero,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Reticl => "reticl",
            Strategy::Target => "target",
            Strategy::Ariiha => "ariiha",
            Strategy::Random => "random",
            Strategy::Zero => "zero",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reticl" => Ok(Strategy::Reticl),
            "target" => Ok(Strategy::Target),
            "ariiha" => Ok(Strategy::Ariiha),
            "random" => Ok(Strategy::Random),
            "zero" => Ok(Strategy::Zero),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Order of demonstrations inside the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOrder {
    /// Retrieval order: P1 first, best score first within a band.
    #[default]
    PriorityFirst,
    /// Reversed, so the strongest demonstration sits next to the query.
    PriorityLast,
}

impl FromStr for DemoOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "priority_first" => Ok(DemoOrder::PriorityFirst),
            "priority_last" => Ok(DemoOrder::PriorityLast),
            other => Err(Error::Config(format!("unknown demo order '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    pub adaptive: AdaptiveConfig,
    pub demo_order: DemoOrder,
    /// Only query the plain-retrieval prompt when replacement fires. Saves
    /// backend calls but leaves `reticl_only`, `upper_bound` and the
    /// threshold sweep without data for kept items.
    pub lazy_reticl: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 8,
            adaptive: AdaptiveConfig::default(),
            demo_order: DemoOrder::default(),
            lazy_reticl: false,
            seed: 0,
        }
    }
}

pub struct Pipeline<'a> {
    pub pool: &'a ExamplePool,
    pub index: &'a Bm25Index,
    /// Resolved targets for pool examples and queries.
    pub targets: &'a TargetTable,
    pub matcher: &'a dyn TargetMatcher,
    pub backend: &'a dyn ClassificationBackend,
    pub template: &'a PromptTemplate,
    pub config: PipelineConfig,
    pub run_log: Option<&'a RunLog>,
}

/// Decisions in query order, plus the queries that could not be classified.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub decisions: Vec<AdaptiveDecision>,
    pub failures: Vec<(String, String)>,
}

fn seed_for(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl<'a> Pipeline<'a> {
    pub fn new(
        pool: &'a ExamplePool,
        index: &'a Bm25Index,
        targets: &'a TargetTable,
        matcher: &'a dyn TargetMatcher,
        backend: &'a dyn ClassificationBackend,
        template: &'a PromptTemplate,
        config: PipelineConfig,
    ) -> Result<Self> {
        if !index.matches_pool(pool) {
            return Err(Error::Data("index was not built from this pool".into()));
        }
        if config.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        config.adaptive.validate()?;
        Ok(Pipeline {
            pool,
            index,
            targets,
            matcher,
            backend,
            template,
            config,
            run_log: None,
        })
    }

    pub fn with_run_log(mut self, log: &'a RunLog) -> Self {
        self.run_log = Some(log);
        self
    }

    pub fn target_demos(&self, query: &Example) -> Vec<Demonstration> {
        target_prioritized_retrieve(
            self.pool,
            self.index,
            self.targets,
            self.matcher,
            query,
            self.targets.get(&query.id),
            self.config.k,
        )
    }

    pub fn reticl_demos(&self, query: &Example) -> Vec<Demonstration> {
        let exclude: HashSet<String> = [query.id.clone()].into();
        self.index
            .top_k(&query.text, self.config.k, &exclude)
            .into_iter()
            .map(|sd| {
                let ex = self.pool.get(&sd.doc_id).expect("index matches pool");
                Demonstration::new(ex, self.targets.get(&ex.id), sd.score, Priority::P3)
            })
            .collect()
    }

    pub fn random_demos(&self, query: &Example) -> Vec<Demonstration> {
        let eligible: Vec<&Example> = self.pool.iter().filter(|ex| ex.id != query.id).collect();
        let n = self.config.k.min(eligible.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.config.seed, &query.id));
        let tokens = tokenize(&query.text);
        let mut picks: Vec<usize> = sample(&mut rng, eligible.len(), n).into_vec();
        picks.sort_unstable();
        picks
            .into_iter()
            .map(|i| {
                let ex = eligible[i];
                let pos = self.index.position(&ex.id).expect("index matches pool");
                Demonstration::new(
                    ex,
                    self.targets.get(&ex.id),
                    self.index.score_at(&tokens, pos),
                    Priority::P3,
                )
            })
            .collect()
    }

    fn classify_with(
        &self,
        item: usize,
        query: &Example,
        demos: &[Demonstration],
        strategy: &str,
    ) -> Result<ClassificationOutcome> {
        let prompt = match self.config.demo_order {
            DemoOrder::PriorityFirst => self.template.render_prompt(demos, &query.text),
            DemoOrder::PriorityLast => {
                let rev: Vec<Demonstration> = demos.iter().rev().cloned().collect();
                self.template.render_prompt(&rev, &query.text)
            }
        };
        classify_logged(
            self.backend,
            &prompt,
            &self.template.label_lexicon,
            self.run_log.map(|l| (l, item, query.id.as_str(), strategy)),
        )
        .map_err(|e| Error::for_example(&query.id, e))
    }

    /// Adaptive classification of one query; `item` orders run-log entries.
    pub fn ariiha_classify(&self, item: usize, query: &Example) -> Result<AdaptiveDecision> {
        let cfg = &self.config.adaptive;
        let tp_demos = self.target_demos(query);
        let reticl_demos = self.reticl_demos(query);
        let tp_outcome = self.classify_with(item, query, &tp_demos, "target")?;

        let scores: Vec<f64> = tp_demos
            .iter()
            .filter(|d| d.priority.is_target_based())
            .map(|d| d.bm25_score)
            .collect();
        let condition_similarity = similarity_condition_scores(&scores, cfg.tau, cfg.min_failing, cfg.aggregate);
        let condition_shortcut = cfg.shortcut_holds(&tp_outcome.rationale, &query.text);
        let replaced = should_replace(cfg.condition_mode, condition_similarity, condition_shortcut);

        let reticl_outcome = if replaced || !self.config.lazy_reticl {
            match self.classify_with(item, query, &reticl_demos, "reticl") {
                Ok(o) => Some(o),
                Err(e) => {
                    log::warn!("plain-retrieval call failed, keeping target-prioritized outcome: {e}");
                    None
                }
            }
        } else {
            None
        };
        let final_outcome = match (&reticl_outcome, replaced) {
            (Some(o), true) => o.clone(),
            _ => tp_outcome.clone(),
        };
        Ok(AdaptiveDecision {
            id: query.id.clone(),
            tp_demos,
            reticl_demos,
            baseline_demos: Vec::new(),
            predicted_target: self.targets.get(&query.id).map(|t| t.canonical().to_string()),
            tp_outcome: Some(tp_outcome),
            reticl_outcome,
            condition_similarity,
            condition_shortcut,
            replaced,
            final_outcome,
        })
    }

    pub fn classify_one(&self, item: usize, query: &Example, strategy: Strategy) -> Result<AdaptiveDecision> {
        match strategy {
            Strategy::Ariiha => self.ariiha_classify(item, query),
            Strategy::Target => {
                let mut pinned = Pipeline {
                    config: self.config.clone(),
                    ..*self
                };
                pinned.config.adaptive.condition_mode = crate::adaptive::ConditionMode::None;
                pinned.ariiha_classify(item, query)
            }
            Strategy::Reticl => {
                let demos = self.reticl_demos(query);
                let outcome = self.classify_with(item, query, &demos, "reticl")?;
                Ok(AdaptiveDecision {
                    id: query.id.clone(),
                    tp_demos: Vec::new(),
                    reticl_demos: demos,
                    baseline_demos: Vec::new(),
                    predicted_target: None,
                    tp_outcome: None,
                    reticl_outcome: Some(outcome.clone()),
                    condition_similarity: false,
                    condition_shortcut: false,
                    replaced: false,
                    final_outcome: outcome,
                })
            }
            Strategy::Random | Strategy::Zero => {
                let demos = if strategy == Strategy::Random {
                    self.random_demos(query)
                } else {
                    Vec::new()
                };
                let outcome = self.classify_with(item, query, &demos, strategy.as_str())?;
                Ok(AdaptiveDecision {
                    id: query.id.clone(),
                    tp_demos: Vec::new(),
                    reticl_demos: Vec::new(),
                    baseline_demos: demos,
                    predicted_target: None,
                    tp_outcome: None,
                    reticl_outcome: None,
                    condition_similarity: false,
                    condition_shortcut: false,
                    replaced: false,
                    final_outcome: outcome,
                })
            }
        }
    }

    /// Classifies every query with up to `parallel` worker threads. Output
    /// order always follows `queries`.
    pub fn run(&self, queries: &[Example], strategy: Strategy, parallel: usize) -> RunOutput {
        let results = parallel_map(queries, parallel, |i, q| self.classify_one(i, q, strategy));
        let mut out = RunOutput::default();
        for (q, r) in queries.iter().zip(results) {
            match r {
                Ok(d) => out.decisions.push(d),
                Err(e) => {
                    log::error!("{e}");
                    out.failures.push((q.id.clone(), e.to_string()));
                }
            }
        }
        out
    }
}

/// Maps `f` over `items` on up to `parallel` scoped threads, preserving order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], parallel: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let workers = parallel.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
