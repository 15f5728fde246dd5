//! Okapi BM25 over an in-memory inverted index.
//!
//! Scores use the non-negative IDF `ln((N - df + 0.5) / (df + 0.5) + 1)`, so
//! every score is `>= 0` and raw values are comparable against a fixed
//! similarity threshold.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ExamplePool;
use crate::error::{Error, Result};

/// Lowercased whitespace tokens with surrounding punctuation removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Distinct tokens in first-occurrence order.
    pub fn distinct(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.0.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
    }
}

/// `#` and `@` are kept so hashtags and mentions stay distinct terms.
pub fn is_strippable_punct(c: char) -> bool {
    if c == '#' || c == '@' {
        return false;
    }
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{2026}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{00A1}'
                | '\u{00BF}'
        )
}

pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.split_whitespace()
            .map(|raw| raw.trim_matches(is_strippable_punct).to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// Term to postings sorted by document position.
    postings: BTreeMap<String, Vec<Posting>>,
    by_id: HashMap<String, u32>,
}

impl Bm25Index {
    pub fn build(pool: &ExamplePool, params: Bm25Params) -> Bm25Index {
        Self::from_documents(pool.iter().map(|ex| (ex.id.as_str(), ex.text.as_str())), params)
    }

    pub fn from_documents<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>, params: Bm25Params) -> Bm25Index {
        let mut doc_ids = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (pos, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut tfs: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens.tokens() {
                *tfs.entry(t.as_str()).or_default() += 1;
            }
            for (term, tf) in tfs {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push(Posting { doc: pos as u32, tf });
            }
            doc_ids.push(id.to_string());
            doc_lengths.push(tokens.len() as u32);
        }
        Self::assemble(params, doc_ids, doc_lengths, postings)
    }

    fn assemble(
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Bm25Index {
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64
        };
        let by_id = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Bm25Index {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            postings,
            by_id,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, pos: usize) -> u32 {
        self.doc_lengths[pos]
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).map(|&p| p as usize)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// True when the index was built over exactly this pool, in order.
    pub fn matches_pool(&self, pool: &ExamplePool) -> bool {
        self.doc_ids.len() == pool.len() && self.doc_ids.iter().zip(pool.iter()).all(|(a, ex)| *a == ex.id)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings(term).len() as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_doc_length > 0.0 {
            1.0 - b + b * (doc_len as f64 / self.avg_doc_length)
        } else {
            1.0
        };
        idf * (tf * (k1 + 1.0)) / (tf + k1 * norm)
    }

    pub fn score(&self, query: &TokenSeq, doc_id: &str) -> Result<f64> {
        let pos = self
            .position(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        Ok(self.score_at(query, pos))
    }

    pub fn score_at(&self, query: &TokenSeq, pos: usize) -> f64 {
        let doc = pos as u32;
        let mut total = 0.0;
        for term in query.distinct() {
            let list = self.postings(term);
            if let Ok(i) = list.binary_search_by_key(&doc, |p| p.doc) {
                total += self.term_weight(self.idf(term), list[i].tf, self.doc_lengths[pos]);
            }
        }
        total
    }

    /// Scores of every document against `query`, indexed by position.
    ///
    /// Per-document sums accumulate in the same term order as [`score_at`],
    /// so the values are bit-identical to scoring documents one at a time.
    ///
    /// [`score_at`]: Bm25Index::score_at
    pub fn score_all(&self, query: &TokenSeq) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_count()];
        for term in query.distinct() {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                let pos = p.doc as usize;
                scores[pos] += self.term_weight(idf, p.tf, self.doc_lengths[pos]);
            }
        }
        scores
    }

    /// The `k` best positions accepted by `keep`, by score descending then
    /// document id ascending. Zero-score documents are eligible.
    pub fn rank(&self, scores: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
        let mut cands: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(pos, _)| keep(*pos))
            .map(|(pos, &s)| (pos, s))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        };
        if k == 0 {
            return Vec::new();
        }
        if cands.len() > k {
            cands.select_nth_unstable_by(k - 1, cmp);
            cands.truncate(k);
        }
        cands.sort_by(cmp);
        cands
    }

    pub fn top_k(&self, query_text: &str, k: usize, exclude: &HashSet<String>) -> Vec<ScoredDoc> {
        let scores = self.score_all(&tokenize(query_text));
        self.rank(&scores, k, |pos| !exclude.contains(&self.doc_ids[pos]))
            .into_iter()
            .map(|(pos, score)| ScoredDoc {
                doc_id: self.doc_ids[pos].clone(),
                score,
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            params: self.params,
            docs: self
                .doc_ids
                .iter()
                .zip(&self.doc_lengths)
                .map(|(id, &length)| IndexDoc { id: id.clone(), length })
                .collect(),
            postings: self
                .postings
                .iter()
                .map(|(t, ps)| (t.clone(), ps.iter().map(|p| (p.doc, p.tf)).collect()))
                .collect(),
        };
        let json = serde_json::to_string(&file)?;
        crate::io::write_string(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Bm25Index> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: IndexFile = serde_json::from_slice(&bytes)?;
        if file.format != INDEX_FORMAT {
            return Err(Error::IndexFormat(format!("unexpected format tag '{}'", file.format)));
        }
        if file.version != INDEX_VERSION {
            return Err(Error::IndexFormat(format!(
                "unsupported version {} (expected {INDEX_VERSION})",
                file.version
            )));
        }
        file.params.validate()?;
        let n = file.docs.len();
        let mut sums = vec![0u64; n];
        let mut postings = BTreeMap::new();
        for (term, list) in file.postings {
            let mut out = Vec::with_capacity(list.len());
            let mut prev: Option<u32> = None;
            for (doc, tf) in list {
                if doc as usize >= n || prev.is_some_and(|p| p >= doc) || tf == 0 {
                    return Err(Error::IndexFormat(format!("corrupt postings for term '{term}'")));
                }
                prev = Some(doc);
                sums[doc as usize] += tf as u64;
                out.push(Posting { doc, tf });
            }
            postings.insert(term, out);
        }
        if file.docs.iter().zip(&sums).any(|(d, &s)| d.length as u64 != s) {
            return Err(Error::IndexFormat("document lengths disagree with postings".into()));
        }
        let (doc_ids, doc_lengths) = file.docs.into_iter().map(|d| (d.id, d.length)).unzip();
        Ok(Self::assemble(file.params, doc_ids, doc_lengths, postings))
    }
}

const INDEX_FORMAT: &str = "ariiha-bm25";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    params: Bm25Params,
    docs: Vec<IndexDoc>,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct IndexDoc {
    id: String,
    length: u32,
}

/// A source of ranked pool documents for a query.
///
/// BM25 is the only shipped implementation; a dense embedding retriever
/// would plug in here.
pub trait Retriever: Send + Sync {
    fn name(&self) -> &str;
    fn retrieve(&self, query_text: &str, k: usize, exclude: &HashSet<String>) -> Vec<ScoredDoc>;
}

impl Retriever for Bm25Index {
    fn name(&self) -> &str {
        "bm25"
    }

    fn retrieve(&self, query_text: &str, k: usize, exclude: &HashSet<String>) -> Vec<ScoredDoc> {
        self.top_k(query_text, k, exclude)
    }
}
