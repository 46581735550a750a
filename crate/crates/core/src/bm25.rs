//! Okapi BM25 over an in-memory inverted index.
//!
//! Scores use the non-negative idf `ln(1 + (N - df + 0.5) / (df + 0.5))`, so
//! every score is `>= 0` and a document sharing no term with the query scores
//! exactly zero.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum Bm25Error {
    #[error("invalid parameters: k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("index dump line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    k1: f64,
    b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, Bm25Error> {
        if !(k1 >= 0.0 && k1.is_finite() && (0.0..=1.0).contains(&b)) {
            return Err(Bm25Error::InvalidParams { k1, b });
        }
        Ok(Bm25Params { k1, b })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Retrieval analyzer: lowercase, then split on runs of non-alphanumerics.
///
/// Only used for similarity search. Model inputs never go through it.
pub fn analyze(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Internal document reference (position in indexing order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocRef(pub usize);

#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    doc_tfs: Vec<HashMap<String, u32>>,
    doc_freq: HashMap<String, u32>,
    postings: HashMap<String, Vec<(DocRef, u32)>>,
    avg_doc_len: f64,
}

impl Bm25Index {
    pub fn build<I, S, T, F>(docs: I, params: Bm25Params, analyzer: F) -> Result<Self, Bm25Error>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
        F: Fn(&str) -> Vec<String>,
    {
        let docs = docs
            .into_iter()
            .map(|(id, text)| (id.into(), analyzer(text.as_ref())));
        Self::from_tokens(docs, params)
    }

    /// Builds from already-analyzed documents.
    pub fn from_tokens<I>(docs: I, params: Bm25Params) -> Result<Self, Bm25Error>
    where
        I: IntoIterator<Item = (String, Vec<String>)>,
    {
        let mut seen = HashSet::new();
        let mut doc_ids = Vec::new();
        let mut doc_tfs = Vec::new();
        let mut doc_lens = Vec::new();
        for (id, tokens) in docs {
            if !seen.insert(id.clone()) {
                return Err(Bm25Error::DuplicateId(id));
            }
            let mut tf: HashMap<String, u32> = HashMap::new();
            for token in tokens.iter() {
                *tf.entry(token.clone()).or_default() += 1;
            }
            doc_ids.push(id);
            doc_lens.push(tokens.len() as u32);
            doc_tfs.push(tf);
        }
        Ok(Self::assemble(params, doc_ids, doc_lens, doc_tfs))
    }

    fn assemble(
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lens: Vec<u32>,
        doc_tfs: Vec<HashMap<String, u32>>,
    ) -> Self {
        let mut doc_freq: HashMap<String, u32> = HashMap::new();
        let mut postings: HashMap<String, Vec<(DocRef, u32)>> = HashMap::new();
        for (i, tf) in doc_tfs.iter().enumerate() {
            for (term, &count) in tf {
                *doc_freq.entry(term.clone()).or_default() += 1;
                postings.entry(term.clone()).or_default().push((DocRef(i), count));
            }
        }
        let total: u64 = doc_lens.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_len = if doc_ids.is_empty() {
            0.0
        } else {
            total as f64 / doc_ids.len() as f64
        };
        Bm25Index {
            params,
            doc_ids,
            doc_lens,
            doc_tfs,
            doc_freq,
            postings,
            avg_doc_len,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_id(&self, doc: DocRef) -> &str {
        &self.doc_ids[doc.0]
    }

    pub fn doc_len(&self, doc: DocRef) -> u32 {
        self.doc_lens[doc.0]
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn term_freq(&self, doc: DocRef, term: &str) -> u32 {
        self.doc_tfs[doc.0].get(term).copied().unwrap_or(0)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.doc_freq.len()
    }

    pub fn docs(&self) -> impl Iterator<Item = DocRef> {
        (0..self.doc_ids.len()).map(DocRef)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = f64::from(self.doc_freq(term));
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = 1.0 - b + b * f64::from(doc_len) / self.avg_doc_len;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * norm)
    }

    pub fn score(&self, query: &[String], doc: DocRef) -> f64 {
        let mut total = 0.0;
        for term in query {
            let tf = self.term_freq(doc, term);
            if tf > 0 {
                total += self.term_weight(self.idf(term), tf, self.doc_lens[doc.0]);
            }
        }
        total
    }

    /// Scores every document through the postings lists. Documents sharing no
    /// term with the query get `0.0`.
    pub fn score_all(&self, query: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.doc_ids.len()];
        for term in query {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                acc[doc.0] += self.term_weight(idf, tf, self.doc_lens[doc.0]);
            }
        }
        acc
    }

    /// Every document ordered by descending score, ties by ascending id.
    pub fn rank_all(&self, query: &[String]) -> Vec<(DocRef, f64)> {
        let scores = self.score_all(query);
        let mut ranked: Vec<(DocRef, f64)> = scores.into_iter().enumerate().map(|(i, s)| (DocRef(i), s)).collect();
        ranked.sort_by(|a, b| self.rank_order(a, b));
        ranked
    }

    fn rank_order(&self, a: &(DocRef, f64), b: &(DocRef, f64)) -> Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| self.doc_ids[a.0 .0].cmp(&self.doc_ids[b.0 .0]))
    }

    pub fn top_k(&self, query: &[String], k: usize) -> Vec<(String, f64)> {
        let mut ranked = self.rank_all(query);
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(doc, s)| (self.doc_ids[doc.0].clone(), s))
            .collect()
    }

    /// One JSON object per line: a parameter header, then one line per
    /// document with its id, length and sorted term counts.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<(), Bm25Error> {
        let header = serde_json::json!({ "k1": self.params.k1, "b": self.params.b });
        writeln!(out, "{header}")?;
        for (i, id) in self.doc_ids.iter().enumerate() {
            let terms: BTreeMap<&str, u32> = self.doc_tfs[i].iter().map(|(t, &c)| (t.as_str(), c)).collect();
            let line = serde_json::json!({ "id": id, "len": self.doc_lens[i], "tf": terms });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, Bm25Error> {
        #[derive(Deserialize)]
        struct Header {
            k1: f64,
            b: f64,
        }
        #[derive(Deserialize)]
        struct Doc {
            id: String,
            len: u32,
            tf: HashMap<String, u32>,
        }
        let bad = |line: usize, message: String| Bm25Error::Dump { line, message };
        let mut lines = input.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| bad(1, "empty dump".into()))?;
        let header: Header = serde_json::from_str(&first?).map_err(|e| bad(1, e.to_string()))?;
        let params = Bm25Params::new(header.k1, header.b)?;
        let mut seen = HashSet::new();
        let (mut ids, mut lens, mut tfs) = (Vec::new(), Vec::new(), Vec::new());
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Doc = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
            if doc.tf.values().sum::<u32>() != doc.len {
                return Err(bad(i + 1, "term counts do not sum to document length".into()));
            }
            if !seen.insert(doc.id.clone()) {
                return Err(Bm25Error::DuplicateId(doc.id));
            }
            ids.push(doc.id);
            lens.push(doc.len);
            tfs.push(doc.tf);
        }
        Ok(Self::assemble(params, ids, lens, tfs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Bm25Index {
        Bm25Index::build(
            [("d1", "a b"), ("d2", "a a b"), ("d3", "c")],
            Bm25Params::default(),
            analyze,
        )
        .unwrap()
    }

    fn q(s: &str) -> Vec<String> {
        analyze(s)
    }

    #[test]
    fn toy_statistics() {
        let idx = toy();
        assert_eq!(idx.doc_count(), 3);
        assert_eq!(idx.avg_doc_len(), 2.0);
        assert_eq!(idx.doc_freq("a"), 2);
        assert_eq!(idx.term_freq(DocRef(1), "a"), 2);
    }

    #[test]
    fn empty_text_and_empty_corpus() {
        let idx = Bm25Index::build([("e", "")], Bm25Params::default(), analyze).unwrap();
        assert_eq!(idx.doc_len(DocRef(0)), 0);
        assert_eq!(idx.vocabulary_size(), 0);
        let empty = Bm25Index::build(Vec::<(String, String)>::new(), Bm25Params::default(), analyze).unwrap();
        assert!(empty.top_k(&q("a"), 3).is_empty());
    }

    #[test]
    fn worked_example_scores() {
        let idx = toy();
        let s: Vec<f64> = idx.docs().map(|d| idx.score(&q("a"), d)).collect();
        assert!((s[0] - 0.4700).abs() < 5e-5, "{}", s[0]);
        assert!((s[1] - 0.5666).abs() < 5e-5, "{}", s[1]);
        assert_eq!(s[2], 0.0);
        let ids: Vec<String> = idx.top_k(&q("a"), 3).into_iter().map(|(id, _)| id).collect();
        assert_eq!(ids, ["d2", "d1", "d3"]);

        let c: Vec<f64> = idx.docs().map(|d| idx.score(&q("c"), d)).collect();
        assert_eq!(c[0], 0.0);
        assert_eq!(c[1], 0.0);
        assert!(c[2] > 0.0);
    }

    #[test]
    fn absent_terms_score_zero() {
        let idx = toy();
        assert!(idx.score_all(&q("zzz qqq")).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn ties_break_by_id_and_k_saturates() {
        let idx = Bm25Index::build(
            [("b", "same words"), ("a", "same words"), ("c", "other")],
            Bm25Params::default(),
            analyze,
        )
        .unwrap();
        let top = idx.top_k(&q("words"), 10);
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].0, "a");
        assert_eq!(top[1].0, "b");
        assert_eq!(top[0].1, top[1].1);
    }

    #[test]
    fn duplicate_query_terms_count_per_occurrence() {
        let idx = toy();
        let once = idx.score(&q("a"), DocRef(0));
        let twice = idx.score(&q("a a"), DocRef(0));
        assert!((twice - 2.0 * once).abs() < 1e-12);
    }

    #[test]
    fn params_are_validated() {
        assert!(Bm25Params::new(-0.1, 0.5).is_err());
        assert!(Bm25Params::new(1.0, 1.5).is_err());
        assert!(Bm25Params::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn dump_load_preserves_scores() {
        let idx = toy();
        let mut buf = Vec::new();
        idx.dump(&mut buf).unwrap();
        let back = Bm25Index::load(buf.as_slice()).unwrap();
        assert_eq!(back.top_k(&q("a b"), 3), idx.top_k(&q("a b"), 3));
    }

    #[test]
    fn analyzer_folds_case_and_splits() {
        assert_eq!(analyze("Hello, WORLD!! it's"), ["hello", "world", "it", "s"]);
    }
}
