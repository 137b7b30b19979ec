//! Text processing: tokenization, sentence splitting, idf statistics, and
//! the four word-overlap features fed to the reranker's join layer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in stopword list: 33 common English function words, kept sorted.
pub const STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "had", "has", "have",
    "he", "her", "his", "i", "in", "is", "it", "its", "of", "on", "or", "she", "that", "the", "to",
    "was", "were", "will", "with",
];

pub fn builtin_stopwords() -> BTreeSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Ordered sequence of lowercase tokens. Tokens never contain whitespace and
/// are never empty; `tokenize` is the canonical constructor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens
            .iter()
            .any(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidArgument(
                "tokens must be non-empty and whitespace-free".into(),
            ));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.tokens.iter()
    }

    /// Distinct tokens, sorted. The deterministic iteration order keeps
    /// floating-point feature sums reproducible.
    pub fn token_set(&self) -> BTreeSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

/// Lowercase and split on maximal runs of non-ASCII-alphanumeric characters.
pub fn tokenize(text: &str) -> TokenSeq {
    let tokens = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_ascii_lowercase())
        .collect();
    TokenSeq { tokens }
}

/// Split after `.`, `?` or `!` when followed by whitespace or end of text.
/// Delimiters are retained; segments are trimmed; empty segments dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        if matches!(chars[i], '.' | '?' | '!') && chars.get(i + 1).is_none_or(|c| c.is_whitespace())
        {
            push_trimmed(&chars[start..=i], &mut out);
            start = i + 1;
        }
    }
    if start < chars.len() {
        push_trimmed(&chars[start..], &mut out);
    }
    out
}

fn push_trimmed(chars: &[char], out: &mut Vec<String>) {
    let seg: String = chars.iter().collect();
    let seg = seg.trim();
    if !seg.is_empty() {
        out.push(seg.to_string());
    }
}

/// Document-frequency statistics over a corpus of `n_docs` documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdfTable {
    n_docs: u64,
    df: std::collections::BTreeMap<String, u64>,
}

impl IdfTable {
    pub fn new(n_docs: u64, df: std::collections::BTreeMap<String, u64>) -> Result<Self> {
        let table = Self { n_docs, df };
        table.validate()?;
        Ok(table)
    }

    /// Single-document table with no recorded terms; the smallest valid table.
    pub fn empty() -> Self {
        Self {
            n_docs: 1,
            df: Default::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_docs < 1 {
            return Err(Error::Validation("idf table requires n_docs >= 1".into()));
        }
        for (term, &df) in &self.df {
            if df < 1 || df > self.n_docs {
                return Err(Error::Validation(format!(
                    "idf table df({term}) = {df} outside 1..={}",
                    self.n_docs
                )));
            }
        }
        Ok(())
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> u64 {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.df.iter().map(|(t, &df)| (t.as_str(), df))
    }

    /// Smoothed idf for the overlap features: `ln((N+1)/(df+1))`, with
    /// `df = 0` for unseen terms. Always non-negative.
    pub fn feature_idf(&self, term: &str) -> f64 {
        ((self.n_docs + 1) as f64 / (self.df(term) + 1) as f64).ln()
    }
}

/// Free-function form of [`IdfTable::feature_idf`].
pub fn feature_idf(table: &IdfTable, term: &str) -> f64 {
    table.feature_idf(term)
}

/// Count, for every term, how many sequences contain it at least once.
pub fn build_idf(corpus: &[TokenSeq]) -> Result<IdfTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("build_idf: empty corpus".into()));
    }
    let mut df = std::collections::BTreeMap::new();
    for seq in corpus {
        for term in seq.token_set() {
            *df.entry(term.to_string()).or_insert(0) += 1;
        }
    }
    Ok(IdfTable {
        n_docs: corpus.len() as u64,
        df,
    })
}

/// The four join-layer features, each in [0, 1]:
/// `[overlap_all, idf_overlap_all, overlap_nonstop, idf_overlap_nonstop]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapFeatures {
    values: [f64; 4],
}

impl OverlapFeatures {
    pub fn values(&self) -> [f64; 4] {
        self.values
    }

    pub fn overlap_all(&self) -> f64 {
        self.values[0]
    }

    pub fn idf_overlap_all(&self) -> f64 {
        self.values[1]
    }

    pub fn overlap_nonstop(&self) -> f64 {
        self.values[2]
    }

    pub fn idf_overlap_nonstop(&self) -> f64 {
        self.values[3]
    }
}

/// Word overlap and idf-weighted word overlap between question and candidate,
/// over all words and over non-stopwords. Set semantics: duplicates ignored.
///
/// `overlap = |Q ∩ C| / (|Q| + |C|)` and
/// `idf_overlap = Σ_{t∈Q∩C} idf(t) / Σ_{t∈Q∪C} idf(t)`, both with 0/0 → 0.
pub fn overlap_features(
    q: &TokenSeq,
    c: &TokenSeq,
    idf: &IdfTable,
    stopwords: &BTreeSet<String>,
) -> OverlapFeatures {
    let qs = q.token_set();
    let cs = c.token_set();
    let (all_overlap, all_idf) = pair_features(&qs, &cs, idf);
    let qn: BTreeSet<&str> = qs
        .iter()
        .copied()
        .filter(|t| !stopwords.contains(*t))
        .collect();
    let cn: BTreeSet<&str> = cs
        .iter()
        .copied()
        .filter(|t| !stopwords.contains(*t))
        .collect();
    let (ns_overlap, ns_idf) = pair_features(&qn, &cn, idf);
    OverlapFeatures {
        values: [all_overlap, all_idf, ns_overlap, ns_idf],
    }
}

fn pair_features(q: &BTreeSet<&str>, c: &BTreeSet<&str>, idf: &IdfTable) -> (f64, f64) {
    let inter = q.intersection(c).count();
    let denom = q.len() + c.len();
    let overlap = if denom == 0 {
        0.0
    } else {
        inter as f64 / denom as f64
    };
    let mut num = 0.0;
    for t in q.intersection(c) {
        num += idf.feature_idf(t);
    }
    let mut den = 0.0;
    for t in q.union(c) {
        den += idf.feature_idf(t);
    }
    let idf_overlap = if den == 0.0 { 0.0 } else { num / den };
    (overlap, idf_overlap)
}
