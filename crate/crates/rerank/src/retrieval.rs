//! First-stage candidate generation: an inverted index with BM25 scoring.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;

use crate::error::{Error, Result};
use crate::textproc::{tokenize, TokenSeq};

/// Term-frequency saturation parameter.
pub const BM25_K1: f64 = 0.9;
/// Length-normalization parameter.
pub const BM25_B: f64 = 0.4;

/// Magic header line of the persisted index format.
const INDEX_MAGIC: &str = "IDX1";

#[derive(Debug, Clone)]
struct DocEntry {
    id: String,
    len: u64,
    text: String,
}

/// Inverted index over a document collection.
///
/// Documents are held sorted by id; postings reference documents by ordinal,
/// so every postings list is strictly increasing in doc id. Immutable after
/// build.
#[derive(Debug, Clone)]
pub struct InvertedIndex {
    docs: Vec<DocEntry>,
    postings: BTreeMap<String, Vec<(u32, u64)>>,
    avg_doc_len: f64,
}

/// One first-stage result: a document and its BM25 score.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedDoc {
    pub doc_id: String,
    pub bm25_score: f64,
    pub text: String,
}

impl InvertedIndex {
    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    pub fn doc_text(&self, doc_id: &str) -> Option<&str> {
        self.ordinal(doc_id).map(|o| self.docs[o].text.as_str())
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u64> {
        self.ordinal(doc_id).map(|o| self.docs[o].len)
    }

    pub fn postings(&self, term: &str) -> Option<impl Iterator<Item = (&str, u64)>> {
        self.postings.get(term).map(|list| {
            list.iter()
                .map(|&(ord, tf)| (self.docs[ord as usize].id.as_str(), tf))
        })
    }

    fn ordinal(&self, doc_id: &str) -> Option<usize> {
        self.docs
            .binary_search_by(|d| d.id.as_str().cmp(doc_id))
            .ok()
    }

    /// Persist as `IDX1`, one `doc_id<TAB>length<TAB>base64(text)` line per
    /// document, then one `term<TAB>doc_id:tf,...` line per term. UTF-8, LF.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_index_string())?;
        Ok(())
    }

    pub fn to_index_string(&self) -> String {
        let mut out = String::new();
        out.push_str(INDEX_MAGIC);
        out.push('\n');
        for doc in &self.docs {
            out.push_str(&doc.id);
            out.push('\t');
            out.push_str(&doc.len.to_string());
            out.push('\t');
            out.push_str(&BASE64.encode(doc.text.as_bytes()));
            out.push('\n');
        }
        for (term, list) in &self.postings {
            out.push_str(term);
            out.push('\t');
            for (i, &(ord, tf)) in list.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&self.docs[ord as usize].id);
                out.push(':');
                out.push_str(&tf.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_index_string(&fs::read_to_string(path)?)
    }

    pub fn from_index_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(INDEX_MAGIC) {
            return Err(Error::IndexFormat(format!(
                "expected header {INDEX_MAGIC:?}"
            )));
        }
        let mut docs: Vec<DocEntry> = Vec::new();
        let mut postings = BTreeMap::new();
        let mut in_docs = true;
        for (lineno, line) in lines.enumerate() {
            let n = lineno + 2;
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [id, len, b64] => {
                    if !in_docs {
                        return Err(Error::IndexFormat(format!(
                            "line {n}: document line after term section"
                        )));
                    }
                    let len: u64 = len.parse().map_err(|_| {
                        Error::IndexFormat(format!("line {n}: bad document length"))
                    })?;
                    let bytes = BASE64
                        .decode(b64)
                        .map_err(|e| Error::IndexFormat(format!("line {n}: bad base64: {e}")))?;
                    let text = String::from_utf8(bytes).map_err(|_| {
                        Error::IndexFormat(format!("line {n}: document text is not UTF-8"))
                    })?;
                    if let Some(last) = docs.last() {
                        if last.id.as_str() >= *id {
                            return Err(Error::IndexFormat(format!(
                                "line {n}: doc ids out of order"
                            )));
                        }
                    }
                    docs.push(DocEntry {
                        id: id.to_string(),
                        len,
                        text,
                    });
                }
                [term, list] => {
                    in_docs = false;
                    let mut entries = Vec::new();
                    for item in list.split(',') {
                        let (doc_id, tf) = item.rsplit_once(':').ok_or_else(|| {
                            Error::IndexFormat(format!("line {n}: bad posting {item:?}"))
                        })?;
                        let tf: u64 = tf.parse().map_err(|_| {
                            Error::IndexFormat(format!("line {n}: bad tf in {item:?}"))
                        })?;
                        let ord = docs
                            .binary_search_by(|d| d.id.as_str().cmp(doc_id))
                            .map_err(|_| {
                                Error::IndexFormat(format!(
                                    "line {n}: posting references unknown doc {doc_id:?}"
                                ))
                            })? as u32;
                        if entries.last().is_some_and(|&(prev, _)| prev >= ord) {
                            return Err(Error::IndexFormat(format!(
                                "line {n}: postings not strictly increasing"
                            )));
                        }
                        entries.push((ord, tf));
                    }
                    if postings.insert(term.to_string(), entries).is_some() {
                        return Err(Error::IndexFormat(format!(
                            "line {n}: duplicate term {term:?}"
                        )));
                    }
                }
                _ => {
                    return Err(Error::IndexFormat(format!("line {n}: unparseable line")));
                }
            }
        }
        if docs.is_empty() {
            return Err(Error::IndexFormat("index contains no documents".into()));
        }
        let avg_doc_len = docs.iter().map(|d| d.len as f64).sum::<f64>() / docs.len() as f64;
        Ok(Self {
            docs,
            postings,
            avg_doc_len,
        })
    }
}

/// Characters a doc id may not contain: they are structural in the index
/// file format.
const FORBIDDEN_ID_CHARS: [char; 5] = ['\t', '\n', '\r', ':', ','];

/// Build an inverted index from `(doc_id, text)` pairs.
///
/// Doc ids must be unique, non-empty, and free of tab, newline, `:` and `,`.
pub fn index_documents(docs: &[(String, String)]) -> Result<InvertedIndex> {
    if docs.is_empty() {
        return Err(Error::InvalidArgument(
            "index_documents: no documents".into(),
        ));
    }
    let mut entries: Vec<(String, String)> = docs.to_vec();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in entries.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::InvalidArgument(format!(
                "duplicate doc_id {:?}",
                pair[0].0
            )));
        }
    }
    for (id, _) in &entries {
        if id.is_empty() || id.contains(FORBIDDEN_ID_CHARS) {
            return Err(Error::InvalidArgument(format!(
                "doc_id {id:?} is empty or contains a reserved character"
            )));
        }
    }

    let mut doc_entries = Vec::with_capacity(entries.len());
    let mut postings: BTreeMap<String, Vec<(u32, u64)>> = BTreeMap::new();
    for (ord, (id, text)) in entries.iter().enumerate() {
        let tokens = tokenize(text);
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for t in tokens.tokens() {
            *counts.entry(t).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings
                .entry(term.to_string())
                .or_default()
                .push((ord as u32, tf));
        }
        doc_entries.push(DocEntry {
            id: id.clone(),
            len: tokens.len() as u64,
            text: text.clone(),
        });
    }
    let avg_doc_len =
        doc_entries.iter().map(|d| d.len as f64).sum::<f64>() / doc_entries.len() as f64;
    Ok(InvertedIndex {
        docs: doc_entries,
        postings,
        avg_doc_len,
    })
}

/// BM25 idf: `ln(1 + (N − df + 0.5) / (df + 0.5))`; non-negative for df ≤ N.
pub fn bm25_idf(n_docs: u64, df: u64) -> f64 {
    (1.0 + (n_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// Retrieve the top-`h` documents for a bag-of-words query.
///
/// Repeated query terms contribute once per occurrence. Results are sorted by
/// score descending, ties broken by ascending doc id; documents matching no
/// query term are never returned.
pub fn bm25_search(index: &InvertedIndex, query: &TokenSeq, h: usize) -> Result<Vec<RetrievedDoc>> {
    if h < 1 {
        return Err(Error::InvalidArgument("bm25_search: h must be >= 1".into()));
    }
    let n = index.docs.len() as u64;
    let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
    for term in query.tokens() {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        let idf = bm25_idf(n, list.len() as u64);
        for &(ord, tf) in list {
            let tf = tf as f64;
            let len = index.docs[ord as usize].len as f64;
            let contrib = idf * tf * (BM25_K1 + 1.0)
                / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * len / index.avg_doc_len));
            *scores.entry(ord).or_insert(0.0) += contrib;
        }
    }
    let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("BM25 scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(h);
    Ok(ranked
        .into_iter()
        .map(|(ord, score)| {
            let doc = &index.docs[ord as usize];
            RetrievedDoc {
                doc_id: doc.id.clone(),
                bm25_score: score,
                text: doc.text.clone(),
            }
        })
        .collect())
}
