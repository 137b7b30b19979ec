//! End-to-end question answering: retrieve, segment, rerank.

use crate::error::{Error, Result};
use crate::inference::{ScoredCandidate, Scorer};
use crate::retrieval::{bm25_search, InvertedIndex, RetrievedDoc};
use crate::textproc::{split_sentences, tokenize};

/// One answer-sentence candidate with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub doc_id: String,
    pub sentence_index: usize,
    pub text: String,
}

/// Segment retrieved documents into sentence candidates, preserving
/// (retrieval rank, sentence order). Identical sentences from different
/// documents stay distinct: identity is (doc_id, sentence_index).
pub fn collect_candidates(retrieved: &[RetrievedDoc]) -> Vec<Candidate> {
    let mut out = Vec::new();
    for doc in retrieved {
        for (sentence_index, text) in split_sentences(&doc.text).into_iter().enumerate() {
            out.push(Candidate {
                doc_id: doc.doc_id.clone(),
                sentence_index,
                text,
            });
        }
    }
    out
}

/// Answer a question: BM25-retrieve `h` documents, segment into sentences,
/// rerank with the model, return the best `top_n`.
///
/// An empty retrieval yields an empty result, not an error.
pub fn ask(
    index: &InvertedIndex,
    scorer: &Scorer<'_>,
    question: &str,
    h: usize,
    top_n: usize,
) -> Result<Vec<ScoredCandidate>> {
    if top_n < 1 {
        return Err(Error::InvalidArgument("ask: top_n must be >= 1".into()));
    }
    let retrieved = bm25_search(index, &tokenize(question), h)?;
    let candidates = collect_candidates(&retrieved);
    let mut ranked = scorer.rerank(question, candidates);
    ranked.truncate(top_n);
    Ok(ranked)
}
