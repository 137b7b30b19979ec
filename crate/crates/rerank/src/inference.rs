//! Reference interpreter for the Siamese CNN reranker: embed, wide
//! convolution, ReLU, max-pool per arm; join with the overlap features; two
//! fully-connected layers; softmax probability of the positive class.

use std::collections::{BTreeSet, HashMap};

use crate::error::Result;
use crate::model::ModelBundle;
use crate::pipeline::Candidate;
use crate::tensor::{self, Tensor};
use crate::textproc::{overlap_features, tokenize, TokenSeq};

/// Relevance score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QAScore {
    value: f64,
}

impl QAScore {
    pub fn value(&self) -> f64 {
        self.value
    }
}

/// A candidate together with its reranker score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub score: QAScore,
}

/// Join-layer vector `[x_q (k) ; x_d (k) ; x_feat (4)]` of length 2k+4.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinVector {
    values: Vec<f64>,
    num_filters: usize,
}

impl JoinVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Question-arm segment, indices [0, k).
    pub fn x_q(&self) -> &[f64] {
        &self.values[..self.num_filters]
    }

    /// Answer-arm segment, indices [k, 2k).
    pub fn x_d(&self) -> &[f64] {
        &self.values[self.num_filters..2 * self.num_filters]
    }

    /// Overlap-feature segment, indices [2k, 2k+4).
    pub fn x_feat(&self) -> &[f64] {
        &self.values[2 * self.num_filters..]
    }
}

/// One arm of the network: max-pool over columns of the rectified wide
/// convolution of the sentence matrix.
pub fn arm_forward(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Vec<f64>> {
    tensor::maxpool_cols(&tensor::relu(&tensor::conv_wide(x, filters, bias)?))
}

/// Validated, ready-to-run view of a model bundle.
///
/// Construction checks config/param consistency once; scoring afterwards is
/// infallible and read-only, so a `Scorer` is safe to share across threads.
pub struct Scorer<'a> {
    bundle: &'a ModelBundle,
    vocab_index: HashMap<&'a str, usize>,
    stopwords: BTreeSet<String>,
    embeddings: Tensor,
    conv_q_filters: Tensor,
    conv_q_bias: Tensor,
    conv_a_filters: Tensor,
    conv_a_bias: Tensor,
    fc1_weight: Tensor,
    fc1_bias: Vec<f64>,
    fc2_weight: Tensor,
    fc2_bias: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(bundle: &'a ModelBundle) -> Result<Self> {
        bundle.validate()?;
        let tensor_of = |name: &str| -> Result<Tensor> {
            let p = bundle
                .param(name)
                .expect("validated bundle has all records");
            Tensor::new(p.dims.clone(), p.weights.clone())
        };
        let vocab_index = bundle
            .config
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        Ok(Self {
            bundle,
            vocab_index,
            stopwords: bundle.config.stopwords.iter().cloned().collect(),
            embeddings: tensor_of("embeddings")?,
            conv_q_filters: tensor_of("conv_q.filters")?,
            conv_q_bias: tensor_of("conv_q.bias")?,
            conv_a_filters: tensor_of("conv_a.filters")?,
            conv_a_bias: tensor_of("conv_a.bias")?,
            fc1_weight: tensor_of("fc1.weight")?,
            fc1_bias: bundle.param("fc1.bias").unwrap().weights.clone(),
            fc2_weight: tensor_of("fc2.weight")?,
            fc2_bias: bundle.param("fc2.bias").unwrap().weights.clone(),
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        self.bundle
    }

    /// Sentence matrix d×L: column i is the embedding of token i, with
    /// unknown tokens mapped to `<unk>` (index 0). An empty sequence embeds
    /// as the single `<unk>` column so convolution always has input.
    pub fn embed(&self, tokens: &TokenSeq) -> Tensor {
        let d = self.bundle.config.embed_dim;
        let indices: Vec<usize> = if tokens.is_empty() {
            vec![0]
        } else {
            tokens
                .iter()
                .map(|t| self.vocab_index.get(t.as_str()).copied().unwrap_or(0))
                .collect()
        };
        let l = indices.len();
        let emb = self.embeddings.data();
        let mut data = vec![0.0; d * l];
        for (i, &v) in indices.iter().enumerate() {
            for r in 0..d {
                data[r * l + i] = emb[v * d + r];
            }
        }
        Tensor::new(vec![d, l], data).expect("d, l >= 1")
    }

    /// The join-layer vector for a pair, exposing the segment layout.
    pub fn join_vector(&self, q: &TokenSeq, a: &TokenSeq) -> JoinVector {
        let x_q = arm_forward(&self.embed(q), &self.conv_q_filters, &self.conv_q_bias)
            .expect("shapes validated at construction");
        let x_d = arm_forward(&self.embed(a), &self.conv_a_filters, &self.conv_a_bias)
            .expect("shapes validated at construction");
        let feat = overlap_features(q, a, &self.bundle.config.idf, &self.stopwords);
        let k = self.bundle.config.num_filters;
        let mut values = Vec::with_capacity(2 * k + 4);
        values.extend_from_slice(&x_q);
        values.extend_from_slice(&x_d);
        values.extend_from_slice(&feat.values());
        JoinVector {
            values,
            num_filters: k,
        }
    }

    /// Score a question/answer pair: softmax probability of the positive
    /// class after the two fully-connected layers.
    pub fn forward(&self, q: &TokenSeq, a: &TokenSeq) -> QAScore {
        let join = self.join_vector(q, a);
        let x = Tensor::new(vec![join.len(), 1], join.values().to_vec())
            .expect("join vector is non-empty");
        let h1 = tensor::gemm(&self.fc1_weight, &x).expect("shapes validated at construction");
        let hdim = self.bundle.config.hidden_size;
        let mut hidden = vec![0.0; hdim];
        for i in 0..hdim {
            let v = h1.data()[i] + self.fc1_bias[i];
            hidden[i] = if v > 0.0 { v } else { 0.0 };
        }
        let hcol = Tensor::new(vec![hdim, 1], hidden).expect("hdim >= 1");
        let logits_t = tensor::gemm(&self.fc2_weight, &hcol).expect("shapes validated");
        let l0 = logits_t.data()[0] + self.fc2_bias[0];
        let l1 = logits_t.data()[1] + self.fc2_bias[1];
        // Stable softmax: subtract the max logit before exponentiating.
        let m = if l0 > l1 { l0 } else { l1 };
        let e0 = (l0 - m).exp();
        let e1 = (l1 - m).exp();
        QAScore {
            value: e1 / (e0 + e1),
        }
    }

    /// Tokenize both sides and score; the per-pair entry point used by the
    /// service and the benchmark harness.
    pub fn score_pair(&self, question: &str, answer: &str) -> f64 {
        self.forward(&tokenize(question), &tokenize(answer)).value
    }

    /// Elementwise [`Scorer::forward`] over a batch, order preserved.
    pub fn score_batch(&self, pairs: &[(TokenSeq, TokenSeq)]) -> Vec<QAScore> {
        pairs.iter().map(|(q, a)| self.forward(q, a)).collect()
    }

    /// Score candidates against a question and sort by score descending,
    /// ties by (doc_id, sentence_index) ascending.
    pub fn rerank(&self, question: &str, candidates: Vec<Candidate>) -> Vec<ScoredCandidate> {
        let q = tokenize(question);
        let mut scored: Vec<ScoredCandidate> = candidates
            .into_iter()
            .map(|candidate| {
                let score = self.forward(&q, &tokenize(&candidate.text));
                ScoredCandidate { candidate, score }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .value
                .partial_cmp(&a.score.value)
                .expect("scores are finite")
                .then_with(|| a.candidate.doc_id.cmp(&b.candidate.doc_id))
                .then_with(|| a.candidate.sentence_index.cmp(&b.candidate.sentence_index))
        });
        scored
    }
}

/// One-shot [`Scorer::forward`]; validates the bundle first.
pub fn forward(bundle: &ModelBundle, q: &TokenSeq, a: &TokenSeq) -> Result<QAScore> {
    Ok(Scorer::new(bundle)?.forward(q, a))
}

/// One-shot [`Scorer::score_batch`]; validates the bundle first.
pub fn score_batch(bundle: &ModelBundle, pairs: &[(TokenSeq, TokenSeq)]) -> Result<Vec<QAScore>> {
    Ok(Scorer::new(bundle)?.score_batch(pairs))
}

/// One-shot [`Scorer::rerank`]; validates the bundle first.
pub fn rerank(
    bundle: &ModelBundle,
    question: &str,
    candidates: Vec<Candidate>,
) -> Result<Vec<ScoredCandidate>> {
    Ok(Scorer::new(bundle)?.rerank(question, candidates))
}
