//! Exact top-k cosine search over a document pool and hard-negative
//! attachment.
//!
//! Negatives are always drawn from the same task tag as the pair they are
//! attached to. Search is exact (full scan); desk-scale corpora need no ANN
//! structure, and exactness keeps the miner testable against a full-sort
//! oracle.

use std::collections::HashMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Document, TrainingPair};
use crate::model::{BiEncoder, EmbeddingVector, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum MinerError {
    #[error("cannot index an empty document list")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("failed to embed document {doc_id:?}: {source}")]
    Embed {
        doc_id: String,
        #[source]
        source: ModelError,
    },
    #[error("failed to embed query {query:?}: {source}")]
    QueryEmbed {
        query: String,
        #[source]
        source: ModelError,
    },
    #[error("positive document {0:?} is not in the index")]
    PositiveMissingFromIndex(String),
    #[error("task {task:?} pool has {pool_size} docs, need at least {needed}")]
    PoolTooSmall {
        task: String,
        pool_size: usize,
        needed: usize,
    },
}

/// Immutable embedding index over a document pool. Row order equals input
/// order.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    docs: Vec<Document>,
    tasks: Vec<String>,
    vectors: Array2<f64>,
    by_id: HashMap<String, usize>,
}

impl CorpusIndex {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    pub fn doc(&self, row: usize) -> &Document {
        &self.docs[row]
    }

    pub fn task(&self, row: usize) -> &str {
        &self.tasks[row]
    }

    pub fn row_of(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn text_of(&self, doc_id: &str) -> Option<&str> {
        self.row_of(doc_id).map(|row| self.docs[row].text.as_str())
    }
}

/// Embed every document and build the search index. Documents without a task
/// tag get `default_task`.
pub fn build_index(
    model: &BiEncoder,
    documents: &[Document],
    default_task: &str,
) -> Result<CorpusIndex, MinerError> {
    if documents.is_empty() {
        return Err(MinerError::EmptyCorpus);
    }
    let mut by_id = HashMap::with_capacity(documents.len());
    let mut vectors = Array2::zeros((documents.len(), model.params.d_out()));
    let mut tasks = Vec::with_capacity(documents.len());
    for (row, doc) in documents.iter().enumerate() {
        if by_id.insert(doc.id.clone(), row).is_some() {
            return Err(MinerError::DuplicateId(doc.id.clone()));
        }
        let vec = model
            .encode(&doc.text, false)
            .map_err(|source| MinerError::Embed {
                doc_id: doc.id.clone(),
                source,
            })?;
        vectors.row_mut(row).assign(vec.values());
        tasks.push(doc.task.clone().unwrap_or_else(|| default_task.to_string()));
    }
    Ok(CorpusIndex {
        docs: documents.to_vec(),
        tasks,
        vectors,
        by_id,
    })
}

/// One search hit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub similarity: f64,
}

/// Sequential dot product. Search similarities use plain left-to-right
/// accumulation so ranking arithmetic is independent of BLAS-style unrolling.
fn seq_dot(a: ndarray::ArrayView1<f64>, b: &ndarray::Array1<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

/// Exact top-k cosine search. Results are in descending similarity with ties
/// broken by ascending doc id; fewer than `k` hits are returned when the
/// (filtered) pool is smaller.
pub fn top_k(
    index: &CorpusIndex,
    query_vec: &EmbeddingVector,
    k: usize,
    task_filter: Option<&str>,
) -> Vec<ScoredDoc> {
    let q = query_vec.values();
    let mut hits: Vec<(usize, f64)> = (0..index.len())
        .filter(|&row| task_filter.is_none_or(|t| index.tasks[row] == t))
        .map(|row| (row, seq_dot(index.vectors.row(row), q).clamp(-1.0, 1.0)))
        .collect();
    hits.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.docs[a.0].id.cmp(&index.docs[b.0].id))
    });
    hits.truncate(k);
    hits.into_iter()
        .map(|(row, similarity)| ScoredDoc {
            doc_id: index.docs[row].id.clone(),
            similarity,
        })
        .collect()
}

/// A (query, positive) pair awaiting negatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryPositive {
    pub query: String,
    pub positive_id: String,
    pub task: String,
    pub lang: String,
}

/// One attached negative with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedNegative {
    pub doc_id: String,
    /// Cosine similarity to the query at mining time; absent for random
    /// draws that never scored the document.
    pub similarity: Option<f64>,
    /// True when the slot was filled by uniform padding rather than search.
    pub padded: bool,
}

/// A training pair with exactly K attached negatives.
#[derive(Debug, Clone)]
pub struct MinedPair {
    pub query: String,
    pub positive_id: String,
    pub task: String,
    pub lang: String,
    pub negatives: Vec<MinedNegative>,
}

impl MinedPair {
    /// Resolve document texts against the index that produced this pair.
    pub fn to_training_pair(&self, index: &CorpusIndex) -> TrainingPair {
        let pos = index
            .text_of(&self.positive_id)
            .expect("positive came from this index")
            .to_string();
        let negs = self
            .negatives
            .iter()
            .map(|n| {
                index
                    .text_of(&n.doc_id)
                    .expect("negative came from this index")
                    .to_string()
            })
            .collect();
        TrainingPair {
            query: self.query.clone(),
            pos,
            negs,
            task: self.task.clone(),
            lang: self.lang.clone(),
        }
    }
}

/// Candidate headroom retrieved beyond K before filtering.
fn candidate_buffer(k: usize) -> usize {
    2 * k
}

/// Attach K hard negatives to each pair: search top (K + buffer) within the
/// pair's task, drop the gold positive and any document whose text is
/// byte-identical to it, optionally drop suspected false negatives whose
/// similarity exceeds `sim(query, positive) - margin`, keep the first K
/// survivors, and pad with seeded uniform draws from the remaining same-task
/// pool if fewer than K survive.
pub fn mine_hard_negatives(
    pairs: &[QueryPositive],
    model: &BiEncoder,
    index: &CorpusIndex,
    k: usize,
    margin_filter: Option<f64>,
    seed: u64,
) -> Result<Vec<MinedPair>, MinerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mined = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let pos_row = index
            .row_of(&pair.positive_id)
            .ok_or_else(|| MinerError::PositiveMissingFromIndex(pair.positive_id.clone()))?;
        let pos_text = &index.docs[pos_row].text;

        // Rows eligible as negatives: same task, not the gold positive, not
        // byte-identical to it.
        let eligible: Vec<usize> = (0..index.len())
            .filter(|&row| {
                index.tasks[row] == pair.task
                    && row != pos_row
                    && index.docs[row].text != *pos_text
            })
            .collect();
        if eligible.len() < k {
            return Err(MinerError::PoolTooSmall {
                task: pair.task.clone(),
                pool_size: eligible.len() + 1,
                needed: k + 1,
            });
        }

        let query_vec = model
            .encode(&pair.query, true)
            .map_err(|source| MinerError::QueryEmbed {
                query: pair.query.clone(),
                source,
            })?;
        let sim_pos =
            seq_dot(index.vectors.row(pos_row), query_vec.values()).clamp(-1.0, 1.0);

        let candidates = top_k(index, &query_vec, k + candidate_buffer(k), Some(&pair.task));
        let mut negatives: Vec<MinedNegative> = Vec::with_capacity(k);
        for hit in candidates {
            if negatives.len() == k {
                break;
            }
            let row = index.row_of(&hit.doc_id).unwrap();
            if row == pos_row || index.docs[row].text == *pos_text {
                continue;
            }
            if let Some(margin) = margin_filter {
                if hit.similarity > sim_pos - margin {
                    continue;
                }
            }
            negatives.push(MinedNegative {
                doc_id: hit.doc_id,
                similarity: Some(hit.similarity),
                padded: false,
            });
        }

        if negatives.len() < k {
            let taken: std::collections::HashSet<&str> =
                negatives.iter().map(|n| n.doc_id.as_str()).collect();
            let remaining: Vec<usize> = eligible
                .iter()
                .copied()
                .filter(|&row| !taken.contains(index.docs[row].id.as_str()))
                .collect();
            let picks = rand::seq::index::sample(&mut rng, remaining.len(), k - negatives.len());
            for pick in picks.iter() {
                let row = remaining[pick];
                let sim =
                    seq_dot(index.vectors.row(row), query_vec.values()).clamp(-1.0, 1.0);
                negatives.push(MinedNegative {
                    doc_id: index.docs[row].id.clone(),
                    similarity: Some(sim),
                    padded: true,
                });
            }
        }

        mined.push(MinedPair {
            query: pair.query.clone(),
            positive_id: pair.positive_id.clone(),
            task: pair.task.clone(),
            lang: pair.lang.clone(),
            negatives,
        });
    }
    Ok(mined)
}

/// Attach K uniformly sampled same-task negatives (the offline analogue of
/// vanilla in-batch sampling). Deterministic given the seed.
pub fn random_negatives(
    pairs: &[QueryPositive],
    pool: &[Document],
    k: usize,
    seed: u64,
) -> Result<Vec<MinedPair>, MinerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mined = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let candidates: Vec<&Document> = pool
            .iter()
            .filter(|d| {
                d.task.as_deref().unwrap_or_default() == pair.task && d.id != pair.positive_id
            })
            .collect();
        if candidates.len() < k {
            return Err(MinerError::PoolTooSmall {
                task: pair.task.clone(),
                pool_size: candidates.len() + 1,
                needed: k + 1,
            });
        }
        let picks = rand::seq::index::sample(&mut rng, candidates.len(), k);
        let negatives = picks
            .iter()
            .map(|i| MinedNegative {
                doc_id: candidates[i].id.clone(),
                similarity: None,
                padded: false,
            })
            .collect();
        mined.push(MinedPair {
            query: pair.query.clone(),
            positive_id: pair.positive_id.clone(),
            task: pair.task.clone(),
            lang: pair.lang.clone(),
            negatives,
        });
    }
    Ok(mined)
}
