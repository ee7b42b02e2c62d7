//! Seeded synthetic corpora for tests, demos, and experiment smoke runs.
//!
//! Two families:
//!
//! - [`separable`]: clustered pairs whose query and document vocabularies are
//!   disjoint (within and across clusters). An untrained encoder sees zero
//!   lexical overlap and ranks at chance; contrastive training must align
//!   each cluster's query tokens with its document tokens.
//! - [`distractor`]: domain/item structure where queries share *domain*
//!   tokens with every document of their domain but item tokens are
//!   query/document disjoint. Same-domain documents are strong distractors,
//!   so mined hard negatives carry real signal that uniform random negatives
//!   lack.

use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::data::{Document, TrainingPair};
use crate::eval::RetrievalTask;
use crate::miner::QueryPositive;
use crate::util::derive_seed;

/// A generated corpus: training pairs, a mining pool, and a held-out
/// evaluation task.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub pairs: Vec<TrainingPair>,
    /// Positive documents by id, usable as a mining pool.
    pub docs: Vec<Document>,
    /// (query, positive id) views of `pairs` for the miner.
    pub mining_pairs: Vec<QueryPositive>,
    pub eval_task: RetrievalTask,
}

fn sample_tokens(rng: &mut ChaCha8Rng, vocab: &[String], n: usize) -> String {
    (0..n)
        .map(|_| vocab.choose(rng).unwrap().clone())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Clustered fixture with fully disjoint query/document vocabularies.
///
/// `n_pairs` training pairs are spread round-robin over `n_clusters`
/// clusters. The eval task has 3 fresh queries and 2 fresh documents per
/// cluster; both documents are relevant (grade 1) to each of the cluster's
/// queries.
pub fn separable(n_pairs: usize, n_clusters: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "separable"));
    let query_vocab: Vec<Vec<String>> = (0..n_clusters)
        .map(|c| (0..15).map(|t| format!("cl{c}qw{t}")).collect())
        .collect();
    let doc_vocab: Vec<Vec<String>> = (0..n_clusters)
        .map(|c| (0..20).map(|t| format!("cl{c}dw{t}")).collect())
        .collect();

    let mut pairs = Vec::with_capacity(n_pairs);
    let mut docs = Vec::with_capacity(n_pairs);
    let mut mining_pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let c = i % n_clusters;
        let n_q = rng.random_range(4..=6);
        let n_d = rng.random_range(12..=18);
        let query = sample_tokens(&mut rng, &query_vocab[c], n_q);
        let text = sample_tokens(&mut rng, &doc_vocab[c], n_d);
        let id = format!("sep{i:04}");
        pairs.push(TrainingPair {
            query: query.clone(),
            pos: text.clone(),
            negs: vec![],
            task: "separable".into(),
            lang: "xx".into(),
        });
        mining_pairs.push(QueryPositive {
            query,
            positive_id: id.clone(),
            task: "separable".into(),
            lang: "xx".into(),
        });
        docs.push(Document {
            id,
            text,
            lang: Some("xx".into()),
            task: Some("separable".into()),
        });
    }

    let mut queries = BTreeMap::new();
    let mut corpus = BTreeMap::new();
    let mut qrels: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for c in 0..n_clusters {
        let doc_ids: Vec<String> = (0..2)
            .map(|j| {
                let id = format!("ed{c:02}_{j}");
                let n_d = rng.random_range(12..=18);
                corpus.insert(id.clone(), sample_tokens(&mut rng, &doc_vocab[c], n_d));
                id
            })
            .collect();
        for j in 0..3 {
            let qid = format!("eq{c:02}_{j}");
            let n_q = rng.random_range(4..=6);
            queries.insert(qid.clone(), sample_tokens(&mut rng, &query_vocab[c], n_q));
            qrels.insert(qid, doc_ids.iter().map(|d| (d.clone(), 1u32)).collect());
        }
    }
    let eval_task = RetrievalTask {
        name: "separable-eval".into(),
        language: "xx".into(),
        queries,
        corpus,
        qrels,
    };

    Fixture {
        pairs,
        docs,
        mining_pairs,
        eval_task,
    }
}

/// Distractor-rich fixture: `n_domains` domains of `n_items` items each.
///
/// Documents and queries share per-domain tokens, so any encoder (even an
/// untrained one) can find the right domain; item tokens are query/document
/// disjoint, so ranking the right item *within* a domain has to be learned.
/// Every item contributes `pairs_per_item` training pairs against a single
/// pool document; the eval task holds fresh queries and one fresh document
/// per item with only the matching item relevant.
pub fn distractor(n_domains: usize, n_items: usize, pairs_per_item: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "distractor"));
    let domain_vocab: Vec<Vec<String>> = (0..n_domains)
        .map(|g| (0..8).map(|t| format!("dom{g}w{t}")).collect())
        .collect();
    let item_q_vocab: Vec<Vec<Vec<String>>> = (0..n_domains)
        .map(|g| {
            (0..n_items)
                .map(|m| (0..4).map(|t| format!("it{g}x{m}q{t}")).collect())
                .collect()
        })
        .collect();
    let item_d_vocab: Vec<Vec<Vec<String>>> = (0..n_domains)
        .map(|g| {
            (0..n_items)
                .map(|m| (0..4).map(|t| format!("it{g}x{m}d{t}")).collect())
                .collect()
        })
        .collect();

    let make_query = |rng: &mut ChaCha8Rng, g: usize, m: usize| {
        format!(
            "{} {}",
            sample_tokens(rng, &domain_vocab[g], 2),
            sample_tokens(rng, &item_q_vocab[g][m], 3)
        )
    };
    let make_doc_text = |rng: &mut ChaCha8Rng, g: usize, m: usize| {
        format!(
            "{} {}",
            sample_tokens(rng, &domain_vocab[g], 5),
            sample_tokens(rng, &item_d_vocab[g][m], 5)
        )
    };

    let mut docs = Vec::new();
    let mut pairs = Vec::new();
    let mut mining_pairs = Vec::new();
    for g in 0..n_domains {
        for m in 0..n_items {
            let id = format!("doc{g:02}x{m:02}");
            let text = make_doc_text(&mut rng, g, m);
            docs.push(Document {
                id: id.clone(),
                text: text.clone(),
                lang: Some("xx".into()),
                task: Some("distractor".into()),
            });
            for _ in 0..pairs_per_item {
                let query = make_query(&mut rng, g, m);
                pairs.push(TrainingPair {
                    query: query.clone(),
                    pos: text.clone(),
                    negs: vec![],
                    task: "distractor".into(),
                    lang: "xx".into(),
                });
                mining_pairs.push(QueryPositive {
                    query,
                    positive_id: id.clone(),
                    task: "distractor".into(),
                    lang: "xx".into(),
                });
            }
        }
    }

    let mut queries = BTreeMap::new();
    let mut corpus = BTreeMap::new();
    let mut qrels: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for g in 0..n_domains {
        for m in 0..n_items {
            let doc_id = format!("ed{g:02}x{m:02}");
            corpus.insert(doc_id.clone(), make_doc_text(&mut rng, g, m));
            for j in 0..2 {
                let qid = format!("eq{g:02}x{m:02}_{j}");
                queries.insert(qid.clone(), make_query(&mut rng, g, m));
                qrels.insert(qid, [(doc_id.clone(), 1u32)].into());
            }
        }
    }
    let eval_task = RetrievalTask {
        name: "distractor-eval".into(),
        language: "xx".into(),
        queries,
        corpus,
        qrels,
    };

    Fixture {
        pairs,
        docs,
        mining_pairs,
        eval_task,
    }
}

/// Write a fixture's evaluation task as a task bundle directory.
pub fn write_eval_task(task: &RetrievalTask, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let to_jsonl = |records: &BTreeMap<String, String>| {
        let mut out = String::new();
        for (id, text) in records {
            out.push_str(
                &serde_json::to_string(&Document {
                    id: id.clone(),
                    text: text.clone(),
                    lang: None,
                    task: None,
                })
                .unwrap(),
            );
            out.push('\n');
        }
        out
    };
    std::fs::write(dir.join("queries.jsonl"), to_jsonl(&task.queries))?;
    std::fs::write(dir.join("corpus.jsonl"), to_jsonl(&task.corpus))?;
    let mut qrels = String::new();
    for (qid, judged) in &task.qrels {
        for (doc_id, grade) in judged {
            qrels.push_str(&format!("{qid}\t{doc_id}\t{grade}\n"));
        }
    }
    std::fs::write(dir.join("qrels.tsv"), qrels)?;
    std::fs::write(
        dir.join("meta.json"),
        format!(
            "{{\"name\":{},\"language\":{}}}",
            serde_json::to_string(&task.name).unwrap(),
            serde_json::to_string(&task.language).unwrap()
        ),
    )?;
    Ok(())
}
