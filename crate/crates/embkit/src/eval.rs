//! Retrieval evaluation harness: load task bundles, rank corpora by cosine,
//! compute nDCG@10 and recall@k, and aggregate per-task scores into grouped
//! means.
//!
//! A task bundle is a directory with `queries.jsonl` (`{"id","text"}`),
//! `corpus.jsonl` (`{"id","text"}`) and `qrels.tsv`
//! (`query_id TAB doc_id TAB grade`), plus an optional `meta.json`
//! (`{"name","language"}`). Gains follow the `2^grade - 1` convention with a
//! `log2(rank+1)` discount; unjudged documents contribute zero gain.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, Document, JsonlError};
use crate::model::{BiEncoder, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("missing task file {0}")]
    MissingFile(PathBuf),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("bad qrels line {line} in {path}: {message}")]
    QrelsParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("qrel grade for ({query_id}, {doc_id}) is {grade}, must be >= 1")]
    NonPositiveGrade {
        query_id: String,
        doc_id: String,
        grade: i64,
    },
    #[error("qrels reference unknown {kind} id {id:?}")]
    DanglingReference { kind: &'static str, id: String },
    #[error("document {0:?} appears more than once in a ranking")]
    DuplicateInRanking(String),
    #[error("group {0:?} has no member tasks")]
    EmptyGroup(String),
    #[error("group {group:?} references unknown task {task:?}")]
    UnknownTask { group: String, task: String },
    #[error("failed to embed {id:?}: {source}")]
    Embed {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A loaded retrieval task: queries, corpus, graded relevance judgments.
#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub name: String,
    pub language: String,
    pub queries: BTreeMap<String, String>,
    pub corpus: BTreeMap<String, String>,
    /// query id -> (doc id -> grade >= 1)
    pub qrels: BTreeMap<String, BTreeMap<String, u32>>,
}

#[derive(Debug, Deserialize)]
struct TaskMeta {
    name: Option<String>,
    language: Option<String>,
}

/// Load and validate a task bundle directory.
pub fn load_task(dir: &Path) -> Result<RetrievalTask, EvalError> {
    let queries_path = dir.join("queries.jsonl");
    let corpus_path = dir.join("corpus.jsonl");
    let qrels_path = dir.join("qrels.tsv");
    for path in [&queries_path, &corpus_path, &qrels_path] {
        if !path.is_file() {
            return Err(EvalError::MissingFile(path.clone()));
        }
    }

    let mut name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".to_string());
    let mut language = "und".to_string();
    let meta_path = dir.join("meta.json");
    if meta_path.is_file() {
        let meta: TaskMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| EvalError::QrelsParse {
                path: meta_path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
        if let Some(n) = meta.name {
            name = n;
        }
        if let Some(l) = meta.language {
            language = l;
        }
    }

    let queries: BTreeMap<String, String> = read_jsonl::<Document>(&queries_path)?
        .into_iter()
        .map(|d| (d.id, d.text))
        .collect();
    let corpus: BTreeMap<String, String> = read_jsonl::<Document>(&corpus_path)?
        .into_iter()
        .map(|d| (d.id, d.text))
        .collect();

    let qrels_text = std::fs::read_to_string(&qrels_path)?;
    let mut qrels: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for (idx, line) in qrels_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (query_id, doc_id, grade_text) = match (fields.next(), fields.next(), fields.next()) {
            (Some(q), Some(d), Some(g)) => (q, d, g),
            _ => {
                return Err(EvalError::QrelsParse {
                    path: qrels_path.display().to_string(),
                    line: idx + 1,
                    message: "expected query_id TAB doc_id TAB grade".into(),
                })
            }
        };
        let grade: i64 = grade_text.trim().parse().map_err(|_| EvalError::QrelsParse {
            path: qrels_path.display().to_string(),
            line: idx + 1,
            message: format!("grade {grade_text:?} is not an integer"),
        })?;
        if grade < 1 {
            return Err(EvalError::NonPositiveGrade {
                query_id: query_id.to_string(),
                doc_id: doc_id.to_string(),
                grade,
            });
        }
        if !queries.contains_key(query_id) {
            return Err(EvalError::DanglingReference {
                kind: "query",
                id: query_id.to_string(),
            });
        }
        if !corpus.contains_key(doc_id) {
            return Err(EvalError::DanglingReference {
                kind: "doc",
                id: doc_id.to_string(),
            });
        }
        qrels
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade as u32);
    }

    Ok(RetrievalTask {
        name,
        language,
        queries,
        corpus,
        qrels,
    })
}

fn dcg_gain(grade: u32) -> f64 {
    (2.0f64).powi(grade as i32) - 1.0
}

/// nDCG@k of a ranked doc-id list against one query's judgments.
///
/// DCG sums `(2^grade - 1) / log2(rank + 1)` over judged documents in the
/// top k; IDCG uses the grade-sorted ideal ranking. Returns 0 when the query
/// has no judged documents.
pub fn ndcg_at_k(
    ranked: &[String],
    qrels: &BTreeMap<String, u32>,
    k: usize,
) -> Result<f64, EvalError> {
    let mut seen = HashSet::with_capacity(ranked.len());
    for doc_id in ranked {
        if !seen.insert(doc_id) {
            return Err(EvalError::DuplicateInRanking(doc_id.clone()));
        }
    }
    if qrels.is_empty() {
        return Ok(0.0);
    }
    let mut dcg = 0.0;
    for (i, doc_id) in ranked.iter().take(k).enumerate() {
        if let Some(&grade) = qrels.get(doc_id) {
            dcg += dcg_gain(grade) / ((i + 2) as f64).log2();
        }
    }
    let mut grades: Vec<u32> = qrels.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| dcg_gain(g) / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

/// Fraction of judged documents retrieved in the top k.
pub fn recall_at_k(ranked: &[String], qrels: &BTreeMap<String, u32>, k: usize) -> f64 {
    if qrels.is_empty() {
        return 0.0;
    }
    let hit = ranked
        .iter()
        .take(k)
        .filter(|doc_id| qrels.contains_key(*doc_id))
        .count();
    hit as f64 / qrels.len() as f64
}

/// Per-task metric bundle: nDCG@10 plus recall at each requested cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, f64>", try_from = "BTreeMap<String, f64>")]
pub struct TaskMetrics {
    pub ndcg_at_10: f64,
    pub recall: BTreeMap<usize, f64>,
}

impl From<TaskMetrics> for BTreeMap<String, f64> {
    fn from(m: TaskMetrics) -> Self {
        let mut out = BTreeMap::new();
        out.insert("ndcg@10".to_string(), m.ndcg_at_10);
        for (k, v) in m.recall {
            out.insert(format!("recall@{k}"), v);
        }
        out
    }
}

impl TryFrom<BTreeMap<String, f64>> for TaskMetrics {
    type Error = String;

    fn try_from(map: BTreeMap<String, f64>) -> Result<Self, String> {
        let mut metrics = TaskMetrics {
            ndcg_at_10: 0.0,
            recall: BTreeMap::new(),
        };
        for (key, value) in map {
            if key == "ndcg@10" {
                metrics.ndcg_at_10 = value;
            } else if let Some(k) = key.strip_prefix("recall@") {
                let k: usize = k.parse().map_err(|_| format!("bad metric key {key:?}"))?;
                metrics.recall.insert(k, value);
            } else {
                return Err(format!("unknown metric key {key:?}"));
            }
        }
        Ok(metrics)
    }
}

/// Per-task metrics plus grouped aggregate means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_task: BTreeMap<String, TaskMetrics>,
    pub aggregates: BTreeMap<String, f64>,
}

/// Rank the whole corpus for one query embedding. Ties break by ascending
/// doc id.
fn rank_corpus(
    doc_ids: &[String],
    doc_vecs: &[crate::model::EmbeddingVector],
    query_vec: &crate::model::EmbeddingVector,
) -> Vec<String> {
    let mut scored: Vec<(usize, f64)> = doc_vecs
        .iter()
        .enumerate()
        .map(|(i, v)| (i, crate::model::cosine_sim(query_vec, v)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| doc_ids[a.0].cmp(&doc_ids[b.0]))
    });
    scored.into_iter().map(|(i, _)| doc_ids[i].clone()).collect()
}

/// Evaluate a model on one task: rank the full corpus per judged query by
/// cosine and average nDCG@10 and recall@k over queries. Queries without
/// judgments are skipped.
pub fn evaluate_model(
    model: &BiEncoder,
    task: &RetrievalTask,
    k_list: &[usize],
) -> Result<TaskMetrics, EvalError> {
    let doc_ids: Vec<String> = task.corpus.keys().cloned().collect();
    let mut doc_vecs = Vec::with_capacity(doc_ids.len());
    for id in &doc_ids {
        let vec = model
            .encode(&task.corpus[id], false)
            .map_err(|source| EvalError::Embed {
                id: id.clone(),
                source,
            })?;
        doc_vecs.push(vec);
    }

    let mut ndcg_sum = 0.0;
    let mut recall_sums: BTreeMap<usize, f64> = k_list.iter().map(|&k| (k, 0.0)).collect();
    let mut evaluated = 0usize;
    for (query_id, judged) in &task.qrels {
        let text = &task.queries[query_id];
        let query_vec = model.encode(text, true).map_err(|source| EvalError::Embed {
            id: query_id.clone(),
            source,
        })?;
        let ranked = rank_corpus(&doc_ids, &doc_vecs, &query_vec);
        ndcg_sum += ndcg_at_k(&ranked, judged, 10)?;
        for (&k, sum) in recall_sums.iter_mut() {
            *sum += recall_at_k(&ranked, judged, k);
        }
        evaluated += 1;
    }
    let denom = evaluated.max(1) as f64;
    Ok(TaskMetrics {
        ndcg_at_10: ndcg_sum / denom,
        recall: recall_sums.into_iter().map(|(k, s)| (k, s / denom)).collect(),
    })
}

/// Arithmetic mean of per-task nDCG@10 for each named group.
pub fn aggregate(
    per_task: &BTreeMap<String, TaskMetrics>,
    grouping: &BTreeMap<String, Vec<String>>,
) -> Result<MetricReport, EvalError> {
    let mut aggregates = BTreeMap::new();
    for (label, members) in grouping {
        if members.is_empty() {
            return Err(EvalError::EmptyGroup(label.clone()));
        }
        let mut sum = 0.0;
        for task in members {
            let metrics = per_task.get(task).ok_or_else(|| EvalError::UnknownTask {
                group: label.clone(),
                task: task.clone(),
            })?;
            sum += metrics.ndcg_at_10;
        }
        aggregates.insert(label.clone(), sum / members.len() as f64);
    }
    Ok(MetricReport {
        per_task: per_task.clone(),
        aggregates,
    })
}

/// Render a report as a Markdown table: one row per task, then one bold row
/// per aggregate group.
pub fn markdown_table(report: &MetricReport) -> String {
    let recall_ks: Vec<usize> = report
        .per_task
        .values()
        .next()
        .map(|m| m.recall.keys().copied().collect())
        .unwrap_or_else(|| vec![10, 100]);
    let mut out = String::new();
    out.push_str("| Task | nDCG@10 |");
    for k in &recall_ks {
        out.push_str(&format!(" Recall@{k} |"));
    }
    out.push('\n');
    out.push_str("|:--|--:|");
    for _ in &recall_ks {
        out.push_str("--:|");
    }
    out.push('\n');
    for (name, metrics) in &report.per_task {
        out.push_str(&format!("| {name} | {:.4} |", metrics.ndcg_at_10));
        for k in &recall_ks {
            match metrics.recall.get(k) {
                Some(v) => out.push_str(&format!(" {v:.4} |")),
                None => out.push_str("  |"),
            }
        }
        out.push('\n');
    }
    for (label, mean) in &report.aggregates {
        out.push_str(&format!("| **{label} (mean)** | {mean:.4} |"));
        for _ in &recall_ks {
            out.push_str("  |");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tokenizer::TokenizerConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_task(
        dir: &Path,
        queries: &[(&str, &str)],
        corpus: &[(&str, &str)],
        qrels: &str,
        meta: Option<&str>,
    ) {
        std::fs::create_dir_all(dir).unwrap();
        let to_jsonl = |records: &[(&str, &str)]| {
            records
                .iter()
                .map(|(id, text)| format!("{{\"id\":\"{id}\",\"text\":\"{text}\"}}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        std::fs::write(dir.join("queries.jsonl"), to_jsonl(queries)).unwrap();
        std::fs::write(dir.join("corpus.jsonl"), to_jsonl(corpus)).unwrap();
        std::fs::write(dir.join("qrels.tsv"), qrels).unwrap();
        if let Some(meta) = meta {
            std::fs::write(dir.join("meta.json"), meta).unwrap();
        }
    }

    fn grades(pairs: &[(&str, u32)]) -> BTreeMap<String, u32> {
        pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect()
    }

    fn ranked(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn minimal_bundle_loads() {
        let dir = tempfile::tempdir().unwrap();
        let task_dir = dir.path().join("mini");
        write_task(&task_dir, &[("q1", "hello")], &[("d1", "world")], "q1\td1\t1\n", None);
        let task = load_task(&task_dir).unwrap();
        assert_eq!(task.name, "mini");
        assert_eq!(task.language, "und");
        assert_eq!(task.queries.len(), 1);
        assert_eq!(task.qrels["q1"]["d1"], 1);
    }

    #[test]
    fn dangling_doc_reference_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let task_dir = dir.path().join("bad");
        write_task(&task_dir, &[("q1", "hello")], &[("d1", "world")], "q1\tmissing\t1\n", None);
        assert!(matches!(
            load_task(&task_dir),
            Err(EvalError::DanglingReference { kind: "doc", .. })
        ));
    }

    #[test]
    fn non_positive_grade_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let task_dir = dir.path().join("bad");
        write_task(&task_dir, &[("q1", "hello")], &[("d1", "world")], "q1\td1\t0\n", None);
        assert!(matches!(
            load_task(&task_dir),
            Err(EvalError::NonPositiveGrade { grade: 0, .. })
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let task_dir = dir.path().join("empty");
        std::fs::create_dir_all(&task_dir).unwrap();
        assert!(matches!(load_task(&task_dir), Err(EvalError::MissingFile(_))));
    }

    #[test]
    fn golden_three_task_fixture_round_trips_counts() {
        let dir = tempfile::tempdir().unwrap();
        let specs = [("alpha", 3usize, 5usize), ("beta", 2, 4), ("gamma", 1, 2)];
        for (name, n_queries, n_docs) in specs {
            let queries: Vec<(String, String)> = (0..n_queries)
                .map(|i| (format!("q{i}"), format!("query {i}")))
                .collect();
            let corpus: Vec<(String, String)> = (0..n_docs)
                .map(|i| (format!("d{i}"), format!("doc {i}")))
                .collect();
            let q_refs: Vec<(&str, &str)> =
                queries.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let c_refs: Vec<(&str, &str)> =
                corpus.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let qrels: String = (0..n_queries).map(|i| format!("q{i}\td{i}\t1\n")).collect();
            write_task(
                &dir.path().join(name),
                &q_refs,
                &c_refs,
                &qrels,
                Some(&format!("{{\"name\":\"{name}\",\"language\":\"fr\"}}")),
            );
        }
        for (name, n_queries, n_docs) in specs {
            let task = load_task(&dir.path().join(name)).unwrap();
            assert_eq!(task.name, name);
            assert_eq!(task.language, "fr");
            assert_eq!(task.queries.len(), n_queries);
            assert_eq!(task.corpus.len(), n_docs);
            assert_eq!(task.qrels.len(), n_queries);
        }
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let qrels = grades(&[("d1", 1)]);
        let score = ndcg_at_k(&ranked(&["d1", "d2", "d3"]), &qrels, 10).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn single_relevant_at_rank_three_scores_half() {
        let qrels = grades(&[("d3", 1)]);
        let score = ndcg_at_k(&ranked(&["d1", "d2", "d3", "d4"]), &qrels, 10).unwrap();
        // DCG = 1/log2(4) = 0.5, IDCG = 1.
        assert_eq!(score, 0.5);
    }

    /// Direct-summation oracle, written independently of `ndcg_at_k`.
    fn ndcg_oracle(ranked: &[String], qrels: &BTreeMap<String, u32>, k: usize) -> f64 {
        if qrels.is_empty() {
            return 0.0;
        }
        let mut dcg = 0.0;
        for i in 0..ranked.len().min(k) {
            if let Some(&g) = qrels.get(&ranked[i]) {
                let gain = 2.0f64.powf(g as f64) - 1.0;
                dcg += gain / ((i as f64) + 2.0).log2();
            }
        }
        let mut gs: Vec<u32> = qrels.values().copied().collect();
        gs.sort_unstable();
        gs.reverse();
        let mut idcg = 0.0;
        for (i, g) in gs.iter().take(k).enumerate() {
            idcg += (2.0f64.powf(*g as f64) - 1.0) / ((i as f64) + 2.0).log2();
        }
        dcg / idcg
    }

    #[test]
    fn mixed_grades_match_direct_summation_oracle() {
        let qrels = grades(&[("a", 3), ("b", 2), ("c", 1)]);
        let ranking = ranked(&["b", "a", "c", "x", "y"]);
        let got = ndcg_at_k(&ranking, &qrels, 10).unwrap();
        let want = ndcg_oracle(&ranking, &qrels, 10);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn random_instances_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n_docs = rng.random_range(1..30usize);
            let mut ids: Vec<String> = (0..n_docs).map(|i| format!("d{i}")).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.random_range(0..=i));
            }
            let mut qrels = BTreeMap::new();
            for id in ids.iter().take(rng.random_range(0..n_docs + 1)) {
                qrels.insert(id.clone(), rng.random_range(1..5u32));
            }
            let k = rng.random_range(1..15usize);
            let got = ndcg_at_k(&ids, &qrels, k).unwrap();
            if qrels.is_empty() {
                assert_eq!(got, 0.0);
            } else {
                assert_abs_diff_eq!(got, ndcg_oracle(&ids, &qrels, k), epsilon = 1e-12);
                assert!((0.0..=1.0).contains(&got));
            }
        }
    }

    #[test]
    fn duplicate_in_ranking_is_rejected() {
        let qrels = grades(&[("d1", 1)]);
        assert!(matches!(
            ndcg_at_k(&ranked(&["d1", "d2", "d1"]), &qrels, 10),
            Err(EvalError::DuplicateInRanking(_))
        ));
    }

    #[test]
    fn recall_counts_judged_docs_in_top_k() {
        let qrels = grades(&[("a", 1), ("b", 2)]);
        let ranking = ranked(&["a", "x", "y", "b"]);
        assert_eq!(recall_at_k(&ranking, &qrels, 1), 0.5);
        assert_eq!(recall_at_k(&ranking, &qrels, 4), 1.0);
        assert_eq!(recall_at_k(&ranking, &grades(&[]), 4), 0.0);
    }

    fn echo_task() -> RetrievalTask {
        // Each query text equals its relevant document's text, so a working
        // encoder must rank that document first.
        let docs = ["red apples", "green pears", "yellow bananas", "ripe plums"];
        RetrievalTask {
            name: "echo".into(),
            language: "en".into(),
            queries: (0..4).map(|i| (format!("q{i}"), docs[i].to_string())).collect(),
            corpus: (0..4).map(|i| (format!("d{i}"), docs[i].to_string())).collect(),
            qrels: (0..4)
                .map(|i| (format!("q{i}"), grades(&[(&format!("d{i}"), 1)])))
                .collect(),
        }
    }

    #[test]
    fn echo_corpus_scores_perfect_ndcg() {
        let model = BiEncoder::init(
            TokenizerConfig {
                hash_buckets: 4096,
                ..TokenizerConfig::default()
            },
            &ModelConfig {
                d_embed: 16,
                d_out: 16,
                lora_rank: 0,
                lora_alpha: 16.0,
            },
            3,
        );
        let metrics = evaluate_model(&model, &echo_task(), &[10, 100]).unwrap();
        assert_eq!(metrics.ndcg_at_10, 1.0);
        assert_eq!(metrics.recall[&10], 1.0);
    }

    #[test]
    fn random_model_recall_matches_permutation_probability() {
        // 1 query, 100 docs, 1 relevant: a random encoder puts the relevant
        // doc in the top 10 with probability 0.1.
        let task = {
            let corpus: BTreeMap<String, String> = (0..100)
                .map(|i| (format!("d{i:03}"), format!("tok{i}")))
                .collect();
            RetrievalTask {
                name: "rand".into(),
                language: "en".into(),
                queries: [("q0".to_string(), "needle".to_string())].into(),
                corpus,
                qrels: [("q0".to_string(), grades(&[("d042", 1)]))].into(),
            }
        };
        let mut hits = 0.0;
        let trials = 1000;
        for seed in 0..trials {
            let model = BiEncoder::init(
                TokenizerConfig {
                    hash_buckets: 512,
                    ..TokenizerConfig::default()
                },
                &ModelConfig {
                    d_embed: 8,
                    d_out: 8,
                    lora_rank: 0,
                    lora_alpha: 16.0,
                },
                seed,
            );
            hits += evaluate_model(&model, &task, &[10]).unwrap().recall[&10];
        }
        let mean = hits / trials as f64;
        assert!(
            (mean - 0.10).abs() <= 0.03,
            "mean recall@10 {mean} outside 0.10 +- 0.03"
        );
    }

    #[test]
    fn fixed_tiny_model_matches_hand_computed_values() {
        // Identity projection, hand-set embedding rows: similarities and the
        // resulting metrics are computable on paper.
        let tokenizer = TokenizerConfig {
            hash_buckets: 16,
            ..TokenizerConfig::default()
        };
        let mut model = BiEncoder::init(
            tokenizer.clone(),
            &ModelConfig {
                d_embed: 2,
                d_out: 2,
                lora_rank: 0,
                lora_alpha: 16.0,
            },
            0,
        );
        model.params.proj = ndarray::Array2::eye(2);
        let id_of = |word: &str| crate::tokenizer::tokenize(word, &tokenizer, false)[0];
        // Place three vocabulary words at controlled angles.
        model.params.embed.row_mut(id_of("north")).assign(&ndarray::arr1(&[0.0, 1.0]));
        model.params.embed.row_mut(id_of("east")).assign(&ndarray::arr1(&[1.0, 0.0]));
        model
            .params
            .embed
            .row_mut(id_of("northeast"))
            .assign(&ndarray::arr1(&[1.0, 1.0]));

        let task = RetrievalTask {
            name: "tiny".into(),
            language: "en".into(),
            queries: [("q".to_string(), "north".to_string())].into(),
            corpus: [
                ("a".to_string(), "east".to_string()),
                ("b".to_string(), "northeast".to_string()),
                ("c".to_string(), "north".to_string()),
            ]
            .into(),
            qrels: [("q".to_string(), grades(&[("c", 2), ("b", 1)]))].into(),
        };
        let metrics = evaluate_model(&model, &task, &[10, 100]).unwrap();
        // Ranking by cosine with query (0,1): c = 1.0, b = 1/sqrt(2), a = 0.
        // DCG = (2^2-1)/log2(2) + (2^1-1)/log2(3); IDCG identical -> 1.0.
        assert_abs_diff_eq!(metrics.ndcg_at_10, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(metrics.recall[&10], 1.0, epsilon = 1e-12);

        // Flip the grades so the ideal order disagrees with the ranking.
        let task2 = RetrievalTask {
            qrels: [("q".to_string(), grades(&[("c", 1), ("b", 2)]))].into(),
            ..task
        };
        let metrics2 = evaluate_model(&model, &task2, &[10]).unwrap();
        let dcg = 1.0 / 1.0 + 3.0 / 3.0f64.log2();
        let idcg = 3.0 / 1.0 + 1.0 / 3.0f64.log2();
        assert_abs_diff_eq!(metrics2.ndcg_at_10, dcg / idcg, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_means_are_exact() {
        let mk = |v: f64| TaskMetrics {
            ndcg_at_10: v,
            recall: BTreeMap::new(),
        };
        let per_task: BTreeMap<String, TaskMetrics> =
            [("a".to_string(), mk(0.4)), ("b".to_string(), mk(0.6))].into();
        let grouping: BTreeMap<String, Vec<String>> = [
            ("solo".to_string(), vec!["a".to_string()]),
            ("both".to_string(), vec!["a".to_string(), "b".to_string()]),
        ]
        .into();
        let report = aggregate(&per_task, &grouping).unwrap();
        assert_eq!(report.aggregates["solo"], 0.4);
        assert_abs_diff_eq!(report.aggregates["both"], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn grouped_means_match_manual_computation() {
        // Group shapes: 9 tasks in one group, 10 in the other.
        let mut per_task = BTreeMap::new();
        let mut fr_names = Vec::new();
        let mut ja_names = Vec::new();
        for i in 0..9 {
            let name = format!("fr-task-{i}");
            per_task.insert(
                name.clone(),
                TaskMetrics {
                    ndcg_at_10: 0.1 + 0.05 * i as f64,
                    recall: BTreeMap::new(),
                },
            );
            fr_names.push(name);
        }
        for i in 0..10 {
            let name = format!("ja-task-{i}");
            per_task.insert(
                name.clone(),
                TaskMetrics {
                    ndcg_at_10: 0.2 + 0.03 * i as f64,
                    recall: BTreeMap::new(),
                },
            );
            ja_names.push(name);
        }
        let grouping: BTreeMap<String, Vec<String>> =
            [("Fr".to_string(), fr_names), ("Ja".to_string(), ja_names)].into();
        let report = aggregate(&per_task, &grouping).unwrap();
        let fr_mean = (0..9).map(|i| 0.1 + 0.05 * i as f64).sum::<f64>() / 9.0;
        let ja_mean = (0..10).map(|i| 0.2 + 0.03 * i as f64).sum::<f64>() / 10.0;
        assert_abs_diff_eq!(report.aggregates["Fr"], fr_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(report.aggregates["Ja"], ja_mean, epsilon = 1e-12);
    }

    #[test]
    fn empty_group_is_rejected() {
        let grouping: BTreeMap<String, Vec<String>> = [("void".to_string(), vec![])].into();
        assert!(matches!(
            aggregate(&BTreeMap::new(), &grouping),
            Err(EvalError::EmptyGroup(_))
        ));
    }

    #[test]
    fn task_metrics_serialize_with_metric_keys() {
        let metrics = TaskMetrics {
            ndcg_at_10: 0.5,
            recall: [(10, 0.7), (100, 0.9)].into(),
        };
        let json = serde_json::to_string(&metrics).unwrap();
        assert_eq!(json, r#"{"ndcg@10":0.5,"recall@10":0.7,"recall@100":0.9}"#);
        let back: TaskMetrics = serde_json::from_str(&json).unwrap();
        assert_eq!(back, metrics);
    }

    proptest! {
        #[test]
        fn ndcg_bounded_and_tail_permutation_invariant(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(5..25usize);
            let mut ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            for i in (1..ids.len()).rev() {
                ids.swap(i, rng.random_range(0..=i));
            }
            let mut qrels = BTreeMap::new();
            for id in ids.iter().take(rng.random_range(1..n)) {
                if rng.random_range(0..3u8) == 0 {
                    qrels.insert(id.clone(), rng.random_range(1..4u32));
                }
            }
            let k = 5;
            let score = ndcg_at_k(&ids, &qrels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&score));

            // Shuffle only positions beyond k: score must not change.
            let mut tail = ids.clone();
            if tail.len() > k + 1 {
                tail[k..].reverse();
            }
            let tail_score = ndcg_at_k(&tail, &qrels, k).unwrap();
            prop_assert_eq!(score.to_bits(), tail_score.to_bits());
        }

        #[test]
        fn promoting_higher_grade_never_decreases_ndcg(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(4..15usize);
            let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            let mut qrels = BTreeMap::new();
            for id in &ids {
                if rng.random_range(0..2u8) == 0 {
                    qrels.insert(id.clone(), rng.random_range(1..4u32));
                }
            }
            if qrels.is_empty() {
                return Ok(());
            }
            let i = rng.random_range(0..n - 1);
            let j = i + 1;
            let grade = |id: &String| qrels.get(id).copied().unwrap_or(0);
            // Swap so the higher-graded doc moves up.
            let mut swapped = ids.clone();
            if grade(&ids[j]) > grade(&ids[i]) {
                swapped.swap(i, j);
            }
            let before = ndcg_at_k(&ids, &qrels, 10).unwrap();
            let after = ndcg_at_k(&swapped, &qrels, 10).unwrap();
            prop_assert!(after >= before - 1e-15);
        }
    }
}
