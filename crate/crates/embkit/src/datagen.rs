//! Synthetic query-document pair generation.
//!
//! Long documents are sampled from a corpus, a fixed question-generation
//! prompt is rendered per document, and a text-generation service produces
//! one query per document. Responses that begin with the `Non-{language}`
//! marker are rejected. A deterministic offline mock client ships for tests
//! and CI, so nothing here requires network access.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, write_jsonl, Document, JsonlError};
use crate::util::derive_seed;

/// Task tag attached to every generated pair.
pub const SYNTHETIC_TASK: &str = "synthetic-retrieval";

/// Environment variable holding the generation-service credential.
pub const GEN_KEY_ENV: &str = "EMBKIT_GEN_KEY";

/// ISO-639 codes and English names of the 20 supported generation languages.
pub const LANGUAGES: [(&str, &str); 20] = [
    ("en", "English"),
    ("fr", "French"),
    ("es", "Spanish"),
    ("de", "German"),
    ("zh", "Chinese"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("fa", "Persian"),
    ("hi", "Hindi"),
    ("id", "Indonesian"),
    ("ar", "Arabic"),
    ("bn", "Bengali"),
    ("fi", "Finnish"),
    ("sw", "Swahili"),
    ("te", "Telugu"),
    ("th", "Thai"),
    ("jv", "Javanese"),
    ("ms", "Malay"),
    ("sq", "Albanian"),
];

/// English name for an ISO-639 code from the supported list.
pub fn language_name(iso: &str) -> Option<&'static str> {
    LANGUAGES
        .iter()
        .find(|(code, _)| *code == iso)
        .map(|(_, name)| *name)
}

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("language {0:?} is not in the supported language list")]
    UnknownLanguage(String),
    #[error("only {found} documents qualify, need {needed}")]
    InsufficientDocuments { needed: usize, found: usize },
    #[error("generation transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("generation service returned an empty response")]
    EmptyResponse,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A generated (query, document) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPair {
    pub query: String,
    pub document: String,
    pub language: String,
    pub source_doc_id: String,
    pub task: String,
}

const PROMPT_HEAD: &str = "You are a curious AI assistant, please generate one specific and \
                           valuable question based on the following text. If the text is not ";
const PROMPT_MID: &str = ", please reply with Non-";
const PROMPT_TAIL: &str = ". The generated question should revolve around the core content of \
                           this text, and avoid using pronouns (e.g., 'this'). Note that you \
                           should generate only one question, without including additional \
                           content:\n";

/// Render the question-generation prompt for a document.
///
/// Only the two language slots and the document slot are filled; the document
/// text itself is never scanned for placeholders.
pub fn render_prompt(document: &str, language_name: &str) -> String {
    let mut out = String::with_capacity(
        PROMPT_HEAD.len()
            + PROMPT_MID.len()
            + PROMPT_TAIL.len()
            + 2 * language_name.len()
            + document.len(),
    );
    out.push_str(PROMPT_HEAD);
    out.push_str(language_name);
    out.push_str(PROMPT_MID);
    out.push_str(language_name);
    out.push_str(PROMPT_TAIL);
    out.push_str(document);
    out
}

/// One request to the generation service.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub document: String,
    /// ISO-639 code from [`LANGUAGES`].
    pub language: String,
    /// English language name used inside the prompt and rejection marker.
    pub language_name: &'static str,
    pub rendered_prompt: String,
}

impl GenerationRequest {
    pub fn new(document: String, iso: &str) -> Result<Self, DatagenError> {
        let name = language_name(iso).ok_or_else(|| DatagenError::UnknownLanguage(iso.into()))?;
        let rendered_prompt = render_prompt(&document, name);
        Ok(Self {
            document,
            language: iso.to_string(),
            language_name: name,
            rendered_prompt,
        })
    }
}

/// Transport-level failure from a generation client.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// A text-generation backend. Implementations must be callable from multiple
/// threads at once.
pub trait GenerationClient: Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TransportError>;
}

impl<F> GenerationClient for F
where
    F: Fn(&GenerationRequest) -> Result<String, TransportError> + Sync,
{
    fn generate(&self, request: &GenerationRequest) -> Result<String, TransportError> {
        self(request)
    }
}

/// Deterministic offline client: the query is the first 8 whitespace tokens
/// of the document followed by `?`.
#[derive(Debug, Clone, Default)]
pub struct MockClient;

impl GenerationClient for MockClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TransportError> {
        let tokens: Vec<&str> = request.document.split_whitespace().take(8).collect();
        Ok(format!("{}?", tokens.join(" ")))
    }
}

/// Connection settings for the JSON-over-HTTP chat-completion client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationEndpoint {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    0.7
}

/// Minimal chat-completion client: one user message, one completion. The
/// credential is read from the `EMBKIT_GEN_KEY` environment variable.
pub struct HttpGenerationClient {
    config: GenerationEndpoint,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpGenerationClient {
    pub fn new(config: GenerationEndpoint) -> Self {
        let api_key = std::env::var(GEN_KEY_ENV).ok();
        Self {
            config,
            api_key,
            http: reqwest::blocking::Client::new(),
        }
    }
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

impl GenerationClient for HttpGenerationClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.rendered_prompt}],
            "temperature": self.config.temperature,
            "n": 1,
        });
        let mut post = self.http.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            post = post.bearer_auth(key);
        }
        let response = post.send().map_err(|e| TransportError(e.to_string()))?;
        if !response.status().is_success() {
            return Err(TransportError(format!("http status {}", response.status())));
        }
        let parsed: ChatResponse = response.json().map_err(|e| TransportError(e.to_string()))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| TransportError("response has no choices".into()))
    }
}

/// Retry settings for transport failures: bounded exponential backoff.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

/// Outcome of one generation call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryResult {
    Accepted(String),
    /// The service replied with the `Non-{language}` marker.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationOutcome {
    pub result: QueryResult,
    /// Number of transport attempts made, including the successful one.
    pub attempts: u32,
}

/// Call the generation service with retries, trim the response, and apply
/// the language-rejection rule.
pub fn generate_query(
    client: &dyn GenerationClient,
    request: &GenerationRequest,
    retry: &RetryPolicy,
) -> Result<GenerationOutcome, DatagenError> {
    let max_attempts = retry.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match client.generate(request) {
            Ok(raw) => {
                let text = raw.trim();
                if text.is_empty() {
                    return Err(DatagenError::EmptyResponse);
                }
                let marker = format!("Non-{}", request.language_name);
                let result = if text.starts_with(&marker) {
                    QueryResult::Rejected
                } else {
                    QueryResult::Accepted(text.to_string())
                };
                return Ok(GenerationOutcome {
                    result,
                    attempts: attempt,
                });
            }
            Err(err) => {
                if attempt >= max_attempts {
                    return Err(DatagenError::Transport {
                        attempts: attempt,
                        message: err.0,
                    });
                }
                let backoff = retry.base_delay * 2u32.pow(attempt - 1);
                if !backoff.is_zero() {
                    std::thread::sleep(backoff);
                }
            }
        }
    }
}

/// Whitespace token count used by the document length filter.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Reservoir-sample `n` documents whose whitespace-token count lies in
/// `[min_len, max_len]`. Deterministic given the seed and stream order.
pub fn sample_documents<I>(
    stream: I,
    min_len: usize,
    max_len: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Document>, DatagenError>
where
    I: IntoIterator<Item = Document>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<Document> = Vec::with_capacity(n);
    let mut qualifying = 0usize;
    for doc in stream {
        let len = token_count(&doc.text);
        if len < min_len || len > max_len {
            continue;
        }
        if reservoir.len() < n {
            reservoir.push(doc);
        } else {
            let j = rng.random_range(0..=qualifying);
            if j < n {
                reservoir[j] = doc;
            }
        }
        qualifying += 1;
    }
    if qualifying < n {
        return Err(DatagenError::InsufficientDocuments {
            needed: n,
            found: qualifying,
        });
    }
    Ok(reservoir)
}

/// Settings for one dataset build.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    /// ISO codes to generate for, in output order.
    pub languages: Vec<String>,
    pub per_language_count: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
    /// Maximum in-flight generation requests.
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl DatasetSpec {
    pub fn new(languages: Vec<String>, per_language_count: usize, seed: u64) -> Self {
        Self {
            languages,
            per_language_count,
            min_tokens: 100,
            max_tokens: 1000,
            seed,
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub accepted: u64,
    pub rejected: u64,
    pub transport_errors: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub per_language: BTreeMap<String, LanguageStats>,
}

impl GenerationStats {
    /// True when every language was sampled in full and no call failed.
    pub fn fully_successful(&self) -> bool {
        self.per_language
            .values()
            .all(|s| s.error.is_none() && s.transport_errors == 0)
    }
}

/// Run generation for a slice of requests with bounded concurrency,
/// preserving input order in the results.
fn generate_all(
    client: &dyn GenerationClient,
    requests: &[GenerationRequest],
    retry: &RetryPolicy,
    concurrency: usize,
) -> Vec<Result<GenerationOutcome, DatagenError>> {
    let concurrency = concurrency.max(1);
    let mut results = Vec::with_capacity(requests.len());
    for chunk in requests.chunks(concurrency) {
        let outcomes = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|request| scope.spawn(move || generate_query(client, request, retry)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("generation worker panicked"))
                .collect::<Vec<_>>()
        });
        results.extend(outcomes);
    }
    results
}

/// Build a synthetic pair dataset: sample documents per language, generate
/// queries, drop rejections, and write accepted pairs as JSONL together with
/// a per-language stats sidecar (`<out>.stats.json`).
///
/// A language without enough qualifying documents is recorded in the stats
/// and does not abort the other languages.
pub fn build_synthetic_dataset(
    corpus_path: &Path,
    spec: &DatasetSpec,
    client: &dyn GenerationClient,
    out_path: &Path,
) -> Result<GenerationStats, DatagenError> {
    for iso in &spec.languages {
        if language_name(iso).is_none() {
            return Err(DatagenError::UnknownLanguage(iso.clone()));
        }
    }
    let corpus: Vec<Document> = read_jsonl(corpus_path)?;
    let mut pairs: Vec<SyntheticPair> = Vec::new();
    let mut stats = GenerationStats::default();

    for iso in &spec.languages {
        let lang_stats = stats.per_language.entry(iso.clone()).or_default();
        let candidates = corpus
            .iter()
            .filter(|d| d.lang.as_deref() == Some(iso.as_str()))
            .cloned();
        let sampled = match sample_documents(
            candidates,
            spec.min_tokens,
            spec.max_tokens,
            spec.per_language_count,
            derive_seed(spec.seed, iso),
        ) {
            Ok(docs) => docs,
            Err(err @ DatagenError::InsufficientDocuments { .. }) => {
                lang_stats.error = Some(err.to_string());
                continue;
            }
            Err(other) => return Err(other),
        };

        let requests: Vec<GenerationRequest> = sampled
            .iter()
            .map(|d| GenerationRequest::new(d.text.clone(), iso))
            .collect::<Result<_, _>>()?;
        let outcomes = generate_all(client, &requests, &spec.retry, spec.concurrency);
        for (doc, outcome) in sampled.iter().zip(outcomes) {
            match outcome {
                Ok(GenerationOutcome {
                    result: QueryResult::Accepted(query),
                    ..
                }) => {
                    lang_stats.accepted += 1;
                    pairs.push(SyntheticPair {
                        query,
                        document: doc.text.clone(),
                        language: iso.clone(),
                        source_doc_id: doc.id.clone(),
                        task: SYNTHETIC_TASK.to_string(),
                    });
                }
                Ok(GenerationOutcome {
                    result: QueryResult::Rejected,
                    ..
                }) => {
                    lang_stats.rejected += 1;
                }
                Err(DatagenError::Transport { .. }) | Err(DatagenError::EmptyResponse) => {
                    lang_stats.transport_errors += 1;
                }
                Err(other) => return Err(other),
            }
        }
    }

    write_jsonl(out_path, &pairs)?;
    let stats_path = stats_sidecar_path(out_path);
    std::fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats).expect("stats serialize"),
    )?;
    Ok(stats)
}

/// Path of the stats sidecar written next to a dataset.
pub fn stats_sidecar_path(out_path: &Path) -> std::path::PathBuf {
    let mut name = out_path.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.json");
    out_path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn doc(id: &str, text: &str, lang: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
            lang: Some(lang.into()),
            task: None,
        }
    }

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn prompt_contains_document_and_language_slots() {
        let prompt = render_prompt("X", "French");
        assert!(prompt.ends_with(":\nX"));
        assert!(prompt.contains("If the text is not French, please reply with Non-French."));
        assert!(prompt.starts_with("You are a curious AI assistant"));
    }

    #[test]
    fn empty_document_renders_empty_tail() {
        let prompt = render_prompt("", "German");
        assert!(prompt.ends_with("additional content:\n"));
    }

    #[test]
    fn placeholder_text_inside_document_is_untouched() {
        let prompt = render_prompt("keep {lang} and {d} verbatim", "Thai");
        assert!(prompt.ends_with("keep {lang} and {d} verbatim"));
    }

    #[test]
    fn language_table_is_complete() {
        assert_eq!(LANGUAGES.len(), 20);
        assert_eq!(language_name("fr"), Some("French"));
        assert_eq!(language_name("sq"), Some("Albanian"));
        assert_eq!(language_name("xx"), None);
    }

    #[test]
    fn rejection_marker_is_detected() {
        let client = |_: &GenerationRequest| Ok("Non-French".to_string());
        let request = GenerationRequest::new("texte".into(), "fr").unwrap();
        let outcome = generate_query(&client, &request, &RetryPolicy::default()).unwrap();
        assert_eq!(outcome.result, QueryResult::Rejected);
        assert_eq!(outcome.attempts, 1);
    }

    #[test]
    fn responses_are_trimmed() {
        let client = |_: &GenerationRequest| Ok("  Q?  ".to_string());
        let request = GenerationRequest::new("text".into(), "en").unwrap();
        let outcome = generate_query(&client, &request, &RetryPolicy::default()).unwrap();
        assert_eq!(outcome.result, QueryResult::Accepted("Q?".into()));
    }

    #[test]
    fn retries_twice_then_succeeds() {
        let calls = AtomicU32::new(0);
        let client = |_: &GenerationRequest| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(TransportError("flaky".into()))
            } else {
                Ok("recovered?".to_string())
            }
        };
        let request = GenerationRequest::new("text".into(), "en").unwrap();
        let retry = RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::ZERO,
        };
        let outcome = generate_query(&client, &request, &retry).unwrap();
        assert_eq!(outcome.attempts, 3);
        assert_eq!(outcome.result, QueryResult::Accepted("recovered?".into()));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transport_error_after_exhausted_retries() {
        let client = |_: &GenerationRequest| -> Result<String, TransportError> {
            Err(TransportError("down".into()))
        };
        let request = GenerationRequest::new("text".into(), "en").unwrap();
        let retry = RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::ZERO,
        };
        match generate_query(&client, &request, &retry) {
            Err(DatagenError::Transport { attempts: 3, .. }) => {}
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn empty_response_is_an_error() {
        let client = |_: &GenerationRequest| Ok("   ".to_string());
        let request = GenerationRequest::new("text".into(), "en").unwrap();
        assert!(matches!(
            generate_query(&client, &request, &RetryPolicy::default()),
            Err(DatagenError::EmptyResponse)
        ));
    }

    #[test]
    fn short_documents_never_qualify() {
        let docs = (0..10).map(|i| doc(&format!("d{i}"), &words(50, "w"), "en"));
        match sample_documents(docs, 100, 1000, 3, 0) {
            Err(DatagenError::InsufficientDocuments { needed: 3, found: 0 }) => {}
            other => panic!("expected InsufficientDocuments, got {other:?}"),
        }
    }

    #[test]
    fn exactly_n_qualifying_docs_are_all_kept() {
        let docs: Vec<Document> = (0..3)
            .map(|i| doc(&format!("d{i}"), &words(150, "w"), "en"))
            .collect();
        let sampled = sample_documents(docs.clone(), 100, 1000, 3, 7).unwrap();
        let mut got: Vec<&str> = sampled.iter().map(|d| d.id.as_str()).collect();
        got.sort_unstable();
        assert_eq!(got, vec!["d0", "d1", "d2"]);
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let docs: Vec<Document> = (0..10_000)
            .map(|i| doc(&format!("d{i}"), &words(100 + i % 500, "w"), "en"))
            .collect();
        let a = sample_documents(docs.clone(), 100, 1000, 100, 42).unwrap();
        let b = sample_documents(docs.clone(), 100, 1000, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_documents(docs, 100, 1000, 100, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn boundary_lengths_are_inclusive() {
        let docs = vec![
            doc("lo", &words(100, "w"), "en"),
            doc("hi", &words(1000, "w"), "en"),
            doc("under", &words(99, "w"), "en"),
            doc("over", &words(1001, "w"), "en"),
        ];
        let sampled = sample_documents(docs, 100, 1000, 2, 0).unwrap();
        let mut got: Vec<&str> = sampled.iter().map(|d| d.id.as_str()).collect();
        got.sort_unstable();
        assert_eq!(got, vec!["hi", "lo"]);
    }

    fn corpus_file(dir: &Path, docs: &[Document]) -> std::path::PathBuf {
        let path = dir.join("corpus.jsonl");
        write_jsonl(&path, docs).unwrap();
        path
    }

    #[test]
    fn mock_dataset_two_languages() {
        let dir = tempfile::tempdir().unwrap();
        let mut docs = Vec::new();
        for i in 0..5 {
            docs.push(doc(&format!("fr{i}"), &words(120, "fr"), "fr"));
            docs.push(doc(&format!("ja{i}"), &words(120, "ja"), "ja"));
        }
        let corpus = corpus_file(dir.path(), &docs);
        let out = dir.path().join("pairs.jsonl");
        let spec = DatasetSpec::new(vec!["fr".into(), "ja".into()], 5, 1);
        let stats = build_synthetic_dataset(&corpus, &spec, &MockClient, &out).unwrap();
        assert!(stats.fully_successful());
        assert_eq!(stats.per_language["fr"].accepted, 5);
        assert_eq!(stats.per_language["ja"].accepted, 5);
        assert_eq!(stats.per_language["fr"].rejected, 0);
        let pairs: Vec<SyntheticPair> = read_jsonl(&out).unwrap();
        assert_eq!(pairs.len(), 10);
        for pair in &pairs {
            assert_eq!(pair.task, SYNTHETIC_TASK);
            assert!(!pair.query.is_empty());
        }
        assert!(stats_sidecar_path(&out).is_file());
    }

    #[test]
    fn rejecting_client_zeroes_one_language_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut docs = Vec::new();
        for i in 0..4 {
            docs.push(doc(&format!("fr{i}"), &words(120, "fr"), "fr"));
            docs.push(doc(&format!("ja{i}"), &words(120, "ja"), "ja"));
        }
        let corpus = corpus_file(dir.path(), &docs);
        let out = dir.path().join("pairs.jsonl");
        let client = |request: &GenerationRequest| {
            if request.language == "fr" {
                Ok(format!("Non-{}", request.language_name))
            } else {
                Ok("q?".to_string())
            }
        };
        let spec = DatasetSpec::new(vec!["fr".into(), "ja".into()], 4, 1);
        let stats = build_synthetic_dataset(&corpus, &spec, &client, &out).unwrap();
        assert_eq!(stats.per_language["fr"].accepted, 0);
        assert_eq!(stats.per_language["fr"].rejected, 4);
        assert_eq!(stats.per_language["ja"].accepted, 4);
        let pairs: Vec<SyntheticPair> = read_jsonl(&out).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|p| p.language == "ja"));
    }

    #[test]
    fn insufficient_language_does_not_abort_others() {
        let dir = tempfile::tempdir().unwrap();
        let mut docs = vec![doc("fr0", &words(120, "fr"), "fr")];
        for i in 0..4 {
            docs.push(doc(&format!("ja{i}"), &words(120, "ja"), "ja"));
        }
        let corpus = corpus_file(dir.path(), &docs);
        let out = dir.path().join("pairs.jsonl");
        let spec = DatasetSpec::new(vec!["fr".into(), "ja".into()], 4, 1);
        let stats = build_synthetic_dataset(&corpus, &spec, &MockClient, &out).unwrap();
        assert!(!stats.fully_successful());
        assert!(stats.per_language["fr"].error.is_some());
        assert_eq!(stats.per_language["ja"].accepted, 4);
    }

    #[test]
    fn mock_queries_are_document_prefixes() {
        let dir = tempfile::tempdir().unwrap();
        let docs: Vec<Document> = (0..50)
            .map(|i| doc(&format!("d{i}"), &words(150, &format!("tok{i}_")), "en"))
            .collect();
        let corpus = corpus_file(dir.path(), &docs);
        let out = dir.path().join("pairs.jsonl");
        let spec = DatasetSpec::new(vec!["en".into()], 50, 3);
        build_synthetic_dataset(&corpus, &spec, &MockClient, &out).unwrap();
        let pairs: Vec<SyntheticPair> = read_jsonl(&out).unwrap();
        assert_eq!(pairs.len(), 50);
        for pair in &pairs {
            let stem = pair.query.strip_suffix('?').unwrap();
            assert!(
                pair.document.starts_with(stem),
                "query {:?} is not a prefix of its document",
                pair.query
            );
        }
    }

    #[test]
    fn dataset_build_is_bit_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let docs: Vec<Document> = (0..40)
            .map(|i| doc(&format!("d{i}"), &words(100 + i, "w"), "en"))
            .collect();
        let corpus = corpus_file(dir.path(), &docs);
        let out_a = dir.path().join("a.jsonl");
        let out_b = dir.path().join("b.jsonl");
        let spec = DatasetSpec::new(vec!["en".into()], 10, 99);
        build_synthetic_dataset(&corpus, &spec, &MockClient, &out_a).unwrap();
        build_synthetic_dataset(&corpus, &spec, &MockClient, &out_b).unwrap();
        assert_eq!(
            std::fs::read(&out_a).unwrap(),
            std::fs::read(&out_b).unwrap()
        );
    }

    #[test]
    fn unknown_language_is_rejected_up_front() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = corpus_file(dir.path(), &[doc("d0", &words(150, "w"), "en")]);
        let out = dir.path().join("pairs.jsonl");
        let spec = DatasetSpec::new(vec!["tlh".into()], 1, 0);
        assert!(matches!(
            build_synthetic_dataset(&corpus, &spec, &MockClient, &out),
            Err(DatagenError::UnknownLanguage(_))
        ));
    }
}
