//! embkit: a desk-scale toolkit for retrofitting compact text embedding
//! models for retrieval.
//!
//! The pieces, in pipeline order:
//!
//! - [`datagen`] — synthetic query-document pair generation from long
//!   documents via a text-generation client (plus an offline mock).
//! - [`miner`] — exact top-k cosine search and hard-negative attachment.
//! - [`trainer`] — contrastive training loop, Adam, warmup/decay schedule,
//!   and the experiment runners (data scale, negative strategy, mixtures).
//! - [`eval`] — retrieval evaluation (nDCG@10, recall@k) and grouped
//!   aggregation.
//!
//! Everything is built around a deterministic toy bi-encoder
//! ([`model`], [`tokenizer`], [`checkpoint`]) with hand-derived gradients,
//! so the whole pipeline trains and evaluates in seconds on a laptop.

pub mod checkpoint;
pub mod data;
pub mod datagen;
pub mod eval;
pub mod fixtures;
pub mod loss;
pub mod miner;
pub mod model;
pub mod tokenizer;
pub mod trainer;
pub mod util;

pub use data::{Document, TrainingPair};
pub use model::{cosine_sim, embed_text, BiEncoder, EmbeddingVector, ModelConfig, ModelParams};
