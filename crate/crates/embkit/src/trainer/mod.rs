//! Contrastive training loop: Adam with warmup/linear-decay scheduling over
//! the bi-encoder, plus the experiment runners in [`experiments`].

pub mod experiments;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainingPair;
use crate::loss::{
    combined_loss, hard_negative_loss, in_batch_loss, LossConfig, LossError, LossVariant,
    SimilarityBlock,
};
use crate::model::{
    backward_batch, cosine_sim, embed_text, BiEncoder, EmbeddingVector, Gradients, ModelError,
    ModelParams,
};
use crate::tokenizer::tokenize;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("step {step} out of schedule range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("non-finite gradient in tensor {0}; step aborted")]
    NonFiniteGradient(&'static str),
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("pair {index}: {message}")]
    BadPair { index: usize, message: String },
    #[error("step {step}: {source}")]
    Model {
        step: u64,
        #[source]
        source: ModelError,
    },
    #[error("step {step}: {source}")]
    Loss {
        step: u64,
        #[source]
        source: LossError,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("source {0:?} is empty")]
    EmptySource(String),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Miner(#[from] crate::miner::MinerError),
    #[error(transparent)]
    Jsonl(#[from] crate::data::JsonlError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters. `total_steps` has no meaningful default and must
/// always be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: u64,
    pub total_steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss: LossConfig,
    /// Train only the adapter factors; base tensors stay bitwise frozen.
    #[serde(default)]
    pub adapter_only: bool,
}

fn default_batch_size() -> usize {
    64
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_warmup_steps() -> u64 {
    100
}

impl LossConfig {
    fn requires_mined_negatives(&self) -> bool {
        self.variant != LossVariant::InBatch
    }
}

impl TrainerConfig {
    pub fn desk(total_steps: u64) -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            warmup_steps: default_warmup_steps(),
            total_steps,
            seed: 0,
            loss: LossConfig::default(),
            adapter_only: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainerError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.total_steps > 0 && self.warmup_steps > self.total_steps {
            return Err(TrainerError::InvalidConfig(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.loss.variant == LossVariant::InBatch && self.batch_size < 2 {
            return Err(TrainerError::InvalidConfig(
                "in-batch loss needs batch_size >= 2".into(),
            ));
        }
        self.loss
            .validate()
            .map_err(|e| TrainerError::InvalidConfig(e.to_string()))
    }
}

/// Learning rate at a step: linear ramp from 0 over `[0, warmup_steps]`, then
/// linear decay to 0 at `total_steps`.
pub fn lr_at(step: u64, cfg: &TrainerConfig) -> Result<f64, TrainerError> {
    if step > cfg.total_steps {
        return Err(TrainerError::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.learning_rate * step as f64 / cfg.warmup_steps as f64);
    }
    let span = cfg.total_steps - cfg.warmup_steps;
    if span == 0 {
        return Ok(0.0);
    }
    Ok(cfg.learning_rate * (cfg.total_steps - step) as f64 / span as f64)
}

#[derive(Debug, Clone, PartialEq)]
struct MomentPair {
    m: Array2<f64>,
    v: Array2<f64>,
}

impl MomentPair {
    fn zeros(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }
}

/// Adam first/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    t: u64,
    embed: MomentPair,
    proj: MomentPair,
    lora_a: Option<MomentPair>,
    lora_b: Option<MomentPair>,
}

impl AdamState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            t: 0,
            embed: MomentPair::zeros(params.embed.dim()),
            proj: MomentPair::zeros(params.proj.dim()),
            lora_a: params.lora.as_ref().map(|l| MomentPair::zeros(l.a.dim())),
            lora_b: params.lora.as_ref().map(|l| MomentPair::zeros(l.b.dim())),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    fn matches(&self, params: &ModelParams) -> bool {
        self.embed.m.dim() == params.embed.dim()
            && self.proj.m.dim() == params.proj.dim()
            && self.lora_a.as_ref().map(|p| p.m.dim())
                == params.lora.as_ref().map(|l| l.a.dim())
            && self.lora_b.as_ref().map(|p| p.m.dim())
                == params.lora.as_ref().map(|l| l.b.dim())
    }
}

fn adam_update_tensor(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    moments: &mut MomentPair,
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    for ((p, g), (m, v)) in param
        .iter_mut()
        .zip(grad.iter())
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

/// One bias-corrected Adam update. Frozen base tensors (gradients flagged
/// `base_frozen`) are left bitwise untouched, moments included.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainerError> {
    if !state.matches(params) {
        return Err(TrainerError::InvalidConfig(
            "optimizer state shapes do not match parameters".into(),
        ));
    }
    if let Some(tensor) = grads.has_non_finite() {
        return Err(TrainerError::NonFiniteGradient(tensor));
    }
    state.t += 1;
    let bias1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bias2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    if !grads.base_frozen {
        adam_update_tensor(&mut params.embed, &grads.embed, &mut state.embed, lr, bias1, bias2);
        adam_update_tensor(&mut params.proj, &grads.proj, &mut state.proj, lr, bias1, bias2);
    }
    if let (Some(lora), Some(ga), Some(gb)) = (
        params.lora.as_mut(),
        grads.lora_a.as_ref(),
        grads.lora_b.as_ref(),
    ) {
        adam_update_tensor(&mut lora.a, ga, state.lora_a.as_mut().unwrap(), lr, bias1, bias2);
        adam_update_tensor(&mut lora.b, gb, state.lora_b.as_mut().unwrap(), lr, bias1, bias2);
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

struct TokenizedPair {
    query: Vec<usize>,
    pos: Vec<usize>,
    negs: Vec<Vec<usize>>,
}

fn tokenize_pairs(
    model: &BiEncoder,
    pairs: &[TrainingPair],
    need_negatives: usize,
) -> Result<Vec<TokenizedPair>, TrainerError> {
    pairs
        .iter()
        .enumerate()
        .map(|(index, pair)| {
            if pair.negs.len() < need_negatives {
                return Err(TrainerError::BadPair {
                    index,
                    message: format!(
                        "has {} negatives, loss needs {}",
                        pair.negs.len(),
                        need_negatives
                    ),
                });
            }
            let query = tokenize(&pair.query, &model.tokenizer, true);
            if query.is_empty() {
                return Err(TrainerError::BadPair {
                    index,
                    message: "query tokenizes to nothing".into(),
                });
            }
            let pos = tokenize(&pair.pos, &model.tokenizer, false);
            if pos.is_empty() {
                return Err(TrainerError::BadPair {
                    index,
                    message: "positive tokenizes to nothing".into(),
                });
            }
            let negs = pair
                .negs
                .iter()
                .take(need_negatives)
                .enumerate()
                .map(|(j, text)| {
                    let ids = tokenize(text, &model.tokenizer, false);
                    if ids.is_empty() {
                        Err(TrainerError::BadPair {
                            index,
                            message: format!("negative {j} tokenizes to nothing"),
                        })
                    } else {
                        Ok(ids)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TokenizedPair { query, pos, negs })
        })
        .collect()
}

/// Embed a list of token sequences, tagging errors with the training step.
fn embed_all(
    params: &ModelParams,
    sequences: &[&Vec<usize>],
    step: u64,
) -> Result<Vec<EmbeddingVector>, TrainerError> {
    sequences
        .iter()
        .map(|ids| embed_text(params, ids).map_err(|source| TrainerError::Model { step, source }))
        .collect()
}

/// Train the model in place and return the per-step log. Deterministic for a
/// fixed seed: data order, initialization, and arithmetic are all seeded or
/// fixed.
pub fn train(
    model: &mut BiEncoder,
    pairs: &[TrainingPair],
    cfg: &TrainerConfig,
) -> Result<Vec<StepLog>, TrainerError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainerError::InsufficientData("no training pairs".into()));
    }
    if cfg.adapter_only && model.params.lora.is_none() {
        return Err(TrainerError::InvalidConfig(
            "adapter_only training requires an adapter (lora_rank > 0)".into(),
        ));
    }
    let k = if cfg.loss.requires_mined_negatives() {
        cfg.loss.num_negatives
    } else {
        0
    };
    let tokenized = tokenize_pairs(model, pairs, k)?;
    let batch = cfg.batch_size.min(pairs.len());
    if cfg.loss.variant == LossVariant::InBatch && batch < 2 {
        return Err(TrainerError::InsufficientData(
            "in-batch loss needs at least 2 pairs".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut state = AdamState::zeros_like(&model.params);
    let mut logs = Vec::with_capacity(cfg.total_steps as usize);

    for step in 1..=cfg.total_steps {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch_ids = &order[cursor..cursor + batch];
        cursor += batch;

        let loss = train_step(model, &tokenized, batch_ids, cfg, &mut state, step)?;
        let lr = lr_at(step, cfg)?;
        logs.push(StepLog { step, lr, loss });
    }
    Ok(logs)
}

fn train_step(
    model: &mut BiEncoder,
    tokenized: &[TokenizedPair],
    batch_ids: &[usize],
    cfg: &TrainerConfig,
    state: &mut AdamState,
    step: u64,
) -> Result<f64, TrainerError> {
    let n = batch_ids.len();
    let k = if cfg.loss.requires_mined_negatives() {
        cfg.loss.num_negatives
    } else {
        0
    };
    let params = &model.params;
    let d_out = params.d_out();

    let query_seqs: Vec<&Vec<usize>> = batch_ids.iter().map(|&i| &tokenized[i].query).collect();
    let pos_seqs: Vec<&Vec<usize>> = batch_ids.iter().map(|&i| &tokenized[i].pos).collect();
    let neg_seqs: Vec<&Vec<usize>> = batch_ids
        .iter()
        .flat_map(|&i| tokenized[i].negs.iter().take(k))
        .collect();

    let queries = embed_all(params, &query_seqs, step)?;
    let positives = embed_all(params, &pos_seqs, step)?;
    let negatives = embed_all(params, &neg_seqs, step)?;

    let pos_sims = Array1::from_shape_fn(n, |i| cosine_sim(&queries[i], &positives[i]));
    let neg_sims = Array2::from_shape_fn((n, k), |(i, j)| {
        cosine_sim(&queries[i], &negatives[i * k + j])
    });
    let needs_inbatch = cfg.loss.variant != LossVariant::HardNegatives;
    let inbatch_sims = needs_inbatch.then(|| {
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                pos_sims[i]
            } else {
                cosine_sim(&queries[i], &positives[j])
            }
        })
    });

    // Map similarity gradients onto per-embedding upstream gradients.
    let mut d_queries = vec![Array1::<f64>::zeros(d_out); n];
    let mut d_positives = vec![Array1::<f64>::zeros(d_out); n];
    let mut d_negatives = vec![Array1::<f64>::zeros(d_out); n * k];

    let loss_value = match cfg.loss.variant {
        LossVariant::InBatch => {
            let block = SimilarityBlock::in_batch(inbatch_sims.unwrap());
            let (loss, d_s) =
                in_batch_loss(&block, &cfg.loss).map_err(|source| TrainerError::Loss {
                    step,
                    source,
                })?;
            for i in 0..n {
                for j in 0..n {
                    let g = d_s[(i, j)];
                    if g != 0.0 {
                        d_queries[i].scaled_add(g, positives[j].values());
                        d_positives[j].scaled_add(g, queries[i].values());
                    }
                }
            }
            loss
        }
        LossVariant::HardNegatives => {
            let block = SimilarityBlock::hard(pos_sims, neg_sims);
            let (loss, d_pos, d_neg) =
                hard_negative_loss(&block, &cfg.loss).map_err(|source| TrainerError::Loss {
                    step,
                    source,
                })?;
            for i in 0..n {
                d_queries[i].scaled_add(d_pos[i], positives[i].values());
                d_positives[i].scaled_add(d_pos[i], queries[i].values());
                for j in 0..k {
                    let g = d_neg[(i, j)];
                    d_queries[i].scaled_add(g, negatives[i * k + j].values());
                    d_negatives[i * k + j].scaled_add(g, queries[i].values());
                }
            }
            loss
        }
        LossVariant::Combined => {
            let block = SimilarityBlock::combined(pos_sims, neg_sims, inbatch_sims.unwrap());
            let (loss, grads) =
                combined_loss(&block, &cfg.loss).map_err(|source| TrainerError::Loss {
                    step,
                    source,
                })?;
            for i in 0..n {
                d_queries[i].scaled_add(grads.d_pos[i], positives[i].values());
                d_positives[i].scaled_add(grads.d_pos[i], queries[i].values());
                for j in 0..k {
                    let g = grads.d_neg[(i, j)];
                    d_queries[i].scaled_add(g, negatives[i * k + j].values());
                    d_negatives[i * k + j].scaled_add(g, queries[i].values());
                }
                for j in 0..n {
                    let g = grads.d_inbatch[(i, j)];
                    if g != 0.0 {
                        d_queries[i].scaled_add(g, positives[j].values());
                        d_positives[j].scaled_add(g, queries[i].values());
                    }
                }
            }
            loss
        }
    };

    let mut sequences: Vec<Vec<usize>> = Vec::with_capacity(n * (2 + k));
    let mut upstream: Vec<Array1<f64>> = Vec::with_capacity(n * (2 + k));
    for (seq, grad) in query_seqs.iter().zip(d_queries) {
        sequences.push((*seq).clone());
        upstream.push(grad);
    }
    for (seq, grad) in pos_seqs.iter().zip(d_positives) {
        sequences.push((*seq).clone());
        upstream.push(grad);
    }
    for (seq, grad) in neg_seqs.iter().zip(d_negatives) {
        sequences.push((*seq).clone());
        upstream.push(grad);
    }

    let grads = backward_batch(&model.params, &sequences, &upstream, cfg.adapter_only)
        .map_err(|source| TrainerError::Model { step, source })?;
    let lr = lr_at(step, cfg)?;
    adam_step(&mut model.params, &grads, state, lr)?;
    Ok(loss_value)
}
