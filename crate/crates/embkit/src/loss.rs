//! Temperature-scaled contrastive loss over cosine similarities, in three
//! variants:
//!
//! - `HardNegatives`: each query is scored against its positive and K
//!   explicitly mined negatives.
//! - `InBatch`: each query is scored against all positives in the
//!   mini-batch; the other rows' positives serve as negatives.
//! - `Combined`: the denominator holds the positive, the K mined negatives,
//!   and the N-1 other in-batch positives.
//!
//! All variants share one row kernel (softmax NLL with a max-shift), so the
//! Combined variant reduces bitwise to `InBatch` at K=0 and to
//! `HardNegatives` at N=1.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("temperature must be positive, got {0}")]
    TemperatureNonPositive(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("in-batch similarity matrix is {rows}x{cols}, not square")]
    NotSquare { rows: usize, cols: usize },
    #[error("operation requires variant {expected:?}, config says {found:?}")]
    WrongVariant {
        expected: LossVariant,
        found: LossVariant,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    InBatch,
    HardNegatives,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature; similarities are divided by this before
    /// exponentiation.
    pub temperature: f64,
    /// Number of explicit negatives per query (K).
    pub num_negatives: usize,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.02,
            num_negatives: 7,
            variant: LossVariant::HardNegatives,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.temperature <= 0.0 {
            return Err(LossError::TemperatureNonPositive(self.temperature));
        }
        if self.variant == LossVariant::HardNegatives && self.num_negatives == 0 {
            return Err(LossError::ShapeMismatch(
                "hard-negatives variant requires at least one negative".into(),
            ));
        }
        Ok(())
    }
}

/// Cosine similarities for one mini-batch of N queries.
#[derive(Debug, Clone)]
pub struct SimilarityBlock {
    /// `pos[i]` = sim(query i, its own positive).
    pub pos: Array1<f64>,
    /// `neg[(i, j)]` = sim(query i, its j-th mined negative).
    pub neg: Option<Array2<f64>>,
    /// `inbatch[(i, j)]` = sim(query i, row j's positive). The diagonal
    /// holds each query's own positive similarity.
    pub inbatch: Option<Array2<f64>>,
}

impl SimilarityBlock {
    pub fn hard(pos: Array1<f64>, neg: Array2<f64>) -> Self {
        Self {
            pos,
            neg: Some(neg),
            inbatch: None,
        }
    }

    pub fn in_batch(inbatch: Array2<f64>) -> Self {
        let pos = inbatch.diag().to_owned();
        Self {
            pos,
            neg: None,
            inbatch: Some(inbatch),
        }
    }

    pub fn combined(pos: Array1<f64>, neg: Array2<f64>, inbatch: Array2<f64>) -> Self {
        Self {
            pos,
            neg: Some(neg),
            inbatch: Some(inbatch),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.pos.len()
    }
}

/// Gradients of the Combined variant with respect to every similarity that
/// enters its denominator. The `inbatch` diagonal is zero: the positive's
/// gradient lives in `pos`.
#[derive(Debug, Clone)]
pub struct CombinedGrads {
    pub d_pos: Array1<f64>,
    pub d_neg: Array2<f64>,
    pub d_inbatch: Array2<f64>,
}

/// Softmax NLL over one row of similarities with the max-shift trick.
///
/// Returns the row loss and d(row loss)/d(entry); callers scale by 1/N.
fn row_nll(entries: &[f64], positive: usize, tau: f64) -> (f64, Vec<f64>) {
    debug_assert!(!entries.is_empty());
    let max = entries.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exp_sum = 0.0;
    let mut probs = Vec::with_capacity(entries.len());
    for &e in entries {
        let x = ((e - max) / tau).exp();
        probs.push(x);
        exp_sum += x;
    }
    let loss = exp_sum.ln() - (entries[positive] - max) / tau;
    for (j, p) in probs.iter_mut().enumerate() {
        let soft = *p / exp_sum;
        *p = if j == positive { soft - 1.0 } else { soft } / tau;
    }
    (loss, probs)
}

fn check_temperature(cfg: &LossConfig) -> Result<(), LossError> {
    if cfg.temperature <= 0.0 {
        return Err(LossError::TemperatureNonPositive(cfg.temperature));
    }
    Ok(())
}

fn require_variant(cfg: &LossConfig, expected: LossVariant) -> Result<(), LossError> {
    if cfg.variant != expected {
        return Err(LossError::WrongVariant {
            expected,
            found: cfg.variant,
        });
    }
    Ok(())
}

/// Contrastive loss with explicit negatives:
/// `-(1/N) sum_i log[exp(pos_i/t) / (exp(pos_i/t) + sum_j exp(neg_ij/t))]`.
///
/// Returns the loss together with dL/d_pos `[N]` and dL/d_neg `[N x K]`.
pub fn hard_negative_loss(
    block: &SimilarityBlock,
    cfg: &LossConfig,
) -> Result<(f64, Array1<f64>, Array2<f64>), LossError> {
    require_variant(cfg, LossVariant::HardNegatives)?;
    check_temperature(cfg)?;
    let neg = block
        .neg
        .as_ref()
        .ok_or_else(|| LossError::ShapeMismatch("hard_negative_loss needs `neg`".into()))?;
    let n = block.batch_size();
    if n == 0 {
        return Err(LossError::ShapeMismatch("batch size must be >= 1".into()));
    }
    if neg.nrows() != n {
        return Err(LossError::ShapeMismatch(format!(
            "neg has {} rows for {} queries",
            neg.nrows(),
            n
        )));
    }
    if neg.ncols() != cfg.num_negatives {
        return Err(LossError::ShapeMismatch(format!(
            "neg has {} columns, config says K={}",
            neg.ncols(),
            cfg.num_negatives
        )));
    }
    let k = neg.ncols();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut d_pos = Array1::zeros(n);
    let mut d_neg = Array2::zeros((n, k));
    let mut entries = Vec::with_capacity(1 + k);
    for i in 0..n {
        entries.clear();
        entries.push(block.pos[i]);
        entries.extend(neg.row(i).iter());
        let (loss, grad) = row_nll(&entries, 0, cfg.temperature);
        total += loss * inv_n;
        d_pos[i] = grad[0] * inv_n;
        for j in 0..k {
            d_neg[(i, j)] = grad[1 + j] * inv_n;
        }
    }
    Ok((total, d_pos, d_neg))
}

/// In-batch (vanilla) contrastive loss: row i's softmax over the N batch
/// positives, evaluated at column i.
///
/// Returns the loss and dL/d_inbatch `[N x N]` (including the diagonal).
pub fn in_batch_loss(
    block: &SimilarityBlock,
    cfg: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    require_variant(cfg, LossVariant::InBatch)?;
    check_temperature(cfg)?;
    let inbatch = block
        .inbatch
        .as_ref()
        .ok_or_else(|| LossError::ShapeMismatch("in_batch_loss needs `inbatch`".into()))?;
    if inbatch.nrows() != inbatch.ncols() {
        return Err(LossError::NotSquare {
            rows: inbatch.nrows(),
            cols: inbatch.ncols(),
        });
    }
    let n = inbatch.nrows();
    if n == 0 {
        return Err(LossError::ShapeMismatch("batch size must be >= 1".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut d_inbatch = Array2::zeros((n, n));
    for i in 0..n {
        let row: Vec<f64> = inbatch.row(i).iter().copied().collect();
        let (loss, grad) = row_nll(&row, i, cfg.temperature);
        total += loss * inv_n;
        for j in 0..n {
            d_inbatch[(i, j)] = grad[j] * inv_n;
        }
    }
    Ok((total, d_inbatch))
}

/// Combined denominator: for row i the softmax runs over the positive, the
/// N-1 other in-batch positives, and the K mined negatives.
///
/// The positive similarity is taken from `pos`; the `inbatch` diagonal is
/// ignored (callers fill it with the same values).
pub fn combined_loss(
    block: &SimilarityBlock,
    cfg: &LossConfig,
) -> Result<(f64, CombinedGrads), LossError> {
    require_variant(cfg, LossVariant::Combined)?;
    check_temperature(cfg)?;
    let neg = block
        .neg
        .as_ref()
        .ok_or_else(|| LossError::ShapeMismatch("combined_loss needs `neg`".into()))?;
    let inbatch = block
        .inbatch
        .as_ref()
        .ok_or_else(|| LossError::ShapeMismatch("combined_loss needs `inbatch`".into()))?;
    if inbatch.nrows() != inbatch.ncols() {
        return Err(LossError::NotSquare {
            rows: inbatch.nrows(),
            cols: inbatch.ncols(),
        });
    }
    let n = block.batch_size();
    if inbatch.nrows() != n || neg.nrows() != n {
        return Err(LossError::ShapeMismatch(format!(
            "pos has {} rows, inbatch {}, neg {}",
            n,
            inbatch.nrows(),
            neg.nrows()
        )));
    }
    if neg.ncols() != cfg.num_negatives {
        return Err(LossError::ShapeMismatch(format!(
            "neg has {} columns, config says K={}",
            neg.ncols(),
            cfg.num_negatives
        )));
    }
    let k = neg.ncols();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grads = CombinedGrads {
        d_pos: Array1::zeros(n),
        d_neg: Array2::zeros((n, k)),
        d_inbatch: Array2::zeros((n, n)),
    };
    // Row layout: the in-batch row with its diagonal replaced by pos[i],
    // then the K mined negatives. This makes the K=0 case bitwise-identical
    // to in_batch_loss and the N=1 case bitwise-identical to
    // hard_negative_loss.
    let mut entries = Vec::with_capacity(n + k);
    for i in 0..n {
        entries.clear();
        for j in 0..n {
            entries.push(if j == i { block.pos[i] } else { inbatch[(i, j)] });
        }
        entries.extend(neg.row(i).iter());
        let (loss, grad) = row_nll(&entries, i, cfg.temperature);
        total += loss * inv_n;
        for j in 0..n {
            if j == i {
                grads.d_pos[i] = grad[j] * inv_n;
            } else {
                grads.d_inbatch[(i, j)] = grad[j] * inv_n;
            }
        }
        for j in 0..k {
            grads.d_neg[(i, j)] = grad[n + j] * inv_n;
        }
    }
    Ok((total, grads))
}
