//! Paragraph-level credit assignment.
//!
//! Token saliency is mean-pooled per paragraph, turned into a distribution
//! with a temperature softmax, mixed with the uniform distribution so every
//! paragraph keeps a floor, and finally mapped affinely into
//! `[w_min, w_max]`. Every token then inherits its paragraph's weight.

mod segment;

pub use segment::{
    segment_paragraphs, whitespace_token_offsets, Paragraph, ParagraphSegmentation, PARAGRAPH_DELIMITER,
};

use serde::{Deserialize, Serialize};

use crate::alignment::SaliencyVector;
use crate::error::{KawhiError, Result};
use crate::numerics::softmax_temperature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    /// Softmax temperature over pooled paragraph saliency.
    pub temperature: f64,
    /// Uniform-mixing coefficient; each paragraph keeps at least `smoothing / M`.
    pub smoothing: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            smoothing: 0.1,
            w_min: 0.1,
            w_max: 1.0,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(KawhiError::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(KawhiError::invalid(format!(
                "smoothing must lie in [0, 1], got {}",
                self.smoothing
            )));
        }
        if !(self.w_min.is_finite() && self.w_max.is_finite() && self.w_min < self.w_max) {
            return Err(KawhiError::invalid(format!(
                "weight range [{}, {}] must satisfy w_min < w_max",
                self.w_min, self.w_max
            )));
        }
        if self.w_min <= 0.0 {
            return Err(KawhiError::invalid("w_min must be positive so advantage signs survive"));
        }
        Ok(())
    }
}

/// Mean saliency of each paragraph's content tokens.
pub fn pool_saliency(seg: &ParagraphSegmentation, alpha: &SaliencyVector) -> Result<Vec<f64>> {
    if alpha.len() != seg.num_tokens {
        return Err(KawhiError::invalid(format!(
            "saliency covers {} tokens, response has {}",
            alpha.len(),
            seg.num_tokens
        )));
    }
    seg.paragraphs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if p.tokens.is_empty() {
                return Err(KawhiError::invalid(format!("paragraph {j} has no tokens")));
            }
            let sum: f64 = alpha.alpha[p.tokens.clone()].iter().sum();
            Ok(sum / p.tokens.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphWeights {
    pub alpha_bar: Vec<f64>,
    /// Mixed softmax; sums to 1.
    pub w_tilde: Vec<f64>,
    /// Range-mapped weights in `[w_min, w_max]`.
    pub w: Vec<f64>,
}

pub fn paragraph_weights(alpha_bar: &[f64], cfg: &WeightConfig) -> Result<ParagraphWeights> {
    cfg.validate()?;
    let m = alpha_bar.len() as f64;
    let soft = softmax_temperature(alpha_bar, cfg.temperature)?;
    let w_tilde: Vec<f64> = soft
        .iter()
        .map(|p| (1.0 - cfg.smoothing) * p + cfg.smoothing / m)
        .collect();
    let span = cfg.w_max - cfg.w_min;
    let w = w_tilde
        .iter()
        .map(|wt| (cfg.w_min + span * wt).clamp(cfg.w_min, cfg.w_max))
        .collect();
    Ok(ParagraphWeights {
        alpha_bar: alpha_bar.to_vec(),
        w_tilde,
        w,
    })
}

/// Per-token weights: each token (delimiter tokens included) takes its owner's `w_j`.
pub fn broadcast_token_weights(seg: &ParagraphSegmentation, weights: &ParagraphWeights) -> Result<Vec<f64>> {
    if weights.w.len() != seg.len() {
        return Err(KawhiError::invalid(format!(
            "{} weights for {} paragraphs",
            weights.w.len(),
            seg.len()
        )));
    }
    let mut out = vec![0.0; seg.num_tokens];
    for (p, &w) in seg.paragraphs.iter().zip(&weights.w) {
        out[p.owned.clone()].fill(w);
    }
    Ok(out)
}

/// Convenience chain: pool, weigh, broadcast.
pub fn response_token_weights(
    seg: &ParagraphSegmentation,
    alpha: &SaliencyVector,
    cfg: &WeightConfig,
) -> Result<(ParagraphWeights, Vec<f64>)> {
    let pooled = pool_saliency(seg, alpha)?;
    let weights = paragraph_weights(&pooled, cfg)?;
    let tokens = broadcast_token_weights(seg, &weights)?;
    Ok((weights, tokens))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphEntry {
    /// Owned token range `[start, end)`.
    pub span: [usize; 2],
    pub alpha_bar: f64,
    pub w_tilde: f64,
    pub w: f64,
}

/// JSON weight report: `{paragraphs: [{span, alpha_bar, w_tilde, w}], token_weights: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub paragraphs: Vec<ParagraphEntry>,
    pub token_weights: Vec<f64>,
}

impl WeightTable {
    pub fn new(seg: &ParagraphSegmentation, weights: &ParagraphWeights, token_weights: Vec<f64>) -> Self {
        let paragraphs = seg
            .paragraphs
            .iter()
            .enumerate()
            .map(|(j, p)| ParagraphEntry {
                span: [p.owned.start, p.owned.end],
                alpha_bar: weights.alpha_bar[j],
                w_tilde: weights.w_tilde[j],
                w: weights.w[j],
            })
            .collect();
        Self {
            paragraphs,
            token_weights,
        }
    }
}
