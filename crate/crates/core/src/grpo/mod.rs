//! Group-relative advantages, the clipped surrogate and the weighting hook.
//!
//! Rewards are standardized within a group, broadcast to every token of the
//! response, optionally multiplied by per-token paragraph weights, and fed
//! to a PPO-style clipped surrogate. No KL term is applied.

mod rollout;

pub use rollout::{Response, RolloutGroup};

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipConfig {
    /// Half-width of the ratio clip band.
    pub clip_epsilon: f64,
    /// Added to the group standard deviation before dividing.
    pub std_epsilon: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            std_epsilon: 1e-4,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(KawhiError::invalid(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.std_epsilon > 0.0 && self.std_epsilon.is_finite()) {
            return Err(KawhiError::invalid(format!(
                "std_epsilon must be positive, got {}",
                self.std_epsilon
            )));
        }
        Ok(())
    }
}

/// `A_g = (R_g - mean) / (sigma + std_epsilon)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], std_epsilon: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(KawhiError::invalid("empty reward group"));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(KawhiError::Numeric {
            index: i,
            detail: "non-finite reward".into(),
        });
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + std_epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// `r_t = exp(logp_new_t - logp_old_t)`.
pub fn importance_ratios(logp_new: &[f64], logp_old: &[f64]) -> Result<Vec<f64>> {
    if logp_new.len() != logp_old.len() {
        return Err(KawhiError::invalid(format!(
            "{} new log-probs vs {} old",
            logp_new.len(),
            logp_old.len()
        )));
    }
    logp_new
        .iter()
        .zip(logp_old)
        .enumerate()
        .map(|(t, (n, o))| {
            let r = (n - o).exp();
            if r.is_finite() {
                Ok(r)
            } else {
                Err(KawhiError::Numeric {
                    index: t,
                    detail: format!("importance ratio exp({n} - {o}) is not finite"),
                })
            }
        })
        .collect()
}

fn clip_ratio(r: f64, eps: f64) -> f64 {
    r.clamp(1.0 - eps, 1.0 + eps)
}

/// `l_t = min(r_t A_t, clip(r_t, 1 - eps, 1 + eps) A_t)`.
pub fn clipped_surrogate(ratios: &[f64], advantages: &[f64], cfg: &ClipConfig) -> Result<Vec<f64>> {
    check_pair(ratios, advantages)?;
    Ok(ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(clip_ratio(r, cfg.clip_epsilon) * a))
        .collect())
}

/// `d l_t / d logp_new_t`: `r_t A_t` while the unclipped term is the minimum, else 0.
pub fn surrogate_logp_gradient(ratios: &[f64], advantages: &[f64], cfg: &ClipConfig) -> Result<Vec<f64>> {
    check_pair(ratios, advantages)?;
    Ok(ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| {
            let clipped = clip_ratio(r, cfg.clip_epsilon);
            if r * a <= clipped * a || clipped == r {
                r * a
            } else {
                0.0
            }
        })
        .collect())
}

fn check_pair(ratios: &[f64], advantages: &[f64]) -> Result<()> {
    if ratios.len() != advantages.len() {
        return Err(KawhiError::invalid(format!(
            "{} ratios vs {} advantages",
            ratios.len(),
            advantages.len()
        )));
    }
    Ok(())
}

/// Scalar, per-token and weighted advantages for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageField {
    /// `A_g`.
    pub response: Vec<f64>,
    /// `A_{g,t}`, equal to `A_g` at every position.
    pub token: Vec<Vec<f64>>,
    /// `A_{g,t} * w_j` once weights are applied.
    pub weighted: Option<Vec<Vec<f64>>>,
}

impl AdvantageField {
    /// Broadcast `A_g` over responses of the given lengths.
    pub fn broadcast(response: Vec<f64>, lengths: &[usize]) -> Result<Self> {
        if response.len() != lengths.len() {
            return Err(KawhiError::invalid("one advantage per response required"));
        }
        let token = response.iter().zip(lengths).map(|(&a, &n)| vec![a; n]).collect();
        Ok(Self {
            response,
            token,
            weighted: None,
        })
    }

    /// Advantages fed to the surrogate: weighted when present, raw otherwise.
    pub fn effective(&self) -> &[Vec<f64>] {
        self.weighted.as_deref().unwrap_or(&self.token)
    }
}

/// Standardize the group's rewards and broadcast them over its tokens.
/// Paragraph weights carried by the responses are applied when every
/// response has them.
pub fn compute_advantages(group: &RolloutGroup, cfg: &ClipConfig) -> Result<AdvantageField> {
    group.validate()?;
    let adv = group_advantages(&group.rewards(), cfg.std_epsilon)?;
    let field = AdvantageField::broadcast(adv, &group.lengths())?;
    match group.token_weights()? {
        Some(weights) => apply_kawhi_weights(field, &weights),
        None => Ok(field),
    }
}

/// `Â_{g,t} = A_{g,t} * w_t`, where `w_t` is the weight of the token's paragraph.
pub fn apply_kawhi_weights(mut adv: AdvantageField, token_weights: &[Vec<f64>]) -> Result<AdvantageField> {
    if token_weights.len() != adv.token.len() {
        return Err(KawhiError::invalid(format!(
            "weights for {} responses, group has {}",
            token_weights.len(),
            adv.token.len()
        )));
    }
    let mut weighted = Vec::with_capacity(adv.token.len());
    for (g, (a, w)) in adv.token.iter().zip(token_weights).enumerate() {
        if a.len() != w.len() {
            return Err(KawhiError::invalid(format!(
                "response {g}: {} token weights for {} tokens",
                w.len(),
                a.len()
            )));
        }
        if let Some(t) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(KawhiError::invalid(format!(
                "response {g}: token weight {} at {t} is not positive",
                w[t]
            )));
        }
        weighted.push(a.iter().zip(w).map(|(a, w)| a * w).collect());
    }
    adv.weighted = Some(weighted);
    Ok(adv)
}

/// Objective value plus `dJ/d logp_new` per response token.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveTerms {
    pub value: f64,
    pub logp_gradient: Vec<Vec<f64>>,
}

/// `J = (1/G) Σ_g (1/T_g) Σ_t l_{g,t}` over the supplied advantages.
pub fn objective_terms(group: &RolloutGroup, adv: &AdvantageField, cfg: &ClipConfig) -> Result<ObjectiveTerms> {
    cfg.validate()?;
    let effective = adv.effective();
    if effective.len() != group.len() {
        return Err(KawhiError::invalid("advantage field does not match the group"));
    }
    let g = group.len() as f64;
    let mut value = 0.0;
    let mut logp_gradient = Vec::with_capacity(group.len());
    for (resp, a) in group.responses.iter().zip(effective) {
        let r = importance_ratios(&resp.logp_new, &resp.logp_old)?;
        let t = r.len() as f64;
        let l = clipped_surrogate(&r, a, cfg)?;
        value += l.iter().sum::<f64>() / t;
        let dl = surrogate_logp_gradient(&r, a, cfg)?;
        logp_gradient.push(dl.into_iter().map(|d| d / (g * t)).collect());
    }
    Ok(ObjectiveTerms {
        value: value / g,
        logp_gradient,
    })
}

/// GRPO objective, using KAWHI-weighted advantages when the group carries weights.
pub fn grpo_objective(group: &RolloutGroup, cfg: &ClipConfig) -> Result<f64> {
    let adv = compute_advantages(group, cfg)?;
    Ok(objective_terms(group, &adv, cfg)?.value)
}
