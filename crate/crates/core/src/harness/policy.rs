//! Desk-scale stand-in for a vision-language policy.
//!
//! A single frozen cross-attention layer lets each response position read
//! the visual tokens through `H_q` query heads sharing `H_k` key heads. The
//! only trainable parameters are the linear readout from
//! `[token input | per-head context | 1]` to the vocabulary. Decoding is
//! constrained to a fixed multi-paragraph template, so every response has
//! real `"\n\n"` structure and ends in an answer digit.

use std::ops::Range;

use crate::alignment::{AttentionStates, HeadConfig};
use crate::error::{KawhiError, Result};
use crate::geometry::StructureTensorField;
use crate::numerics::{SeededRng, Tensor};

use super::task::{MAX_STROKES, WORDS};

/// Token ids.
pub struct Vocab;

impl Vocab {
    pub const BOS: u32 = 0;
    pub const PARA: u32 = 1;
    pub const FIRST_WORD: u32 = 2;
    pub const FIRST_ANSWER: u32 = Self::FIRST_WORD + WORDS.len() as u32;
    pub const SIZE: usize = Self::FIRST_ANSWER as usize + MAX_STROKES + 1;
}

pub fn answer_token(n: usize) -> u32 {
    Vocab::FIRST_ANSWER + n as u32
}

pub fn decode_answer(token: u32) -> Option<usize> {
    (Vocab::FIRST_ANSWER..Vocab::SIZE as u32)
        .contains(&token)
        .then(|| (token - Vocab::FIRST_ANSWER) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Word,
    Para,
    Answer,
}

impl Slot {
    pub fn allowed(self) -> Range<u32> {
        match self {
            Slot::Word => Vocab::FIRST_WORD..Vocab::FIRST_ANSWER,
            Slot::Para => Vocab::PARA..Vocab::PARA + 1,
            Slot::Answer => Vocab::FIRST_ANSWER..Vocab::SIZE as u32,
        }
    }
}

/// Response layout: three paragraphs of 3, 2 and 1 tokens.
pub const TEMPLATE: [Slot; 8] = [
    Slot::Word,
    Slot::Word,
    Slot::Word,
    Slot::Para,
    Slot::Word,
    Slot::Word,
    Slot::Para,
    Slot::Answer,
];

/// Text of a response plus each token's byte span.
pub fn render_response(tokens: &[u32]) -> (String, Vec<(usize, usize)>) {
    let mut text = String::new();
    let mut offsets = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let piece = if t == Vocab::PARA {
            "\n\n".to_string()
        } else if let Some(n) = decode_answer(t) {
            n.to_string()
        } else if t >= Vocab::FIRST_WORD {
            WORDS[(t - Vocab::FIRST_WORD) as usize].to_string()
        } else {
            "<s>".to_string()
        };
        if t != Vocab::PARA && !text.is_empty() && !text.ends_with('\n') {
            text.push(' ');
        }
        let start = text.len();
        text.push_str(&piece);
        offsets.push((start, text.len()));
    }
    (text, offsets)
}

const PATCH_FEATURES: usize = 8;

/// Per-image keys and values, `[N, H_k, d]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualContext {
    pub num_tokens: usize,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

/// One sampled response with everything the update needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    /// Readout input per position, `feature_dim` each.
    pub features: Vec<Vec<f64>>,
    /// `[T, H_q, d]` row-major.
    pub queries: Vec<f64>,
    pub logp: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    heads: HeadConfig,
    embed_dim: usize,
    token_embed: Vec<f64>,
    pos_embed: Vec<f64>,
    patch_proj: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    readout: Vec<f64>,
}

fn gaussian(rng: &mut SeededRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(x.len())) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

impl ToyPolicy {
    pub fn new(heads: &HeadConfig, embed_dim: usize, seed: u64) -> Result<Self> {
        heads.validate()?;
        if embed_dim == 0 {
            return Err(KawhiError::invalid("embed_dim must be positive"));
        }
        let (hq, hk, d, e) = (heads.num_query_heads, heads.num_key_heads, heads.head_dim, embed_dim);
        let mut rng = SeededRng::new(seed);
        let proj_scale = 1.0 / (e as f64).sqrt();
        let mut policy = Self {
            heads: heads.clone(),
            embed_dim: e,
            token_embed: gaussian(&mut rng, Vocab::SIZE * e, 1.0),
            pos_embed: gaussian(&mut rng, TEMPLATE.len() * e, 0.5),
            patch_proj: gaussian(&mut rng, e * PATCH_FEATURES, 1.0 / (PATCH_FEATURES as f64).sqrt()),
            wq: gaussian(&mut rng, hq * d * e, proj_scale),
            wk: gaussian(&mut rng, hk * d * e, proj_scale),
            wv: gaussian(&mut rng, hk * d * e, proj_scale),
            readout: Vec::new(),
        };
        policy.readout = vec![0.0; Vocab::SIZE * policy.feature_dim()];
        Ok(policy)
    }

    pub fn heads(&self) -> &HeadConfig {
        &self.heads
    }

    pub fn feature_dim(&self) -> usize {
        self.embed_dim + self.heads.num_query_heads * self.heads.head_dim + 1
    }

    /// Trainable parameters: the `[V, feature_dim]` readout.
    pub fn params(&self) -> &[f64] {
        &self.readout
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.readout
    }

    /// Frozen patch encoder: tensor statistics -> embedding -> keys and values.
    pub fn encode_image(&self, field: &StructureTensorField) -> VisualContext {
        let (hk, d, e) = (self.heads.num_key_heads, self.heads.head_dim, self.embed_dim);
        let n = field.len();
        let grid = &field.grid;
        let mut keys = vec![0.0; n * hk * d];
        let mut values = vec![0.0; n * hk * d];
        let mut z = vec![0.0; e];
        for (v, p) in field.patches.iter().enumerate() {
            let (row, col) = grid.row_col(v);
            let (lmax, lmin) = (p.eigen.lambda_max, p.eigen.lambda_min);
            let aniso = if lmax + lmin > 0.0 {
                (lmax - lmin) / (lmax + lmin)
            } else {
                0.0
            };
            let angle = 2.0 * p.eigen.principal_angle;
            let phi = [
                p.mean_luminance / 100.0,
                (1.0 + p.trace()).ln(),
                aniso,
                aniso * angle.cos(),
                aniso * angle.sin(),
                row as f64 / grid.rows as f64,
                col as f64 / grid.cols as f64,
                1.0,
            ];
            matvec(&self.patch_proj, &phi, &mut z);
            for h in 0..hk {
                let at = (v * hk + h) * d;
                matvec(&self.wk[h * d * e..(h + 1) * d * e], &z, &mut keys[at..at + d]);
                matvec(&self.wv[h * d * e..(h + 1) * d * e], &z, &mut values[at..at + d]);
            }
        }
        VisualContext {
            num_tokens: n,
            keys,
            values,
        }
    }

    fn token_input(&self, prev: u32, pos: usize) -> Vec<f64> {
        let e = self.embed_dim;
        let tok = &self.token_embed[prev as usize * e..(prev as usize + 1) * e];
        let p = &self.pos_embed[pos * e..(pos + 1) * e];
        tok.iter().zip(p).map(|(a, b)| a + b).collect()
    }

    /// Readout features and per-head queries for position `pos` after token `prev`.
    fn position_state(&self, ctx: &VisualContext, prev: u32, pos: usize) -> (Vec<f64>, Vec<f64>) {
        let (hq, hk, d, e) = (
            self.heads.num_query_heads,
            self.heads.num_key_heads,
            self.heads.head_dim,
            self.embed_dim,
        );
        let x = self.token_input(prev, pos);
        let mut queries = vec![0.0; hq * d];
        let mut features = Vec::with_capacity(self.feature_dim());
        features.extend_from_slice(&x);
        let scale = 1.0 / (d as f64).sqrt();
        let mut scores = vec![0.0; ctx.num_tokens];
        for h in 0..hq {
            let q = &mut queries[h * d..(h + 1) * d];
            matvec(&self.wq[h * d * e..(h + 1) * d * e], &x, q);
            let kh = self.heads.key_head_for(h);
            for (v, s) in scores.iter_mut().enumerate() {
                let k = &ctx.keys[(v * hk + kh) * d..][..d];
                *s = scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let mut head_ctx = vec![0.0; d];
            for (v, s) in scores.iter().enumerate() {
                let val = &ctx.values[(v * hk + kh) * d..][..d];
                for (c, x) in head_ctx.iter_mut().zip(val) {
                    *c += s / total * x;
                }
            }
            features.extend_from_slice(&head_ctx);
        }
        features.push(1.0);
        (features, queries)
    }

    /// Log-probabilities over the slot's allowed tokens, in `allowed()` order.
    fn slot_log_probs(&self, features: &[f64], slot: Slot) -> Vec<f64> {
        let f = self.feature_dim();
        let logits: Vec<f64> = slot
            .allowed()
            .map(|tok| {
                let row = &self.readout[tok as usize * f..(tok as usize + 1) * f];
                row.iter().zip(features).map(|(a, b)| a * b).sum()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.into_iter().map(|l| l - lse).collect()
    }

    /// Sample one templated response.
    pub fn sample(&self, ctx: &VisualContext, rng: &mut SeededRng) -> Rollout {
        let t_len = TEMPLATE.len();
        let mut tokens = Vec::with_capacity(t_len);
        let mut features = Vec::with_capacity(t_len);
        let mut queries = Vec::with_capacity(t_len * self.heads.num_query_heads * self.heads.head_dim);
        let mut logp = Vec::with_capacity(t_len);
        let mut prev = Vocab::BOS;
        for (pos, &slot) in TEMPLATE.iter().enumerate() {
            let (f, q) = self.position_state(ctx, prev, pos);
            let lp = self.slot_log_probs(&f, slot);
            let choice = if lp.len() == 1 {
                0
            } else {
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                rng.categorical(&probs)
            };
            let tok = slot.allowed().start + choice as u32;
            tokens.push(tok);
            logp.push(lp[choice]);
            features.push(f);
            queries.extend(q);
            prev = tok;
        }
        Rollout {
            tokens,
            features,
            queries,
            logp,
        }
    }

    /// Teacher-force `tokens` through the template: the rollout that
    /// sampling would have produced had it drawn exactly these tokens.
    pub fn replay(&self, ctx: &VisualContext, tokens: &[u32]) -> Result<Rollout> {
        if tokens.len() != TEMPLATE.len() {
            return Err(KawhiError::invalid(format!(
                "{} tokens for a {}-slot template",
                tokens.len(),
                TEMPLATE.len()
            )));
        }
        let mut rollout = Rollout {
            tokens: tokens.to_vec(),
            features: Vec::with_capacity(tokens.len()),
            queries: Vec::new(),
            logp: Vec::with_capacity(tokens.len()),
        };
        let mut prev = Vocab::BOS;
        for (pos, (&slot, &tok)) in TEMPLATE.iter().zip(tokens).enumerate() {
            if !slot.allowed().contains(&tok) {
                return Err(KawhiError::invalid(format!(
                    "token {tok} not allowed at position {pos}"
                )));
            }
            let (f, q) = self.position_state(ctx, prev, pos);
            rollout
                .logp
                .push(self.slot_log_probs(&f, slot)[(tok - slot.allowed().start) as usize]);
            rollout.features.push(f);
            rollout.queries.extend(q);
            prev = tok;
        }
        Ok(rollout)
    }

    /// Log-probability of each token of `rollout` under the current readout.
    pub fn log_probs(&self, rollout: &Rollout) -> Vec<f64> {
        TEMPLATE
            .iter()
            .zip(&rollout.features)
            .zip(&rollout.tokens)
            .map(|((&slot, f), &tok)| self.slot_log_probs(f, slot)[(tok - slot.allowed().start) as usize])
            .collect()
    }

    /// Answer distribution after the fixed template prefix; the answer
    /// position only sees the preceding paragraph break, so this is exact.
    pub fn answer_distribution(&self, ctx: &VisualContext) -> Vec<f64> {
        let pos = TEMPLATE.len() - 1;
        let (f, _) = self.position_state(ctx, Vocab::PARA, pos);
        self.slot_log_probs(&f, Slot::Answer)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    /// Add `Σ_t dlogp[t] · d logp_t / d readout` into `grad`.
    pub fn accumulate_gradient(&self, grad: &mut [f64], rollout: &Rollout, dlogp: &[f64]) {
        let f = self.feature_dim();
        for (pos, &slot) in TEMPLATE.iter().enumerate() {
            let coef = dlogp[pos];
            if coef == 0.0 {
                continue;
            }
            let feats = &rollout.features[pos];
            let lp = self.slot_log_probs(feats, slot);
            for (i, tok) in slot.allowed().enumerate() {
                let onehot = if tok == rollout.tokens[pos] { 1.0 } else { 0.0 };
                let g = coef * (onehot - lp[i].exp());
                if g == 0.0 {
                    continue;
                }
                let row = &mut grad[tok as usize * f..(tok as usize + 1) * f];
                for (r, x) in row.iter_mut().zip(feats) {
                    *r += g * x;
                }
            }
        }
    }

    /// Plain SGD ascent step on the objective.
    pub fn apply_gradient(&mut self, grad: &[f64], learning_rate: f64) {
        for (p, g) in self.readout.iter_mut().zip(grad) {
            *p += learning_rate * g;
        }
    }

    /// Query and key states exactly as used by the forward pass.
    pub fn attention_states(&self, ctx: &VisualContext, rollout: &Rollout) -> Result<AttentionStates> {
        let (hq, hk, d) = (
            self.heads.num_query_heads,
            self.heads.num_key_heads,
            self.heads.head_dim,
        );
        let t = rollout.tokens.len();
        let queries = Tensor::new(vec![t, hq, d], rollout.queries.iter().map(|&x| x as f32).collect())?;
        let keys = Tensor::new(
            vec![ctx.num_tokens, hk, d],
            ctx.keys.iter().map(|&x| x as f32).collect(),
        )?;
        AttentionStates::new(queries, keys, &self.heads)
    }
}
