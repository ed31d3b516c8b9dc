//! Per-token spatial saliency from query/key states.
//!
//! Response tokens act as queries, SGUF-selected visual tokens as keys. For
//! each response token `t` the saliency is the mean cosine similarity
//! between its query vector and every selected key vector, taken over the
//! vision-critical query heads (keys are repeated across each GQA group).

pub mod ablation;
mod heads;

pub use heads::{parse_head_list, HeadConfig, QWEN25_VL_7B_CRITICAL_HEADS, QWEN3_VL_4B_CRITICAL_HEADS};

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};
use crate::exec::{map_indices, Execution};
use crate::numerics::{cosine_similarity_f32, Tensor};
use crate::sguf::TokenSelection;

/// Query states of the response and key states of the visual tokens,
/// both taken after positional encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStates {
    /// `[T, H_q, d]`.
    pub queries: Tensor,
    /// `[N_vis, H_k, d]`.
    pub keys: Tensor,
    /// Sequence position of each query row.
    pub response_indices: Vec<usize>,
    /// Patch index of each key row.
    pub visual_indices: Vec<usize>,
}

impl AttentionStates {
    /// States whose rows are numbered `0..T` and `0..N_vis`.
    pub fn new(queries: Tensor, keys: Tensor, cfg: &HeadConfig) -> Result<Self> {
        let t = queries.shape().first().copied().unwrap_or(0);
        let n = keys.shape().first().copied().unwrap_or(0);
        Self::with_indices(queries, keys, (0..t).collect(), (0..n).collect(), cfg)
    }

    pub fn with_indices(
        queries: Tensor,
        keys: Tensor,
        response_indices: Vec<usize>,
        visual_indices: Vec<usize>,
        cfg: &HeadConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (hq, hk, d) = (cfg.num_query_heads, cfg.num_key_heads, cfg.head_dim);
        if queries.rank() != 3 || queries.shape()[1] != hq || queries.shape()[2] != d {
            return Err(KawhiError::invalid(format!(
                "queries have shape {:?}, expected [T, H_q={hq}, d={d}]",
                queries.shape()
            )));
        }
        if keys.rank() != 3 || keys.shape()[1] != hk || keys.shape()[2] != d {
            return Err(KawhiError::invalid(format!(
                "keys have shape {:?}, expected [N, H_k={hk}, d={d}]",
                keys.shape()
            )));
        }
        if response_indices.len() != queries.shape()[0] || visual_indices.len() != keys.shape()[0] {
            return Err(KawhiError::invalid("index lists do not match state row counts"));
        }
        for (name, t) in [("queries", &queries), ("keys", &keys)] {
            if let Some(i) = t.first_non_finite() {
                return Err(KawhiError::Numeric {
                    index: i,
                    detail: format!("non-finite value in {name}"),
                });
            }
        }
        Ok(Self {
            queries,
            keys,
            response_indices,
            visual_indices,
        })
    }

    pub fn num_response_tokens(&self) -> usize {
        self.queries.shape()[0]
    }

    /// Key rows for the selected patch indices, in selection order.
    fn selected_rows(&self, selection: &TokenSelection) -> Result<Vec<usize>> {
        if selection.is_empty() {
            return Err(KawhiError::invalid("empty token selection: saliency is undefined"));
        }
        let identity = self.visual_indices.iter().enumerate().all(|(i, &v)| i == v);
        selection
            .selected
            .iter()
            .map(|&patch| {
                let row = if identity {
                    (patch < self.visual_indices.len()).then_some(patch)
                } else {
                    self.visual_indices.iter().position(|&v| v == patch)
                };
                row.ok_or_else(|| KawhiError::invalid(format!("selected patch {patch} has no key state")))
            })
            .collect()
    }
}

/// Repeat every key head `g = H_q / H_k` times: key head `j` fills query slots `[j*g, (j+1)*g)`.
pub fn expand_gqa_keys(keys: &Tensor, cfg: &HeadConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (hq, hk, d) = (cfg.num_query_heads, cfg.num_key_heads, cfg.head_dim);
    if keys.rank() != 3 || keys.shape()[1] != hk || keys.shape()[2] != d {
        return Err(KawhiError::invalid(format!(
            "keys have shape {:?}, expected [N, H_k={hk}, d={d}]",
            keys.shape()
        )));
    }
    let n = keys.shape()[0];
    let g = cfg.group_size();
    let mut data = Vec::with_capacity(n * hq * d);
    for v in 0..n {
        for h in 0..hq {
            data.extend_from_slice(keys.slice(&[v, h / g]));
        }
    }
    Tensor::new(vec![n, hq, d], data)
}

/// Pairwise scores `s[t][h][v]` over critical heads and selected tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadScores {
    pub num_tokens: usize,
    pub heads: Vec<usize>,
    pub selected: Vec<usize>,
    values: Vec<f64>,
}

impl HeadScores {
    pub fn get(&self, token: usize, head_slot: usize, key_slot: usize) -> f64 {
        let (h, s) = (self.heads.len(), self.selected.len());
        self.values[(token * h + head_slot) * s + key_slot]
    }

    pub fn token_scores(&self, token: usize) -> &[f64] {
        let stride = self.heads.len() * self.selected.len();
        &self.values[token * stride..(token + 1) * stride]
    }
}

pub fn head_similarity(states: &AttentionStates, cfg: &HeadConfig, selection: &TokenSelection) -> Result<HeadScores> {
    head_similarity_with(states, cfg, selection, Execution::default())
}

/// Cosine similarity of every (response token, critical head, selected key).
pub fn head_similarity_with(
    states: &AttentionStates,
    cfg: &HeadConfig,
    selection: &TokenSelection,
    exec: Execution,
) -> Result<HeadScores> {
    cfg.validate()?;
    let rows = states.selected_rows(selection)?;
    let t = states.num_response_tokens();
    let per_token = map_indices(exec, t, |tok| {
        let mut out = Vec::with_capacity(cfg.critical_heads.len() * rows.len());
        for &h in &cfg.critical_heads {
            let q = states.queries.slice(&[tok, h]);
            let kh = cfg.key_head_for(h);
            out.extend(
                rows.iter()
                    .map(|&r| cosine_similarity_f32(q, states.keys.slice(&[r, kh]))),
            );
        }
        out
    });
    Ok(HeadScores {
        num_tokens: t,
        heads: cfg.critical_heads.clone(),
        selected: selection.selected.clone(),
        values: per_token.concat(),
    })
}

/// Per-response-token saliency, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyVector {
    pub alpha: Vec<f64>,
}

impl SaliencyVector {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// `alpha_t = mean over (h, v) of s[t][h][v]`.
pub fn aggregate_saliency(scores: &HeadScores) -> SaliencyVector {
    let denom = (scores.heads.len() * scores.selected.len()) as f64;
    let alpha = (0..scores.num_tokens)
        .map(|t| {
            let mean = scores.token_scores(t).iter().sum::<f64>() / denom;
            mean.clamp(-1.0, 1.0)
        })
        .collect();
    SaliencyVector { alpha }
}

pub fn spatial_saliency(
    states: &AttentionStates,
    cfg: &HeadConfig,
    selection: &TokenSelection,
) -> Result<SaliencyVector> {
    spatial_saliency_with(states, cfg, selection, Execution::default())
}

/// Fused similarity + aggregation: keys are unit-normalized once, then each
/// response token accumulates its dot products without storing the pairwise
/// score table. Cost is `O(|H| * T * |S| * d)`.
pub fn spatial_saliency_with(
    states: &AttentionStates,
    cfg: &HeadConfig,
    selection: &TokenSelection,
    exec: Execution,
) -> Result<SaliencyVector> {
    cfg.validate()?;
    let rows = states.selected_rows(selection)?;
    let d = cfg.head_dim;
    let heads = &cfg.critical_heads;

    // unit keys laid out [head_slot][selected][d]; zero vectors stay zero
    let mut unit_keys = vec![0.0f64; heads.len() * rows.len() * d];
    for (hs, &h) in heads.iter().enumerate() {
        let kh = cfg.key_head_for(h);
        for (si, &r) in rows.iter().enumerate() {
            let k = states.keys.slice(&[r, kh]);
            let dst = &mut unit_keys[(hs * rows.len() + si) * d..][..d];
            normalize_into(k, dst);
        }
    }

    let denom = (heads.len() * rows.len()) as f64;
    let alpha = map_indices(exec, states.num_response_tokens(), |tok| {
        let mut q_unit = vec![0.0f64; d];
        let mut total = 0.0;
        for (hs, &h) in heads.iter().enumerate() {
            normalize_into(states.queries.slice(&[tok, h]), &mut q_unit);
            let block = &unit_keys[hs * rows.len() * d..(hs + 1) * rows.len() * d];
            for k in block.chunks_exact(d) {
                let dot: f64 = q_unit.iter().zip(k).map(|(a, b)| a * b).sum();
                total += dot.clamp(-1.0, 1.0);
            }
        }
        (total / denom).clamp(-1.0, 1.0)
    });
    Ok(SaliencyVector { alpha })
}

fn normalize_into(src: &[f32], dst: &mut [f64]) {
    let norm = src.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        dst.fill(0.0);
    } else {
        for (o, &x) in dst.iter_mut().zip(src) {
            *o = x as f64 / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn random_tensor(rng: &mut SeededRng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal() as f32).collect()).unwrap()
    }

    fn selection(idx: Vec<usize>) -> TokenSelection {
        TokenSelection {
            key_count: idx.len(),
            selected: idx,
            background_sampled_count: 0,
        }
    }

    #[test]
    fn expansion_block_replication() {
        let cfg = HeadConfig::new(8, 2, 3, vec![0]).unwrap();
        let mut rng = SeededRng::new(5);
        let keys = random_tensor(&mut rng, vec![4, 2, 3]);
        let ex = expand_gqa_keys(&keys, &cfg).unwrap();
        assert_eq!(ex.shape(), &[4, 8, 3]);
        for v in 0..4 {
            for h in 0..8 {
                assert_eq!(ex.slice(&[v, h]), keys.slice(&[v, if h < 4 { 0 } else { 1 }]));
            }
        }
        let same = HeadConfig::new(2, 2, 3, vec![0]).unwrap();
        assert_eq!(expand_gqa_keys(&keys, &same).unwrap(), keys);
        assert!(expand_gqa_keys(
            &keys,
            &HeadConfig {
                num_query_heads: 7,
                ..cfg.clone()
            }
        )
        .is_err());
    }

    #[test]
    fn identical_and_orthogonal_pairs() {
        let cfg = HeadConfig::new(1, 1, 2, vec![0]).unwrap();
        let q = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        let states = AttentionStates::new(q, k, &cfg).unwrap();
        let s = head_similarity(&states, &cfg, &selection(vec![0])).unwrap();
        assert!((s.get(0, 0, 0) - 1.0).abs() < 1e-7);
        let k2 = Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap();
        let states = AttentionStates::new(states.queries.clone(), k2, &cfg).unwrap();
        let s = head_similarity(&states, &cfg, &selection(vec![0])).unwrap();
        assert_eq!(s.get(1, 0, 0), 0.0);
    }

    #[test]
    fn cancellation_and_unit_means() {
        let cfg = HeadConfig::new(1, 1, 1, vec![0]).unwrap();
        let q = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let k = Tensor::new(vec![2, 1, 1], vec![1.0, -1.0]).unwrap();
        let states = AttentionStates::new(q.clone(), k, &cfg).unwrap();
        let a = spatial_saliency(&states, &cfg, &selection(vec![0, 1])).unwrap();
        assert_eq!(a.alpha, vec![0.0]);
        let k = Tensor::new(vec![2, 1, 1], vec![3.0, 0.5]).unwrap();
        let states = AttentionStates::new(q, k, &cfg).unwrap();
        assert_eq!(
            spatial_saliency(&states, &cfg, &selection(vec![0, 1])).unwrap().alpha,
            vec![1.0]
        );
    }

    #[test]
    fn empty_or_foreign_selection_rejected() {
        let cfg = HeadConfig::new(2, 1, 2, vec![0]).unwrap();
        let mut rng = SeededRng::new(1);
        let states = AttentionStates::new(
            random_tensor(&mut rng, vec![3, 2, 2]),
            random_tensor(&mut rng, vec![4, 1, 2]),
            &cfg,
        )
        .unwrap();
        assert!(spatial_saliency(&states, &cfg, &selection(vec![])).is_err());
        assert!(head_similarity(&states, &cfg, &selection(vec![9])).is_err());
    }

    #[test]
    fn fused_matches_two_stage_and_parallel_matches_sequential() {
        let cfg = HeadConfig::new(8, 2, 16, vec![0, 3, 5, 6]).unwrap();
        let mut rng = SeededRng::new(11);
        let states = AttentionStates::new(
            random_tensor(&mut rng, vec![13, 8, 16]),
            random_tensor(&mut rng, vec![40, 2, 16]),
            &cfg,
        )
        .unwrap();
        let sel = selection(vec![1, 4, 9, 10, 22, 39]);
        let two_stage = aggregate_saliency(&head_similarity(&states, &cfg, &sel).unwrap());
        let seq = spatial_saliency_with(&states, &cfg, &sel, Execution::Sequential).unwrap();
        let par = spatial_saliency_with(&states, &cfg, &sel, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        for (a, b) in two_stage.alpha.iter().zip(&seq.alpha) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_validation() {
        let cfg = HeadConfig::new(4, 2, 3, vec![0]).unwrap();
        let q = Tensor::zeros(vec![2, 3, 3]);
        let k = Tensor::zeros(vec![2, 2, 3]);
        assert!(AttentionStates::new(q, k, &cfg).is_err());
    }
}
