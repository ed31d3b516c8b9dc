//! Head ablation on a small cross-attention model.
//!
//! A desk-scale version of vision-critical head identification: mask one
//! query head (zero its output in every layer), rescore a copy-from-visual
//! task, and report the score drop. Heads whose drop exceeds a threshold are
//! reported as critical.

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};
use crate::numerics::SeededRng;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn random(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        Self {
            rows,
            cols,
            data: (0..rows * cols).map(|_| scale * rng.normal()).collect(),
        }
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct HeadWeights {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
}

/// Residual cross-attention stack: a query vector reads from fixed visual
/// tokens through `num_heads` heads per layer, then a linear readout scores
/// the answer classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyAttentionModel {
    model_dim: usize,
    head_dim: usize,
    num_classes: usize,
    layers: Vec<Vec<HeadWeights>>,
    readout: Matrix,
}

/// One copy-task instance: the answer is the content of a visual slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyFixture {
    pub visual: Vec<Vec<f64>>,
    pub query: Vec<f64>,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadAblation {
    pub head: usize,
    pub drop: f64,
    pub critical: bool,
}

impl ToyAttentionModel {
    pub fn num_heads(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Model whose head `routing_head` alone copies slot content to the
    /// readout. Other heads are weak random distractors whose output lands in
    /// the readout subspace at `distractor_scale`. Embedding layout:
    /// `[slot one-hot (slots) | content one-hot (classes) | answer (classes)]`.
    pub fn routed(
        num_heads: usize,
        routing_head: usize,
        slots: usize,
        classes: usize,
        distractor_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if routing_head >= num_heads {
            return Err(KawhiError::invalid(format!(
                "routing head {routing_head} out of range for {num_heads} heads"
            )));
        }
        let model_dim = slots + 2 * classes;
        let head_dim = slots.max(classes);
        let mut rng = SeededRng::new(seed);
        let sharpness = 20.0;
        let mut layers = Vec::with_capacity(2);
        for layer in 0..2 {
            let heads = (0..num_heads)
                .map(|h| {
                    if h == routing_head && layer == 0 {
                        let mut wq = Matrix::zeros(head_dim, model_dim);
                        let mut wk = Matrix::zeros(head_dim, model_dim);
                        let mut wv = Matrix::zeros(head_dim, model_dim);
                        let mut wo = Matrix::zeros(model_dim, head_dim);
                        for s in 0..slots {
                            wq.set(s, s, sharpness);
                            wk.set(s, s, 1.0);
                        }
                        for c in 0..classes {
                            wv.set(c, slots + c, 1.0);
                            wo.set(slots + classes + c, c, 1.0);
                        }
                        HeadWeights { wq, wk, wv, wo }
                    } else if h == routing_head {
                        HeadWeights {
                            wq: Matrix::zeros(head_dim, model_dim),
                            wk: Matrix::zeros(head_dim, model_dim),
                            wv: Matrix::zeros(head_dim, model_dim),
                            wo: Matrix::zeros(model_dim, head_dim),
                        }
                    } else {
                        HeadWeights {
                            wq: Matrix::random(head_dim, model_dim, 1.0, &mut rng),
                            wk: Matrix::random(head_dim, model_dim, 1.0, &mut rng),
                            wv: Matrix::random(head_dim, model_dim, 1.0, &mut rng),
                            wo: Matrix::random(model_dim, head_dim, distractor_scale, &mut rng),
                        }
                    }
                })
                .collect();
            layers.push(heads);
        }
        let mut readout = Matrix::zeros(classes, model_dim);
        for c in 0..classes {
            readout.set(c, slots + classes + c, 1.0);
        }
        Ok(Self {
            model_dim,
            head_dim,
            num_classes: classes,
            layers,
            readout,
        })
    }

    /// Zero every weight of `head` in every layer, making it inert.
    pub fn zero_head(&mut self, head: usize) {
        for layer in &mut self.layers {
            let w = &mut layer[head];
            for m in [&mut w.wq, &mut w.wk, &mut w.wv, &mut w.wo] {
                m.data.fill(0.0);
            }
        }
    }

    fn predict(&self, fx: &CopyFixture, mask: &[bool]) -> usize {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut x = fx.query.clone();
        for layer in &self.layers {
            let mut update = vec![0.0; self.model_dim];
            for (h, w) in layer.iter().enumerate() {
                if mask[h] {
                    continue;
                }
                let q = w.wq.apply(&x);
                let scores: Vec<f64> = fx
                    .visual
                    .iter()
                    .map(|z| {
                        let k = w.wk.apply(z);
                        scale * q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                let mut ctx = vec![0.0; self.head_dim];
                for (z, e) in fx.visual.iter().zip(&exps) {
                    for (c, v) in ctx.iter_mut().zip(w.wv.apply(z)) {
                        *c += e / total * v;
                    }
                }
                for (u, o) in update.iter_mut().zip(w.wo.apply(&ctx)) {
                    *u += o;
                }
            }
            for (xi, u) in x.iter_mut().zip(update) {
                *xi += u;
            }
        }
        let logits = self.readout.apply(&x);
        // first maximal class wins ties
        logits
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &l)| if l > best.1 { (i, l) } else { best },
            )
            .0
    }

    /// Percent of fixtures answered correctly with the masked heads silenced.
    pub fn score(&self, fixtures: &[CopyFixture], mask: &[bool]) -> f64 {
        if fixtures.is_empty() {
            return 0.0;
        }
        let correct = fixtures.iter().filter(|fx| self.predict(fx, mask) == fx.target).count();
        100.0 * correct as f64 / fixtures.len() as f64
    }
}

/// Random copy-task fixtures for a model built with [`ToyAttentionModel::routed`].
pub fn copy_task_fixtures(count: usize, slots: usize, classes: usize, seed: u64) -> Vec<CopyFixture> {
    let mut rng = SeededRng::new(seed);
    let dim = slots + 2 * classes;
    (0..count)
        .map(|_| {
            let contents: Vec<usize> = (0..slots).map(|_| rng.below(classes as u64) as usize).collect();
            let visual = contents
                .iter()
                .enumerate()
                .map(|(s, &c)| {
                    let mut z = vec![0.0; dim];
                    z[s] = 1.0;
                    z[slots + c] = 1.0;
                    z
                })
                .collect();
            let slot = rng.below(slots as u64) as usize;
            let mut query = vec![0.0; dim];
            query[slot] = 1.0;
            CopyFixture {
                visual,
                query,
                target: contents[slot],
            }
        })
        .collect()
}

/// Baseline score minus the score with `head` masked in every layer.
pub fn ablate_head_score(model: &ToyAttentionModel, head: usize, fixtures: &[CopyFixture]) -> Result<f64> {
    let n = model.num_heads();
    if head >= n {
        return Err(KawhiError::invalid(format!("head {head} out of range for {n} heads")));
    }
    let mut mask = vec![false; n];
    let baseline = model.score(fixtures, &mask);
    mask[head] = true;
    Ok(baseline - model.score(fixtures, &mask))
}

/// Ablate every head; `critical` marks drops strictly above `threshold`.
pub fn identify_critical_heads(
    model: &ToyAttentionModel,
    fixtures: &[CopyFixture],
    threshold: f64,
) -> Vec<HeadAblation> {
    (0..model.num_heads())
        .map(|head| {
            let drop = ablate_head_score(model, head, fixtures).expect("head in range");
            HeadAblation {
                head,
                drop,
                critical: drop > threshold,
            }
        })
        .collect()
}
