use serde::{Deserialize, Serialize};

use super::policy::{ToyPolicy, VisualContext};
use super::step::{kawhi_train_step, StageTimings};
use super::task::{generate_task, SyntheticTask};
use super::{RunConfig, WeightMode};
use crate::error::{KawhiError, Result};
use crate::numerics::SeededRng;
use crate::sguf::sguf_pipeline;

/// One training arm: how advantages are weighted and at what step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub mode: WeightMode,
    pub learning_rate: f64,
}

/// Seed-averaged curves for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSeries {
    pub name: String,
    pub mode: WeightMode,
    pub learning_rate: f64,
    /// Expected held-out reward before training and after every step (`steps + 1` entries).
    pub eval_reward: Vec<f64>,
    /// Mean sampled reward of each step.
    pub train_reward: Vec<f64>,
    /// Token-weight statistics per step; empty for unweighted arms.
    pub weight_mean: Vec<f64>,
    pub weight_min: Vec<f64>,
    pub weight_max: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTimings {
    /// Summed stage timings per arm.
    pub arms: Vec<StageTimings>,
    /// `(t_weighted - t_uniform) / t_uniform * 100` over step wall time,
    /// when both a uniform and a saliency-weighted arm ran.
    pub overhead_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSeries>,
    #[serde(skip)]
    pub timings: ExperimentTimings,
}

/// Uniform GRPO against saliency-weighted GRPO at the configured learning rate.
pub fn run_experiment(cfg: &RunConfig, steps: usize, seeds: &[u64]) -> Result<ExperimentReport> {
    let arms = [
        ArmSpec {
            name: "uniform".into(),
            mode: WeightMode::Uniform,
            learning_rate: cfg.learning_rate,
        },
        ArmSpec {
            name: "kawhi".into(),
            mode: WeightMode::Kawhi,
            learning_rate: cfg.learning_rate,
        },
    ];
    run_arms(cfg, steps, seeds, &arms)
}

fn task_stream(seed: u64) -> SeededRng {
    SeededRng::new(seed ^ 0x7461_736b)
}

fn sample_stream(seed: u64) -> SeededRng {
    SeededRng::new(seed ^ 0x726f_6c6c)
}

fn eval_contexts(policy: &ToyPolicy, cfg: &RunConfig, seed: u64) -> Result<Vec<(SyntheticTask, VisualContext)>> {
    let mut rng = SeededRng::new(seed ^ 0x6576_616c);
    (0..cfg.eval_tasks)
        .map(|_| {
            let task = generate_task(rng.next_u64(), cfg.patch_size, cfg.grid_patches)?;
            let out = sguf_pipeline(&task.image, &cfg.sguf, cfg.patch_size)?;
            let ctx = policy.encode_image(&out.field);
            Ok((task, ctx))
        })
        .collect()
}

fn evaluate(policy: &ToyPolicy, evals: &[(SyntheticTask, VisualContext)]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    let total: f64 = evals
        .iter()
        .map(|(task, ctx)| policy.answer_distribution(ctx)[task.answer()])
        .sum();
    total / evals.len() as f64
}

/// Every arm starts from the same policy and sees the same prompts and
/// sampling streams for a given seed; only the advantage weighting and the
/// step size differ. Curves are averaged over `seeds`.
pub fn run_arms(cfg: &RunConfig, steps: usize, seeds: &[u64], arms: &[ArmSpec]) -> Result<ExperimentReport> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(KawhiError::invalid("at least one seed is required"));
    }
    let mut series: Vec<ArmSeries> = arms
        .iter()
        .map(|a| ArmSeries {
            name: a.name.clone(),
            mode: a.mode,
            learning_rate: a.learning_rate,
            eval_reward: vec![0.0; steps + 1],
            train_reward: vec![0.0; steps],
            weight_mean: Vec::new(),
            weight_min: Vec::new(),
            weight_max: Vec::new(),
        })
        .collect();
    let mut timings = ExperimentTimings {
        arms: vec![StageTimings::default(); arms.len()],
        overhead_percent: None,
    };
    let n_seeds = seeds.len() as f64;

    for &seed in seeds {
        let base = ToyPolicy::new(&cfg.heads, cfg.embed_dim, seed)?;
        let evals = eval_contexts(&base, cfg, seed)?;
        for (i, (spec, out)) in arms.iter().zip(series.iter_mut()).enumerate() {
            let arm_cfg = RunConfig {
                learning_rate: spec.learning_rate,
                ..cfg.clone()
            };
            let mut policy = base.clone();
            let (mut tasks_rng, mut rng) = (task_stream(seed), sample_stream(seed));
            out.eval_reward[0] += evaluate(&policy, &evals) / n_seeds;
            let weighted = spec.mode != WeightMode::Uniform;
            if weighted && out.weight_mean.is_empty() {
                out.weight_mean = vec![0.0; steps];
                out.weight_min = vec![f64::INFINITY; steps];
                out.weight_max = vec![f64::NEG_INFINITY; steps];
            }
            for step in 0..steps {
                let batch = (0..arm_cfg.batch_size)
                    .map(|_| generate_task(tasks_rng.next_u64(), cfg.patch_size, cfg.grid_patches))
                    .collect::<Result<Vec<_>>>()?;
                let report = kawhi_train_step(&mut policy, &batch, &arm_cfg, spec.mode, &mut rng)?;
                timings.arms[i].add(&report.timings);
                out.train_reward[step] += report.reward_mean / n_seeds;
                out.eval_reward[step + 1] += evaluate(&policy, &evals) / n_seeds;
                if weighted {
                    let w: Vec<f64> = report.token_weights().collect();
                    let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
                    out.weight_mean[step] += mean / n_seeds;
                    out.weight_min[step] = w.iter().cloned().fold(out.weight_min[step], f64::min);
                    out.weight_max[step] = w.iter().cloned().fold(out.weight_max[step], f64::max);
                }
            }
        }
    }

    let base = arms.iter().position(|a| a.mode == WeightMode::Uniform);
    let weighted = arms.iter().position(|a| a.mode == WeightMode::Kawhi);
    if let (Some(b), Some(k)) = (base, weighted) {
        let (tb, tk) = (timings.arms[b].wall, timings.arms[k].wall);
        if tb > 0.0 {
            timings.overhead_percent = Some((tk - tb) / tb * 100.0);
        }
    }
    Ok(ExperimentReport {
        steps,
        seeds: seeds.to_vec(),
        arms: series,
        timings,
    })
}
