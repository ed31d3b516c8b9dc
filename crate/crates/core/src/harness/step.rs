use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::policy::{render_response, ToyPolicy};
use super::task::SyntheticTask;
use super::{RunConfig, WeightMode};
use crate::alignment::{spatial_saliency_with, AttentionStates, HeadConfig, SaliencyVector};
use crate::credit::{
    broadcast_token_weights, paragraph_weights, pool_saliency, segment_paragraphs, ParagraphSegmentation,
    ParagraphWeights, WeightConfig,
};
use crate::error::Result;
use crate::exec::{map_indices, Execution};
use crate::grpo::{apply_kawhi_weights, group_advantages, objective_terms, AdvantageField, Response, RolloutGroup};
use crate::numerics::SeededRng;
use crate::sguf::{sguf_pipeline_with, SgufConfig, TokenSelection};

/// Seconds spent in each stage of a train step. `wall` brackets the whole step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub sguf: f64,
    pub rollout: f64,
    pub reward: f64,
    pub advantage: f64,
    pub segmentation: f64,
    pub alignment: f64,
    pub weighting: f64,
    pub update: f64,
    pub report: f64,
    pub wall: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.sguf
            + self.rollout
            + self.reward
            + self.advantage
            + self.segmentation
            + self.alignment
            + self.weighting
            + self.update
            + self.report
    }

    /// Time in stages that plain GRPO does not run.
    pub fn weighting_overhead(&self) -> f64 {
        self.sguf + self.segmentation + self.alignment + self.weighting
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.sguf += other.sguf;
        self.rollout += other.rollout;
        self.reward += other.reward;
        self.advantage += other.advantage;
        self.segmentation += other.segmentation;
        self.alignment += other.alignment;
        self.weighting += other.weighting;
        self.update += other.update;
        self.report += other.report;
        self.wall += other.wall;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphRow {
    pub text: String,
    /// Owned token range `[start, end)`.
    pub span: [usize; 2],
    pub alpha_bar: f64,
    pub w_tilde: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub text: String,
    pub tokens: Vec<u32>,
    pub reward: f64,
    pub advantage: f64,
    /// Token saliency; empty for uniform steps.
    pub alpha: Vec<f64>,
    pub paragraphs: Vec<ParagraphRow>,
    /// Per-token weights; empty for uniform steps.
    pub token_weights: Vec<f64>,
    /// Advantages fed to the surrogate.
    pub token_advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOverview {
    pub regions: usize,
    pub key_regions: usize,
    pub key_tokens: Vec<usize>,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_seed: u64,
    pub answer: usize,
    pub regions: RegionOverview,
    pub responses: Vec<ResponseReport>,
}

/// Deterministic record of one step. Timings are kept out of the
/// serialized form so reports are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub mode: WeightMode,
    pub learning_rate: f64,
    pub reward_mean: f64,
    pub objective: f64,
    pub gradient_norm: f64,
    pub tasks: Vec<TaskReport>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl StepReport {
    /// All token weights of the step, in response order.
    pub fn token_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.tasks
            .iter()
            .flat_map(|t| &t.responses)
            .flat_map(|r| r.token_weights.iter().copied())
    }
}

/// Segmentation, saliency and weights for one response.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseWeights {
    pub segmentation: ParagraphSegmentation,
    pub alpha: SaliencyVector,
    pub weights: ParagraphWeights,
    pub token_weights: Vec<f64>,
    /// Time spent segmenting, aligning and weighting.
    pub elapsed: [Duration; 3],
}

/// The per-response half of the weighted step: split into paragraphs,
/// score tokens against the selected visual tokens, pool and weigh.
#[allow(clippy::too_many_arguments)]
pub fn weigh_response(
    text: &str,
    offsets: &[(usize, usize)],
    states: &AttentionStates,
    heads: &HeadConfig,
    selection: &TokenSelection,
    cfg: &WeightConfig,
    exec: Execution,
) -> Result<ResponseWeights> {
    let t0 = Instant::now();
    let segmentation = segment_paragraphs(text, offsets)?;
    let t1 = Instant::now();
    let alpha = spatial_saliency_with(states, heads, selection, exec)?;
    let t2 = Instant::now();
    let pooled = pool_saliency(&segmentation, &alpha)?;
    let weights = paragraph_weights(&pooled, cfg)?;
    let token_weights = broadcast_token_weights(&segmentation, &weights)?;
    let t3 = Instant::now();
    Ok(ResponseWeights {
        segmentation,
        alpha,
        weights,
        token_weights,
        elapsed: [t1 - t0, t2 - t1, t3 - t2],
    })
}

pub fn kawhi_train_step(
    policy: &mut ToyPolicy,
    batch: &[SyntheticTask],
    cfg: &RunConfig,
    mode: WeightMode,
    rng: &mut SeededRng,
) -> Result<StepReport> {
    kawhi_train_step_with(policy, batch, cfg, mode, rng, Execution::default())
}

/// One optimizer step over `batch`, following the weighted-GRPO order per
/// prompt: regions, rollouts, rewards, group advantages, then per response
/// segmentation, saliency, paragraph weights and weighted advantages;
/// finally one SGD step on the clipped surrogate averaged over the batch.
pub fn kawhi_train_step_with(
    policy: &mut ToyPolicy,
    batch: &[SyntheticTask],
    cfg: &RunConfig,
    mode: WeightMode,
    rng: &mut SeededRng,
    exec: Execution,
) -> Result<StepReport> {
    let wall = Instant::now();
    cfg.validate()?;
    let mut timings = StageTimings::default();
    let mut grad = vec![0.0; policy.params().len()];
    let mut tasks = Vec::with_capacity(batch.len());
    let (mut objective, mut reward_sum, mut reward_count) = (0.0, 0.0, 0usize);

    for task in batch {
        let clock = Instant::now();
        let sguf_cfg = SgufConfig {
            seed: cfg.sguf.seed ^ task.seed,
            ..cfg.sguf.clone()
        };
        let regions = sguf_pipeline_with(&task.image, &sguf_cfg, cfg.patch_size, exec)?;
        let mut clock = lap(clock, &mut timings.sguf);

        let ctx = policy.encode_image(&regions.field);
        let streams: Vec<SeededRng> = (0..cfg.group_size).map(|_| rng.fork()).collect();
        let rollouts = map_indices(exec, cfg.group_size, |g| policy.sample(&ctx, &mut streams[g].clone()));
        clock = lap(clock, &mut timings.rollout);

        let rewards = rollouts
            .iter()
            .map(|r| task.verify(&r.tokens))
            .collect::<Result<Vec<_>>>()?;
        clock = lap(clock, &mut timings.reward);

        let lengths: Vec<usize> = rollouts.iter().map(|r| r.tokens.len()).collect();
        let advantages = group_advantages(&rewards, cfg.clip.std_epsilon)?;
        let field = AdvantageField::broadcast(advantages, &lengths)?;
        clock = lap(clock, &mut timings.advantage);

        let (mut seg_time, mut align_time) = (0.0, 0.0);
        let mut per_response = Vec::with_capacity(rollouts.len());
        let mut token_weights = Vec::with_capacity(rollouts.len());
        for r in &rollouts {
            let (text, offsets) = render_response(&r.tokens);
            let weighed = match mode {
                WeightMode::Uniform => None,
                WeightMode::Kawhi | WeightMode::Constant(_) => {
                    let states = policy.attention_states(&ctx, r)?;
                    let mut w = weigh_response(
                        &text,
                        &offsets,
                        &states,
                        &cfg.heads,
                        &regions.selection,
                        &cfg.weights,
                        exec,
                    )?;
                    if let WeightMode::Constant(c) = mode {
                        w.weights.w.fill(c);
                        w.token_weights.fill(c);
                    }
                    seg_time += w.elapsed[0].as_secs_f64();
                    align_time += w.elapsed[1].as_secs_f64();
                    token_weights.push(w.token_weights.clone());
                    Some(w)
                }
            };
            per_response.push((text, weighed));
        }
        let field = if token_weights.is_empty() {
            field
        } else {
            apply_kawhi_weights(field, &token_weights)?
        };
        // the rest of the per-response loop (rendering, state extraction, weights) is weighting
        let mut loop_time = 0.0;
        clock = lap(clock, &mut loop_time);
        timings.segmentation += seg_time;
        timings.alignment += align_time;
        timings.weighting += loop_time - seg_time - align_time;

        // PPO-style update: rollouts came from the current policy, so the
        // old log-probs are the sampling log-probs.
        let group = RolloutGroup {
            responses: rollouts
                .iter()
                .zip(&rewards)
                .map(|(r, &reward)| Response {
                    tokens: r.tokens.clone(),
                    reward,
                    logp_old: r.logp.clone(),
                    logp_new: policy.log_probs(r),
                    paragraph_spans: Vec::new(),
                    paragraph_weights: None,
                })
                .collect(),
        };
        let terms = objective_terms(&group, &field, &cfg.clip)?;
        for (r, dlogp) in rollouts.iter().zip(&terms.logp_gradient) {
            policy.accumulate_gradient(&mut grad, r, dlogp);
        }
        objective += terms.value;
        clock = lap(clock, &mut timings.update);

        let effective = field.effective();
        let responses = per_response
            .into_iter()
            .enumerate()
            .map(|(g, (text, weighed))| {
                let (alpha, paragraphs, token_weights) = match weighed {
                    None => (Vec::new(), Vec::new(), Vec::new()),
                    Some(w) => {
                        let rows = w
                            .segmentation
                            .paragraphs
                            .iter()
                            .enumerate()
                            .map(|(j, p)| ParagraphRow {
                                text: p.text.clone(),
                                span: [p.owned.start, p.owned.end],
                                alpha_bar: w.weights.alpha_bar[j],
                                w_tilde: w.weights.w_tilde[j],
                                w: w.weights.w[j],
                            })
                            .collect();
                        (w.alpha.alpha, rows, w.token_weights)
                    }
                };
                ResponseReport {
                    text,
                    tokens: rollouts[g].tokens.clone(),
                    reward: rewards[g],
                    advantage: field.response[g],
                    alpha,
                    paragraphs,
                    token_weights,
                    token_advantages: effective[g].clone(),
                }
            })
            .collect();
        reward_sum += rewards.iter().sum::<f64>();
        reward_count += rewards.len();
        tasks.push(TaskReport {
            task_seed: task.seed,
            answer: task.answer(),
            regions: RegionOverview {
                regions: regions.partition.regions.len(),
                key_regions: regions.partition.key_regions().count(),
                key_tokens: regions.partition.key_tokens(),
                selected: regions.selection.selected.clone(),
            },
            responses,
        });
        lap(clock, &mut timings.report);
    }

    let clock = Instant::now();
    let scale = 1.0 / batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    let gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    policy.apply_gradient(&grad, cfg.learning_rate);
    lap(clock, &mut timings.update);
    timings.wall = wall.elapsed().as_secs_f64();

    Ok(StepReport {
        mode,
        learning_rate: cfg.learning_rate,
        reward_mean: if reward_count == 0 {
            0.0
        } else {
            reward_sum / reward_count as f64
        },
        objective: objective * scale,
        gradient_norm,
        tasks,
        timings,
    })
}

/// Charge the time since `since` to `slot` and restart the clock.
fn lap(since: Instant, slot: &mut f64) -> Instant {
    let now = Instant::now();
    *slot += (now - since).as_secs_f64();
    now
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::HeadConfig;
    use crate::harness::task::generate_task;

    fn small_config() -> RunConfig {
        RunConfig {
            heads: HeadConfig::new(4, 2, 8, vec![0, 3]).unwrap(),
            embed_dim: 8,
            grid_patches: 6,
            learning_rate: 0.5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_policy() {
        let cfg = RunConfig {
            learning_rate: 0.0,
            ..small_config()
        };
        let mut policy = ToyPolicy::new(&cfg.heads, cfg.embed_dim, 1).unwrap();
        let before = policy.clone();
        let task = generate_task(4, 14, 6).unwrap();
        let report = kawhi_train_step(&mut policy, &[task], &cfg, WeightMode::Kawhi, &mut SeededRng::new(2)).unwrap();
        assert_eq!(policy, before);
        assert_eq!(report.tasks[0].responses.len(), 5);
        assert!(report.tasks[0].responses.iter().all(|r| r.paragraphs.len() == 3));
    }

    #[test]
    fn equal_rewards_give_zero_step() {
        let cfg = small_config();
        let mut policy = ToyPolicy::new(&cfg.heads, cfg.embed_dim, 1).unwrap();
        // the blank task's answer is 0; a strongly biased readout answers 0 every time
        let task = crate::harness::task::generate_task_variant(9, crate::harness::TaskVariant::Blank, 14, 6).unwrap();
        let f = policy.feature_dim();
        let zero_row = crate::harness::policy::answer_token(0) as usize;
        policy.params_mut()[zero_row * f + f - 1] = 1e3;
        let before = policy.clone();
        let report = kawhi_train_step(&mut policy, &[task], &cfg, WeightMode::Kawhi, &mut SeededRng::new(2)).unwrap();
        assert!(report.tasks[0].responses.iter().all(|r| r.reward == 1.0));
        assert!(report.tasks[0]
            .responses
            .iter()
            .all(|r| r.token_advantages.iter().all(|&a| a == 0.0)));
        assert_eq!(report.gradient_norm, 0.0);
        assert_eq!(policy, before);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = small_config();
        let task = generate_task(4, 14, 6).unwrap();
        let run = |exec| {
            let mut policy = ToyPolicy::new(&cfg.heads, cfg.embed_dim, 1).unwrap();
            let report = kawhi_train_step_with(
                &mut policy,
                std::slice::from_ref(&task),
                &cfg,
                WeightMode::Kawhi,
                &mut SeededRng::new(2),
                exec,
            )
            .unwrap();
            (
                policy,
                StepReport {
                    timings: StageTimings::default(),
                    ..report
                },
            )
        };
        let (pa, ra) = run(Execution::Sequential);
        let (pb, rb) = run(Execution::Parallel);
        assert_eq!(pa, pb);
        assert_eq!(ra, rb);
    }
}
