use super::step::{weigh_response, ResponseWeights};
use super::task::generate_task;
use crate::alignment::{AttentionStates, HeadConfig};
use crate::credit::{whitespace_token_offsets, WeightConfig};
use crate::error::{KawhiError, Result};
use crate::exec::Execution;
use crate::numerics::{SeededRng, Tensor};
use crate::sguf::{sguf_pipeline, SgufConfig, TokenSelection};

/// Response whose paragraph `planted_paragraph` looks straight at the key
/// region: each of its content tokens has, on every query head, a query
/// equal to the key state of a key-region patch. All other queries and
/// all keys are independent Gaussian draws.
#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub states: AttentionStates,
    pub heads: HeadConfig,
    pub selection: TokenSelection,
    pub key_tokens: Vec<usize>,
    pub text: String,
    pub offsets: Vec<(usize, usize)>,
    pub planted_paragraph: usize,
}

impl PlantedFixture {
    /// Weights through the same per-response routine the train step uses.
    pub fn weigh(&self, cfg: &WeightConfig) -> Result<ResponseWeights> {
        weigh_response(
            &self.text,
            &self.offsets,
            &self.states,
            &self.heads,
            &self.selection,
            cfg,
            Execution::default(),
        )
    }
}

const FILLER: [&str; 6] = ["first", "note", "then", "so", "we", "see"];

pub fn planted_saliency_fixture(seed: u64, heads: &HeadConfig) -> Result<PlantedFixture> {
    heads.validate()?;
    let task = generate_task(seed, 14, 8)?;
    let regions = sguf_pipeline(
        &task.image,
        &SgufConfig {
            seed,
            ..SgufConfig::default()
        },
        14,
    )?;
    let key_tokens = regions.partition.key_tokens();
    if key_tokens.is_empty() {
        return Err(KawhiError::Task(format!("task {seed} produced no key region")));
    }
    let mut rng = SeededRng::new(seed ^ 0x706c_616e);

    let paragraphs = 3 + rng.below(3) as usize;
    let planted_paragraph = 1;
    let text = (0..paragraphs)
        .map(|_| {
            let words = 2 + rng.below(4) as usize;
            (0..words)
                .map(|_| FILLER[rng.below(FILLER.len() as u64) as usize])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let offsets = whitespace_token_offsets(&text);

    let (hq, hk, d) = (heads.num_query_heads, heads.num_key_heads, heads.head_dim);
    let n = regions.field.len();
    let keys: Vec<f32> = (0..n * hk * d).map(|_| rng.normal() as f32).collect();
    let mut queries: Vec<f32> = (0..offsets.len() * hq * d).map(|_| rng.normal() as f32).collect();

    // content tokens of the planted paragraph: count paragraph starts up to each token
    let mut para = 0;
    let mut copied = 0;
    for (t, &(s, e)) in offsets.iter().enumerate() {
        if &text[s..e] == "\n\n" {
            para += 1;
            continue;
        }
        if para != planted_paragraph {
            continue;
        }
        let patch = key_tokens[copied % key_tokens.len()];
        copied += 1;
        for h in 0..hq {
            let kh = heads.key_head_for(h);
            let src = &keys[(patch * hk + kh) * d..][..d];
            queries[(t * hq + h) * d..][..d].copy_from_slice(src);
        }
    }

    let states = AttentionStates::new(
        Tensor::new(vec![offsets.len(), hq, d], queries)?,
        Tensor::new(vec![n, hk, d], keys)?,
        heads,
    )?;
    Ok(PlantedFixture {
        states,
        heads: heads.clone(),
        selection: regions.selection,
        key_tokens,
        text,
        offsets,
        planted_paragraph,
    })
}
