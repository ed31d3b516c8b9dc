use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};
use crate::geometry::RasterImage;
use crate::numerics::SeededRng;

use super::policy::{answer_token, decode_answer};

pub const BACKGROUND_LEVEL: u8 = 200;
pub const STROKE_LEVEL: u8 = 40;
pub const MAX_STROKES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskVariant {
    /// One to [`MAX_STROKES`] short strokes, each inside its own patch.
    Strokes,
    /// Flat background, nothing to count.
    Blank,
}

/// Counting task: "how many strokes are in the image?"
///
/// Every stroke is drawn at least four pixels away from its patch border,
/// so after the 3-pixel Gaussian and the 1-pixel Sobel support the gradient
/// never leaks into a neighbouring patch. The stroke-covering patches are
/// therefore exactly the patches with non-zero structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub seed: u64,
    pub variant: TaskVariant,
    pub image: RasterImage,
    pub patch_size: usize,
    pub grid_patches: usize,
    /// Patch indices (row-major) covered by a stroke, ascending.
    pub key_patches: Vec<usize>,
    pub prompt: String,
}

impl SyntheticTask {
    pub fn answer(&self) -> usize {
        self.key_patches.len()
    }

    /// 1 when the response's answer token equals the stroke count, else 0.
    pub fn verify(&self, tokens: &[u32]) -> Result<f64> {
        let answer = tokens
            .iter()
            .rev()
            .find_map(|&t| decode_answer(t))
            .ok_or_else(|| KawhiError::Task(format!("task {}: response has no answer token", self.seed)))?;
        Ok(if answer == self.answer() { 1.0 } else { 0.0 })
    }

    /// Token id of the correct answer.
    pub fn answer_token(&self) -> u32 {
        answer_token(self.answer())
    }
}

pub fn generate_task(seed: u64, patch_size: usize, grid_patches: usize) -> Result<SyntheticTask> {
    generate_task_variant(seed, TaskVariant::Strokes, patch_size, grid_patches)
}

pub fn generate_task_variant(
    seed: u64,
    variant: TaskVariant,
    patch_size: usize,
    grid_patches: usize,
) -> Result<SyntheticTask> {
    if patch_size < 12 {
        return Err(KawhiError::invalid(format!(
            "patch_size {patch_size} too small to keep strokes inside their patch (need >= 12)"
        )));
    }
    if grid_patches == 0 {
        return Err(KawhiError::invalid("grid_patches must be positive"));
    }
    let side = patch_size * grid_patches;
    let mut image = RasterImage::filled_gray(side, side, BACKGROUND_LEVEL)?;
    let mut rng = SeededRng::new(seed);
    let count = match variant {
        TaskVariant::Strokes => (1 + rng.below(MAX_STROKES as u64) as usize).min(grid_patches * grid_patches),
        TaskVariant::Blank => 0,
    };
    let all: Vec<usize> = (0..grid_patches * grid_patches).collect();
    let mut key_patches = rng.sample_without_replacement(&all, count);
    for &p in &key_patches {
        let (row, col) = (p / grid_patches, p % grid_patches);
        let (x0, y0) = (col * patch_size, row * patch_size);
        // long axis spans [4, ps-4), short axis two pixels wide around the centre
        let lo = 4;
        let hi = patch_size - 4;
        let mid = patch_size / 2 - 1;
        let vertical = rng.below(2) == 0;
        for a in lo..hi {
            for b in mid..mid + 2 {
                let (x, y) = if vertical { (b, a) } else { (a, b) };
                image.set_gray(x0 + x, y0 + y, STROKE_LEVEL);
            }
        }
    }
    key_patches.sort_unstable();
    Ok(SyntheticTask {
        seed,
        variant,
        image,
        patch_size,
        grid_patches,
        key_patches,
        prompt: format!("How many strokes are in the image? Answer with a digit 0-{MAX_STROKES}."),
    })
}

/// Words the policy may emit in free slots, in token-id order.
pub(crate) const WORDS: [&str; 9] = ["look", "at", "the", "strokes", "count", "each", "mark", "there", "are"];
