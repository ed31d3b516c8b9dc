use serde::{Deserialize, Serialize};

use super::{GradientField, LuminanceField};
use crate::error::{KawhiError, Result};
use crate::exec::{map_indices, Execution};
use crate::numerics::{eig2x2_symmetric, EigenPair, Tensor};

/// Typical ViT patch edge in pixels.
pub const DEFAULT_PATCH_SIZE: usize = 14;

/// Square tiling of the pixel grid; partial patches on the right and bottom
/// edges are kept with their true pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub width: usize,
    pub height: usize,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || width == 0 || height == 0 {
            return Err(KawhiError::invalid(format!(
                "patch grid needs positive sizes, got {width}x{height} / {patch_size}"
            )));
        }
        Ok(Self {
            patch_size,
            rows: height.div_ceil(patch_size),
            cols: width.div_ceil(patch_size),
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    /// Pixel ranges `(x0..x1, y0..y1)` of a patch.
    pub fn bounds(&self, row: usize, col: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let p = self.patch_size;
        let x0 = col * p;
        let y0 = row * p;
        (x0..(x0 + p).min(self.width), y0..(y0 + p).min(self.height))
    }
}

/// Area-normalized structure tensor of one patch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PatchStats {
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
    pub eigen: EigenPair,
    /// Mean of the smoothed L* field over the patch.
    pub mean_luminance: f64,
}

impl PatchStats {
    /// Build from raw tensor entries; eigenvalues via the closed form.
    pub fn from_tensor(sxx: f64, sxy: f64, syy: f64, mean_luminance: f64) -> Result<Self> {
        Ok(Self {
            sxx,
            sxy,
            syy,
            eigen: eig2x2_symmetric(sxx, sxy, syy)?,
            mean_luminance,
        })
    }

    pub fn trace(&self) -> f64 {
        self.sxx + self.syy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureTensorField {
    pub grid: PatchGrid,
    pub patches: Vec<PatchStats>,
}

impl StructureTensorField {
    pub fn new(grid: PatchGrid, patches: Vec<PatchStats>) -> Result<Self> {
        if patches.len() != grid.len() {
            return Err(KawhiError::invalid(format!(
                "{} patches for a {}x{} grid",
                patches.len(),
                grid.rows,
                grid.cols
            )));
        }
        Ok(Self { grid, patches })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// `[rows, cols, 6]`: sxx, sxy, syy, lambda_max, lambda_min, mean L*.
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .patches
            .iter()
            .flat_map(|p| {
                [
                    p.sxx,
                    p.sxy,
                    p.syy,
                    p.eigen.lambda_max,
                    p.eigen.lambda_min,
                    p.mean_luminance,
                ]
            })
            .map(|v| v as f32)
            .collect();
        Tensor::new(vec![self.grid.rows, self.grid.cols, 6], data).expect("shape matches by construction")
    }
}

pub fn patch_structure_tensors(
    gradients: &GradientField,
    luminance: &LuminanceField,
    grid: &PatchGrid,
) -> Result<StructureTensorField> {
    patch_structure_tensors_with(gradients, luminance, grid, Execution::default())
}

/// Accumulate `sum(g g^T) / |P|` and the mean luminance for every patch.
pub fn patch_structure_tensors_with(
    gradients: &GradientField,
    luminance: &LuminanceField,
    grid: &PatchGrid,
    exec: Execution,
) -> Result<StructureTensorField> {
    let (w, h) = (gradients.width(), gradients.height());
    if (w, h) != (luminance.width(), luminance.height()) || (w, h) != (grid.width, grid.height) {
        return Err(KawhiError::invalid(format!(
            "grid {}x{}, gradients {w}x{h} and luminance {}x{} disagree",
            grid.width,
            grid.height,
            luminance.width(),
            luminance.height()
        )));
    }
    let (gx, gy, lum) = (gradients.gx(), gradients.gy(), luminance.values());
    let patches = map_indices(exec, grid.len(), |index| {
        let (row, col) = grid.row_col(index);
        let (xs, ys) = grid.bounds(row, col);
        let area = (xs.len() * ys.len()) as f64;
        let (mut sxx, mut sxy, mut syy, mut l) = (0.0, 0.0, 0.0, 0.0);
        for y in ys {
            for x in xs.clone() {
                let i = y * w + x;
                sxx += gx[i] * gx[i];
                sxy += gx[i] * gy[i];
                syy += gy[i] * gy[i];
                l += lum[i];
            }
        }
        PatchStats::from_tensor(sxx / area, sxy / area, syy / area, l / area)
    });
    let patches = patches.into_iter().collect::<Result<Vec<_>>>()?;
    StructureTensorField::new(*grid, patches)
}
