//! Raster to per-patch structure tensors.
//!
//! The chain is sRGB raster -> CIELab L* -> Gaussian smoothing -> Sobel
//! gradients -> area-normalized 2x2 structure tensor per patch. Borders use
//! edge replication throughout.

mod filters;
mod luminance;
mod raster;
mod tensors;

pub use filters::{gaussian_kernel, gaussian_smooth, gaussian_smooth_with, sobel_gradients, sobel_gradients_with};
pub use luminance::{lightness_from_linear, srgb_to_linear, to_luminance};
pub use raster::RasterImage;
pub use tensors::{
    patch_structure_tensors, patch_structure_tensors_with, PatchGrid, PatchStats, StructureTensorField,
    DEFAULT_PATCH_SIZE,
};

use crate::error::{KawhiError, Result};
use crate::numerics::Tensor;

/// A scalar field over the pixel grid, L* units in `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminanceField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl LuminanceField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(KawhiError::invalid(format!(
                "luminance field {width}x{height} with {} values",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Edge-replicated read at a possibly out-of-range coordinate.
    #[inline]
    pub(crate) fn clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.values[y * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape matches by construction")
    }
}

/// Per-pixel gradient, L* per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn new(width: usize, height: usize, gx: Vec<f64>, gy: Vec<f64>) -> Result<Self> {
        if gx.len() != width * height || gy.len() != width * height {
            return Err(KawhiError::invalid(format!(
                "gradient components must have {} entries",
                width * height
            )));
        }
        Ok(Self { width, height, gx, gy })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    /// `[2, height, width]`, gx then gy.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.gx.iter().chain(&self.gy).map(|&v| v as f32).collect();
        Tensor::new(vec![2, self.height, self.width], data).expect("shape matches by construction")
    }
}
