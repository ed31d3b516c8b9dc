use std::sync::OnceLock;

use super::{LuminanceField, RasterImage};
use crate::error::Result;

// D65 relative luminance from linear sRGB
const Y_R: f64 = 0.2126;
const Y_G: f64 = 0.7152;
const Y_B: f64 = 0.0722;

/// sRGB transfer function inverse for one 8-bit channel value.
pub fn srgb_to_linear(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// CIE L* from relative luminance Y (white Y = 1).
pub fn lightness_from_linear(y: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    let f = if y > DELTA * DELTA * DELTA {
        y.cbrt()
    } else {
        y / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    };
    (116.0 * f - 16.0).clamp(0.0, 100.0)
}

fn linear_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|v| srgb_to_linear(v as u8)))
}

fn gray_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let lin = linear_lut();
        std::array::from_fn(|v| lightness_from_linear((Y_R + Y_G + Y_B) * lin[v]))
    })
}

/// sRGB (D65) raster to the CIELab L* channel.
pub fn to_luminance(img: &RasterImage) -> Result<LuminanceField> {
    let values: Vec<f64> = match img.channels() {
        1 => {
            let lut = gray_lut();
            img.data().iter().map(|&v| lut[v as usize]).collect()
        }
        _ => {
            let lin = linear_lut();
            img.data()
                .chunks_exact(3)
                .map(|p| {
                    let y = Y_R * lin[p[0] as usize] + Y_G * lin[p[1] as usize] + Y_B * lin[p[2] as usize];
                    lightness_from_linear(y)
                })
                .collect()
        }
    };
    LuminanceField::new(img.width(), img.height(), values)
}
