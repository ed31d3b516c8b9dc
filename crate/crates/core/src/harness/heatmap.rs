use super::step::ResponseReport;
use crate::error::Result;
use crate::geometry::RasterImage;
use crate::sguf::{RegionPartition, TokenSelection};

const BAR_HEIGHT: usize = 16;

/// Static RGB picture of one step: the image with key-region patches tinted
/// red and sampled background patches tinted blue, above a strip with one
/// cell per response token whose red intensity is the token's weight.
pub fn render_heatmap(
    image: &RasterImage,
    partition: &RegionPartition,
    selection: &TokenSelection,
    response: &ResponseReport,
) -> Result<RasterImage> {
    let (w, h) = (image.width(), image.height());
    let grid = &partition.grid;
    let key: Vec<bool> = partition.labels.iter().map(|&l| partition.regions[l].is_key).collect();
    let mut sampled = vec![false; grid.len()];
    for &s in &selection.selected {
        sampled[s] = true;
    }
    let mut data = Vec::with_capacity(w * (h + BAR_HEIGHT) * 3);
    for y in 0..h {
        for x in 0..w {
            let px = image.pixel(x, y);
            let g = (px.iter().map(|&v| v as u32).sum::<u32>() / px.len() as u32) as u8;
            let patch = grid.index(y / grid.patch_size, x / grid.patch_size);
            let rgb = if key[patch] {
                [g.max(160), g / 3, g / 3]
            } else if sampled[patch] {
                [g / 2, g / 2, g.max(160)]
            } else {
                [g, g, g]
            };
            data.extend_from_slice(&rgb);
        }
    }
    let weights = &response.token_weights;
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    for _ in 0..BAR_HEIGHT {
        for x in 0..w {
            let rgb = if weights.is_empty() {
                [0, 0, 0]
            } else {
                let t = x * weights.len() / w;
                let level = if max_w > 0.0 { weights[t] / max_w } else { 0.0 };
                [(255.0 * level).round() as u8, 32, 32]
            };
            data.extend_from_slice(&rgb);
        }
    }
    RasterImage::new(w, h + BAR_HEIGHT, 3, data)
}
