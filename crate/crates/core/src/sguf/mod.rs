//! Structure-guided Union-Find: key-region extraction and hybrid token sampling.
//!
//! Patches are nodes of a 4-connected grid graph. An edge is kept when both
//! the normalized eigenvalue gap and the luminance gap are strictly below
//! their thresholds; components of the kept-edge graph are the regions.
//! Regions whose mean structure-tensor trace exceeds `beta * median` are key
//! regions and keep every token; the rest are subsampled at `1 - skip_ratio`.

mod report;
mod union_find;

pub use report::{GridSummary, RegionSummary, RegionsReport};
pub use union_find::UnionFind;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};
use crate::exec::{for_each_chunk, Execution};
use crate::geometry::{
    gaussian_smooth_with, patch_structure_tensors_with, sobel_gradients_with, to_luminance, PatchGrid, PatchStats,
    RasterImage, StructureTensorField,
};
use crate::numerics::{median, SeededRng};

/// Region-extraction hyperparameters. Field names follow the published
/// hyperparameter table so config files read naturally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgufConfig {
    /// Upper bound (strict) on the normalized eigenvalue gap for a merge.
    pub structural_saliency_threshold: f64,
    /// Upper bound (strict) on `|L_i - L_j|`, L* units.
    pub luminance_threshold: f64,
    /// Multiplier on the median region energy that sets the key/background cut.
    pub energy_threshold: f64,
    /// When set, replaces `energy_threshold * median` with this absolute cut.
    pub absolute_energy_threshold: Option<f64>,
    pub gaussian_sigma: f64,
    /// Fraction of background tokens dropped.
    pub skip_ratio: f64,
    /// Luminance weight in the diagnostic dissimilarity; the merge rule ignores it.
    pub luminance_tradeoff: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SgufConfig {
    fn default() -> Self {
        Self {
            structural_saliency_threshold: 0.5,
            luminance_threshold: 30.0,
            energy_threshold: 0.1,
            absolute_energy_threshold: None,
            gaussian_sigma: 1.0,
            skip_ratio: 0.7,
            luminance_tradeoff: 1.0,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl SgufConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("structural_saliency_threshold", self.structural_saliency_threshold),
            ("luminance_threshold", self.luminance_threshold),
            ("energy_threshold", self.energy_threshold),
            ("gaussian_sigma", self.gaussian_sigma),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(KawhiError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.skip_ratio) {
            return Err(KawhiError::invalid(format!(
                "skip_ratio must lie in [0, 1], got {}",
                self.skip_ratio
            )));
        }
        if !(self.luminance_tradeoff >= 0.0 && self.luminance_tradeoff.is_finite()) {
            return Err(KawhiError::invalid("luminance_tradeoff must be non-negative"));
        }
        if let Some(t) = self.absolute_energy_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(KawhiError::invalid("absolute_energy_threshold must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Frobenius norm of `diag(lmax_i - lmax_j, lmin_i - lmin_j)`.
fn eigen_gap(a: &PatchStats, b: &PatchStats) -> f64 {
    (a.eigen.lambda_max - b.eigen.lambda_max).hypot(a.eigen.lambda_min - b.eigen.lambda_min)
}

/// Unified structure + luminance dissimilarity (diagnostic only).
pub fn pair_dissimilarity(a: &PatchStats, b: &PatchStats, cfg: &SgufConfig) -> f64 {
    let denom = a.eigen.lambda_max.max(b.eigen.lambda_max).max(cfg.epsilon);
    eigen_gap(a, b) / denom + cfg.luminance_tradeoff * (a.mean_luminance - b.mean_luminance).abs() / 100.0
}

/// The dual-threshold merge predicate used by [`merge_regions`].
pub fn merge_allowed(a: &PatchStats, b: &PatchStats, cfg: &SgufConfig) -> bool {
    let denom = a
        .eigen
        .lambda_max
        .max(b.eigen.lambda_max)
        .max(a.eigen.lambda_min)
        .max(b.eigen.lambda_min)
        .max(cfg.epsilon);
    eigen_gap(a, b) / denom < cfg.structural_saliency_threshold
        && (a.mean_luminance - b.mean_luminance).abs() < cfg.luminance_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    /// Range of [`RegionPartition::order`] holding this region's patches.
    pub span: Range<usize>,
    pub energy: f64,
    pub is_key: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    pub grid: PatchGrid,
    /// Region id per patch; ids are numbered by first appearance in raster order.
    pub labels: Vec<usize>,
    /// Patch indices grouped by region id, ascending within each region.
    pub order: Vec<usize>,
    pub regions: Vec<Region>,
    /// Cut applied by [`classify_regions`], if it has run.
    pub energy_cut: Option<f64>,
}

impl Region {
    pub fn size(&self) -> usize {
        self.span.len()
    }
}

impl RegionPartition {
    /// Patch (token) indices of `region`, ascending.
    pub fn members(&self, region: &Region) -> &[usize] {
        &self.order[region.span.clone()]
    }

    pub fn key_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.is_key)
    }

    pub fn key_tokens(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .key_regions()
            .flat_map(|r| self.members(r).iter().copied())
            .collect();
        t.sort_unstable();
        t
    }
}

pub fn merge_regions(field: &StructureTensorField, cfg: &SgufConfig) -> Result<RegionPartition> {
    merge_regions_with(field, cfg, Execution::default())
}

/// Connected components of the grid graph restricted to edges that pass
/// [`merge_allowed`]. Edge tests may run in parallel; unions are sequential.
pub fn merge_regions_with(field: &StructureTensorField, cfg: &SgufConfig, exec: Execution) -> Result<RegionPartition> {
    let mut out = RegionPartition {
        grid: field.grid,
        labels: Vec::new(),
        order: Vec::new(),
        regions: Vec::new(),
        energy_cut: None,
    };
    merge_regions_into(field, cfg, exec, &mut MergeScratch::default(), &mut out)?;
    Ok(out)
}

/// Buffers reused across [`merge_regions_into`] calls.
#[derive(Debug, Clone)]
pub struct MergeScratch {
    edges: Vec<u8>,
    uf: UnionFind,
    starts: Vec<usize>,
}

impl Default for MergeScratch {
    fn default() -> Self {
        Self {
            edges: Vec::new(),
            uf: UnionFind::new(0),
            starts: Vec::new(),
        }
    }
}

/// [`merge_regions_with`] writing into `out` and reusing its buffers and
/// `scratch`, so steady-state calls on same-sized grids do not allocate.
pub fn merge_regions_into(
    field: &StructureTensorField,
    cfg: &SgufConfig,
    exec: Execution,
    scratch: &mut MergeScratch,
    out: &mut RegionPartition,
) -> Result<()> {
    cfg.validate()?;
    if field.is_empty() {
        return Err(KawhiError::invalid("cannot merge an empty patch field"));
    }
    let grid = field.grid;
    let patches = &field.patches;
    let n = patches.len();

    // bit 0: merge with right neighbour, bit 1: merge with the patch below
    let edges = &mut scratch.edges;
    edges.clear();
    edges.resize(n, 0);
    for_each_chunk(exec, edges, grid.cols, |row, bits| {
        let base = row * grid.cols;
        for (col, b) in bits.iter_mut().enumerate() {
            let i = base + col;
            *b = 0;
            if col + 1 < grid.cols && merge_allowed(&patches[i], &patches[i + 1], cfg) {
                *b |= 1;
            }
            if row + 1 < grid.rows && merge_allowed(&patches[i], &patches[i + grid.cols], cfg) {
                *b |= 2;
            }
        }
    });

    let uf = &mut scratch.uf;
    uf.reset(n);
    for (i, &bits) in edges.iter().enumerate() {
        if bits & 1 != 0 {
            uf.union(i, i + 1);
        }
        if bits & 2 != 0 {
            uf.union(i, i + grid.cols);
        }
    }
    uf.canonical_labels_into(&mut out.labels);

    // counting sort of patch indices by label
    let starts = &mut scratch.starts;
    starts.clear();
    starts.resize(uf.component_count() + 1, 0);
    for &l in &out.labels {
        starts[l + 1] += 1;
    }
    for k in 1..starts.len() {
        starts[k] += starts[k - 1];
    }
    out.regions.clear();
    out.regions.extend(starts.windows(2).enumerate().map(|(id, w)| Region {
        id,
        span: w[0]..w[1],
        energy: 0.0,
        is_key: false,
    }));
    out.order.clear();
    out.order.resize(n, 0);
    for (i, &l) in out.labels.iter().enumerate() {
        out.order[starts[l]] = i;
        starts[l] += 1;
    }
    out.grid = grid;
    out.energy_cut = None;
    Ok(())
}

/// Fill each region's energy with the mean `lambda_max + lambda_min` of its patches.
pub fn region_energy(partition: &RegionPartition, field: &StructureTensorField) -> RegionPartition {
    let mut out = partition.clone();
    for region in &mut out.regions {
        let total: f64 = partition.order[region.span.clone()]
            .iter()
            .map(|&i| field.patches[i].eigen.trace())
            .sum();
        region.energy = total / region.size() as f64;
    }
    out
}

/// `beta * median(energies)`.
pub fn energy_threshold(energies: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(KawhiError::invalid(format!("beta must be positive, got {beta}")));
    }
    let m = median(energies).ok_or_else(|| KawhiError::invalid("no regions to threshold"))?;
    Ok(beta * m)
}

/// Mark regions with energy strictly above the cut as key regions.
pub fn classify_regions(partition: &RegionPartition, cfg: &SgufConfig) -> Result<RegionPartition> {
    let energies: Vec<f64> = partition.regions.iter().map(|r| r.energy).collect();
    let cut = match cfg.absolute_energy_threshold {
        Some(t) => t,
        None => energy_threshold(&energies, cfg.energy_threshold)?,
    };
    let mut out = partition.clone();
    for r in &mut out.regions {
        r.is_key = r.energy > cut;
    }
    out.energy_cut = Some(cut);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSelection {
    /// Selected patch indices, ascending, no duplicates.
    pub selected: Vec<usize>,
    pub key_count: usize,
    pub background_sampled_count: usize,
}

impl TokenSelection {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// Keep all key-region tokens; from each background region draw
/// `round((1 - skip_ratio) * size)` tokens uniformly without replacement.
/// Regions are visited in id order so the draw sequence is reproducible.
pub fn select_tokens(partition: &RegionPartition, cfg: &SgufConfig, rng: &mut SeededRng) -> Result<TokenSelection> {
    cfg.validate()?;
    let keep = 1.0 - cfg.skip_ratio;
    let mut selected = Vec::with_capacity(partition.labels.len());
    let (mut key_count, mut background) = (0, 0);
    for region in &partition.regions {
        if region.is_key {
            selected.extend_from_slice(partition.members(region));
            key_count += region.size();
        } else {
            let k = (keep * region.size() as f64).round() as usize;
            let drawn = rng.sample_without_replacement(partition.members(region), k);
            background += drawn.len();
            selected.extend(drawn);
        }
    }
    selected.sort_unstable();
    Ok(TokenSelection {
        selected,
        key_count,
        background_sampled_count: background,
    })
}

/// Everything the region stage produces for one image.
#[derive(Debug, Clone)]
pub struct SgufOutput {
    pub field: StructureTensorField,
    pub partition: RegionPartition,
    pub selection: TokenSelection,
}

/// Region extraction starting from an already-computed tensor field.
pub fn sguf_from_field(field: StructureTensorField, cfg: &SgufConfig, exec: Execution) -> Result<SgufOutput> {
    let merged = merge_regions_with(&field, cfg, exec)?;
    let energized = region_energy(&merged, &field);
    let partition = classify_regions(&energized, cfg)?;
    let mut rng = SeededRng::new(cfg.seed);
    let selection = select_tokens(&partition, cfg, &mut rng)?;
    Ok(SgufOutput {
        field,
        partition,
        selection,
    })
}

pub fn sguf_pipeline(img: &RasterImage, cfg: &SgufConfig, patch_size: usize) -> Result<SgufOutput> {
    sguf_pipeline_with(img, cfg, patch_size, Execution::default())
}

/// Full chain: L* -> Gaussian -> Sobel -> tensors -> merge -> energy -> cut -> sample.
pub fn sguf_pipeline_with(
    img: &RasterImage,
    cfg: &SgufConfig,
    patch_size: usize,
    exec: Execution,
) -> Result<SgufOutput> {
    cfg.validate()?;
    let grid = PatchGrid::new(img.width(), img.height(), patch_size)?;
    let lum = to_luminance(img)?;
    let smoothed = gaussian_smooth_with(&lum, cfg.gaussian_sigma, exec)?;
    let grads = sobel_gradients_with(&smoothed, exec);
    let field = patch_structure_tensors_with(&grads, &smoothed, &grid, exec)?;
    sguf_from_field(field, cfg, exec)
}
