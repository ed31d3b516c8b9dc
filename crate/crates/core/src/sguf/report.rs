use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SgufConfig, SgufOutput};
use crate::error::{KawhiError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSummary {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSummary {
    pub id: usize,
    pub size: usize,
    pub energy: f64,
    pub is_key: bool,
}

/// JSON document written by `kawhi regions`. Field order is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsReport {
    pub grid: GridSummary,
    pub labels: Vec<usize>,
    pub regions: Vec<RegionSummary>,
    pub selected: Vec<usize>,
    pub config: SgufConfig,
}

impl RegionsReport {
    pub fn from_output(out: &SgufOutput, cfg: &SgufConfig) -> Self {
        let p = &out.partition;
        Self {
            grid: GridSummary {
                rows: p.grid.rows,
                cols: p.grid.cols,
                patch_size: p.grid.patch_size,
            },
            labels: p.labels.clone(),
            regions: p
                .regions
                .iter()
                .map(|r| RegionSummary {
                    id: r.id,
                    size: r.size(),
                    energy: r.energy,
                    is_key: r.is_key,
                })
                .collect(),
            selected: out.selection.selected.clone(),
            config: cfg.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KawhiError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
