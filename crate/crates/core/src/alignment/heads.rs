use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};

/// Vision-critical heads found by global ablation on Qwen2.5-VL-7B-Instruct.
pub const QWEN25_VL_7B_CRITICAL_HEADS: [usize; 9] = [0, 1, 3, 22, 23, 24, 25, 26, 27];
/// Vision-critical heads found by global ablation on Qwen3-VL-4B-Instruct.
pub const QWEN3_VL_4B_CRITICAL_HEADS: [usize; 8] = [2, 3, 4, 12, 13, 19, 25, 27];

/// Attention geometry plus the head subset used for saliency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub num_query_heads: usize,
    pub num_key_heads: usize,
    pub head_dim: usize,
    /// Query-head indices, ascending and unique after [`HeadConfig::new`].
    pub critical_heads: Vec<usize>,
}

impl HeadConfig {
    pub fn new(
        num_query_heads: usize,
        num_key_heads: usize,
        head_dim: usize,
        critical_heads: Vec<usize>,
    ) -> Result<Self> {
        let mut cfg = Self {
            num_query_heads,
            num_key_heads,
            head_dim,
            critical_heads,
        };
        cfg.critical_heads.sort_unstable();
        cfg.critical_heads.dedup();
        cfg.validate()?;
        Ok(cfg)
    }

    /// 28 query heads sharing 4 key heads, head_dim 128.
    pub fn qwen25_vl_7b() -> Self {
        Self::new(28, 4, 128, QWEN25_VL_7B_CRITICAL_HEADS.to_vec()).expect("valid preset")
    }

    /// 32 query heads sharing 8 key heads, head_dim 128.
    pub fn qwen3_vl_4b() -> Self {
        Self::new(32, 8, 128, QWEN3_VL_4B_CRITICAL_HEADS.to_vec()).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        let (hq, hk) = (self.num_query_heads, self.num_key_heads);
        if hq == 0 || hk == 0 || self.head_dim == 0 {
            return Err(KawhiError::invalid(format!(
                "head counts and head_dim must be positive (H_q={hq}, H_k={hk}, d={})",
                self.head_dim
            )));
        }
        if hq % hk != 0 {
            return Err(KawhiError::invalid(format!(
                "H_q={hq} is not a multiple of H_k={hk}; grouped-query attention needs H_q = g * H_k"
            )));
        }
        if self.critical_heads.is_empty() {
            return Err(KawhiError::invalid("critical head set is empty"));
        }
        if let Some(&h) = self.critical_heads.iter().find(|&&h| h >= hq) {
            return Err(KawhiError::invalid(format!(
                "critical head {h} out of range for H_q={hq}"
            )));
        }
        Ok(())
    }

    /// Query heads per key head.
    pub fn group_size(&self) -> usize {
        self.num_query_heads / self.num_key_heads
    }

    /// Key head read by query head `h`.
    pub fn key_head_for(&self, h: usize) -> usize {
        h / self.group_size()
    }

    /// Same geometry with every query head marked critical.
    pub fn with_all_heads(&self) -> Self {
        Self {
            critical_heads: (0..self.num_query_heads).collect(),
            ..self.clone()
        }
    }
}

/// Parse `"0,1,3,22-27"` into `[0, 1, 3, 22, 23, 24, 25, 26, 27]`.
pub fn parse_head_list(spec: &str) -> Result<Vec<usize>> {
    let mut heads = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| KawhiError::invalid(format!("bad head index {s:?} in {spec:?}")))
        };
        match part.split_once('-') {
            Some((lo, hi)) => {
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if lo > hi {
                    return Err(KawhiError::invalid(format!("empty head range {part:?}")));
                }
                heads.extend(lo..=hi);
            }
            None => heads.push(parse(part)?),
        }
    }
    if heads.is_empty() {
        return Err(KawhiError::invalid("head list is empty"));
    }
    heads.sort_unstable();
    heads.dedup();
    Ok(heads)
}
