use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};

/// One sampled response. Serialized as a single JSON line:
///
/// ```text
/// {"tokens":[..],"reward":1.0,"logp_old":[..],"logp_new":[..],
///  "paragraph_spans":[[0,4],[4,9]],"paragraph_weights":[0.7,0.3]}
/// ```
///
/// `paragraph_spans` are owned token ranges `[start, end)` tiling the
/// response; `paragraph_weights` holds one weight per span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub tokens: Vec<u32>,
    pub reward: f64,
    pub logp_old: Vec<f64>,
    pub logp_new: Vec<f64>,
    #[serde(default)]
    pub paragraph_spans: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph_weights: Option<Vec<f64>>,
}

impl Response {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn validate(&self, g: usize) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(KawhiError::invalid(format!("response {g} has no tokens")));
        }
        if self.logp_old.len() != n || self.logp_new.len() != n {
            return Err(KawhiError::invalid(format!(
                "response {g}: {n} tokens but {} old / {} new log-probs",
                self.logp_old.len(),
                self.logp_new.len()
            )));
        }
        if !self.reward.is_finite() {
            return Err(KawhiError::invalid(format!("response {g}: reward is not finite")));
        }
        for lp in [&self.logp_old, &self.logp_new] {
            if let Some(t) = lp.iter().position(|x| !x.is_finite()) {
                return Err(KawhiError::Numeric {
                    index: t,
                    detail: format!("response {g}: non-finite log-prob"),
                });
            }
        }
        if !self.paragraph_spans.is_empty() {
            let mut expect = 0;
            for s in &self.paragraph_spans {
                if s[0] != expect || s[1] <= s[0] {
                    return Err(KawhiError::invalid(format!(
                        "response {g}: paragraph spans must tile the tokens in order, got {:?}",
                        self.paragraph_spans
                    )));
                }
                expect = s[1];
            }
            if expect != n {
                return Err(KawhiError::invalid(format!(
                    "response {g}: paragraph spans end at {expect}, response has {n} tokens"
                )));
            }
        }
        if let Some(w) = &self.paragraph_weights {
            if w.len() != self.paragraph_spans.len() {
                return Err(KawhiError::invalid(format!(
                    "response {g}: {} paragraph weights for {} spans",
                    w.len(),
                    self.paragraph_spans.len()
                )));
            }
        }
        Ok(())
    }

    /// Paragraph weights broadcast to tokens, if attached.
    pub fn token_weights(&self) -> Option<Vec<f64>> {
        let w = self.paragraph_weights.as_ref()?;
        let mut out = vec![0.0; self.tokens.len()];
        for (s, &wj) in self.paragraph_spans.iter().zip(w) {
            out[s[0]..s[1]].fill(wj);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub responses: Vec<Response>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.responses.is_empty() {
            return Err(KawhiError::invalid("rollout group is empty"));
        }
        for (g, r) in self.responses.iter().enumerate() {
            r.validate(g)?;
        }
        Ok(())
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.reward).collect()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.responses.iter().map(Response::len).collect()
    }

    /// Per-token weights for every response, or `None` unless all responses carry weights.
    pub fn token_weights(&self) -> Result<Option<Vec<Vec<f64>>>> {
        let with = self.responses.iter().filter(|r| r.paragraph_weights.is_some()).count();
        if with == 0 {
            return Ok(None);
        }
        if with != self.responses.len() {
            return Err(KawhiError::invalid(format!(
                "{with} of {} responses carry paragraph weights; attach to all or none",
                self.responses.len()
            )));
        }
        Ok(Some(
            self.responses
                .iter()
                .map(|r| r.token_weights().unwrap_or_default())
                .collect(),
        ))
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut responses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Response =
                serde_json::from_str(line).map_err(|e| KawhiError::invalid(format!("rollout line {}: {e}", i + 1)))?;
            responses.push(r);
        }
        let group = Self { responses };
        group.validate()?;
        Ok(group)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.responses {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KawhiError::io(path, e))?;
        Self::from_jsonl(&text)
    }
}
