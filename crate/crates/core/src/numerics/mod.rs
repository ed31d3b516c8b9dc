//! Deterministic numeric primitives shared by every stage.

mod rng;
mod tensor;

pub use rng::SeededRng;
pub use tensor::{tensor_read, tensor_write, Tensor, KTEN_MAGIC, KTEN_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};

/// Rounding slack below zero that is silently clamped for PSD inputs,
/// per unit of `max(1, |a| + |c|)`.
pub const EIGEN_CLAMP_SLACK: f64 = 1e-12;

/// Eigen-decomposition of a symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda_max: f64,
    pub lambda_min: f64,
    /// Orientation of the `lambda_max` eigenvector, radians in `[-pi/2, pi/2]`.
    pub principal_angle: f64,
}

impl EigenPair {
    pub fn trace(&self) -> f64 {
        self.lambda_max + self.lambda_min
    }
}

/// Closed-form eigenvalues `(a+c)/2 ± sqrt(((a-c)/2)^2 + b^2)` of a symmetric
/// PSD 2x2 matrix. Negative eigenvalues within [`EIGEN_CLAMP_SLACK`] (scaled
/// by the matrix magnitude) of zero are clamped; anything more negative is
/// rejected.
pub fn eig2x2_symmetric(a: f64, b: f64, c: f64) -> Result<EigenPair> {
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(KawhiError::invalid(format!(
            "eig2x2_symmetric: non-finite entry ({a}, {b}, {c})"
        )));
    }
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let radius = half_diff.hypot(b);
    let lambda_max = mean + radius;
    // det / lambda_max avoids cancellation in `mean - radius` for thin tensors
    let lambda_min = if lambda_max > 0.0 {
        (a * c - b * b) / lambda_max
    } else {
        mean - radius
    };
    // `a*c - b*b` carries rounding error proportional to the entries' size
    let slack = EIGEN_CLAMP_SLACK * (a.abs() + c.abs()).max(1.0);
    let clamp = |v: f64, name: &str| -> Result<f64> {
        if v >= 0.0 {
            Ok(v)
        } else if v >= -slack {
            Ok(0.0)
        } else {
            Err(KawhiError::invalid(format!(
                "eig2x2_symmetric: {name} = {v} is negative; matrix is not PSD"
            )))
        }
    };
    let lambda_max = clamp(lambda_max, "lambda_max")?;
    let lambda_min = clamp(lambda_min, "lambda_min")?.min(lambda_max);
    let principal_angle = 0.5 * (2.0 * b).atan2(a - c);
    Ok(EigenPair {
        lambda_max,
        lambda_min,
        principal_angle,
    })
}

/// Softmax of `scores / tau`, max-subtracted.
pub fn softmax_temperature(scores: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(KawhiError::invalid(format!(
            "softmax temperature must be positive, got {tau}"
        )));
    }
    if scores.is_empty() {
        return Err(KawhiError::invalid("softmax of an empty vector"));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(KawhiError::Numeric {
            index: i,
            detail: "non-finite softmax score".into(),
        });
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cosine similarity; zero-norm inputs give 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(KawhiError::invalid(format!(
            "cosine_similarity: lengths {} and {} must be equal and non-zero",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// f32 storage, f64 accumulation; same conventions as [`cosine_similarity`].
pub fn cosine_similarity_f32(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Median; even counts average the two central order statistics.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eig_examples() {
        let e = eig2x2_symmetric(4.0, 0.0, 1.0).unwrap();
        assert_eq!((e.lambda_max, e.lambda_min), (4.0, 1.0));
        let e = eig2x2_symmetric(2.0, 1.0, 2.0).unwrap();
        assert!((e.lambda_max - 3.0).abs() < 1e-12);
        assert!((e.lambda_min - 1.0).abs() < 1e-12);
        assert!((e.principal_angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let e = eig2x2_symmetric(0.0, 0.0, 0.0).unwrap();
        assert_eq!((e.lambda_max, e.lambda_min), (0.0, 0.0));
    }

    #[test]
    fn eig_errors() {
        assert!(eig2x2_symmetric(f64::NAN, 0.0, 0.0).is_err());
        assert!(eig2x2_symmetric(1.0, f64::INFINITY, 0.0).is_err());
        // indefinite: eigenvalues 2 and -1
        assert!(eig2x2_symmetric(0.5, 1.5, 0.5).is_err());
        // rounding-level negativity is clamped
        let e = eig2x2_symmetric(-5e-13, 0.0, 0.0).unwrap();
        assert_eq!(e.lambda_min, 0.0);
        assert!(eig2x2_symmetric(-2e-12, 0.0, 0.0).is_err());
        // rank-one tensor at gradient scale 1e2: b*b rounds above a*c
        let (gx, gy) = (123.456789f64, 98.7654321f64);
        let e = eig2x2_symmetric(gx * gx, gx * gy, gy * gy).unwrap();
        assert_eq!(e.lambda_min, 0.0);
        assert!((e.lambda_max - (gx * gx + gy * gy)).abs() < 1e-9);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_temperature(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax_temperature(&[3.7], 0.2).unwrap(), vec![1.0]);
        let p = softmax_temperature(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(softmax_temperature(&[1.0], 0.0).is_err());
        assert!(softmax_temperature(&[1.0], -1.0).is_err());
        assert!(softmax_temperature(&[], 1.0).is_err());
    }

    #[test]
    fn softmax_flattens_with_temperature() {
        let mut rng = SeededRng::new(17);
        let scores: Vec<f64> = (0..6).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let dev = |tau| {
            let p = softmax_temperature(&scores, tau).unwrap();
            p.iter().map(|x| (x - 1.0 / 6.0).abs()).fold(0.0, f64::max)
        };
        let (d1, d10, d100) = (dev(1.0), dev(10.0), dev(100.0));
        assert!(d1 > d10 && d10 > d100, "{d1} {d10} {d100}");
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine_similarity(&[], &[]).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[6.0, 2.0, 10.0]), Some(6.0));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    proptest! {
        #[test]
        fn eig_trace_and_det(p in -10.0f64..10.0, q in -10.0f64..10.0, r in -10.0f64..10.0, s in -10.0f64..10.0) {
            // M = F F^T is PSD for any F = [[p, q], [r, s]]
            let a = p * p + q * q;
            let b = p * r + q * s;
            let c = r * r + s * s;
            let e = eig2x2_symmetric(a, b, c).unwrap();
            prop_assert!(e.lambda_max >= e.lambda_min && e.lambda_min >= 0.0);
            prop_assert!((e.trace() - (a + c)).abs() < 1e-9);
            let det = (p * s - q * r).powi(2);
            let prod = e.lambda_max * e.lambda_min;
            prop_assert!((prod - det).abs() <= 1e-7 * det.max(1e-300) + 1e-12, "prod {} det {}", prod, det);
            prop_assert!(e.principal_angle.abs() <= std::f64::consts::FRAC_PI_2 + 1e-15);
        }

        #[test]
        fn softmax_shift_invariant(scores in prop::collection::vec(-20.0f64..20.0, 1..12), shift in -50.0f64..50.0, tau in 0.05f64..20.0) {
            let p = softmax_temperature(&scores, tau).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let q = softmax_temperature(&shifted, tau).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in p.iter().zip(&q) {
                prop_assert!(*x > 0.0);
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn cosine_bounded(u in prop::collection::vec(-5.0f64..5.0, 1..16)) {
            let v: Vec<f64> = u.iter().rev().cloned().collect();
            let c = cosine_similarity(&u, &v).unwrap();
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }
}
