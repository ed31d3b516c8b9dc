use super::{GradientField, LuminanceField};
use crate::error::{KawhiError, Result};
use crate::exec::{for_each_chunk, Execution};

/// Normalized 1-D Gaussian taps over `[-r, r]`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(KawhiError::invalid(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

pub fn gaussian_smooth(field: &LuminanceField, sigma: f64) -> Result<LuminanceField> {
    gaussian_smooth_with(field, sigma, Execution::default())
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_smooth_with(field: &LuminanceField, sigma: f64, exec: Execution) -> Result<LuminanceField> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (field.width(), field.height());

    let mut horizontal = vec![0.0; w * h];
    for_each_chunk(exec, &mut horizontal, w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &tap) in kernel.iter().enumerate() {
                acc += tap * field.clamped(x as isize + k as isize - radius, y as isize);
            }
            *out = acc;
        }
    });
    let horizontal = LuminanceField::new(w, h, horizontal)?;

    let mut out = vec![0.0; w * h];
    for_each_chunk(exec, &mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &tap) in kernel.iter().enumerate() {
                acc += tap * horizontal.clamped(x as isize, y as isize + k as isize - radius);
            }
            *o = acc;
        }
    });
    LuminanceField::new(w, h, out)
}

pub fn sobel_gradients(field: &LuminanceField) -> GradientField {
    sobel_gradients_with(field, Execution::default())
}

/// 3x3 Sobel scaled by 1/8, so a unit-slope ramp gives gradient 1.
/// `gy` is positive downward (increasing row index).
pub fn sobel_gradients_with(field: &LuminanceField, exec: Execution) -> GradientField {
    let (w, h) = (field.width(), field.height());
    // interleaved (gx, gy) so one chunk per row carries both components
    let mut packed = vec![(0.0f64, 0.0f64); w * h];
    for_each_chunk(exec, &mut packed, w, |y, row| {
        let y = y as isize;
        for (x, out) in row.iter_mut().enumerate() {
            let x = x as isize;
            let p = |dx: isize, dy: isize| field.clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            *out = (gx / 8.0, gy / 8.0);
        }
    });
    let (gx, gy) = packed.into_iter().unzip();
    GradientField::new(w, h, gx, gy).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_normalized_with_radius() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.4).unwrap().len(), 5);
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());
    }

    #[test]
    fn constant_field_is_fixed_point() {
        let f = LuminanceField::new(9, 7, vec![42.5; 63]).unwrap();
        let s = gaussian_smooth(&f, 1.0).unwrap();
        assert!(s.values().iter().all(|&v| (v - 42.5).abs() < 1e-12));
        let g = sobel_gradients(&f);
        assert!(g.gx().iter().chain(g.gy()).all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_response() {
        // direct evaluation: separable kernel peak is k0^2, total mass 1
        let n = 21;
        let mut v = vec![0.0; n * n];
        v[10 * n + 10] = 1.0;
        let f = LuminanceField::new(n, n, v).unwrap();
        let s = gaussian_smooth(&f, 1.0).unwrap();
        let taps: Vec<f64> = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).collect();
        let z: f64 = taps.iter().sum();
        let peak = (1.0 / z) * (1.0 / z);
        assert!((s.get(10, 10) - peak).abs() < 1e-12);
        assert!((s.values().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(s.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn ramps_give_unit_slope() {
        let fx = LuminanceField::from_fn(8, 6, |x, _| x as f64).unwrap();
        let g = sobel_gradients(&fx);
        for y in 1..5 {
            for x in 1..7 {
                assert!((g.gx()[y * 8 + x] - 1.0).abs() < 1e-12);
                assert!(g.gy()[y * 8 + x].abs() < 1e-12);
            }
        }
        let fy = LuminanceField::from_fn(8, 6, |_, y| y as f64).unwrap();
        let g = sobel_gradients(&fy);
        for y in 1..5 {
            for x in 1..7 {
                assert!(g.gx()[y * 8 + x].abs() < 1e-12);
                assert!((g.gy()[y * 8 + x] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let f = LuminanceField::from_fn(37, 23, |x, y| ((x * 31 + y * 17) % 101) as f64).unwrap();
        let a = gaussian_smooth_with(&f, 1.3, Execution::Sequential).unwrap();
        let b = gaussian_smooth_with(&f, 1.3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            sobel_gradients_with(&a, Execution::Sequential),
            sobel_gradients_with(&a, Execution::Parallel)
        );
    }
}
