use proptest::prelude::*;

use kawhi::alignment::{spatial_saliency, AttentionStates, HeadConfig};
use kawhi::geometry::{
    gaussian_smooth, patch_structure_tensors, sobel_gradients, to_luminance, GradientField, LuminanceField, PatchGrid,
    RasterImage,
};
use kawhi::harness::generate_task;
use kawhi::numerics::{SeededRng, Tensor};
use kawhi::sguf::{classify_regions, merge_regions, region_energy, sguf_pipeline, SgufConfig};

/// Flat background plus a few random rectangles and a little noise.
fn random_image(seed: u64, w: usize, h: usize) -> RasterImage {
    let mut rng = SeededRng::new(seed);
    let mut data: Vec<u8> = (0..w * h).map(|_| 180 + rng.below(8) as u8).collect();
    for _ in 0..rng.below(5) {
        let (x0, y0) = (rng.below(w as u64) as usize, rng.below(h as u64) as usize);
        let (x1, y1) = (
            (x0 + 1 + rng.below(10) as usize).min(w),
            (y0 + 1 + rng.below(10) as usize).min(h),
        );
        let v = rng.below(256) as u8;
        for y in y0..y1 {
            for x in x0..x1 {
                data[y * w + x] = v;
            }
        }
    }
    RasterImage::new(w, h, 1, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn luminance_in_range(seed in any::<u64>(), w in 1usize..24, h in 1usize..24) {
        let lum = to_luminance(&random_image(seed, w, h)).unwrap();
        prop_assert!(lum.values().iter().all(|&v| (0.0..=100.0).contains(&v)));
    }

    #[test]
    fn tensors_are_psd_with_trace_identity(seed in any::<u64>(), w in 8usize..40, h in 8usize..40, ps in 2usize..9) {
        let lum = gaussian_smooth(&to_luminance(&random_image(seed, w, h)).unwrap(), 1.0).unwrap();
        let grads = sobel_gradients(&lum);
        let grid = PatchGrid::new(w, h, ps).unwrap();
        prop_assert_eq!(grid.rows, h.div_ceil(ps));
        prop_assert_eq!(grid.cols, w.div_ceil(ps));
        let field = patch_structure_tensors(&grads, &lum, &grid).unwrap();
        for p in &field.patches {
            prop_assert!(p.sxx >= 0.0 && p.syy >= 0.0);
            prop_assert!(p.sxy * p.sxy <= p.sxx * p.syy + 1e-9, "{:?}", p);
            prop_assert!(p.eigen.lambda_max >= p.eigen.lambda_min && p.eigen.lambda_min >= 0.0);
            prop_assert!((p.eigen.trace() - p.trace()).abs() < 1e-9);
        }
    }

    #[test]
    fn area_normalization_under_duplication(seed in any::<u64>(), w in 4usize..20, h in 4usize..20, ps in 1usize..6) {
        let mut rng = SeededRng::new(seed);
        let n = w * h;
        let gx: Vec<f64> = (0..n).map(|_| 10.0 * rng.normal()).collect();
        let gy: Vec<f64> = (0..n).map(|_| 10.0 * rng.normal()).collect();
        let lv: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 100.0)).collect();
        // every value becomes a 2x2 block
        let dup = |v: &[f64]| -> Vec<f64> {
            (0..4 * n).map(|i| { let (x, y) = (i % (2 * w), i / (2 * w)); v[(y / 2) * w + x / 2] }).collect()
        };
        let small = patch_structure_tensors(
            &GradientField::new(w, h, gx.clone(), gy.clone()).unwrap(),
            &LuminanceField::new(w, h, lv.clone()).unwrap(),
            &PatchGrid::new(w, h, ps).unwrap(),
        ).unwrap();
        let big = patch_structure_tensors(
            &GradientField::new(2 * w, 2 * h, dup(&gx), dup(&gy)).unwrap(),
            &LuminanceField::new(2 * w, 2 * h, dup(&lv)).unwrap(),
            &PatchGrid::new(2 * w, 2 * h, 2 * ps).unwrap(),
        ).unwrap();
        prop_assert_eq!(small.len(), big.len());
        for (a, b) in small.patches.iter().zip(&big.patches) {
            prop_assert!((a.sxx - b.sxx).abs() < 1e-6);
            prop_assert!((a.sxy - b.sxy).abs() < 1e-6);
            prop_assert!((a.syy - b.syy).abs() < 1e-6);
            prop_assert!((a.mean_luminance - b.mean_luminance).abs() < 1e-6);
        }
    }

    #[test]
    fn eigenvalues_invariant_under_gradient_rotation(seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU) {
        let mut rng = SeededRng::new(seed);
        let (w, h) = (6, 6);
        let gx: Vec<f64> = (0..w * h).map(|_| 5.0 * rng.normal()).collect();
        let gy: Vec<f64> = (0..w * h).map(|_| 5.0 * rng.normal()).collect();
        let (c, s) = (theta.cos(), theta.sin());
        let rx: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| c * x - s * y).collect();
        let ry: Vec<f64> = gx.iter().zip(&gy).map(|(x, y)| s * x + c * y).collect();
        let lum = LuminanceField::new(w, h, vec![50.0; w * h]).unwrap();
        let grid = PatchGrid::new(w, h, 3).unwrap();
        let a = patch_structure_tensors(&GradientField::new(w, h, gx, gy).unwrap(), &lum, &grid).unwrap();
        let b = patch_structure_tensors(&GradientField::new(w, h, rx, ry).unwrap(), &lum, &grid).unwrap();
        for (p, q) in a.patches.iter().zip(&b.patches) {
            prop_assert!((p.eigen.lambda_max - q.eigen.lambda_max).abs() < 1e-6);
            prop_assert!((p.eigen.lambda_min - q.eigen.lambda_min).abs() < 1e-6);
        }
    }

    #[test]
    fn partition_and_selection_invariants(seed in any::<u64>(), w in 14usize..60, h in 14usize..60, skip in 0.0f64..=1.0) {
        let cfg = SgufConfig { skip_ratio: skip, seed, ..SgufConfig::default() };
        let img = random_image(seed, w, h);
        let out = sguf_pipeline(&img, &cfg, 7).unwrap();
        let p = &out.partition;
        let n = p.grid.len();
        let mut seen = vec![0usize; n];
        for r in &p.regions {
            prop_assert!(r.size() > 0);
            for &i in p.members(r) {
                seen[i] += 1;
                prop_assert_eq!(p.labels[i], r.id);
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(p.regions.iter().map(|r| r.size()).sum::<usize>(), n);

        let sel = &out.selection.selected;
        prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(sel.iter().all(|&i| i < n));
        for k in p.key_tokens() {
            prop_assert!(sel.binary_search(&k).is_ok());
        }
        let again = sguf_pipeline(&img, &cfg, 7).unwrap();
        prop_assert_eq!(&again.selection, &out.selection);
    }

    #[test]
    fn looser_thresholds_never_add_regions(seed in any::<u64>(), ds in 0.05f64..2.0, dl in 1.0f64..60.0, bump in 0.0f64..1.0) {
        let img = random_image(seed, 42, 42);
        let base = SgufConfig { structural_saliency_threshold: ds, luminance_threshold: dl, ..SgufConfig::default() };
        let field = sguf_pipeline(&img, &base, 3).unwrap().field;
        let count = |cfg: &SgufConfig| merge_regions(&field, cfg).unwrap().regions.len();
        let n0 = count(&base);
        let more_s = SgufConfig { structural_saliency_threshold: ds + bump, ..base.clone() };
        let more_l = SgufConfig { luminance_threshold: dl + 30.0 * bump, ..base.clone() };
        prop_assert!(count(&more_s) <= n0);
        prop_assert!(count(&more_l) <= n0);
    }

    #[test]
    fn energy_from_eigenvalues_matches_raw_traces(seed in any::<u64>()) {
        let img = random_image(seed, 35, 35);
        let cfg = SgufConfig::default();
        let field = sguf_pipeline(&img, &cfg, 7).unwrap().field;
        let p = classify_regions(&region_energy(&merge_regions(&field, &cfg).unwrap(), &field), &cfg).unwrap();
        for r in &p.regions {
            let raw = p.members(r).iter().map(|&i| field.patches[i].trace()).sum::<f64>() / r.size() as f64;
            prop_assert!((r.energy - raw).abs() < 1e-9);
            prop_assert_eq!(r.is_key, r.energy > p.energy_cut.unwrap());
        }
    }
}

#[test]
fn quarter_turn_preserves_eigenvalue_multiset() {
    for seed in 0..5 {
        let task = generate_task(seed, 14, 6).unwrap();
        let eig = |img: &RasterImage| {
            let out = sguf_pipeline(img, &SgufConfig::default(), 14).unwrap();
            let mut pairs: Vec<(f64, f64)> = out
                .field
                .patches
                .iter()
                .map(|p| (p.eigen.lambda_max, p.eigen.lambda_min))
                .collect();
            pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pairs
        };
        let (a, b) = (eig(&task.image), eig(&task.image.rotate90()));
        for ((a1, a2), (b1, b2)) in a.iter().zip(&b) {
            assert!(
                (a1 - b1).abs() <= 0.05 * a1.max(*b1) + 1e-9,
                "seed {seed}: {a1} vs {b1}"
            );
            assert!(
                (a2 - b2).abs() <= 0.05 * a1.max(*b1) + 1e-9,
                "seed {seed}: {a2} vs {b2}"
            );
        }
    }
}

#[test]
fn critical_heads_equal_to_all_heads_is_no_restriction() {
    let heads = HeadConfig::new(6, 3, 5, (0..6).collect()).unwrap();
    let mut rng = SeededRng::new(2);
    let q = Tensor::new(vec![4, 6, 5], (0..120).map(|_| rng.normal() as f32).collect()).unwrap();
    let k = Tensor::new(vec![7, 3, 5], (0..105).map(|_| rng.normal() as f32).collect()).unwrap();
    let states = AttentionStates::new(q, k, &heads).unwrap();
    let sel = kawhi::sguf::TokenSelection {
        selected: vec![0, 2, 3, 6],
        key_count: 4,
        background_sampled_count: 0,
    };
    let restricted = spatial_saliency(&states, &heads, &sel).unwrap();
    let all = spatial_saliency(&states, &heads.with_all_heads(), &sel).unwrap();
    assert_eq!(restricted, all);
}
